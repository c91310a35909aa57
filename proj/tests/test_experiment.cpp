#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gesture_hrl/experiment.hpp"

using namespace ghrl;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::stringstream ss(text);
  return parse_config(ss);
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("ghrl_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Small enough to run the full pipeline in a couple of seconds.
const char* kTinyConfig = R"(
seed = 3
[task]
name = catch
episode_limit = 40
[harness]
mode = deterministic
[level0]
hidden = 16
batch_size = 8
[level1]
hidden = 16
batch_size = 8
[pretrain]
budget = 600
[train]
budget = 600
[eval]
episodes = 5
)";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GHRL_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, SectionsCommentsAndDefaults) {
  const auto c = parse("seed = 9  # master\n[task]\nname = button_sparse\n[level1]\nlr = 0.05\ngamma_env = 0.9\n");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.task.name, "button_sparse");
  EXPECT_EQ(c.task.geometry, GridGeometry(9, 6));
  EXPECT_DOUBLE_EQ(c.harness.learners[1].td.learning_rate, 0.05);
  EXPECT_DOUBLE_EQ(c.harness.acting.gamma_env, 0.9);
  EXPECT_DOUBLE_EQ(c.harness.learners[0].td.learning_rate, default_experiment_config().harness.learners[0].td.learning_rate);
  EXPECT_EQ(c.values.at("level1.lr"), "0.05");
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse("nonsense = 1\n"), config_error);
  EXPECT_THROW(parse("seed\n"), config_error);
  EXPECT_THROW(parse("[task\n"), config_error);
  EXPECT_THROW(parse("seed = -4\n"), config_error);
  EXPECT_THROW(parse("level0.hidden = 16,x\n"), config_error);
  EXPECT_THROW(parse("task.name = pong\n"), config_error);
  EXPECT_THROW(parse("harness.mode = async\n"), config_error);
  EXPECT_THROW(parse("eval.policy = greedy\n"), config_error);
  EXPECT_THROW(parse("level1.gamma_env = 1.5\n"), config_error);
  EXPECT_THROW(load_config("/nonexistent/ghrl.cfg"), config_error);

  auto c = parse("harness.actors = 0\n");
  EXPECT_THROW(finalize_config(c), std::invalid_argument);
  c = parse("level0.lr = 0\n");
  EXPECT_THROW(finalize_config(c), std::invalid_argument);
  c = parse("task.episode_limit = 0\n");
  EXPECT_THROW(finalize_config(c), config_error);
}

TEST(Config, TaskSeedDerivedUnlessSet) {
  auto a = parse("seed = 1\n");
  auto b = parse("seed = 2\n");
  finalize_config(a);
  finalize_config(b);
  EXPECT_NE(a.task.seed, b.task.seed);
  EXPECT_EQ(a.harness.seed, 1u);
  auto c = parse("seed = 1\ntask.seed = 77\n");
  finalize_config(c);
  EXPECT_EQ(c.task.seed, 77u);
}

TEST(Config, HashIsCanonical) {
  const auto a = parse("seed = 1\nlevel1.lr = 0.05\n");
  const auto b = parse("level1.lr = 0.05\nseed = 1\n");
  const auto c = parse("level1.lr = 0.06\nseed = 1\n");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Eval, ZeroEpisodesRejected) {
  EXPECT_THROW(check_eval_episodes(0), config_error);
  EXPECT_THROW(evaluate_random(default_task_config("catch"), 0, 1), config_error);
}

TEST(Eval, RandomCatchMatchesClosedForm) {
  // Uniform actions leave the paddle uniformly placed: mean per fall 2/W - 1 for W = 3.
  const auto r = evaluate_random(default_task_config("catch"), 200, 4);
  EXPECT_EQ(r.episodes, 200u);
  EXPECT_NEAR(r.mean_per_event, -1.0 / 3.0, 0.05);
  EXPECT_LE(r.mean_per_event, -0.3);
  const auto again = evaluate_random(default_task_config("catch"), 200, 4);
  EXPECT_EQ(r.mean_return, again.mean_return);
}

TEST(Eval, SummarizeStatistics) {
  std::vector<EpisodeOutput> eps(2);
  eps[0].total_reward = 2.0;
  eps[0].scoring_events = 4;
  eps[1].total_reward = -1.0;
  eps[1].scoring_events = 0;
  const auto r = summarize("x", eps);
  EXPECT_DOUBLE_EQ(r.mean_return, 0.5);
  EXPECT_DOUBLE_EQ(r.stddev, 1.5);
  EXPECT_DOUBLE_EQ(r.mean_per_event, (0.5 - 1.0) / 2);
  EXPECT_DOUBLE_EQ(r.success_rate, 0.5);
}

TEST(Selfcheck, AllChecksPass) {
  for (const auto& r : run_selfcheck()) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
}

TEST(Selfcheck, MutatedMatcherFailsOracleCheck) {
  // Forgets that a tap also completes the degenerate swipe.
  const GestureMatcher mutant = [](const GridGeometry& g, const TouchHistory& h) {
    GoalSet s = completed_gestures(g, h);
    std::erase_if(s, [](const GestureGoal& goal) {
      return goal.gesture_class() == GestureClass::Swipe && goal.start_cell() == goal.end_cell();
    });
    return s;
  };
  const auto r = check_gesture_oracle(GridGeometry(2, 2), 5, mutant);
  EXPECT_FALSE(r.passed);
  EXPECT_TRUE(check_gesture_oracle().passed);
}

TEST(Commands, PretrainTrainEvalReport) {
  const auto dir = fresh_dir("commands");
  auto c = parse(kTinyConfig);
  c.out_dir = dir.string();
  finalize_config(c);
  std::stringstream log;

  EXPECT_THROW(cmd_train(c, log), config_error);  // no level-0 source
  const auto l0 = cmd_pretrain(c, log);
  EXPECT_TRUE(fs::exists(l0));
  EXPECT_TRUE(fs::exists(dir / "pretrain_summary.json"));
  EXPECT_EQ(load_parameters(l0, c.task.geometry).size(), 3u);

  c.level0_path = l0;
  const auto model = cmd_train(c, log);
  EXPECT_EQ(load_parameters(model, c.task.geometry).size(), 5u);
  EXPECT_TRUE(fs::exists(dir / "train_episodes.csv"));
  EXPECT_TRUE(fs::exists(dir / "train_losses.csv"));

  const auto h = cmd_eval(c, log);
  EXPECT_EQ(h.policy, "hierarchy");
  EXPECT_EQ(h.episodes, 5u);
  c.eval_policy = "random";
  cmd_eval(c, log);
  c.eval_policy = "flat";
  EXPECT_THROW(cmd_eval(c, log), config_error);  // model file holds a hierarchy

  const auto rep = cmd_report(c, log);
  EXPECT_TRUE(rep.contains("pretrain"));
  EXPECT_TRUE(rep.contains("train_curve"));
  EXPECT_TRUE(rep["eval"].contains("hierarchy"));
  EXPECT_TRUE(rep["eval"].contains("random"));
  EXPECT_TRUE(fs::exists(dir / "report.json"));

  auto wrong = c;
  wrong.task = default_task_config("button_sparse");
  EXPECT_THROW(cmd_eval(wrong, log), checksum_error);
}

TEST(Commands, FlatTrainAndEval) {
  const auto dir = fresh_dir("flat");
  auto c = parse(std::string(kTinyConfig) + "[train]\npolicy = flat\n");
  c.out_dir = dir.string();
  finalize_config(c);
  std::stringstream log;
  cmd_train(c, log);
  EXPECT_EQ(c.eval_policy, "flat");
  EXPECT_EQ(cmd_eval(c, log).policy, "flat");
}

TEST(Cli, ExitCodes) {
  const auto dir = fresh_dir("cli");
  const auto cfg = dir / "tiny.cfg";
  std::ofstream(cfg) << kTinyConfig;
  const std::string base = "--config " + cfg.string() + " --out " + dir.string();

  EXPECT_EQ(run_cli("selfcheck"), 0);
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("dance"), 1);
  EXPECT_EQ(run_cli("train --mode sideways"), 1);
  EXPECT_EQ(run_cli("train --config /nonexistent.cfg"), 1);
  EXPECT_EQ(run_cli("train " + base), 1);  // no level-0 parameters
  EXPECT_EQ(run_cli("train --policy random " + base), 1);
  EXPECT_EQ(run_cli("eval --level0 " + (dir / "missing.bin").string() + " " + base), 1);

  EXPECT_EQ(run_cli("pretrain --seed 5 " + base), 0);
  EXPECT_TRUE(fs::exists(dir / "level0.bin"));
  EXPECT_EQ(run_cli("train --mode concurrent --level0 " + (dir / "level0.bin").string() + " " + base), 0);
  EXPECT_EQ(run_cli("eval " + base), 0);
  EXPECT_EQ(run_cli("eval --policy random " + base), 0);
  EXPECT_EQ(run_cli("report " + base), 0);
  EXPECT_TRUE(fs::exists(dir / "eval_hierarchy.json"));
  EXPECT_TRUE(fs::exists(dir / "report.json"));
}
