#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gesture_hrl/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitSelfcheck = 2;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string policy;
  std::string level0;
  std::string out;
};

ghrl::ExperimentConfig build_config(const Flags& f, const std::string& verb) {
  ghrl::ExperimentConfig c = f.config.empty() ? ghrl::default_experiment_config() : ghrl::load_config(f.config);
  if (f.seed) ghrl::set_config_value(c, "seed", std::to_string(*f.seed));
  if (!f.mode.empty()) ghrl::set_config_value(c, "harness.mode", f.mode);
  if (!f.level0.empty()) ghrl::set_config_value(c, "level0.path", f.level0);
  if (!f.out.empty()) ghrl::set_config_value(c, "out", f.out);
  if (!f.policy.empty()) {
    if (verb == "eval")
      ghrl::set_config_value(c, "eval.policy", f.policy);
    else if (verb == "train")
      ghrl::set_config_value(c, "train.policy", f.policy);
  }
  ghrl::finalize_config(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical gesture agents on grid-screen tasks"};
  app.require_subcommand(1);
  Flags flags;
  app.add_option("--config", flags.config, "configuration file (key = value)")->check(CLI::ExistingFile);
  app.add_option("--seed", flags.seed, "master seed");
  app.add_option("--mode", flags.mode, "harness mode")->check(CLI::IsMember({"concurrent", "deterministic"}));
  app.add_option("--policy", flags.policy, "policy to train or evaluate")
      ->check(CLI::IsMember({"random", "flat", "hierarchy"}));
  app.add_option("--level0", flags.level0, "pretrained level-0 parameter file");
  app.add_option("--out", flags.out, "output directory");
  app.fallthrough();

  auto* pretrain = app.add_subcommand("pretrain", "pretrain the level-0 gesture networks");
  auto* train = app.add_subcommand("train", "train the hierarchy or the flat baseline on a task");
  auto* eval = app.add_subcommand("eval", "greedy evaluation of a trained or random policy");
  auto* selfcheck = app.add_subcommand("selfcheck", "gesture oracle, Bellman fixed point and gradient checks");
  auto* report = app.add_subcommand("report", "aggregate run outputs into report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (selfcheck->parsed()) {
      bool ok = true;
      for (const auto& r : ghrl::run_selfcheck()) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " (" << r.seconds << " s)\n";
        ok = ok && r.passed;
      }
      return ok ? kExitOk : kExitSelfcheck;
    }
    const std::string verb = app.get_subcommands().front()->get_name();
    if (verb == "train" && flags.policy == "random") throw ghrl::config_error("the random policy is not trained");
    const auto config = build_config(flags, verb);
    if (pretrain->parsed()) ghrl::cmd_pretrain(config, std::cout);
    if (train->parsed()) ghrl::cmd_train(config, std::cout);
    if (eval->parsed()) ghrl::cmd_eval(config, std::cout);
    if (report->parsed()) ghrl::cmd_report(config, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
