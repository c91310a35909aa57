#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "gesture_hrl/harness.hpp"

using namespace ghrl;
using namespace std::chrono_literals;

namespace {

HarnessConfig small_config(HarnessMode mode, std::uint64_t seed) {
  HarnessConfig c;
  c.mode = mode;
  c.seed = seed;
  c.level1_hidden = {16};
  c.flat_hidden = {16};
  c.queue_capacity = 256;
  for (auto& l : c.learners) {
    l.td.batch_size = 8;
    l.td.learning_rate = 0.01;
    l.td.epsilon_decay_steps = 500;
    l.replay_capacity = 2000;
    l.transitions_per_update = 4;
  }
  c.flat_learner = c.learners[1];
  c.acting.collect_level0 = true;
  c.acting.epsilon0 = 0.1;
  c.loss_window = 5;
  return c;
}

HarnessInputs catch_inputs(std::uint64_t seed) {
  HarnessInputs in;
  in.task = default_task_config("catch", seed);
  in.task.episode_limit = 40;
  Rng rng(seed);
  in.level0 = LevelZeroAgent(in.task.geometry, {8}, rng);
  return in;
}

Transition dummy_transition() {
  Transition t;
  t.actions = {0};
  return t;
}

}  // namespace

TEST(BlockingQueue, BlocksWhenFullWithoutLoss) {
  BlockingQueue<int> q(2);
  q.push(1);
  q.push(2);
  std::thread producer([&] { q.push(3); });
  while (q.blocked() == 0) std::this_thread::sleep_for(1ms);
  EXPECT_EQ(q.size(), 2u);
  EXPECT_EQ(q.try_pop(), 1);
  producer.join();
  EXPECT_EQ(q.try_pop(), 2);
  EXPECT_EQ(q.try_pop(), 3);
  EXPECT_FALSE(q.try_pop().has_value());
  EXPECT_EQ(q.pushed(), 3u);
  EXPECT_EQ(q.blocked(), 1u);
  EXPECT_EQ(q.high_water(), 2u);
}

TEST(BlockingQueue, CloseDrainsThenReportsEmpty) {
  BlockingQueue<int> q(4);
  q.push(7);
  q.close();
  EXPECT_FALSE(q.closed_and_empty());
  EXPECT_EQ(q.pop_for(1ms), 7);
  EXPECT_TRUE(q.closed_and_empty());
  EXPECT_THROW(q.push(1), std::logic_error);
}

TEST(ParameterStore, VersionsIncreaseAndLatestWins) {
  const GridGeometry g(2, 2);
  ParameterStore store(g);
  EXPECT_THROW(store.fetch(0), std::logic_error);
  EXPECT_THROW(store.fetch(3), std::out_of_range);
  auto layout = std::make_shared<FeatureLayout>();
  layout->add("s", 1);
  auto q = QApproximator::table(layout, 1);
  EXPECT_EQ(store.publish(1, {q}), 1u);
  q.table_values()(0, 0) = 2.0;
  EXPECT_EQ(store.publish(1, {q}), 2u);
  const auto snap = store.fetch(1);
  EXPECT_EQ(snap->version, 2u);
  EXPECT_EQ(snap->payload[0].table_values()(0, 0), 2.0);
  EXPECT_EQ(snap->checksum, goal_ordering_checksum(g));
  EXPECT_EQ(store.version(0), 0u);
}

TEST(ParameterStore, ConcurrentFetchNeverTorn) {
  ParameterStore store(GridGeometry(2, 2));
  auto layout = std::make_shared<FeatureLayout>();
  layout->add("s", 64);
  auto make = [&](double v) {
    auto q = QApproximator::table(layout, 8);
    q.table_values().setConstant(v);
    return std::vector<QApproximator>{q};
  };
  store.publish(0, make(1.0));
  std::atomic<bool> done{false};
  std::atomic<int> bad{0};
  std::vector<std::thread> readers;
  for (int r = 0; r < 3; ++r) {
    readers.emplace_back([&] {
      std::uint64_t last = 0;
      while (!done.load()) {
        const auto s = store.fetch(0);
        const auto& t = s->payload[0].table_values();
        if (t.minCoeff() != t.maxCoeff() || t(0, 0) != static_cast<double>(s->version)) ++bad;
        if (s->version < last) ++bad;
        last = s->version;
      }
    });
  }
  for (int v = 2; v <= 200; ++v) store.publish(0, make(v));
  done = true;
  for (auto& t : readers) t.join();
  EXPECT_EQ(bad.load(), 0);
}

TEST(Router, RoutesByLevelAndRejectsUnknown) {
  Router router(8);
  router.route({0, 0, 0, GoalTransition{GestureGoal::tap(0), dummy_transition()}});
  router.route({1, 0, 0, dummy_transition()});
  EXPECT_EQ(router.queue(0).size(), 1u);
  EXPECT_EQ(router.queue(1).size(), 1u);
  EXPECT_EQ(router.queue(2).size(), 0u);
  EXPECT_EQ(router.emitted(0), 1u);
  EXPECT_THROW(router.route({3, 0, 0, dummy_transition()}), std::out_of_range);
}

TEST(Learners, AuditRejectsForeignEnvelopes) {
  Rng rng(1);
  LevelOneAgent l1(GridGeometry(2, 2), {4}, rng);
  LearnerConfig cfg;
  detail::DqnLearner learner(1, l1.net(), cfg, 10);
  learner.receive({1, 0, 0, dummy_transition()});
  learner.receive({0, 0, 0, dummy_transition()});
  learner.receive({1, 0, 0, LevelTwoSample{}});
  EXPECT_EQ(learner.stored(), 1u);
  EXPECT_EQ(learner.violations(), 2u);

  detail::AverageRewardLearner avg(0.1, 10);
  avg.receive({2, 0, 0, LevelTwoSample{GestureClass::Swipe, 4.0, 2}});
  EXPECT_EQ(level2_from_table(avg.parameters()[0], 0.0).estimate(GestureClass::Swipe), 2.0);
}

TEST(DeterministicSchedule, RoundRobinPlan) {
  HarnessConfig c;
  c.mode = HarnessMode::Deterministic;
  const std::vector<PlanStep> one = {{PlanAction::ActorEpisode, 0},   {PlanAction::LearnerUpdates, 0},
                                     {PlanAction::LearnerUpdates, 1}, {PlanAction::LearnerUpdates, 2},
                                     {PlanAction::Publish, 0},        {PlanAction::Publish, 1},
                                     {PlanAction::Publish, 2}};
  EXPECT_EQ(deterministic_schedule(c, 5), one);
  EXPECT_EQ(deterministic_schedule(c, 5), deterministic_schedule(c, 5));
  c.actors = 2;
  const auto two = deterministic_schedule(c, 5);
  EXPECT_EQ(two[0], (PlanStep{PlanAction::ActorEpisode, 0}));
  EXPECT_EQ(two[1], (PlanStep{PlanAction::ActorEpisode, 1}));
  c.mode = HarnessMode::Concurrent;
  EXPECT_THROW(deterministic_schedule(c, 5), harness_config_error);
}

TEST(HarnessConfig, ValidationErrors) {
  HarnessConfig c;
  c.actors = 0;
  EXPECT_THROW(c.validate(), harness_config_error);
  c = HarnessConfig{};
  c.queue_capacity = 4;
  EXPECT_THROW(c.validate(), harness_config_error);
  c = HarnessConfig{};
  c.learners[1].td.learning_rate = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(RunHarness, DeterministicRunsAreByteIdentical) {
  const auto cfg = small_config(HarnessMode::Deterministic, 11);
  const auto a = run_harness(cfg, catch_inputs(3), 1500);
  const auto b = run_harness(cfg, catch_inputs(3), 1500);
  EXPECT_EQ(report_bytes(a.report), report_bytes(b.report));
  EXPECT_GE(a.report.total_steps, 1500u);
  EXPECT_TRUE(a.report.conserved());
  EXPECT_EQ(a.report.violations(), 0u);
  EXPECT_GT(a.report.levels[0].updates, 0u);
  EXPECT_GT(a.report.levels[1].updates, 0u);
  EXPECT_FALSE(a.report.losses.empty());
  for (std::size_t l = 0; l < kLevelCount; ++l) EXPECT_GT(a.report.levels[l].version, 1u);

  auto other = cfg;
  other.seed = 12;
  EXPECT_NE(report_bytes(run_harness(other, catch_inputs(3), 1500).report), report_bytes(a.report));
}

TEST(RunHarness, DeterministicTwoActorsAlternate) {
  auto cfg = small_config(HarnessMode::Deterministic, 4);
  cfg.actors = 2;
  const auto r = run_harness(cfg, catch_inputs(1), 400).report;
  ASSERT_GE(r.episodes.size(), 2u);
  for (std::size_t i = 0; i < r.episodes.size(); ++i) EXPECT_EQ(r.episodes[i].actor, i % 2);
}

TEST(RunHarness, ConcurrentIntegrityWithFourActors) {
  auto cfg = small_config(HarnessMode::Concurrent, 21);
  cfg.actors = 4;
  cfg.queue_capacity = 16;  // small queues exercise back-pressure
  for (auto& l : cfg.learners) l.td.batch_size = 8;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_harness(cfg, catch_inputs(5), 4000).report;
  EXPECT_LT(std::chrono::steady_clock::now() - t0, 120s);

  EXPECT_TRUE(r.conserved());
  EXPECT_EQ(r.violations(), 0u);
  EXPECT_TRUE(r.versions_monotonic());
  ASSERT_EQ(r.actors.size(), 4u);
  std::size_t episodes = 0, steps = 0;
  for (const auto& a : r.actors) {
    EXPECT_GE(a.episodes, 1u);
    episodes += a.episodes;
    steps += a.steps;
  }
  EXPECT_EQ(episodes, r.episodes.size());
  EXPECT_EQ(steps, r.total_steps);
  for (std::size_t l = 0; l < kLevelCount; ++l) EXPECT_GT(r.levels[l].emitted, 0u);
  // Per-actor snapshot versions recorded on episodes never decrease.
  std::vector<std::array<std::uint64_t, kLevelCount>> last(4);
  std::vector<EpisodeRecord> by_actor = r.episodes;
  for (const auto& e : r.episodes) {
    for (std::size_t l = 0; l < kLevelCount; ++l) {
      EXPECT_GE(e.versions[l], last[e.actor][l]);
      last[e.actor][l] = e.versions[l];
    }
  }
  const auto j = summary_json(r);
  EXPECT_TRUE(j.contains("elapsed_seconds"));
}

TEST(RunHarness, BudgetZeroIsEmpty) {
  const auto res = run_harness(small_config(HarnessMode::Deterministic, 1), catch_inputs(1), 0);
  EXPECT_TRUE(res.report.episodes.empty());
  EXPECT_TRUE(res.report.losses.empty());
  for (const auto& l : res.report.levels) {
    EXPECT_EQ(l.updates, 0u);
    EXPECT_EQ(l.emitted, 0u);
  }
}

TEST(RunHarness, GeometryMismatchRejected) {
  auto in = catch_inputs(1);
  Rng rng(1);
  in.level0 = LevelZeroAgent(GridGeometry(9, 6), {4}, rng);
  EXPECT_THROW(run_harness(small_config(HarnessMode::Deterministic, 1), in, 10), harness_config_error);
  in.level0.reset();
  EXPECT_THROW(run_harness(small_config(HarnessMode::Deterministic, 1), in, 10), harness_config_error);
}

TEST(RunHarness, FlatProgramSameReportShape) {
  auto cfg = small_config(HarnessMode::Deterministic, 2);
  cfg.program = Program::Flat;
  HarnessInputs in;
  in.task = default_task_config("catch", 2);
  in.task.episode_limit = 40;
  const auto res = run_harness(cfg, in, 400);
  EXPECT_EQ(res.report.program, "flat");
  EXPECT_TRUE(res.report.conserved());
  EXPECT_EQ(res.report.levels[1].emitted, 0u);
  EXPECT_EQ(res.report.levels[2].emitted, 0u);
  EXPECT_EQ(res.model.level0.size(), 1u);
  EXPECT_FALSE(res.model.level1.has_value());
}

TEST(RunHarness, PretrainProgramUsesBlankScreen) {
  auto cfg = small_config(HarnessMode::Deterministic, 3);
  cfg.program = Program::Pretrain;
  cfg.pretrain_slice = 20;
  auto in = catch_inputs(1);
  const auto res = run_harness(cfg, in, 200);
  EXPECT_EQ(res.report.task, "blank");
  EXPECT_EQ(res.report.levels[1].emitted, 0u);
  EXPECT_EQ(res.report.levels[2].emitted, 0u);
  EXPECT_GT(res.report.levels[0].emitted, 0u);
  for (const auto& e : res.report.episodes) EXPECT_LE(e.steps, 20u);
  EXPECT_EQ(res.model.level0.size(), 3u);
}
