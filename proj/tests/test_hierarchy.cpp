#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>

#include "gesture_hrl/hierarchy.hpp"

using namespace ghrl;

namespace {

std::unique_ptr<Environment> blank(const GridGeometry& g, int limit = 1000) {
  TaskConfig tc;
  tc.name = "blank";
  tc.geometry = g;
  tc.episode_limit = limit;
  auto env = make_task(tc);
  env->reset();
  return env;
}

// Linear tap policy built by hand: lifted -> TOUCH(goal), touching -> LIFT.
LevelZeroAgent scripted_tap_agent(const GridGeometry& g) {
  Rng rng(1);
  LevelZeroAgent agent(g, std::vector<std::size_t>{}, rng);
  const auto n = static_cast<Eigen::Index>(g.cells());
  auto& w = agent.net(GestureClass::Tap).mlp().weight(0);
  w.setZero();
  // Goal tap(c) votes for TOUCH(c); touching any cell votes strongly for LIFT.
  for (Eigen::Index c = 0; c < n; ++c) w(c, c) = 1.0;
  for (Eigen::Index c = 0; c < n; ++c)
    for (Eigen::Index a = 0; a < n; ++a) w(n + a, n + c) = 5.0;
  return agent;
}

}  // namespace

TEST(Level0Encoding, OneHotGoalAndTouch) {
  const GridGeometry g(4, 3);
  const auto l = level0_layout(g, GestureClass::Swipe);
  EXPECT_EQ(l->size(), 12u + 12u + 13u);
  const auto f = encode_level0(g, l, GestureGoal::swipe(2, 7), TouchHistory({TouchSymbol::touch(5)}));
  EXPECT_EQ(f.hot_index(0), 2u);
  EXPECT_EQ(f.hot_index(1), 7u);
  EXPECT_EQ(f.hot_index(2), 5u);
  const auto lifted = encode_level0(g, level0_layout(g, GestureClass::Fling), GestureGoal::fling(Direction::SW),
                                    TouchHistory({TouchSymbol::lift()}));
  EXPECT_EQ(lifted.hot_index(0), 5u);
  EXPECT_EQ(lifted.hot_index(1), 12u);
}

TEST(LevelZeroAgent, ThreeIndependentNetworks) {
  const GridGeometry g(4, 3);
  Rng rng(2);
  LevelZeroAgent agent(g, {16}, rng);
  EXPECT_EQ(agent.parameters().size(), 3u);
  EXPECT_EQ(agent.net(GestureClass::Tap).output_size(), 24u);
  EXPECT_FALSE(same_parameters(agent.net(GestureClass::Tap), agent.net(GestureClass::Fling)));
  EXPECT_THROW(LevelZeroAgent(GridGeometry(5, 3), agent.parameters()), std::invalid_argument);
}

TEST(RunOption, TrainedTapTakesTwoSteps) {
  const GridGeometry g(4, 3);
  const auto agent = scripted_tap_agent(g);
  for (Cell c = 0; c < g.cells(); ++c) {
    auto env = blank(g);
    TouchHistory h({TouchSymbol::lift()});
    Rng rng(0);
    const auto opt = run_option(*env, agent, GestureGoal::tap(c), 0.0, 10, h, rng);
    EXPECT_EQ(opt.termination, Termination::Completed);
    ASSERT_EQ(opt.steps, 2u);
    EXPECT_EQ(opt.trajectory[0].action, PrimitiveAction::touch(c).index(g));
    EXPECT_EQ(opt.trajectory[1].next_history.back(), TouchSymbol::lift());
  }
}

TEST(RunOption, ShortestSwipeIsThreeSteps) {
  // The shortest completing sequence from a lifted state, by brute force
  // over action strings, is TOUCH(q1), TOUCH(q2), LIFT.
  const GridGeometry g(2, 2);
  const Cell q1 = 0, q2 = 3;
  std::size_t shortest = 0;
  for (std::size_t len = 1; len <= 3 && shortest == 0; ++len) {
    std::size_t combos = 1;
    for (std::size_t i = 0; i < len; ++i) combos *= action_space_size(g);
    for (std::size_t code = 0; code < combos && shortest == 0; ++code) {
      TouchHistory h({TouchSymbol::lift()});
      std::size_t rest = code;
      for (std::size_t i = 0; i < len; ++i) {
        h.push(PrimitiveAction::from_index(g, rest % action_space_size(g)).symbol());
        rest /= action_space_size(g);
      }
      if (swipe_cumulant(h, q1, q2) == 1) shortest = len;
    }
  }
  EXPECT_EQ(shortest, 3u);
}

TEST(RunOption, AlwaysBoundedAndCompletionMatchesCore) {
  const GridGeometry g(3, 3);
  Rng rng(3);
  LevelZeroAgent agent(g, {8}, rng);
  for (int k = 0; k < 300; ++k) {
    auto env = blank(g, 40);
    TouchHistory h({TouchSymbol::lift()});
    const auto goal = sample_goal(g, rng);
    const double eps = rng.uniform01();
    const std::size_t max_len = 1 + rng.uniform_index(10);
    const auto opt = run_option(*env, agent, goal, eps, max_len, h, rng);
    ASSERT_LE(opt.steps, max_len);
    ASSERT_GE(opt.steps, 1u);
    EXPECT_EQ(opt.termination == Termination::Completed, cumulant(g, h, goal) == 1);
    EXPECT_EQ(h, env->history());
    EXPECT_EQ(opt.trajectory.size(), opt.steps);
  }
}

TEST(RunOption, EpisodeEndStopsOption) {
  const GridGeometry g(2, 2);
  Rng rng(4);
  LevelZeroAgent agent(g, {4}, rng);
  auto env = blank(g, 3);
  TouchHistory h({TouchSymbol::lift()});
  // Whatever a random policy does, the three-tick episode stops the option.
  const auto opt = run_option(*env, agent, GestureGoal::swipe(0, 0), 1.0, 10, h, rng);
  EXPECT_LE(opt.steps, 3u);
  if (opt.termination != Termination::Completed) EXPECT_EQ(opt.termination, Termination::EpisodeEnd);
  EXPECT_TRUE(env->episode_ended() || opt.termination == Termination::Completed);
}

TEST(LevelOneAgent, HeadLayoutMatchesGoalBlocks) {
  const GridGeometry g(9, 6);
  Rng rng(5);
  LevelOneAgent agent(g, {8}, rng);
  EXPECT_EQ(agent.head_width(), 116u);
  EXPECT_EQ(agent.net().output_size(), 232u);
  auto slice = [&](GestureClass c) {
    const auto s = agent.class_slice(c);
    return s[1] - s[0];
  };
  EXPECT_EQ(slice(GestureClass::Tap), 54u);
  EXPECT_EQ(slice(GestureClass::Swipe), 54u);
  EXPECT_EQ(slice(GestureClass::Fling), 8u);
  for (GestureClass c : kAllClasses) {
    const auto& m = *agent.class_mask(c);
    EXPECT_EQ(static_cast<std::size_t>(std::count(m.begin(), m.end(), true)), 2 * slice(c));
  }
}

TEST(SelectGvf, FactorizedSwipeAssembly) {
  const GridGeometry g(9, 6);
  Rng rng(6);
  LevelOneAgent agent(g, {8}, rng);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(232);
  q(54 + 12) = 1.0;
  q(116 + 54 + 40) = 1.0;
  const auto s = agent.select_from_q(q, GestureClass::Swipe, 0.0, rng);
  EXPECT_EQ(s.goal, GestureGoal::swipe(12, 40));
  EXPECT_EQ(s.head1, 66u);
  EXPECT_EQ(s.head2, 116u + 94u);
  q(2 * 54 + 3) = 2.0;
  EXPECT_EQ(agent.select_from_q(q, GestureClass::Fling, 0.0, rng).goal, GestureGoal::fling(Direction::SE));
  EXPECT_FALSE(agent.select_from_q(q, GestureClass::Tap, 0.0, rng).head2.has_value());
}

TEST(SelectGvf, MaskSoundnessUnderRandomQ) {
  const GridGeometry g(4, 3);
  Rng rng(7);
  LevelOneAgent agent(g, {8}, rng);
  const auto w = agent.head_width();
  for (GestureClass c : kAllClasses) {
    for (int k = 0; k < 10000; ++k) {
      Eigen::VectorXd q(2 * static_cast<Eigen::Index>(w));
      for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = rng.uniform(-1, 1);
      const double eps = (k % 4 == 0) ? 1.0 : rng.uniform01() * 0.5;
      const auto s = agent.select_from_q(q, c, eps, rng);
      ASSERT_EQ(s.goal.gesture_class(), c);
      const auto& mask = *agent.class_mask(c);
      ASSERT_TRUE(mask[s.head1]);
      if (s.head2) ASSERT_TRUE(mask[*s.head2]);
    }
  }
}

TEST(SelectGvf, OutsideSliceValuesIgnored) {
  const GridGeometry g(4, 3);
  Rng rng(8);
  LevelOneAgent agent(g, {8}, rng);
  const auto w = static_cast<Eigen::Index>(agent.head_width());
  for (GestureClass c : kAllClasses) {
    const auto& mask = *agent.class_mask(c);
    for (int k = 0; k < 500; ++k) {
      Eigen::VectorXd q(2 * w);
      for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = rng.uniform(-1, 1);
      Eigen::VectorXd poisoned = q, boosted = q;
      for (Eigen::Index i = 0; i < q.size(); ++i) {
        if (mask[static_cast<std::size_t>(i)]) continue;
        poisoned(i) = -std::numeric_limits<double>::infinity();
        boosted(i) = 1e9;
      }
      const auto base = agent.select_from_q(q, c, 0.0, rng);
      EXPECT_EQ(agent.select_from_q(poisoned, c, 0.0, rng).goal, base.goal);
      EXPECT_EQ(agent.select_from_q(boosted, c, 0.0, rng).goal, base.goal);
    }
  }
}

TEST(SelectGvf, FullExplorationUniformOverSlice) {
  const GridGeometry g(4, 3);
  Rng rng(9);
  LevelOneAgent agent(g, {8}, rng);
  std::map<GestureGoal, int> counts;
  const int n = 16000;
  const Eigen::VectorXd q = Eigen::VectorXd::Zero(2 * static_cast<Eigen::Index>(agent.head_width()));
  for (int k = 0; k < n; ++k) ++counts[agent.select_from_q(q, GestureClass::Fling, 1.0, rng).goal];
  EXPECT_EQ(counts.size(), 8u);
  const double p = 1.0 / 8, sigma = std::sqrt(n * p * (1 - p));
  for (const auto& [goal, c] : counts) EXPECT_NEAR(c, n * p, 5 * sigma) << goal.to_string();
}

TEST(Level1Transition, SmdpPlugIn) {
  const GridGeometry g(4, 3);
  Rng rng(10);
  LevelOneAgent agent(g, {8}, rng);
  FeatureVector f(agent.layout());
  OptionExecution opt;
  opt.steps = 3;
  opt.rewards = {0, 0, 1};
  opt.reward = 1.0;
  GvfSelection sel;
  sel.goal = GestureGoal::swipe(1, 2);
  sel.head1 = 13;
  sel.head2 = 28 + 14;
  auto t = level1_transition(agent, f, sel, opt, f, 0.99);
  EXPECT_EQ(t.cumulant, 1.0);
  EXPECT_DOUBLE_EQ(t.continuation, std::pow(0.99, 3));
  EXPECT_EQ(t.actions, (std::vector<std::uint32_t>{13, 42}));
  EXPECT_EQ(t.next_mask, agent.class_mask(GestureClass::Swipe));

  opt.final_step.episode_end = true;
  EXPECT_EQ(level1_transition(agent, f, sel, opt, f, 0.99).continuation, 0.0);

  opt.final_step.episode_end = false;
  opt.steps = 10;
  opt.reward = 0.0;
  t = level1_transition(agent, f, sel, opt, f, 0.99);
  EXPECT_EQ(t.cumulant, 0.0);
  EXPECT_DOUBLE_EQ(t.continuation, std::pow(0.99, 10));

  opt.steps = 0;
  EXPECT_THROW(level1_transition(agent, f, sel, opt, f, 0.99), std::invalid_argument);
}

TEST(LevelTwo, SelectClassExamples) {
  Rng rng(11);
  LevelTwoAgent agent(0.0);
  EXPECT_EQ(select_class(agent, rng), GestureClass::Tap);
  agent.update(GestureClass::Tap, 0.1, 1);
  agent.update(GestureClass::Swipe, 0.02, 1);
  agent.update(GestureClass::Fling, -0.01, 1);
  EXPECT_EQ(select_class(agent, rng), GestureClass::Tap);

  std::array<int, 3> counts{};
  for (int k = 0; k < 9000; ++k) ++counts[class_slot(select_class(agent, 1.0, rng))];
  for (int c : counts) EXPECT_NEAR(c, 3000, 5 * std::sqrt(9000 * (1.0 / 3) * (2.0 / 3)));
}

TEST(LevelTwo, IncrementalMeansAndIsolation) {
  LevelTwoAgent agent;
  level2_update(agent, GestureClass::Tap, 5.0, 50);
  EXPECT_DOUBLE_EQ(agent.estimate(GestureClass::Tap), 0.1);
  level2_update(agent, GestureClass::Tap, 3.0, 10);
  EXPECT_DOUBLE_EQ(agent.estimate(GestureClass::Tap), 0.2);
  EXPECT_EQ(agent.estimate(GestureClass::Swipe), 0.0);
  EXPECT_EQ(agent.visits(GestureClass::Swipe), 0u);
  EXPECT_THROW(level2_update(agent, GestureClass::Tap, 1.0, 0), std::invalid_argument);
}

TEST(LevelTwo, EstimatesEqualBruteForceMeans) {
  Rng rng(12);
  LevelTwoAgent agent;
  std::array<std::vector<double>, 3> log;
  for (int k = 0; k < 500; ++k) {
    const auto c = kAllClasses[rng.uniform_index(3)];
    const double r = rng.uniform(-5, 5);
    const std::size_t steps = 1 + rng.uniform_index(100);
    agent.update(c, r, steps);
    log[class_slot(c)].push_back(r / static_cast<double>(steps));
  }
  for (GestureClass c : kAllClasses) {
    const auto& v = log[class_slot(c)];
    double sum = 0.0;
    for (double x : v) sum += x;
    EXPECT_NEAR(agent.estimate(c), sum / static_cast<double>(v.size()), 1e-12);
  }
}

TEST(LevelTwo, ArgmaxInvariantToPositiveScaling) {
  Rng rng(13);
  for (int k = 0; k < 200; ++k) {
    LevelTwoAgent a(0.0), b(0.0);
    const double scale = rng.uniform(0.01, 100.0);
    for (GestureClass c : kAllClasses) {
      const double v = rng.uniform(-1, 1);
      a.update(c, v, 1);
      b.update(c, v * scale, 1);
    }
    EXPECT_EQ(select_class(a, rng), select_class(b, rng));
  }
}

TEST(LevelTwo, TableRoundTrip) {
  LevelTwoAgent agent;
  agent.update(GestureClass::Swipe, 3.0, 4);
  agent.update(GestureClass::Fling, -1.0, 2);
  const auto restored = level2_from_table(level2_to_table(agent), 0.3);
  for (GestureClass c : kAllClasses) {
    EXPECT_EQ(restored.estimate(c), agent.estimate(c));
    EXPECT_EQ(restored.visits(c), agent.visits(c));
  }
  EXPECT_EQ(restored.epsilon(), 0.3);
}

TEST(ActEpisode, FullExplorationWellFormed) {
  TaskConfig tc = default_task_config("catch", 3);
  auto env = make_task(tc);
  const auto& g = tc.geometry;
  Rng rng(14);
  LevelZeroAgent l0(g, {16}, rng);
  LevelOneAgent l1(g, {16}, rng);
  LevelTwoAgent l2(1.0);
  ActingConfig cfg;
  cfg.epsilon0 = cfg.epsilon1 = cfg.epsilon2 = 1.0;
  cfg.collect_level0 = true;
  const auto ep = act_episode(*env, l2, l1, l0, cfg, rng);

  EXPECT_FALSE(ep.level0.empty());
  EXPECT_EQ(ep.level1.size(), ep.options.size());
  ASSERT_EQ(ep.level2.size(), 1u);
  EXPECT_EQ(ep.level2[0].steps, ep.steps);
  EXPECT_DOUBLE_EQ(ep.level2[0].reward_sum, ep.total_reward);

  for (const auto& gt : ep.level0) {
    EXPECT_EQ(gt.transition.features.size(), l0.layout(gt.goal.gesture_class())->size());
  }
  double total = 0.0;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < ep.options.size(); ++i) {
    const auto& o = ep.options[i];
    const auto& t = ep.level1[i];
    EXPECT_EQ(o.cls, ep.cls);
    EXPECT_EQ(o.goal.gesture_class(), ep.cls);
    EXPECT_LE(o.steps, cfg.option_timeout);
    // SMDP consistency against the option log.
    double r = 0.0;
    for (double x : o.rewards) r += x;
    EXPECT_DOUBLE_EQ(t.cumulant, r);
    const bool last = i + 1 == ep.options.size();
    EXPECT_DOUBLE_EQ(t.continuation, last ? 0.0 : std::pow(cfg.gamma_env, static_cast<double>(o.steps)));
    EXPECT_EQ(t.features.size(), l1.layout()->size());
    total += r;
    steps += o.steps;
    const auto line = nlohmann::json::parse(option_log_line(0, i, o));
    EXPECT_EQ(line["steps"], o.steps);
  }
  EXPECT_DOUBLE_EQ(total, ep.total_reward);
  EXPECT_EQ(steps, ep.steps);
  EXPECT_EQ(ep.scoring_events, env->scoring_events());
}

TEST(ActEpisode, HistoriesResetBetweenEpisodes) {
  TaskConfig tc = default_task_config("button_sparse", 3);
  tc.episode_limit = 30;
  auto env = make_task(tc);
  Rng rng(15);
  LevelZeroAgent l0(tc.geometry, {8}, rng);
  LevelOneAgent l1(tc.geometry, {8}, rng);
  LevelTwoAgent l2(0.0);
  ActingConfig cfg;
  cfg.collect_level0 = true;
  cfg.epsilon0 = 1.0;
  for (int e = 0; e < 3; ++e) {
    const auto ep = act_episode(*env, l2, l1, l0, cfg, rng);
    // The first level-0 transition of each episode starts from a lifted screen.
    ASSERT_FALSE(ep.level0.empty());
    const auto& f = ep.level0.front().transition.features;
    EXPECT_EQ(f.hot_index(f.layout->blocks().size() - 1), static_cast<std::size_t>(tc.geometry.cells()));
  }
}

TEST(ActEpisode, PerOptionClassEmitsLevelTwoPerOption) {
  TaskConfig tc = default_task_config("catch", 4);
  auto env = make_task(tc);
  Rng rng(16);
  LevelZeroAgent l0(tc.geometry, {8}, rng);
  LevelOneAgent l1(tc.geometry, {8}, rng);
  LevelTwoAgent l2(1.0);
  ActingConfig cfg;
  cfg.class_per_option = true;
  const auto ep = act_episode(*env, l2, l1, l0, cfg, rng);
  EXPECT_EQ(ep.level2.size(), ep.options.size());
}

TEST(Pretrain, BudgetZeroIsNoOp) {
  const GridGeometry g(4, 3);
  Rng rng(17);
  LevelZeroAgent l0(g, {8}, rng);
  const auto out = pretrain_gestures(l0, PretrainConfig{}, 0);
  for (GestureClass c : kAllClasses) EXPECT_TRUE(same_parameters(out.net(c), l0.net(c)));
}

TEST(Pretrain, DeterministicAndChangesParameters) {
  const GridGeometry g(2, 2);
  Rng rng(18);
  LevelZeroAgent l0(g, {8}, rng);
  PretrainConfig cfg;
  cfg.learner.td.learning_rate = 0.05;
  cfg.learner.transitions_per_update = 4;
  cfg.seed = 3;
  const auto a = pretrain_gestures(l0, cfg, 600);
  const auto b = pretrain_gestures(l0, cfg, 600);
  bool changed = false;
  for (GestureClass c : kAllClasses) {
    EXPECT_TRUE(same_parameters(a.net(c), b.net(c)));
    changed = changed || !same_parameters(a.net(c), l0.net(c));
  }
  EXPECT_TRUE(changed);
}

TEST(Pretrain, TabularTapLearningOn2x2) {
  // A short run on a tiny grid is enough to learn every tap.
  const GridGeometry g(2, 2);
  Rng rng(19);
  LevelZeroAgent l0(g, {32}, rng);
  PretrainConfig cfg;
  cfg.learner.td.learning_rate = 0.1;
  cfg.learner.td.epsilon_decay_steps = 8000;
  cfg.learner.transitions_per_update = 2;
  cfg.learner.replay_capacity = 20000;
  cfg.seed = 5;
  const auto trained = pretrain_gestures(l0, cfg, 12000);
  EXPECT_EQ(completion_rate(trained, goals_of_class(g, GestureClass::Tap), 10).rate(), 1.0);
}

TEST(CompletionRate, ScriptedTapAgentIsPerfect) {
  const GridGeometry g(4, 3);
  const auto agent = scripted_tap_agent(g);
  const auto r = completion_rate(agent, goals_of_class(g, GestureClass::Tap), 10);
  EXPECT_EQ(r.attempts, 12u);
  EXPECT_EQ(r.completed, 12u);
}
