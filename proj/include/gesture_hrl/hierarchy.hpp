#pragma once

// Three-level gesture hierarchy.
//
//   level 2: picks a gesture class {tap, swipe, fling} from per-class
//            average per-step reward estimates (exact means).
//   level 1: picks the gesture parameters from the screen through a two-head
//            Q-network; the class chosen above masks each head to its slice.
//   level 0: executes the chosen gesture GVF as an option, one network per
//            class, until the gesture's cumulant fires, a timeout, or the
//            episode ends.
//
// Level-1 head layout (width 2n + 8 each, n = cells):
//   [0, n)    tap cell            (head 2 unused)
//   [n, 2n)   swipe start / end   (head 1 / head 2)
//   [2n, +8)  fling direction     (head 2 unused)

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "env_sim.hpp"
#include "gesture_core.hpp"
#include "her.hpp"
#include "learner.hpp"
#include "rng.hpp"
#include "value_backend.hpp"

namespace ghrl {

inline std::size_t class_slot(GestureClass c) { return static_cast<std::size_t>(c); }

// ---------------------------------------------------------------- level 0

inline LayoutPtr level0_layout(const GridGeometry& g, GestureClass cls) {
  const auto n = static_cast<std::size_t>(g.cells());
  auto l = std::make_shared<FeatureLayout>();
  switch (cls) {
    case GestureClass::Tap: l->add("tap_cell", n); break;
    case GestureClass::Swipe: l->add("swipe_start", n).add("swipe_end", n); break;
    case GestureClass::Fling: l->add("fling_direction", 8); break;
  }
  l->add("last_touch", n + 1);
  return l;
}

inline std::size_t last_touch_slot(const GridGeometry& g, const TouchHistory& h) {
  return (!h.empty() && h.back().is_touch()) ? static_cast<std::size_t>(h.back().cell())
                                             : static_cast<std::size_t>(g.cells());
}

inline FeatureVector encode_level0(const GridGeometry& g, const LayoutPtr& layout, const GestureGoal& goal,
                                   const TouchHistory& h) {
  FeatureVector f(layout);
  std::size_t b = 0;
  switch (goal.gesture_class()) {
    case GestureClass::Tap: f.set_one_hot(b++, static_cast<std::size_t>(goal.tap_cell())); break;
    case GestureClass::Swipe:
      f.set_one_hot(b++, static_cast<std::size_t>(goal.start_cell()));
      f.set_one_hot(b++, static_cast<std::size_t>(goal.end_cell()));
      break;
    case GestureClass::Fling: f.set_one_hot(b++, static_cast<std::size_t>(goal.direction())); break;
  }
  f.set_one_hot(b, last_touch_slot(g, h));
  return f;
}

// Goal-conditioned primitive-action values, three independent networks.
class LevelZeroAgent {
public:
  LevelZeroAgent() = default;

  LevelZeroAgent(const GridGeometry& g, const std::vector<std::size_t>& hidden, Rng& rng) : geometry_(g) {
    for (GestureClass c : kAllClasses) {
      layouts_[class_slot(c)] = level0_layout(g, c);
      nets_[class_slot(c)] =
          QApproximator::network(layouts_[class_slot(c)]->size(), hidden, action_space_size(g), rng);
    }
  }

  // From stored parameters (order tap, swipe, fling); validates the shapes.
  LevelZeroAgent(const GridGeometry& g, std::vector<QApproximator> nets) : geometry_(g) {
    if (nets.size() != 3) throw std::invalid_argument("level-0 parameters must hold 3 approximators");
    for (GestureClass c : kAllClasses) {
      layouts_[class_slot(c)] = level0_layout(g, c);
      auto& q = nets[class_slot(c)];
      if (q.input_size() != layouts_[class_slot(c)]->size() || q.output_size() != action_space_size(g))
        throw std::invalid_argument("level-0 parameters do not match the grid geometry");
      nets_[class_slot(c)] = std::move(q);
    }
  }

  const GridGeometry& geometry() const { return geometry_; }
  const QApproximator& net(GestureClass c) const { return nets_[class_slot(c)]; }
  QApproximator& net(GestureClass c) { return nets_[class_slot(c)]; }
  const LayoutPtr& layout(GestureClass c) const { return layouts_[class_slot(c)]; }
  std::vector<QApproximator> parameters() const { return {nets_.begin(), nets_.end()}; }

  FeatureVector encode(const GestureGoal& goal, const TouchHistory& h) const {
    return encode_level0(geometry_, layout(goal.gesture_class()), goal, h);
  }

  Eigen::VectorXd q_values(const GestureGoal& goal, const TouchHistory& h) const {
    return net(goal.gesture_class()).q_values(encode(goal, h));
  }

  std::size_t choose(const GestureGoal& goal, const TouchHistory& h, double epsilon, Rng& rng) const {
    return epsilon_greedy(q_values(goal, h), {}, epsilon, rng);
  }

  GoalEncoder encoder() const {
    return [this](const GestureGoal& goal, const TouchHistory& h) { return encode(goal, h); };
  }

private:
  GridGeometry geometry_;
  std::array<LayoutPtr, 3> layouts_;
  std::array<QApproximator, 3> nets_;
};

enum class Termination : std::uint8_t { Completed, Timeout, EpisodeEnd };

inline std::string_view termination_name(Termination t) {
  switch (t) {
    case Termination::Completed: return "completed";
    case Termination::Timeout: return "timeout";
    case Termination::EpisodeEnd: return "episode_end";
  }
  return "?";
}

struct OptionExecution {
  GestureGoal goal = GestureGoal::tap(0);
  std::size_t steps = 0;
  double reward = 0.0;
  std::vector<double> rewards;  // per primitive step
  Termination termination = Termination::Timeout;
  EnvStep final_step;
  GestureTrajectory trajectory;
};

// Runs the goal's option from the current state. `history` is the agent's
// copy of the touch history and is advanced in place.
inline OptionExecution run_option(Environment& env, const LevelZeroAgent& agent, const GestureGoal& goal,
                                  double epsilon, std::size_t max_len, TouchHistory& history, Rng& rng) {
  if (env.episode_ended()) throw std::logic_error("run_option: episode already ended");
  const GridGeometry& g = env.geometry();
  OptionExecution out;
  out.goal = goal;
  while (out.steps < max_len) {
    const std::size_t a = agent.choose(goal, history, epsilon, rng);
    GestureStep step{history, static_cast<std::uint32_t>(a), history};
    out.final_step = env.step(PrimitiveAction::from_index(g, a));
    history.push(PrimitiveAction::from_index(g, a).symbol());
    step.next_history = history;
    out.trajectory.push_back(std::move(step));
    ++out.steps;
    out.reward += out.final_step.reward;
    out.rewards.push_back(out.final_step.reward);
    if (cumulant(g, history, goal) == 1) {
      out.termination = Termination::Completed;
      return out;
    }
    if (out.final_step.episode_end) {
      out.termination = Termination::EpisodeEnd;
      return out;
    }
  }
  out.termination = Termination::Timeout;
  return out;
}

// ---------------------------------------------------------------- level 1

inline LayoutPtr screen_layout(const GridGeometry& g) {
  const auto n = static_cast<std::size_t>(g.cells());
  auto l = std::make_shared<FeatureLayout>();
  l->add("image", n * ScreenImage::kChannels, false).add("last_touch", n + 1).add("completed", 3, false);
  return l;
}

// Pixels scaled to [0, 1], then the auxiliary touch observation.
inline FeatureVector encode_screen(const GridGeometry& g, const LayoutPtr& layout, const ScreenImage& image,
                                   const AuxObservation& aux) {
  FeatureVector f(layout);
  if (image.values.size() != layout->block(0).size) throw size_mismatch_error("screen encoding: image size");
  for (std::size_t i = 0; i < image.values.size(); ++i) f.values[i] = static_cast<float>(image.values[i]) / 255.0f;
  f.set_one_hot(1, aux.last_touch_slot(g));
  f.set_value(2, 0, aux.completed.tap ? 1.0f : 0.0f);
  f.set_value(2, 1, aux.completed.swipe ? 1.0f : 0.0f);
  f.set_value(2, 2, aux.completed.fling ? 1.0f : 0.0f);
  return f;
}

struct GvfSelection {
  GestureGoal goal = GestureGoal::tap(0);
  // Output indices into the full two-head vector: head 1, and head 2 for swipes.
  std::uint32_t head1 = 0;
  std::optional<std::uint32_t> head2;
};

class LevelOneAgent {
public:
  LevelOneAgent() = default;

  LevelOneAgent(const GridGeometry& g, const std::vector<std::size_t>& hidden, Rng& rng)
      : geometry_(g), layout_(screen_layout(g)) {
    net_ = QApproximator::network(layout_->size(), hidden, 2 * head_width(), rng, head_width());
    build_masks();
  }

  LevelOneAgent(const GridGeometry& g, QApproximator net) : geometry_(g), layout_(screen_layout(g)) {
    if (net.input_size() != layout_->size() || net.output_size() != 2 * head_width() ||
        net.head_width() != head_width())
      throw std::invalid_argument("level-1 parameters do not match the grid geometry");
    net_ = std::move(net);
    build_masks();
  }

  std::size_t head_width() const { return 2 * static_cast<std::size_t>(geometry_.cells()) + 8; }

  // [begin, end) of the class's columns within one head.
  std::array<std::size_t, 2> class_slice(GestureClass c) const {
    const auto n = static_cast<std::size_t>(geometry_.cells());
    switch (c) {
      case GestureClass::Tap: return {0, n};
      case GestureClass::Swipe: return {n, 2 * n};
      case GestureClass::Fling: return {2 * n, 2 * n + 8};
    }
    return {0, 0};
  }

  // Both heads' slices for the class (2 x slice width entries set).
  const MaskPtr& class_mask(GestureClass c) const { return masks_[class_slot(c)]; }

  const GridGeometry& geometry() const { return geometry_; }
  const LayoutPtr& layout() const { return layout_; }
  const QApproximator& net() const { return net_; }
  QApproximator& net() { return net_; }

  FeatureVector encode(const ScreenImage& image, const AuxObservation& aux) const {
    return encode_screen(geometry_, layout_, image, aux);
  }

  // Selection from precomputed Q-values. Only the class's slice is read.
  GvfSelection select_from_q(const Eigen::Ref<const Eigen::VectorXd>& q, GestureClass c, double epsilon,
                             Rng& rng) const {
    const auto [lo, hi] = class_slice(c);
    const std::size_t w = head_width();
    const bool explore = epsilon > 0.0 && rng.uniform01() < epsilon;
    auto pick = [&](std::size_t head) {
      if (explore) return lo + rng.uniform_index(hi - lo);
      std::size_t best = lo;
      for (std::size_t a = lo + 1; a < hi; ++a)
        if (q(static_cast<Eigen::Index>(head * w + a)) > q(static_cast<Eigen::Index>(head * w + best))) best = a;
      return best;
    };
    GvfSelection s;
    const std::size_t p1 = pick(0);
    s.head1 = static_cast<std::uint32_t>(p1);
    switch (c) {
      case GestureClass::Tap: s.goal = GestureGoal::tap(static_cast<Cell>(p1 - lo)); break;
      case GestureClass::Fling: s.goal = GestureGoal::fling(static_cast<Direction>(p1 - lo)); break;
      case GestureClass::Swipe: {
        const std::size_t p2 = pick(1);
        s.head2 = static_cast<std::uint32_t>(w + p2);
        s.goal = GestureGoal::swipe(static_cast<Cell>(p1 - lo), static_cast<Cell>(p2 - lo));
        break;
      }
    }
    return s;
  }

  GvfSelection select_gvf(const ScreenImage& image, const AuxObservation& aux, GestureClass c, double epsilon,
                          Rng& rng) const {
    return select_from_q(net_.q_values(encode(image, aux)), c, epsilon, rng);
  }

  // Reported value of a state under a class: mean of the trained heads' maxima.
  double joint_value(const Eigen::Ref<const Eigen::VectorXd>& q, GestureClass c) const {
    const auto [lo, hi] = class_slice(c);
    const std::size_t w = head_width();
    auto head_max = [&](std::size_t head) {
      double m = q(static_cast<Eigen::Index>(head * w + lo));
      for (std::size_t a = lo; a < hi; ++a) m = std::max(m, q(static_cast<Eigen::Index>(head * w + a)));
      return m;
    };
    return c == GestureClass::Swipe ? 0.5 * (head_max(0) + head_max(1)) : head_max(0);
  }

private:
  void build_masks() {
    const std::size_t w = head_width();
    for (GestureClass c : kAllClasses) {
      ActionMask m(2 * w, false);
      const auto [lo, hi] = class_slice(c);
      for (std::size_t head = 0; head < 2; ++head)
        for (std::size_t a = lo; a < hi; ++a) m[head * w + a] = true;
      masks_[class_slot(c)] = std::make_shared<const ActionMask>(std::move(m));
    }
  }

  GridGeometry geometry_;
  LayoutPtr layout_;
  QApproximator net_;
  std::array<MaskPtr, 3> masks_;
};

// SMDP transition for one option: undiscounted in-option reward, discount
// gamma_env^k, zero continuation when the episode ended.
inline Transition level1_transition(const LevelOneAgent& agent, FeatureVector before, const GvfSelection& selection,
                                    const OptionExecution& option, FeatureVector after, double gamma_env) {
  if (option.steps < 1) throw std::invalid_argument("level1_transition: option took no steps");
  Transition t;
  t.features = std::move(before);
  t.actions = {selection.head1};
  if (selection.head2) t.actions.push_back(*selection.head2);
  t.cumulant = option.reward;
  t.continuation = option.final_step.episode_end ? 0.0 : std::pow(gamma_env, static_cast<double>(option.steps));
  t.next_features = std::move(after);
  t.next_mask = agent.class_mask(selection.goal.gesture_class());
  return t;
}

// ---------------------------------------------------------------- level 2

// Per-class average per-step episode reward, kept as exact sums and counts.
class LevelTwoAgent {
public:
  explicit LevelTwoAgent(double epsilon = 0.1) : epsilon_(epsilon) {}

  double epsilon() const { return epsilon_; }
  void set_epsilon(double e) { epsilon_ = e; }

  double estimate(GestureClass c) const {
    const auto i = class_slot(c);
    return counts_[i] == 0 ? 0.0 : sums_[i] / static_cast<double>(counts_[i]);
  }
  std::uint64_t visits(GestureClass c) const { return counts_[class_slot(c)]; }
  double sum(GestureClass c) const { return sums_[class_slot(c)]; }

  Eigen::Vector3d estimates() const {
    return {estimate(GestureClass::Tap), estimate(GestureClass::Swipe), estimate(GestureClass::Fling)};
  }

  // Restores from stored sums and counts.
  void restore(GestureClass c, double sum, std::uint64_t count) {
    sums_[class_slot(c)] = sum;
    counts_[class_slot(c)] = count;
  }

  void update(GestureClass c, double episode_reward_sum, std::size_t episode_steps) {
    if (episode_steps < 1) throw std::invalid_argument("level2_update: episode_steps must be >= 1");
    sums_[class_slot(c)] += episode_reward_sum / static_cast<double>(episode_steps);
    ++counts_[class_slot(c)];
  }

private:
  double epsilon_;
  std::array<double, 3> sums_{};
  std::array<std::uint64_t, 3> counts_{};
};

// Epsilon-greedy; ties go to tap, then swipe, then fling.
inline GestureClass select_class(const LevelTwoAgent& agent, double epsilon, Rng& rng) {
  return static_cast<GestureClass>(epsilon_greedy(agent.estimates(), {}, epsilon, rng));
}

inline GestureClass select_class(const LevelTwoAgent& agent, Rng& rng) {
  return select_class(agent, agent.epsilon(), rng);
}

inline void level2_update(LevelTwoAgent& agent, GestureClass c, double episode_reward_sum, std::size_t steps) {
  agent.update(c, episode_reward_sum, steps);
}

// Level-2 state as a 2x3 table: row 0 per-class sums, row 1 visit counts.
inline QApproximator level2_to_table(const LevelTwoAgent& agent) {
  auto layout = std::make_shared<FeatureLayout>();
  layout->add("level2_stat", 2);
  auto q = QApproximator::table(layout, 3);
  for (GestureClass c : kAllClasses) {
    q.table_values()(0, static_cast<Eigen::Index>(class_slot(c))) = agent.sum(c);
    q.table_values()(1, static_cast<Eigen::Index>(class_slot(c))) = static_cast<double>(agent.visits(c));
  }
  return q;
}

inline LevelTwoAgent level2_from_table(const QApproximator& q, double epsilon) {
  if (q.backend() != Backend::Table || q.table_values().rows() != 2 || q.table_values().cols() != 3)
    throw std::invalid_argument("level-2 parameters must be a 2x3 table");
  LevelTwoAgent agent(epsilon);
  for (GestureClass c : kAllClasses)
    agent.restore(c, q.table_values()(0, static_cast<Eigen::Index>(class_slot(c))),
                  static_cast<std::uint64_t>(q.table_values()(1, static_cast<Eigen::Index>(class_slot(c)))));
  return agent;
}

// ---------------------------------------------------------------- flat baseline

// One Q-network over the 2n primitive actions, fed the level-1 observation.
class FlatAgent {
public:
  FlatAgent() = default;
  FlatAgent(const GridGeometry& g, const std::vector<std::size_t>& hidden, Rng& rng)
      : geometry_(g), layout_(screen_layout(g)) {
    net_ = QApproximator::network(layout_->size(), hidden, action_space_size(g), rng);
  }
  FlatAgent(const GridGeometry& g, QApproximator net) : geometry_(g), layout_(screen_layout(g)) {
    if (net.input_size() != layout_->size() || net.output_size() != action_space_size(g))
      throw std::invalid_argument("flat parameters do not match the grid geometry");
    net_ = std::move(net);
  }

  const GridGeometry& geometry() const { return geometry_; }
  const QApproximator& net() const { return net_; }
  QApproximator& net() { return net_; }
  FeatureVector encode(const ScreenImage& image, const AuxObservation& aux) const {
    return encode_screen(geometry_, layout_, image, aux);
  }

private:
  GridGeometry geometry_;
  LayoutPtr layout_;
  QApproximator net_;
};

// ---------------------------------------------------------------- acting

struct ActingConfig {
  std::size_t option_timeout = kDefaultOptionTimeout;
  double gamma_env = 0.99;
  double gvf_discount = 0.99;
  std::size_t relabel_budget = kDefaultRelabelBudget;
  // Steps folded into each level-0 transition (1 = one-step Q-learning).
  std::size_t return_horizon = kDefaultOptionTimeout;
  double epsilon0 = 0.0;
  double epsilon1 = 0.1;
  double epsilon2 = 0.1;
  bool collect_level0 = false;
  bool class_per_option = false;
  std::optional<GestureClass> forced_class;
};

struct OptionLog {
  GestureGoal goal = GestureGoal::tap(0);
  GestureClass cls = GestureClass::Tap;
  std::size_t steps = 0;
  std::vector<double> rewards;
  Termination termination = Termination::Timeout;
};

struct LevelTwoSample {
  GestureClass cls = GestureClass::Tap;
  double reward_sum = 0.0;
  std::size_t steps = 0;
};

struct EpisodeOutput {
  double total_reward = 0.0;
  std::size_t steps = 0;  // primitive actions
  std::size_t scoring_events = 0;
  GestureClass cls = GestureClass::Tap;
  std::vector<OptionLog> options;
  std::vector<GoalTransition> level0;
  std::vector<Transition> level1;
  std::vector<LevelTwoSample> level2;
  std::vector<Transition> flat;
};

inline std::string option_log_line(std::size_t episode, std::size_t index, const OptionLog& o) {
  nlohmann::json j;
  j["episode"] = episode;
  j["option"] = index;
  j["class"] = class_name(o.cls);
  j["goal"] = o.goal.to_string();
  j["steps"] = o.steps;
  j["rewards"] = o.rewards;
  j["termination"] = termination_name(o.termination);
  return j.dump();
}

inline GestureGoal sample_goal(const GridGeometry& g, GestureClass c, Rng& rng) {
  const auto n = static_cast<std::size_t>(g.cells());
  switch (c) {
    case GestureClass::Tap: return GestureGoal::tap(static_cast<Cell>(rng.uniform_index(n)));
    case GestureClass::Swipe: {
      const auto a = static_cast<Cell>(rng.uniform_index(n));
      const auto b = static_cast<Cell>(rng.uniform_index(n));
      return GestureGoal::swipe(a, b);
    }
    case GestureClass::Fling: return GestureGoal::fling(static_cast<Direction>(rng.uniform_index(8)));
  }
  return GestureGoal::tap(0);
}

inline GestureGoal sample_goal(const GridGeometry& g, Rng& rng) {
  return sample_goal(g, kAllClasses[rng.uniform_index(3)], rng);
}

// One hierarchical episode. Level 2 picks the class (once, or per option),
// level 1 the goal, level 0 runs it. Experience is routed into per-level
// batches in the returned record.
inline EpisodeOutput act_episode(Environment& env, const LevelTwoAgent& level2, const LevelOneAgent& level1,
                                 const LevelZeroAgent& level0, const ActingConfig& cfg, Rng& rng) {
  const GridGeometry& g = env.geometry();
  EpisodeOutput out;
  EnvStep current = env.reset();
  TouchHistory history;
  history.push(TouchSymbol::lift());

  auto pick_class = [&] { return cfg.forced_class ? *cfg.forced_class : select_class(level2, cfg.epsilon2, rng); };
  GestureClass cls = pick_class();
  out.cls = cls;
  LevelTwoSample option_stat{cls, 0.0, 0};

  while (!current.episode_end) {
    if (cfg.class_per_option && !out.options.empty()) cls = pick_class();
    FeatureVector before = level1.encode(current.image, current.aux);
    const GvfSelection sel = level1.select_from_q(level1.net().q_values(before), cls, cfg.epsilon1, rng);
    OptionExecution opt = run_option(env, level0, sel.goal, cfg.epsilon0, cfg.option_timeout, history, rng);
    current = opt.final_step;
    FeatureVector after = level1.encode(current.image, current.aux);

    out.level1.push_back(level1_transition(level1, std::move(before), sel, opt, std::move(after), cfg.gamma_env));
    if (cfg.collect_level0) {
      auto relabeled = multistep_relabeled(
          her_relabel(g, opt.trajectory, sel.goal, cfg.relabel_budget, cfg.gvf_discount, level0.encoder(), rng),
          opt.trajectory.size(), cfg.return_horizon);
      out.level0.insert(out.level0.end(), std::make_move_iterator(relabeled.begin()),
                        std::make_move_iterator(relabeled.end()));
    }
    if (cfg.class_per_option) out.level2.push_back({cls, opt.reward, opt.steps});

    out.total_reward += opt.reward;
    out.steps += opt.steps;
    out.options.push_back({sel.goal, cls, opt.steps, opt.rewards, opt.termination});
  }
  out.scoring_events = env.scoring_events();
  if (!cfg.class_per_option) {
    option_stat.reward_sum = out.total_reward;
    option_stat.steps = out.steps;
    out.level2.push_back(option_stat);
  }
  return out;
}

// Reward-free gesture practice: sample a uniform class and goal, run the
// option, relabel with hindsight; repeat until the episode ends or the step
// allowance runs out.
inline EpisodeOutput pretrain_episode(Environment& env, const LevelZeroAgent& level0, const ActingConfig& cfg,
                                      std::size_t max_steps, Rng& rng) {
  const GridGeometry& g = env.geometry();
  EpisodeOutput out;
  EnvStep current = env.reset();
  TouchHistory history;
  history.push(TouchSymbol::lift());
  while (!current.episode_end && out.steps < max_steps) {
    const GestureClass cls = kAllClasses[rng.uniform_index(3)];
    const GestureGoal goal = sample_goal(g, cls, rng);
    const std::size_t len = std::min(cfg.option_timeout, max_steps - out.steps);
    OptionExecution opt = run_option(env, level0, goal, cfg.epsilon0, len, history, rng);
    current = opt.final_step;
    auto relabeled = multistep_relabeled(
        her_relabel(g, opt.trajectory, goal, cfg.relabel_budget, cfg.gvf_discount, level0.encoder(), rng),
        opt.trajectory.size(), cfg.return_horizon);
    out.level0.insert(out.level0.end(), std::make_move_iterator(relabeled.begin()),
                      std::make_move_iterator(relabeled.end()));
    out.steps += opt.steps;
    out.options.push_back({goal, cls, opt.steps, opt.rewards, opt.termination});
  }
  return out;
}

// Flat baseline episode: one primitive action per decision.
inline EpisodeOutput flat_episode(Environment& env, const FlatAgent& agent, double epsilon, double gamma_env,
                                  Rng& rng) {
  const GridGeometry& g = env.geometry();
  EpisodeOutput out;
  EnvStep current = env.reset();
  while (!current.episode_end) {
    FeatureVector before = agent.encode(current.image, current.aux);
    const std::size_t a = epsilon_greedy(agent.net().q_values(before), {}, epsilon, rng);
    current = env.step(PrimitiveAction::from_index(g, a));
    Transition t;
    t.features = std::move(before);
    t.actions = {static_cast<std::uint32_t>(a)};
    t.cumulant = current.reward;
    t.continuation = current.episode_end ? 0.0 : gamma_env;
    t.next_features = agent.encode(current.image, current.aux);
    out.flat.push_back(std::move(t));
    out.total_reward += current.reward;
    ++out.steps;
  }
  out.scoring_events = env.scoring_events();
  return out;
}

// Uniform primitive actions; touches no learned parameters.
inline EpisodeOutput random_episode(Environment& env, Rng& rng) {
  const GridGeometry& g = env.geometry();
  EpisodeOutput out;
  EnvStep current = env.reset();
  while (!current.episode_end) {
    current = env.step(PrimitiveAction::from_index(g, rng.uniform_index(action_space_size(g))));
    out.total_reward += current.reward;
    ++out.steps;
  }
  out.scoring_events = env.scoring_events();
  return out;
}

// ---------------------------------------------------------------- level-0 learning

// Three class learners; transitions are routed by the goal's class.
class LevelZeroLearner {
public:
  LevelZeroLearner(const LevelZeroAgent& initial, const LearnerConfig& config) : geometry_(initial.geometry()) {
    for (GestureClass c : kAllClasses) {
      LearnerConfig lc = config;
      lc.td.seed = mix_seed(config.td.seed, class_slot(c));
      learners_.emplace_back(initial.net(c), lc);
    }
  }

  void add(GoalTransition gt) { learners_[class_slot(gt.goal.gesture_class())].add(std::move(gt.transition)); }

  // Runs the updates owed by each class learner; returns the summed loss and count.
  std::pair<double, std::size_t> update_due() {
    double loss = 0.0;
    std::size_t n = 0;
    for (auto& l : learners_) {
      for (std::size_t k = l.updates_due(); k > 0; --k) {
        loss += l.update();
        ++n;
      }
    }
    return {loss, n};
  }

  std::pair<double, std::size_t> update_fixed(std::size_t k) {
    double loss = 0.0;
    std::size_t n = 0;
    for (auto& l : learners_) {
      for (std::size_t i = 0; i < k && l.can_update(); ++i) {
        loss += l.update();
        ++n;
      }
    }
    return {loss, n};
  }

  LevelZeroAgent agent() const {
    return LevelZeroAgent(geometry_, {learners_[0].online(), learners_[1].online(), learners_[2].online()});
  }

  const QLearner& learner(GestureClass c) const { return learners_[class_slot(c)]; }
  std::uint64_t received() const {
    std::uint64_t n = 0;
    for (const auto& l : learners_) n += l.received();
    return n;
  }

private:
  GridGeometry geometry_;
  std::vector<QLearner> learners_;
};

struct PretrainConfig {
  ActingConfig acting;
  LearnerConfig learner;
  std::size_t episode_limit = 200;
  std::uint64_t seed = 0;
};

// Single-context gesture pretraining on the reward-free screen until the
// primitive-step budget is spent. Exploration follows learner.td's epsilon
// schedule over primitive steps.
inline LevelZeroAgent pretrain_gestures(const LevelZeroAgent& initial, const PretrainConfig& cfg, std::size_t budget) {
  if (budget == 0) return initial;
  TaskConfig tc;
  tc.name = "blank";
  tc.geometry = initial.geometry();
  tc.seed = mix_seed(cfg.seed, 0xb1a4ull);
  tc.episode_limit = static_cast<int>(cfg.episode_limit);
  auto env = make_task(tc);
  LevelZeroLearner learner(initial, cfg.learner);
  LevelZeroAgent current = initial;
  Rng rng(mix_seed(cfg.seed, 0xac70ull));
  std::size_t steps = 0;
  while (steps < budget) {
    ActingConfig acting = cfg.acting;
    acting.epsilon0 = cfg.learner.td.epsilon_at(steps);
    // Short slices so the acting copy tracks the learner closely.
    EpisodeOutput ep = pretrain_episode(*env, current, acting, std::min<std::size_t>(budget - steps, 50), rng);
    steps += ep.steps;
    for (auto& gt : ep.level0) learner.add(std::move(gt));
    learner.update_due();
    current = learner.agent();
  }
  return current;
}

struct CompletionReport {
  std::size_t attempts = 0;
  std::size_t completed = 0;
  double rate() const { return attempts == 0 ? 0.0 : static_cast<double>(completed) / static_cast<double>(attempts); }
};

// Greedy completion of each goal from a freshly reset (lifted) screen.
inline CompletionReport completion_rate(const LevelZeroAgent& agent, const std::vector<GestureGoal>& goals,
                                        std::size_t max_len, std::uint64_t seed = 0) {
  TaskConfig tc;
  tc.name = "blank";
  tc.geometry = agent.geometry();
  tc.seed = seed;
  tc.episode_limit = static_cast<int>(max_len + 1);
  auto env = make_task(tc);
  Rng rng(seed);
  CompletionReport r;
  for (const auto& goal : goals) {
    env->reset();
    TouchHistory h;
    h.push(TouchSymbol::lift());
    const auto opt = run_option(*env, agent, goal, 0.0, max_len, h, rng);
    ++r.attempts;
    if (opt.termination == Termination::Completed) ++r.completed;
  }
  return r;
}

}  // namespace ghrl
