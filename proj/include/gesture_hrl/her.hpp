#pragma once

// Hindsight relabeling for goal-conditioned gesture GVFs. One option is
// executed for a single behavior goal, but every goal that completed
// anywhere in the trajectory gets its own copy of the trajectory with
// cumulants and continuations recomputed from the touch histories.

#include <functional>
#include <set>
#include <vector>

#include "gesture_core.hpp"
#include "rng.hpp"
#include "value_backend.hpp"

namespace ghrl {

struct GestureStep {
  TouchHistory history;
  std::uint32_t action = 0;
  TouchHistory next_history;
};

using GestureTrajectory = std::vector<GestureStep>;

struct GoalTransition {
  GestureGoal goal;
  Transition transition;
};

using GoalEncoder = std::function<FeatureVector(const GestureGoal&, const TouchHistory&)>;

inline constexpr std::size_t kDefaultRelabelBudget = 16;

// Goals completed at any step of the trajectory, sorted.
inline GoalSet trajectory_completions(const GridGeometry& g, const GestureTrajectory& trajectory) {
  std::set<GestureGoal> seen;
  for (const auto& step : trajectory)
    for (const auto& goal : completed_gestures(g, step.next_history)) seen.insert(goal);
  return {seen.begin(), seen.end()};
}

inline std::vector<GoalTransition> goal_transitions(const GridGeometry& g, const GestureTrajectory& trajectory,
                                                    const GestureGoal& goal, double base_discount,
                                                    const GoalEncoder& encode) {
  std::vector<GoalTransition> out;
  out.reserve(trajectory.size());
  for (const auto& step : trajectory) {
    GoalTransition gt{goal, {}};
    const GvfSpec gvf{goal, base_discount};
    gt.transition.features = encode(goal, step.history);
    gt.transition.actions = {step.action};
    gt.transition.cumulant = gvf.cumulant(g, step.next_history);
    gt.transition.continuation = gvf.continuation(g, step.next_history);
    gt.transition.next_features = encode(goal, step.next_history);
    out.push_back(std::move(gt));
  }
  return out;
}

// Transitions for the behavior goal, then for each completed goal (other than
// the behavior goal), at most relabel_budget of them chosen uniformly.
inline std::vector<GoalTransition> her_relabel(const GridGeometry& g, const GestureTrajectory& trajectory,
                                               const GestureGoal& behavior_goal, std::size_t relabel_budget,
                                               double base_discount, const GoalEncoder& encode, Rng& rng) {
  if (trajectory.empty()) throw std::invalid_argument("her_relabel: empty trajectory");
  std::vector<GoalTransition> out = goal_transitions(g, trajectory, behavior_goal, base_discount, encode);
  GoalSet extra;
  for (const auto& goal : trajectory_completions(g, trajectory))
    if (goal != behavior_goal) extra.push_back(goal);
  if (extra.size() > relabel_budget) {
    // Partial Fisher-Yates: the first relabel_budget slots become a uniform subset.
    for (std::size_t i = 0; i < relabel_budget; ++i) std::swap(extra[i], extra[i + rng.uniform_index(extra.size() - i)]);
    extra.erase(extra.begin() + static_cast<std::ptrdiff_t>(relabel_budget), extra.end());
  }
  for (const auto& goal : extra) {
    auto more = goal_transitions(g, trajectory, goal, base_discount, encode);
    out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  return out;
}

}  // namespace ghrl

namespace ghrl {

// Folds consecutive per-step transitions of one trajectory into multi-step
// transitions: from each step t, cumulants are accumulated with the running
// product of continuations for up to `horizon` steps (stopping where a
// continuation is 0), and the result bootstraps from the state reached.
// horizon 1 returns the input unchanged.
inline std::vector<Transition> multistep_transitions(const std::vector<Transition>& steps, std::size_t horizon) {
  if (horizon == 0) throw std::invalid_argument("multistep_transitions: horizon must be >= 1");
  std::vector<Transition> out;
  out.reserve(steps.size());
  for (std::size_t t = 0; t < steps.size(); ++t) {
    Transition m;
    m.features = steps[t].features;
    m.actions = steps[t].actions;
    double discount = 1.0;
    std::size_t last = t;
    for (std::size_t i = t; i < steps.size() && i < t + horizon; ++i) {
      m.cumulant += discount * steps[i].cumulant;
      discount *= steps[i].continuation;
      last = i;
      if (steps[i].continuation == 0.0) break;
    }
    m.continuation = discount;
    m.next_features = steps[last].next_features;
    m.next_mask = steps[last].next_mask;
    out.push_back(std::move(m));
  }
  return out;
}

// her_relabel output is grouped per goal in blocks of trajectory length.
inline std::vector<GoalTransition> multistep_relabeled(std::vector<GoalTransition> relabeled, std::size_t trajectory_length,
                                                       std::size_t horizon) {
  if (horizon == 1) return relabeled;
  if (trajectory_length == 0 || relabeled.size() % trajectory_length != 0)
    throw std::invalid_argument("multistep_relabeled: transitions are not whole trajectories");
  std::vector<GoalTransition> out;
  out.reserve(relabeled.size());
  std::vector<Transition> block;
  for (std::size_t start = 0; start < relabeled.size(); start += trajectory_length) {
    block.clear();
    for (std::size_t i = 0; i < trajectory_length; ++i) block.push_back(std::move(relabeled[start + i].transition));
    auto folded = multistep_transitions(block, horizon);
    for (std::size_t i = 0; i < trajectory_length; ++i)
      out.push_back({relabeled[start + i].goal, std::move(folded[i])});
  }
  return out;
}

}  // namespace ghrl
