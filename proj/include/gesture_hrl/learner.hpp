#pragma once

#include <cstdint>
#include <vector>

#include "rng.hpp"
#include "value_backend.hpp"

namespace ghrl {

struct LearnerConfig {
  TdConfig td;
  std::size_t replay_capacity = 50000;
  // Updates per deterministic round when transitions_per_update is 0.
  std::size_t updates_per_round = 16;
  // If nonzero, a learner is due one update per this many received transitions.
  std::size_t transitions_per_update = 0;
};

// Online/target approximator pair fed from its own replay buffer.
class QLearner {
public:
  QLearner(QApproximator initial, LearnerConfig config)
      : online_(initial), target_(std::move(initial)), replay_(config.replay_capacity), config_(config),
        rng_(mix_seed(config.td.seed, 0x51ull)) {
    config_.td.validate();
  }

  void add(Transition t) { replay_.add(std::move(t)); }

  bool can_update() const { return replay_.size() >= config_.td.batch_size; }

  double update() {
    const auto batch = replay_.sample(config_.td.batch_size, rng_);
    const double loss = td_update(online_, target_, batch, config_.td);
    ++updates_;
    return loss;
  }

  // Updates owed under the configured cadence.
  std::size_t updates_due() const {
    if (!can_update()) return 0;
    if (config_.transitions_per_update == 0) return config_.updates_per_round;
    const std::uint64_t owed = replay_.inserted() / config_.transitions_per_update;
    return owed > updates_ ? static_cast<std::size_t>(owed - updates_) : 0;
  }

  void load(const QApproximator& q) {
    online_ = q;
    target_ = q;
  }

  const QApproximator& online() const { return online_; }
  const ReplayBuffer<Transition>& replay() const { return replay_; }
  std::uint64_t updates() const { return updates_; }
  std::uint64_t received() const { return replay_.inserted(); }
  const LearnerConfig& config() const { return config_; }

private:
  QApproximator online_;
  QApproximator target_;
  ReplayBuffer<Transition> replay_;
  LearnerConfig config_;
  Rng rng_;
  std::uint64_t updates_ = 0;
};

}  // namespace ghrl
