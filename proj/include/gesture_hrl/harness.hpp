#pragma once

// Actor/learner topology: actors run hierarchy episodes and route every
// transition to the learner of its level through a bounded queue; learners
// publish versioned parameter snapshots that actors fetch between episodes.
//
// CONCURRENT runs actors and learners as threads in one process.
// DETERMINISTIC runs the same contexts in one thread following a fixed
// round-robin plan, so identical seeds give identical reports.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "env_sim.hpp"
#include "hierarchy.hpp"
#include "learner.hpp"
#include "rng.hpp"
#include "value_backend.hpp"

namespace ghrl {

inline constexpr std::size_t kLevelCount = 3;

class harness_config_error : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------- queue

// Bounded multi-producer queue. A producer that finds the queue full blocks
// until space frees and the back-pressure counter records the stall.
template <typename T>
class BlockingQueue {
public:
  explicit BlockingQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("BlockingQueue: capacity must be >= 1");
  }

  void push(T item) {
    std::unique_lock lock(mu_);
    if (closed_) throw std::logic_error("BlockingQueue: push after close");
    if (items_.size() >= capacity_) {
      ++blocked_;
      not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
      if (closed_) throw std::logic_error("BlockingQueue: closed while a producer was blocked");
    }
    items_.push_back(std::move(item));
    ++pushed_;
    high_water_ = std::max(high_water_, items_.size());
    not_empty_.notify_one();
  }

  std::optional<T> try_pop() {
    std::lock_guard lock(mu_);
    return pop_locked();
  }

  // Waits up to `timeout`; empty result on timeout or when closed and drained.
  std::optional<T> pop_for(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    not_empty_.wait_for(lock, timeout, [&] { return !items_.empty() || closed_; });
    return pop_locked();
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  bool closed_and_empty() const {
    std::lock_guard lock(mu_);
    return closed_ && items_.empty();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t pushed() const {
    std::lock_guard lock(mu_);
    return pushed_;
  }
  std::uint64_t blocked() const {
    std::lock_guard lock(mu_);
    return blocked_;
  }
  std::size_t high_water() const {
    std::lock_guard lock(mu_);
    return high_water_;
  }

private:
  std::optional<T> pop_locked() {
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  const std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<T> items_;
  bool closed_ = false;
  std::uint64_t pushed_ = 0;
  std::uint64_t blocked_ = 0;
  std::size_t high_water_ = 0;
};

// ---------------------------------------------------------------- snapshots

struct ParameterSnapshot {
  std::size_t level = 0;
  std::uint64_t version = 0;
  std::vector<QApproximator> payload;
  std::uint64_t checksum = 0;
};

using SnapshotPtr = std::shared_ptr<const ParameterSnapshot>;

class ParameterStore {
public:
  explicit ParameterStore(const GridGeometry& g) : checksum_(goal_ordering_checksum(g)) {}

  std::uint64_t publish(std::size_t level, std::vector<QApproximator> params) {
    check_level(level);
    if (params.empty()) throw std::invalid_argument("publish_snapshot: empty parameter payload");
    auto snap = std::make_shared<ParameterSnapshot>();
    snap->level = level;
    snap->payload = std::move(params);
    snap->checksum = checksum_;
    std::lock_guard lock(mu_);
    snap->version = latest_[level] ? latest_[level]->version + 1 : 1;
    latest_[level] = std::move(snap);
    return latest_[level]->version;
  }

  SnapshotPtr fetch(std::size_t level) const {
    check_level(level);
    std::lock_guard lock(mu_);
    if (!latest_[level]) throw std::logic_error("fetch_snapshot: level " + std::to_string(level) + " has no snapshot");
    return latest_[level];
  }

  std::uint64_t version(std::size_t level) const {
    check_level(level);
    std::lock_guard lock(mu_);
    return latest_[level] ? latest_[level]->version : 0;
  }

private:
  static void check_level(std::size_t level) {
    if (level >= kLevelCount) throw std::out_of_range("unknown level id " + std::to_string(level));
  }

  std::uint64_t checksum_;
  mutable std::mutex mu_;
  std::array<SnapshotPtr, kLevelCount> latest_;
};

// ---------------------------------------------------------------- envelopes

using EnvelopePayload = std::variant<GoalTransition, Transition, LevelTwoSample>;

struct TransitionEnvelope {
  std::size_t level = 0;
  std::size_t actor = 0;
  std::uint64_t episode = 0;
  EnvelopePayload payload;
};

// ---------------------------------------------------------------- config

enum class HarnessMode : std::uint8_t { Concurrent, Deterministic };
enum class Program : std::uint8_t { Hierarchy, Flat, Pretrain };

inline std::string_view mode_name(HarnessMode m) {
  return m == HarnessMode::Concurrent ? "concurrent" : "deterministic";
}
inline std::string_view program_name(Program p) {
  switch (p) {
    case Program::Hierarchy: return "hierarchy";
    case Program::Flat: return "flat";
    case Program::Pretrain: return "pretrain";
  }
  return "?";
}

struct HarnessConfig {
  std::size_t actors = 1;
  std::array<LearnerConfig, kLevelCount> learners{};
  LearnerConfig flat_learner;  // takes the level-0 slot when the program is flat
  std::size_t queue_capacity = 4096;
  std::size_t fetch_period = 1;  // episodes between snapshot fetches
  std::size_t publish_period = 16;  // learner updates between publications (concurrent)
  std::size_t loss_window = 100;  // updates averaged into one loss record
  HarnessMode mode = HarnessMode::Deterministic;
  Program program = Program::Hierarchy;
  std::uint64_t seed = 0;
  ActingConfig acting;
  std::vector<std::size_t> level1_hidden{256, 128};
  std::vector<std::size_t> flat_hidden{256, 128};
  std::size_t pretrain_slice = 50;  // primitive steps per pretraining episode

  const LearnerConfig& learner(std::size_t level) const {
    return program == Program::Flat && level == 0 ? flat_learner : learners.at(level);
  }

  void validate() const {
    if (actors < 1) throw harness_config_error("harness.actors must be >= 1");
    if (fetch_period < 1) throw harness_config_error("harness.fetch_period must be >= 1");
    if (publish_period < 1) throw harness_config_error("harness.publish_period must be >= 1");
    if (loss_window < 1) throw harness_config_error("harness.loss_window must be >= 1");
    if (pretrain_slice < 1) throw harness_config_error("harness.pretrain_slice must be >= 1");
    for (std::size_t l = 0; l < kLevelCount; ++l) {
      const LearnerConfig& lc = learner(l);
      lc.td.validate();
      if (queue_capacity < lc.td.batch_size)
        throw harness_config_error("harness.queue_capacity must be >= every batch size");
      if (lc.replay_capacity < 1) throw harness_config_error("replay capacity must be >= 1");
    }
    if (acting.option_timeout < 1) throw harness_config_error("option timeout must be >= 1");
    if (acting.return_horizon < 1) throw harness_config_error("level0 return horizon must be >= 1");
  }
};

// ---------------------------------------------------------------- deterministic plan

enum class PlanAction : std::uint8_t { ActorEpisode, LearnerUpdates, Publish };

struct PlanStep {
  PlanAction action = PlanAction::ActorEpisode;
  std::size_t index = 0;  // actor id or level id
  friend bool operator==(const PlanStep&, const PlanStep&) = default;
};

// One round: every actor plays one episode in id order, then every learner
// runs its update block, then every learner publishes. Rounds repeat until
// the step budget is spent.
inline std::vector<PlanStep> deterministic_schedule(const HarnessConfig& config, std::uint64_t /*seed*/) {
  if (config.mode != HarnessMode::Deterministic) throw harness_config_error("deterministic_schedule: mode is concurrent");
  std::vector<PlanStep> plan;
  for (std::size_t a = 0; a < config.actors; ++a) plan.push_back({PlanAction::ActorEpisode, a});
  for (std::size_t l = 0; l < kLevelCount; ++l) plan.push_back({PlanAction::LearnerUpdates, l});
  for (std::size_t l = 0; l < kLevelCount; ++l) plan.push_back({PlanAction::Publish, l});
  return plan;
}

// ---------------------------------------------------------------- report

struct EpisodeRecord {
  std::uint64_t episode = 0;
  std::size_t actor = 0;
  double total_reward = 0.0;
  std::size_t steps = 0;
  std::size_t scoring_events = 0;
  std::string gesture_class;
  std::size_t options = 0;
  std::array<std::uint64_t, kLevelCount> versions{};
};

struct LossRecord {
  std::size_t level = 0;
  std::uint64_t updates = 0;  // learner update count at the end of the window
  double mean_loss = 0.0;
};

struct LevelStats {
  std::uint64_t emitted = 0;  // envelopes sent by actors
  std::uint64_t stored = 0;   // envelopes accepted by the learner
  std::uint64_t violations = 0;
  std::uint64_t updates = 0;
  std::uint64_t version = 0;
  std::uint64_t backpressure = 0;
  std::size_t queue_high_water = 0;
};

struct ActorStats {
  std::size_t episodes = 0;
  std::size_t steps = 0;
  bool versions_monotonic = true;
};

struct TrainingReport {
  std::string program;
  std::string mode;
  std::string task;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::size_t budget = 0;
  std::size_t total_steps = 0;
  std::vector<EpisodeRecord> episodes;
  std::vector<LossRecord> losses;
  std::array<LevelStats, kLevelCount> levels{};
  std::vector<ActorStats> actors;
  double elapsed_seconds = 0.0;  // concurrent mode only

  bool conserved() const {
    for (const auto& l : levels)
      if (l.emitted != l.stored) return false;
    return true;
  }
  std::uint64_t violations() const {
    std::uint64_t v = 0;
    for (const auto& l : levels) v += l.violations;
    return v;
  }
  bool versions_monotonic() const {
    for (const auto& a : actors)
      if (!a.versions_monotonic) return false;
    return true;
  }
};

// Trained parameters handed back with the report.
struct TrainedModel {
  GridGeometry geometry;
  Program program = Program::Hierarchy;
  std::vector<QApproximator> level0;  // three class networks, or the flat network
  std::optional<QApproximator> level1;
  std::optional<QApproximator> level2;  // 2x3 statistics table
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string episodes_csv(const TrainingReport& r) {
  std::ostringstream os;
  os << "# config_hash=" << r.config_hash << " seed=" << r.seed << " program=" << r.program << "\n";
  os << "episode,actor,return,steps,scoring_events,class,options,v0,v1,v2\n";
  for (const auto& e : r.episodes)
    os << e.episode << ',' << e.actor << ',' << format_double(e.total_reward) << ',' << e.steps << ','
       << e.scoring_events << ',' << e.gesture_class << ',' << e.options << ',' << e.versions[0] << ','
       << e.versions[1] << ',' << e.versions[2] << "\n";
  return os.str();
}

inline std::string losses_csv(const TrainingReport& r) {
  std::ostringstream os;
  os << "# config_hash=" << r.config_hash << " seed=" << r.seed << " program=" << r.program << "\n";
  os << "level,updates,mean_loss\n";
  for (const auto& l : r.losses) os << l.level << ',' << l.updates << ',' << format_double(l.mean_loss) << "\n";
  return os.str();
}

inline nlohmann::json summary_json(const TrainingReport& r) {
  nlohmann::json j;
  j["program"] = r.program;
  j["mode"] = r.mode;
  j["task"] = r.task;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["budget"] = r.budget;
  j["total_steps"] = r.total_steps;
  j["episodes"] = r.episodes.size();
  double sum = 0.0;
  for (const auto& e : r.episodes) sum += e.total_reward;
  j["mean_return"] = r.episodes.empty() ? 0.0 : sum / static_cast<double>(r.episodes.size());
  nlohmann::json levels = nlohmann::json::array();
  for (std::size_t l = 0; l < kLevelCount; ++l) {
    const auto& s = r.levels[l];
    levels.push_back({{"level", l},
                      {"emitted", s.emitted},
                      {"stored", s.stored},
                      {"violations", s.violations},
                      {"updates", s.updates},
                      {"snapshot_version", s.version},
                      {"backpressure", s.backpressure},
                      {"queue_high_water", s.queue_high_water}});
  }
  j["levels"] = levels;
  nlohmann::json actors = nlohmann::json::array();
  for (std::size_t a = 0; a < r.actors.size(); ++a)
    actors.push_back({{"actor", a},
                      {"episodes", r.actors[a].episodes},
                      {"steps", r.actors[a].steps},
                      {"versions_monotonic", r.actors[a].versions_monotonic}});
  j["actors"] = actors;
  j["conserved"] = r.conserved();
  j["violations"] = r.violations();
  if (r.mode == mode_name(HarnessMode::Concurrent)) {
    j["elapsed_seconds"] = r.elapsed_seconds;
    j["steps_per_second"] = r.elapsed_seconds > 0 ? static_cast<double>(r.total_steps) / r.elapsed_seconds : 0.0;
  }
  return j;
}

// Everything a run writes, concatenated; used to compare reruns byte for byte.
inline std::string report_bytes(const TrainingReport& r) {
  return summary_json(r).dump(2) + "\n" + episodes_csv(r) + losses_csv(r);
}

// ---------------------------------------------------------------- learners

namespace detail {

class LevelLearner {
public:
  LevelLearner(std::size_t level, std::size_t loss_window) : level_(level), loss_window_(loss_window) {}
  virtual ~LevelLearner() = default;

  // Audits the envelope's level and payload before storing it.
  void receive(TransitionEnvelope&& env) {
    if (env.level != level_ || !accepts(env.payload)) {
      ++violations_;
      return;
    }
    store(std::move(env.payload));
    ++stored_;
  }

  // Proportional or fixed-K updates, depending on the learner config.
  void train_due() {
    const std::size_t k = due();
    for (std::size_t i = 0; i < k; ++i) record(update_once());
  }

  // One update if enough data is buffered; false otherwise.
  bool train_one() {
    if (!ready()) return false;
    record(update_once());
    return true;
  }

  void flush_losses() {
    if (window_count_ > 0) {
      losses_.push_back({level_, updates_, window_sum_ / static_cast<double>(window_count_)});
      window_sum_ = 0.0;
      window_count_ = 0;
    }
  }

  virtual std::vector<QApproximator> parameters() const = 0;

  std::size_t level() const { return level_; }
  std::uint64_t stored() const { return stored_; }
  std::uint64_t violations() const { return violations_; }
  std::uint64_t updates() const { return updates_; }
  const std::vector<LossRecord>& losses() const { return losses_; }

protected:
  virtual bool accepts(const EnvelopePayload& p) const = 0;
  virtual void store(EnvelopePayload&& p) = 0;
  virtual std::size_t due() const = 0;
  virtual bool ready() const = 0;
  virtual std::optional<double> update_once() = 0;

private:
  void record(std::optional<double> loss) {
    if (!loss) return;
    ++updates_;
    window_sum_ += *loss;
    if (++window_count_ >= loss_window_) flush_losses();
  }

  std::size_t level_;
  std::size_t loss_window_;
  std::uint64_t stored_ = 0;
  std::uint64_t violations_ = 0;
  std::uint64_t updates_ = 0;
  double window_sum_ = 0.0;
  std::size_t window_count_ = 0;
  std::vector<LossRecord> losses_;
};

// Three goal-conditioned class networks; the update block cycles the classes.
class GoalLearner final : public LevelLearner {
public:
  GoalLearner(const LevelZeroAgent& initial, const LearnerConfig& cfg, std::size_t window)
      : LevelLearner(0, window), geometry_(initial.geometry()) {
    for (GestureClass c : kAllClasses) {
      LearnerConfig lc = cfg;
      lc.td.seed = mix_seed(cfg.td.seed, class_slot(c));
      learners_.emplace_back(initial.net(c), lc);
    }
  }
  std::vector<QApproximator> parameters() const override {
    return {learners_[0].online(), learners_[1].online(), learners_[2].online()};
  }

protected:
  bool accepts(const EnvelopePayload& p) const override { return std::holds_alternative<GoalTransition>(p); }
  void store(EnvelopePayload&& p) override {
    auto& gt = std::get<GoalTransition>(p);
    learners_[class_slot(gt.goal.gesture_class())].add(std::move(gt.transition));
  }
  std::size_t due() const override {
    std::size_t n = 0;
    for (const auto& l : learners_) n += l.updates_due();
    return n;
  }
  bool ready() const override {
    for (const auto& l : learners_)
      if (l.can_update()) return true;
    return false;
  }
  std::optional<double> update_once() override {
    // The class owed the most updates goes first, ties in class order.
    std::size_t best = kLevelCount;
    std::size_t best_due = 0;
    for (std::size_t c = 0; c < learners_.size(); ++c) {
      const std::size_t d = learners_[c].updates_due();
      if (d > best_due) {
        best = c;
        best_due = d;
      }
    }
    if (best == kLevelCount) {
      for (std::size_t i = 0; i < learners_.size(); ++i) {
        const std::size_t c = (next_ + i) % learners_.size();
        if (learners_[c].can_update()) {
          best = c;
          break;
        }
      }
      next_ = (next_ + 1) % learners_.size();
    }
    if (best == kLevelCount) return std::nullopt;
    return learners_[best].update();
  }

private:
  GridGeometry geometry_;
  std::vector<QLearner> learners_;
  std::size_t next_ = 0;
};

// Single network trained on plain transitions (level 1 or the flat agent).
class DqnLearner final : public LevelLearner {
public:
  DqnLearner(std::size_t level, QApproximator initial, const LearnerConfig& cfg, std::size_t window)
      : LevelLearner(level, window), learner_(std::move(initial), cfg) {}
  std::vector<QApproximator> parameters() const override { return {learner_.online()}; }

protected:
  bool accepts(const EnvelopePayload& p) const override { return std::holds_alternative<Transition>(p); }
  void store(EnvelopePayload&& p) override { learner_.add(std::move(std::get<Transition>(p))); }
  std::size_t due() const override { return learner_.updates_due(); }
  bool ready() const override { return learner_.can_update(); }
  std::optional<double> update_once() override { return learner_.update(); }

private:
  QLearner learner_;
};

// Exact per-class means; each stored sample is applied at once.
class AverageRewardLearner final : public LevelLearner {
public:
  AverageRewardLearner(double epsilon, std::size_t window) : LevelLearner(2, window), agent_(epsilon) {}
  std::vector<QApproximator> parameters() const override { return {level2_to_table(agent_)}; }

protected:
  bool accepts(const EnvelopePayload& p) const override { return std::holds_alternative<LevelTwoSample>(p); }
  void store(EnvelopePayload&& p) override {
    const auto& s = std::get<LevelTwoSample>(p);
    level2_update(agent_, s.cls, s.reward_sum, s.steps);
  }
  std::size_t due() const override { return 0; }
  bool ready() const override { return false; }
  std::optional<double> update_once() override { return std::nullopt; }

private:
  LevelTwoAgent agent_;
};

}  // namespace detail

// ---------------------------------------------------------------- routing

class Router {
public:
  explicit Router(std::size_t queue_capacity) {
    for (auto& q : queues_) q = std::make_unique<BlockingQueue<TransitionEnvelope>>(queue_capacity);
  }

  // Enqueues on the envelope's level; blocks while that queue is full.
  void route(TransitionEnvelope env) {
    if (env.level >= kLevelCount) throw std::out_of_range("route: unknown level id " + std::to_string(env.level));
    emitted_[env.level].fetch_add(1, std::memory_order_relaxed);
    queues_[env.level]->push(std::move(env));
  }

  BlockingQueue<TransitionEnvelope>& queue(std::size_t level) { return *queues_.at(level); }
  std::uint64_t emitted(std::size_t level) const { return emitted_.at(level).load(); }

  void close() {
    for (auto& q : queues_) q->close();
  }

private:
  std::array<std::unique_ptr<BlockingQueue<TransitionEnvelope>>, kLevelCount> queues_;
  std::array<std::atomic<std::uint64_t>, kLevelCount> emitted_{};
};

// ---------------------------------------------------------------- actors

namespace detail {

struct ActorContext {
  std::size_t id = 0;
  Rng rng{0};
  std::unique_ptr<Environment> env;
  std::array<SnapshotPtr, kLevelCount> snapshots;
  std::array<std::uint64_t, kLevelCount> seen{};
  std::size_t since_fetch = 0;
  ActorStats stats;
  // Agents rebuilt only when a fetched snapshot is newer.
  std::optional<LevelZeroAgent> level0;
  std::optional<LevelOneAgent> level1;
  std::optional<LevelTwoAgent> level2;
  std::optional<FlatAgent> flat;
};

}  // namespace detail

struct HarnessInputs {
  TaskConfig task;
  // Pretrained (or initial, for the pretraining program) level-0 agent.
  std::optional<LevelZeroAgent> level0;
};

struct HarnessResult {
  TrainingReport report;
  TrainedModel model;
};

class Harness {
public:
  Harness(HarnessConfig config, HarnessInputs inputs, std::size_t budget)
      : config_(std::move(config)), task_(std::move(inputs.task)), budget_(budget), geometry_(task_.geometry),
        store_(geometry_), router_(config_.queue_capacity) {
    config_.validate();
    Rng init_rng(mix_seed(config_.seed, 0x1417ull));
    std::array<LearnerConfig, kLevelCount> lc;
    for (std::size_t l = 0; l < kLevelCount; ++l) lc[l] = config_.learner(l);
    for (std::size_t l = 0; l < kLevelCount; ++l) lc[l].td.seed = mix_seed(config_.seed, 0x1ea7ull + l);

    if (config_.program == Program::Flat) {
      FlatAgent flat(geometry_, config_.flat_hidden, init_rng);
      learners_[0] = std::make_unique<detail::DqnLearner>(0, flat.net(), lc[0], config_.loss_window);
    } else {
      if (!inputs.level0)
        throw harness_config_error("the " + std::string(program_name(config_.program)) +
                                   " program needs a level-0 agent");
      if (!(inputs.level0->geometry() == task_.geometry))
        throw harness_config_error("level-0 parameters are for a " + std::to_string(inputs.level0->geometry().rows) +
                                   "x" + std::to_string(inputs.level0->geometry().cols) + " grid but the task is " +
                                   std::to_string(task_.geometry.rows) + "x" + std::to_string(task_.geometry.cols));
      learners_[0] = std::make_unique<detail::GoalLearner>(*inputs.level0, lc[0], config_.loss_window);
    }
    LevelOneAgent l1(geometry_, config_.level1_hidden, init_rng);
    learners_[1] = std::make_unique<detail::DqnLearner>(1, l1.net(), lc[1], config_.loss_window);
    learners_[2] = std::make_unique<detail::AverageRewardLearner>(config_.acting.epsilon2, config_.loss_window);
    for (std::size_t l = 0; l < kLevelCount; ++l) store_.publish(l, learners_[l]->parameters());

    for (std::size_t a = 0; a < config_.actors; ++a) {
      auto ctx = std::make_unique<detail::ActorContext>();
      ctx->id = a;
      ctx->rng = Rng(mix_seed(config_.seed, 0xac7000ull + a));
      TaskConfig tc = task_;
      if (config_.program == Program::Pretrain) {
        tc.name = "blank";
        tc.episode_limit = static_cast<int>(config_.pretrain_slice);
      }
      tc.seed = mix_seed(task_.seed, 0xe4000ull + a);
      ctx->env = make_task(tc);
      fetch(*ctx);
      actors_.push_back(std::move(ctx));
    }
  }

  HarnessResult run() {
    if (budget_ > 0) {
      if (config_.mode == HarnessMode::Deterministic)
        run_deterministic();
      else
        run_concurrent();
    }
    return {make_report(), make_model()};
  }

private:
  void fetch(detail::ActorContext& ctx) {
    for (std::size_t l = 0; l < kLevelCount; ++l) {
      SnapshotPtr snap = store_.fetch(l);
      if (snap->version < ctx.seen[l]) ctx.stats.versions_monotonic = false;
      if (ctx.snapshots[l] && snap->version == ctx.snapshots[l]->version) continue;
      ctx.seen[l] = snap->version;
      ctx.snapshots[l] = snap;
      if (l == 0) {
        if (config_.program == Program::Flat)
          ctx.flat.emplace(geometry_, snap->payload.at(0));
        else
          ctx.level0.emplace(geometry_, snap->payload);
      } else if (l == 1) {
        ctx.level1.emplace(geometry_, snap->payload.at(0));
      } else {
        ctx.level2.emplace(level2_from_table(snap->payload.at(0), config_.acting.epsilon2));
      }
    }
    ctx.since_fetch = 0;
  }

  // Plays one episode and routes its experience; returns primitive steps.
  std::size_t actor_episode(detail::ActorContext& ctx, std::size_t steps_so_far) {
    if (ctx.since_fetch >= config_.fetch_period) fetch(ctx);
    const std::uint64_t episode = next_episode_.fetch_add(1);
    EpisodeOutput out;
    ActingConfig acting = config_.acting;
    switch (config_.program) {
      case Program::Hierarchy:
        acting.epsilon1 = config_.learners[1].td.epsilon_at(steps_so_far);
        out = act_episode(*ctx.env, *ctx.level2, *ctx.level1, *ctx.level0, acting, ctx.rng);
        break;
      case Program::Flat:
        out = flat_episode(*ctx.env, *ctx.flat, config_.flat_learner.td.epsilon_at(steps_so_far), acting.gamma_env,
                           ctx.rng);
        break;
      case Program::Pretrain:
        acting.epsilon0 = config_.learners[0].td.epsilon_at(steps_so_far);
        out = pretrain_episode(*ctx.env, *ctx.level0, acting, config_.pretrain_slice, ctx.rng);
        break;
    }
    for (auto& t : out.level0) router_.route({0, ctx.id, episode, std::move(t)});
    for (auto& t : out.flat) router_.route({0, ctx.id, episode, std::move(t)});
    for (auto& t : out.level1) router_.route({1, ctx.id, episode, std::move(t)});
    if (config_.program == Program::Hierarchy)
      for (auto& s : out.level2) router_.route({2, ctx.id, episode, s});

    EpisodeRecord rec;
    rec.episode = episode;
    rec.actor = ctx.id;
    rec.total_reward = out.total_reward;
    rec.steps = out.steps;
    rec.scoring_events = out.scoring_events;
    rec.gesture_class = config_.program == Program::Hierarchy ? std::string(class_name(out.cls)) : "";
    rec.options = out.options.size();
    for (std::size_t l = 0; l < kLevelCount; ++l) rec.versions[l] = ctx.snapshots[l]->version;
    {
      std::lock_guard lock(records_mu_);
      records_.push_back(std::move(rec));
    }
    ++ctx.stats.episodes;
    ctx.stats.steps += out.steps;
    ++ctx.since_fetch;
    return out.steps;
  }

  void drain(std::size_t level) {
    while (auto env = router_.queue(level).try_pop()) learners_[level]->receive(std::move(*env));
  }

  void run_deterministic() {
    const auto plan = deterministic_schedule(config_, config_.seed);
    std::size_t steps = 0;
    while (steps < budget_) {
      for (const PlanStep& p : plan) {
        switch (p.action) {
          case PlanAction::ActorEpisode:
            if (steps < budget_) {
              steps += actor_episode(*actors_[p.index], steps);
              // Single context: hand queued envelopes over right away.
              for (std::size_t l = 0; l < kLevelCount; ++l) drain(l);
            }
            break;
          case PlanAction::LearnerUpdates: learners_[p.index]->train_due(); break;
          case PlanAction::Publish: store_.publish(p.index, learners_[p.index]->parameters()); break;
        }
      }
    }
    total_steps_ = steps;
  }

  void run_concurrent() {
    std::atomic<std::size_t> steps{0};
    std::atomic<std::size_t> running{config_.actors};
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::thread> learner_threads;
    for (std::size_t l = 0; l < kLevelCount; ++l) {
      learner_threads.emplace_back([this, l, &running] {
        auto& q = router_.queue(l);
        auto& learner = *learners_[l];
        const bool continuous = config_.learner(l).transitions_per_update == 0;
        std::uint64_t last_publish = learner.updates();
        std::uint64_t stored_at_publish = learner.stored();
        for (;;) {
          auto env = q.pop_for(std::chrono::milliseconds(2));
          if (env) {
            learner.receive(std::move(*env));
            while (auto more = q.try_pop()) learner.receive(std::move(*more));
          }
          if (continuous) {
            if (running.load() > 0) learner.train_one();
          } else {
            learner.train_due();
          }
          const bool due = learner.updates() - last_publish >= config_.publish_period ||
                           (l == 2 && learner.stored() != stored_at_publish);
          if (due) {
            store_.publish(l, learner.parameters());
            last_publish = learner.updates();
            stored_at_publish = learner.stored();
          }
          if (!env && q.closed_and_empty()) break;
        }
        store_.publish(l, learner.parameters());
      });
    }

    std::vector<std::thread> actor_threads;
    for (std::size_t a = 0; a < config_.actors; ++a) {
      actor_threads.emplace_back([this, a, &steps, &running] {
        auto& ctx = *actors_[a];
        // Every actor plays at least one episode, even if the others have
        // already spent the budget by the time this thread starts.
        do {
          steps.fetch_add(actor_episode(ctx, steps.load()));
        } while (steps.load() < budget_);
        running.fetch_sub(1);
      });
    }
    for (auto& t : actor_threads) t.join();
    router_.close();
    for (auto& t : learner_threads) t.join();
    total_steps_ = steps.load();
    elapsed_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  TrainingReport make_report() {
    TrainingReport r;
    r.program = program_name(config_.program);
    r.mode = mode_name(config_.mode);
    r.task = config_.program == Program::Pretrain ? "blank" : task_.name;
    r.seed = config_.seed;
    r.budget = budget_;
    r.total_steps = total_steps_;
    r.elapsed_seconds = config_.mode == HarnessMode::Concurrent ? elapsed_ : 0.0;
    r.episodes = records_;
    std::sort(r.episodes.begin(), r.episodes.end(),
              [](const EpisodeRecord& a, const EpisodeRecord& b) { return a.episode < b.episode; });
    for (std::size_t l = 0; l < kLevelCount; ++l) {
      learners_[l]->flush_losses();
      const auto& ls = learners_[l]->losses();
      r.losses.insert(r.losses.end(), ls.begin(), ls.end());
      auto& s = r.levels[l];
      s.emitted = router_.emitted(l);
      s.stored = learners_[l]->stored();
      s.violations = learners_[l]->violations();
      s.updates = learners_[l]->updates();
      s.version = store_.version(l);
      s.backpressure = router_.queue(l).blocked();
      s.queue_high_water = router_.queue(l).high_water();
    }
    for (const auto& a : actors_) r.actors.push_back(a->stats);
    return r;
  }

  TrainedModel make_model() const {
    TrainedModel m;
    m.geometry = geometry_;
    m.program = config_.program;
    m.level0 = learners_[0]->parameters();
    if (config_.program == Program::Hierarchy) {
      m.level1 = learners_[1]->parameters().front();
      m.level2 = learners_[2]->parameters().front();
    }
    return m;
  }

  HarnessConfig config_;
  TaskConfig task_;
  std::size_t budget_;
  GridGeometry geometry_;
  ParameterStore store_;
  Router router_;
  std::array<std::unique_ptr<detail::LevelLearner>, kLevelCount> learners_;
  std::vector<std::unique_ptr<detail::ActorContext>> actors_;
  std::atomic<std::uint64_t> next_episode_{0};
  std::mutex records_mu_;
  std::vector<EpisodeRecord> records_;
  std::size_t total_steps_ = 0;
  double elapsed_ = 0.0;
};

inline HarnessResult run_harness(const HarnessConfig& config, HarnessInputs inputs, std::size_t budget) {
  return Harness(config, std::move(inputs), budget).run();
}

}  // namespace ghrl
