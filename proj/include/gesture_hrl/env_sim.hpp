#pragma once

// Discretized touchscreen environments. An agent action is TOUCH(cell) or
// LIFT; the environment keeps its own touch history, reports which gesture
// classes completed on the last step, and advances latency_ticks + 1 ticks of
// task dynamics per action.
//
// Image channels: 0 static layout, 1 dynamic objects, 2 agent / highlight.
// Pixel values are always one of {0, 128, 255}.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gesture_core.hpp"
#include "rng.hpp"

namespace ghrl {

class PrimitiveAction {
public:
  static PrimitiveAction touch(Cell c) { return PrimitiveAction(TouchSymbol::Kind::Touch, c); }
  static PrimitiveAction lift(Cell c = 0) { return PrimitiveAction(TouchSymbol::Kind::Lift, c); }

  // Action index layout: [0, n) TOUCH(cell), [n, 2n) LIFT(cell).
  static PrimitiveAction from_index(const GridGeometry& g, std::size_t index) {
    const auto n = static_cast<std::size_t>(g.cells());
    if (index >= 2 * n) throw std::out_of_range("PrimitiveAction: index out of range");
    return index < n ? touch(static_cast<Cell>(index)) : lift(static_cast<Cell>(index - n));
  }
  std::size_t index(const GridGeometry& g) const {
    return static_cast<std::size_t>(cell_) + (is_touch() ? 0 : static_cast<std::size_t>(g.cells()));
  }

  bool is_touch() const { return kind_ == TouchSymbol::Kind::Touch; }
  Cell cell() const { return cell_; }
  TouchSymbol symbol() const { return is_touch() ? TouchSymbol::touch(cell_) : TouchSymbol::lift(); }

  friend bool operator==(const PrimitiveAction&, const PrimitiveAction&) = default;

private:
  PrimitiveAction(TouchSymbol::Kind k, Cell c) : kind_(k), cell_(c) {}
  TouchSymbol::Kind kind_;
  Cell cell_;
};

inline std::size_t action_space_size(const GridGeometry& g) { return 2 * static_cast<std::size_t>(g.cells()); }

struct ScreenImage {
  static constexpr int kChannels = 3;
  static constexpr std::uint8_t kMid = 128;
  static constexpr std::uint8_t kFull = 255;

  int rows = 0;
  int cols = 0;
  int channels = kChannels;
  std::vector<std::uint8_t> values;  // (row, col, channel), channel fastest

  ScreenImage() = default;
  explicit ScreenImage(const GridGeometry& g)
      : rows(g.rows), cols(g.cols), values(static_cast<std::size_t>(g.cells() * kChannels), 0) {}

  std::uint8_t& at(int r, int c, int ch) { return values[static_cast<std::size_t>((r * cols + c) * channels + ch)]; }
  std::uint8_t at(int r, int c, int ch) const {
    return values[static_cast<std::size_t>((r * cols + c) * channels + ch)];
  }

  friend bool operator==(const ScreenImage&, const ScreenImage&) = default;
};

struct AuxObservation {
  // Cell under the finger after the last action, or nullopt when lifted.
  std::optional<Cell> last_touch;
  ClassFlags completed;

  // Index into the (cells + 1)-wide one-hot; the last slot means "none".
  std::size_t last_touch_slot(const GridGeometry& g) const {
    return last_touch ? static_cast<std::size_t>(*last_touch) : static_cast<std::size_t>(g.cells());
  }

  friend bool operator==(const AuxObservation&, const AuxObservation&) = default;
};

inline AuxObservation observe_history(const GridGeometry& g, const TouchHistory& h) {
  AuxObservation aux;
  if (!h.empty() && h.back().is_touch()) aux.last_touch = h.back().cell();
  aux.completed = class_flags(completed_gestures(g, h));
  return aux;
}

struct EnvStep {
  ScreenImage image;
  AuxObservation aux;
  double reward = 0.0;
  bool episode_end = false;
};

struct TaskConfig {
  std::string name = "catch";
  GridGeometry geometry{5, 3};
  std::uint64_t seed = 0;
  int latency_ticks = 0;
  int episode_limit = 200;
};

struct TaskDescriptor {
  std::string name;
  GridGeometry default_geometry;
  int episode_limit = 0;
  double reward_min = 0.0;  // per dynamics tick / gesture event
  double reward_max = 0.0;
  bool sparse = false;
  // Class whose completions are the only source of reward, if any.
  std::optional<GestureClass> gated_class;
  std::string summary;
};

class unknown_task_error : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class Environment {
public:
  explicit Environment(TaskConfig config)
      : config_(std::move(config)), rng_(config_.seed), history_(kDefaultHistoryCapacity) {
    if (config_.latency_ticks < 0) throw std::invalid_argument("latency_ticks must be >= 0");
    if (config_.episode_limit < 1) throw std::invalid_argument("episode_limit must be >= 1");
  }
  virtual ~Environment() = default;

  Environment(const Environment&) = delete;
  Environment& operator=(const Environment&) = delete;

  EnvStep reset() {
    history_.clear();
    history_.push(TouchSymbol::lift());
    ticks_ = 0;
    events_ = 0;
    ended_ = false;
    started_ = true;
    on_reset(rng_);
    return observe(0.0);
  }

  EnvStep step(PrimitiveAction action) {
    if (!started_ || ended_) throw std::logic_error("Environment::step on a finished episode; call reset()");
    if (!geometry().contains(action.cell())) throw std::out_of_range("Environment::step: cell outside grid");
    history_.push(action.symbol());
    const GoalSet completed = completed_gestures(geometry(), history_);
    double reward = on_gestures(completed, rng_);
    for (int k = 0; k <= config_.latency_ticks && !terminal() && ticks_ < config_.episode_limit; ++k) {
      reward += on_tick(rng_);
      ++ticks_;
    }
    ended_ = terminal() || ticks_ >= config_.episode_limit;
    return observe(reward);
  }

  const TaskConfig& config() const { return config_; }
  const GridGeometry& geometry() const { return config_.geometry; }
  const TouchHistory& history() const { return history_; }
  int ticks() const { return ticks_; }
  bool episode_ended() const { return ended_; }
  // Number of reward resolutions so far (falls in catch; 1 otherwise).
  virtual std::size_t scoring_events() const { return 1; }
  virtual const TaskDescriptor& descriptor() const = 0;

  ScreenImage render() const {
    ScreenImage img(geometry());
    draw(img);
    return img;
  }

protected:
  virtual void on_reset(Rng& rng) = 0;
  virtual double on_gestures(const GoalSet& completed, Rng& rng) = 0;
  virtual double on_tick(Rng& rng) = 0;
  virtual bool terminal() const { return false; }
  virtual void draw(ScreenImage& img) const = 0;

  Rng& rng() { return rng_; }

private:
  EnvStep observe(double reward) const {
    EnvStep s;
    s.image = render();
    s.aux = observe_history(geometry(), history_);
    s.reward = reward;
    s.episode_end = ended_;
    return s;
  }

  TaskConfig config_;
  Rng rng_;
  TouchHistory history_;
  int ticks_ = 0;
  bool ended_ = false;
  bool started_ = false;

protected:
  std::size_t events_ = 0;
};

namespace tasks {

inline const TaskDescriptor& catch_descriptor() {
  static const TaskDescriptor d{"catch", GridGeometry{5, 3}, 200, -1.0, 1.0, false, std::nullopt,
                                "object falls down a random column; tap a column to move the paddle; "
                                "+1 caught / -1 missed per fall"};
  return d;
}

// Paddle sits in the bottom row at the column of the most recent completed
// tap. Each fall resolves on the tick the object spends in the bottom row.
class Catch final : public Environment {
public:
  explicit Catch(TaskConfig c) : Environment(std::move(c)) {
    if (geometry().rows < 2) throw std::invalid_argument("catch: needs at least 2 rows");
  }
  const TaskDescriptor& descriptor() const override { return catch_descriptor(); }
  std::size_t scoring_events() const override { return events_; }

  int object_row() const { return obj_row_; }
  int object_col() const { return obj_col_; }
  int paddle_col() const { return paddle_; }

protected:
  void on_reset(Rng& r) override {
    paddle_ = geometry().cols / 2;
    spawn(r);
  }
  double on_gestures(const GoalSet& completed, Rng&) override {
    for (const auto& g : completed)
      if (g.gesture_class() == GestureClass::Tap) paddle_ = geometry().col_of(g.tap_cell());
    return 0.0;
  }
  double on_tick(Rng& r) override {
    if (obj_row_ == geometry().rows - 1) {
      const double reward = obj_col_ == paddle_ ? 1.0 : -1.0;
      ++events_;
      spawn(r);
      return reward;
    }
    ++obj_row_;
    return 0.0;
  }
  void draw(ScreenImage& img) const override {
    const int bottom = geometry().rows - 1;
    for (int c = 0; c < geometry().cols; ++c) img.at(bottom, c, 0) = ScreenImage::kMid;
    img.at(obj_row_, obj_col_, 1) = ScreenImage::kFull;
    img.at(bottom, paddle_, 2) = ScreenImage::kFull;
  }

private:
  void spawn(Rng& r) {
    obj_row_ = 0;
    obj_col_ = static_cast<int>(r.uniform_index(static_cast<std::size_t>(geometry().cols)));
  }
  int obj_row_ = 0;
  int obj_col_ = 0;
  int paddle_ = 0;
};

inline const TaskDescriptor& button_descriptor() {
  static const TaskDescriptor d{"button_sparse", GridGeometry{9, 6}, 300, 0.0, 1.0, true, GestureClass::Tap,
                                "one highlighted cell; +1 and episode end when a tap completes on it"};
  return d;
}

class ButtonSparse final : public Environment {
public:
  using Environment::Environment;
  const TaskDescriptor& descriptor() const override { return button_descriptor(); }
  Cell target() const { return target_; }
  bool solved() const { return solved_; }

protected:
  void on_reset(Rng& r) override {
    target_ = static_cast<Cell>(r.uniform_index(static_cast<std::size_t>(geometry().cells())));
    solved_ = false;
  }
  double on_gestures(const GoalSet& completed, Rng&) override {
    for (const auto& g : completed) {
      if (g == GestureGoal::tap(target_)) {
        solved_ = true;
        return 1.0;
      }
    }
    return 0.0;
  }
  double on_tick(Rng&) override { return 0.0; }
  bool terminal() const override { return solved_; }
  void draw(ScreenImage& img) const override {
    for (int r = 0; r < geometry().rows; ++r)
      for (int c = 0; c < geometry().cols; ++c) img.at(r, c, 0) = ScreenImage::kMid;
    img.at(geometry().row_of(target_), geometry().col_of(target_), 2) = ScreenImage::kFull;
  }

private:
  Cell target_ = 0;
  bool solved_ = false;
};

inline const TaskDescriptor& swipe_descriptor() {
  static const TaskDescriptor d{"swipe_path", GridGeometry{9, 6}, 300, 0.0, 1.0, true, GestureClass::Swipe,
                                "two marked cells; +1 and episode end on a swipe from start to end"};
  return d;
}

class SwipePath final : public Environment {
public:
  explicit SwipePath(TaskConfig c) : Environment(std::move(c)) {
    if (geometry().cells() < 2) throw std::invalid_argument("swipe_path: needs at least 2 cells");
  }
  const TaskDescriptor& descriptor() const override { return swipe_descriptor(); }
  Cell start() const { return start_; }
  Cell end() const { return end_; }

protected:
  void on_reset(Rng& r) override {
    const auto n = static_cast<std::size_t>(geometry().cells());
    start_ = static_cast<Cell>(r.uniform_index(n));
    end_ = static_cast<Cell>(r.uniform_index(n - 1));
    if (end_ >= start_) ++end_;
    solved_ = false;
  }
  double on_gestures(const GoalSet& completed, Rng&) override {
    for (const auto& g : completed) {
      if (g == GestureGoal::swipe(start_, end_)) {
        solved_ = true;
        return 1.0;
      }
    }
    return 0.0;
  }
  double on_tick(Rng&) override { return 0.0; }
  bool terminal() const override { return solved_; }
  void draw(ScreenImage& img) const override {
    img.at(geometry().row_of(start_), geometry().col_of(start_), 2) = ScreenImage::kFull;
    img.at(geometry().row_of(end_), geometry().col_of(end_), 1) = ScreenImage::kFull;
  }

private:
  Cell start_ = 0;
  Cell end_ = 1;
  bool solved_ = false;
};

inline const TaskDescriptor& tile_descriptor() {
  static const TaskDescriptor d{"tile_fling", GridGeometry{9, 6}, 500, 0.0, 1.0e9, false, GestureClass::Fling,
                                "4x4 board of valued tiles; N/E/S/W flings slide and merge tiles; "
                                "reward = sum of merged values"};
  return d;
}

// 2048-style board embedded in the centre of the grid. Diagonal flings are
// no-ops.
class TileFling final : public Environment {
public:
  static constexpr int kBoard = 4;

  explicit TileFling(TaskConfig c) : Environment(std::move(c)) {
    if (geometry().rows < kBoard || geometry().cols < kBoard)
      throw std::invalid_argument("tile_fling: grid must be at least 4x4");
  }
  const TaskDescriptor& descriptor() const override { return tile_descriptor(); }

  // Tile values, 0 for empty, row-major over the 4x4 board.
  const std::array<int, kBoard * kBoard>& board() const { return board_; }
  void set_board(const std::array<int, kBoard * kBoard>& b) { board_ = b; }

  // Slides the board toward d; returns merged value sum, or -1 if nothing moved.
  static int slide(std::array<int, kBoard * kBoard>& b, Direction d) {
    int dr = 0, dc = 0;
    switch (d) {
      case Direction::N: dr = -1; break;
      case Direction::S: dr = 1; break;
      case Direction::E: dc = 1; break;
      case Direction::W: dc = -1; break;
      default: return -1;
    }
    const auto before = b;
    int merged = 0;
    for (int line = 0; line < kBoard; ++line) {
      // Cells of this line ordered from the leading edge backwards.
      std::array<int, kBoard> idx{};
      for (int k = 0; k < kBoard; ++k) {
        const int lead = kBoard - 1 - k;
        if (dr != 0) idx[static_cast<std::size_t>(k)] = (dr > 0 ? lead : k) * kBoard + line;
        else idx[static_cast<std::size_t>(k)] = line * kBoard + (dc > 0 ? lead : k);
      }
      std::vector<int> vals;
      for (int i : idx)
        if (b[static_cast<std::size_t>(i)] != 0) vals.push_back(b[static_cast<std::size_t>(i)]);
      std::vector<int> out;
      for (std::size_t i = 0; i < vals.size(); ++i) {
        if (i + 1 < vals.size() && vals[i] == vals[i + 1]) {
          out.push_back(2 * vals[i]);
          merged += 2 * vals[i];
          ++i;
        } else {
          out.push_back(vals[i]);
        }
      }
      for (int k = 0; k < kBoard; ++k)
        b[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])] =
            k < static_cast<int>(out.size()) ? out[static_cast<std::size_t>(k)] : 0;
    }
    return b == before ? -1 : merged;
  }

protected:
  void on_reset(Rng& r) override {
    board_.fill(0);
    stuck_ = false;
    spawn(r);
    spawn(r);
  }
  double on_gestures(const GoalSet& completed, Rng& r) override {
    for (const auto& g : completed) {
      if (g.gesture_class() != GestureClass::Fling) continue;
      const int merged = slide(board_, g.direction());
      if (merged < 0) return 0.0;
      spawn(r);
      stuck_ = !any_move();
      return static_cast<double>(merged);
    }
    return 0.0;
  }
  double on_tick(Rng&) override { return 0.0; }
  bool terminal() const override { return stuck_; }
  void draw(ScreenImage& img) const override {
    const int r0 = (geometry().rows - kBoard) / 2;
    const int c0 = (geometry().cols - kBoard) / 2;
    for (int r = 0; r < kBoard; ++r) {
      for (int c = 0; c < kBoard; ++c) {
        img.at(r0 + r, c0 + c, 0) = ScreenImage::kMid;
        const int v = board_[static_cast<std::size_t>(r * kBoard + c)];
        if (v != 0) img.at(r0 + r, c0 + c, 1) = v == 2 ? ScreenImage::kMid : ScreenImage::kFull;
      }
    }
  }

private:
  void spawn(Rng& r) {
    std::vector<std::size_t> empty;
    for (std::size_t i = 0; i < board_.size(); ++i)
      if (board_[i] == 0) empty.push_back(i);
    if (!empty.empty()) board_[empty[r.uniform_index(empty.size())]] = 2;
  }
  bool any_move() const {
    for (Direction d : {Direction::N, Direction::E, Direction::S, Direction::W}) {
      auto copy = board_;
      if (slide(copy, d) >= 0) return true;
    }
    return false;
  }
  std::array<int, kBoard * kBoard> board_{};
  bool stuck_ = false;
};

inline const TaskDescriptor& dodge_descriptor() {
  static const TaskDescriptor d{"dodge_lane", GridGeometry{6, 3}, 500, 0.0, 0.1, false, std::nullopt,
                                "hazards descend the lanes; tap a lane to move there; +0.1 per survived tick, "
                                "episode ends on collision"};
  return d;
}

class DodgeLane final : public Environment {
public:
  explicit DodgeLane(TaskConfig c) : Environment(std::move(c)) {
    if (geometry().rows < 2) throw std::invalid_argument("dodge_lane: needs at least 2 rows");
  }
  const TaskDescriptor& descriptor() const override { return dodge_descriptor(); }
  int lane() const { return lane_; }

protected:
  void on_reset(Rng&) override {
    lane_ = geometry().cols / 2;
    hazards_.clear();
    crashed_ = false;
  }
  double on_gestures(const GoalSet& completed, Rng&) override {
    for (const auto& g : completed)
      if (g.gesture_class() == GestureClass::Tap) lane_ = geometry().col_of(g.tap_cell());
    return 0.0;
  }
  double on_tick(Rng& r) override {
    const int bottom = geometry().rows - 1;
    std::vector<std::array<int, 2>> next;
    for (auto [row, col] : hazards_) {
      ++row;
      if (row == bottom && col == lane_) crashed_ = true;
      if (row <= bottom) next.push_back({row, col});
    }
    hazards_ = std::move(next);
    if (crashed_) return 0.0;
    if (r.bernoulli(1.0 / 3.0))
      hazards_.push_back({0, static_cast<int>(r.uniform_index(static_cast<std::size_t>(geometry().cols)))});
    return 0.1;
  }
  bool terminal() const override { return crashed_; }
  void draw(ScreenImage& img) const override {
    const int bottom = geometry().rows - 1;
    for (int c = 0; c < geometry().cols; ++c) img.at(bottom, c, 0) = ScreenImage::kMid;
    for (auto [row, col] : hazards_) img.at(row, col, 1) = ScreenImage::kFull;
    img.at(bottom, lane_, 2) = ScreenImage::kFull;
  }

private:
  int lane_ = 0;
  std::vector<std::array<int, 2>> hazards_;
  bool crashed_ = false;
};

inline const TaskDescriptor& blank_descriptor() {
  static const TaskDescriptor d{"blank", GridGeometry{9, 6}, 1000, 0.0, 0.0, false, std::nullopt,
                                "reward-free screen used for gesture pretraining"};
  return d;
}

class Blank final : public Environment {
public:
  using Environment::Environment;
  const TaskDescriptor& descriptor() const override { return blank_descriptor(); }

protected:
  void on_reset(Rng&) override {}
  double on_gestures(const GoalSet&, Rng&) override { return 0.0; }
  double on_tick(Rng&) override { return 0.0; }
  void draw(ScreenImage&) const override {}
};

}  // namespace tasks

inline std::vector<TaskDescriptor> task_suite() {
  return {tasks::catch_descriptor(), tasks::button_descriptor(), tasks::swipe_descriptor(),
          tasks::tile_descriptor(), tasks::dodge_descriptor(), tasks::blank_descriptor()};
}

inline const TaskDescriptor& find_task(const std::string& name) {
  static const std::vector<TaskDescriptor> suite = task_suite();
  for (const auto& d : suite)
    if (d.name == name) return d;
  throw unknown_task_error("unknown task: " + name);
}

// Defaults from the registry (geometry, episode limit) with the given seed.
inline TaskConfig default_task_config(const std::string& name, std::uint64_t seed = 0) {
  const auto& d = find_task(name);
  TaskConfig c;
  c.name = name;
  c.geometry = d.default_geometry;
  c.seed = seed;
  c.episode_limit = d.episode_limit;
  return c;
}

inline std::unique_ptr<Environment> make_task(const TaskConfig& config) {
  find_task(config.name);
  if (config.name == "catch") return std::make_unique<tasks::Catch>(config);
  if (config.name == "button_sparse") return std::make_unique<tasks::ButtonSparse>(config);
  if (config.name == "swipe_path") return std::make_unique<tasks::SwipePath>(config);
  if (config.name == "tile_fling") return std::make_unique<tasks::TileFling>(config);
  if (config.name == "dodge_lane") return std::make_unique<tasks::DodgeLane>(config);
  return std::make_unique<tasks::Blank>(config);
}

// One line of an episode trace (JSON lines).
inline std::string trace_record(std::size_t step_index, const GridGeometry& g, const PrimitiveAction& action,
                                const EnvStep& step) {
  nlohmann::json j;
  j["step"] = step_index;
  j["action"] = action.is_touch() ? "touch" : "lift";
  j["action_index"] = action.index(g);
  j["reward"] = step.reward;
  j["completed"] = {step.aux.completed.tap, step.aux.completed.swipe, step.aux.completed.fling};
  j["episode_end"] = step.episode_end;
  return j.dump();
}

}  // namespace ghrl
