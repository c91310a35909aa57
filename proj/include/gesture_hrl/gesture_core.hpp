#pragma once

// Grid geometry, touch symbols and the tap / swipe / fling gesture grammar.
//
// Every gesture is a binary cumulant over the touch history
// (p_0, ..., p_t) where each p_i is either TOUCH(cell) or LIFT. A swipe from
// q1 to q2 completes at step t when the history ends with
//   [LIFT, TOUCH(q1), TOUCH(..), ..., TOUCH(q2), LIFT]
// with no LIFT between the two bracketing lifts. A tap is exactly
// [LIFT, TOUCH(c), LIFT]. A fling is a completed swipe with nonzero
// displacement whose quantized compass direction matches.

#include <algorithm>
#include <array>
#include <compare>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ghrl {

using Cell = int;

struct GridGeometry {
  int rows = 9;
  int cols = 6;

  GridGeometry() = default;
  GridGeometry(int r, int c) : rows(r), cols(c) {
    if (r < 1 || c < 1) throw std::invalid_argument("GridGeometry: rows and cols must be >= 1");
  }

  int cells() const { return rows * cols; }
  Cell cell(int row, int col) const { return row * cols + col; }
  int row_of(Cell c) const { return c / cols; }
  int col_of(Cell c) const { return c % cols; }
  bool contains(Cell c) const { return c >= 0 && c < cells(); }

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

class TouchSymbol {
public:
  enum class Kind : std::uint8_t { Lift, Touch };

  static TouchSymbol lift() { return TouchSymbol(Kind::Lift, -1); }
  static TouchSymbol touch(Cell c) {
    if (c < 0) throw std::invalid_argument("TouchSymbol: negative cell");
    return TouchSymbol(Kind::Touch, c);
  }

  Kind kind() const { return kind_; }
  bool is_lift() const { return kind_ == Kind::Lift; }
  bool is_touch() const { return kind_ == Kind::Touch; }
  // Only meaningful for TOUCH; -1 for LIFT.
  Cell cell() const { return cell_; }

  friend bool operator==(const TouchSymbol&, const TouchSymbol&) = default;

private:
  TouchSymbol(Kind k, Cell c) : kind_(k), cell_(c) {}
  Kind kind_;
  Cell cell_;
};

inline constexpr std::size_t kDefaultOptionTimeout = 10;
inline constexpr std::size_t kDefaultHistoryCapacity = kDefaultOptionTimeout + 2;

// Bounded window over the most recent touch symbols, most recent last.
class TouchHistory {
public:
  explicit TouchHistory(std::size_t capacity = kDefaultHistoryCapacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("TouchHistory: capacity must be >= 1");
    symbols_.reserve(capacity_);
  }

  TouchHistory(std::initializer_list<TouchSymbol> init, std::size_t capacity = kDefaultHistoryCapacity)
      : TouchHistory(capacity) {
    for (const auto& s : init) push(s);
  }

  void push(TouchSymbol s) {
    if (symbols_.size() == capacity_) symbols_.erase(symbols_.begin());
    symbols_.push_back(s);
  }

  void clear() { symbols_.clear(); }

  std::size_t size() const { return symbols_.size(); }
  bool empty() const { return symbols_.empty(); }
  std::size_t capacity() const { return capacity_; }
  const TouchSymbol& operator[](std::size_t i) const { return symbols_[i]; }
  const TouchSymbol& back() const { return symbols_.back(); }
  const std::vector<TouchSymbol>& symbols() const { return symbols_; }

  friend bool operator==(const TouchHistory& a, const TouchHistory& b) {
    return a.symbols_ == b.symbols_;
  }

private:
  std::size_t capacity_;
  std::vector<TouchSymbol> symbols_;
};

inline TouchHistory append_touch(TouchHistory history, TouchSymbol symbol) {
  history.push(symbol);
  return history;
}

enum class Direction : std::uint8_t { N, NE, E, SE, S, SW, W, NW };

inline constexpr std::array<Direction, 8> kAllDirections = {
    Direction::N, Direction::NE, Direction::E, Direction::SE,
    Direction::S, Direction::SW, Direction::W, Direction::NW};

inline std::string_view direction_name(Direction d) {
  static constexpr std::array<std::string_view, 8> names = {"N", "NE", "E", "SE", "S", "SW", "W", "NW"};
  return names[static_cast<std::size_t>(d)];
}

// (row, col) step of each compass direction; row 0 is the top of the screen.
inline std::array<int, 2> direction_step(Direction d) {
  static constexpr std::array<std::array<int, 2>, 8> steps = {{
      {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}}};
  return steps[static_cast<std::size_t>(d)];
}

// Quantizes a displacement to the compass direction with maximal dot product
// against its unit vector. Earlier members of kAllDirections win ties.
inline std::optional<Direction> direction_of_displacement(int drow, int dcol) {
  if (drow == 0 && dcol == 0) return std::nullopt;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  std::optional<Direction> best;
  double best_dot = 0.0;
  for (Direction d : kAllDirections) {
    const auto [sr, sc] = direction_step(d);
    const double scale = (sr != 0 && sc != 0) ? inv_sqrt2 : 1.0;
    const double dot = scale * (sr * drow + sc * dcol);
    if (!best || dot > best_dot + 1e-12) {
      best = d;
      best_dot = dot;
    }
  }
  return best;
}

inline std::optional<Direction> direction_of(const GridGeometry& g, Cell start, Cell end) {
  return direction_of_displacement(g.row_of(end) - g.row_of(start), g.col_of(end) - g.col_of(start));
}

enum class GestureClass : std::uint8_t { Tap, Swipe, Fling };

inline constexpr std::array<GestureClass, 3> kAllClasses = {GestureClass::Tap, GestureClass::Swipe,
                                                            GestureClass::Fling};

inline std::string_view class_name(GestureClass c) {
  switch (c) {
    case GestureClass::Tap: return "tap";
    case GestureClass::Swipe: return "swipe";
    case GestureClass::Fling: return "fling";
  }
  return "?";
}

inline GestureClass parse_class(std::string_view s) {
  if (s == "tap") return GestureClass::Tap;
  if (s == "swipe") return GestureClass::Swipe;
  if (s == "fling") return GestureClass::Fling;
  throw std::invalid_argument("unknown gesture class: " + std::string(s));
}

// Identity of one gesture GVF. Ordering is (class, first, second), which is
// also the enumerate_goals order.
class GestureGoal {
public:
  static GestureGoal tap(Cell c) { return GestureGoal(GestureClass::Tap, c, 0); }
  static GestureGoal swipe(Cell start, Cell end) { return GestureGoal(GestureClass::Swipe, start, end); }
  static GestureGoal fling(Direction d) { return GestureGoal(GestureClass::Fling, static_cast<int>(d), 0); }

  GestureClass gesture_class() const { return cls_; }
  Cell tap_cell() const {
    require(GestureClass::Tap);
    return first_;
  }
  Cell start_cell() const {
    require(GestureClass::Swipe);
    return first_;
  }
  Cell end_cell() const {
    require(GestureClass::Swipe);
    return second_;
  }
  Direction direction() const {
    require(GestureClass::Fling);
    return static_cast<Direction>(first_);
  }

  // Raw parameter slots: (cell | start | direction index, end | 0).
  int first_param() const { return first_; }
  int second_param() const { return second_; }

  std::string to_string() const {
    switch (cls_) {
      case GestureClass::Tap: return "tap(" + std::to_string(first_) + ")";
      case GestureClass::Swipe:
        return "swipe(" + std::to_string(first_) + "," + std::to_string(second_) + ")";
      case GestureClass::Fling: return "fling(" + std::string(direction_name(direction())) + ")";
    }
    return "?";
  }

  friend auto operator<=>(const GestureGoal&, const GestureGoal&) = default;
  friend bool operator==(const GestureGoal&, const GestureGoal&) = default;

private:
  GestureGoal(GestureClass c, int a, int b) : cls_(c), first_(a), second_(b) {}
  void require(GestureClass c) const {
    if (cls_ != c) throw std::logic_error("GestureGoal: field not present for " + std::string(class_name(cls_)));
  }
  GestureClass cls_;
  int first_;
  int second_;
};

// Sorted, duplicate-free.
using GoalSet = std::vector<GestureGoal>;

// The touch run closed by the final LIFT: the cells between the last two
// LIFT symbols. Empty when the history does not end with LIFT, when no
// earlier LIFT exists in the window, or when the two lifts are adjacent.
struct TouchRun {
  std::size_t begin = 0;  // index of first TOUCH
  std::size_t end = 0;    // index of the closing LIFT
  bool valid() const { return end > begin; }
  std::size_t touches() const { return end - begin; }
};

inline TouchRun closing_run(const TouchHistory& h) {
  if (h.size() < 3 || !h.back().is_lift()) return {};
  const std::size_t t = h.size() - 1;
  std::size_t j = t;
  while (j > 0 && h[j - 1].is_touch()) --j;
  if (j == 0 || j == t) return {};  // no opening LIFT, or no touches
  return TouchRun{j, t};
}

inline int swipe_cumulant(const TouchHistory& h, Cell start, Cell end) {
  const TouchRun run = closing_run(h);
  if (!run.valid()) return 0;
  return (h[run.begin].cell() == start && h[run.end - 1].cell() == end) ? 1 : 0;
}

inline int tap_cumulant(const TouchHistory& h, Cell c) {
  const TouchRun run = closing_run(h);
  return (run.valid() && run.touches() == 1 && h[run.begin].cell() == c) ? 1 : 0;
}

inline int fling_cumulant(const GridGeometry& g, const TouchHistory& h, Direction d) {
  const TouchRun run = closing_run(h);
  if (!run.valid()) return 0;
  const Cell a = h[run.begin].cell();
  const Cell b = h[run.end - 1].cell();
  if (a == b) return 0;
  return direction_of(g, a, b) == d ? 1 : 0;
}

inline int cumulant(const GridGeometry& g, const TouchHistory& h, const GestureGoal& goal) {
  switch (goal.gesture_class()) {
    case GestureClass::Tap: return tap_cumulant(h, goal.tap_cell());
    case GestureClass::Swipe: return swipe_cumulant(h, goal.start_cell(), goal.end_cell());
    case GestureClass::Fling: return fling_cumulant(g, h, goal.direction());
  }
  return 0;
}

// Every goal whose cumulant is 1 on h. At most one tap, one swipe and one
// fling can complete on a given step, since all of them are read off the
// single closing touch run.
inline GoalSet completed_gestures(const GridGeometry& g, const TouchHistory& h) {
  GoalSet out;
  const TouchRun run = closing_run(h);
  if (!run.valid()) return out;
  const Cell a = h[run.begin].cell();
  const Cell b = h[run.end - 1].cell();
  if (run.touches() == 1) out.push_back(GestureGoal::tap(a));
  out.push_back(GestureGoal::swipe(a, b));
  if (auto d = direction_of(g, a, b)) out.push_back(GestureGoal::fling(*d));
  return out;
}

struct ClassFlags {
  bool tap = false;
  bool swipe = false;
  bool fling = false;
  friend bool operator==(const ClassFlags&, const ClassFlags&) = default;
};

inline ClassFlags class_flags(const GoalSet& goals) {
  ClassFlags f;
  for (const auto& goal : goals) {
    switch (goal.gesture_class()) {
      case GestureClass::Tap: f.tap = true; break;
      case GestureClass::Swipe: f.swipe = true; break;
      case GestureClass::Fling: f.fling = true; break;
    }
  }
  return f;
}

struct GvfSpec {
  GestureGoal goal;
  double base_discount = 0.99;

  int cumulant(const GridGeometry& g, const TouchHistory& h) const { return ghrl::cumulant(g, h, goal); }
  double continuation(const GridGeometry& g, const TouchHistory& h) const {
    return base_discount * (1.0 - cumulant(g, h));
  }
};

inline std::size_t goal_count(const GridGeometry& g) {
  const auto n = static_cast<std::size_t>(g.cells());
  return n + n * n + 8;
}

// Position of a goal in enumerate_goals(g).
inline std::size_t goal_index(const GridGeometry& g, const GestureGoal& goal) {
  const auto n = static_cast<std::size_t>(g.cells());
  switch (goal.gesture_class()) {
    case GestureClass::Tap: return static_cast<std::size_t>(goal.tap_cell());
    case GestureClass::Swipe:
      return n + static_cast<std::size_t>(goal.start_cell()) * n + static_cast<std::size_t>(goal.end_cell());
    case GestureClass::Fling: return n + n * n + static_cast<std::size_t>(goal.direction());
  }
  return 0;
}

// Taps by cell, swipes by (start, end), then flings N..NW. Parameter files
// and one-hot encodings depend on this order.
inline std::vector<GestureGoal> enumerate_goals(const GridGeometry& g) {
  std::vector<GestureGoal> goals;
  const int n = g.cells();
  goals.reserve(goal_count(g));
  for (Cell c = 0; c < n; ++c) goals.push_back(GestureGoal::tap(c));
  for (Cell a = 0; a < n; ++a)
    for (Cell b = 0; b < n; ++b) goals.push_back(GestureGoal::swipe(a, b));
  for (Direction d : kAllDirections) goals.push_back(GestureGoal::fling(d));
  return goals;
}

inline std::vector<GestureGoal> goals_of_class(const GridGeometry& g, GestureClass cls) {
  std::vector<GestureGoal> goals;
  for (const auto& goal : enumerate_goals(g))
    if (goal.gesture_class() == cls) goals.push_back(goal);
  return goals;
}

// FNV-1a over the geometry and the serialized goal ordering.
inline std::uint64_t goal_ordering_checksum(const GridGeometry& g) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  };
  feed(static_cast<std::uint32_t>(g.rows));
  feed(static_cast<std::uint32_t>(g.cols));
  for (const auto& goal : enumerate_goals(g)) {
    feed(static_cast<std::uint32_t>(goal.gesture_class()));
    feed(static_cast<std::uint32_t>(goal.first_param()));
    feed(static_cast<std::uint32_t>(goal.second_param()));
  }
  return h;
}

}  // namespace ghrl
