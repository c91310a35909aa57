#pragma once

// Brute-force reference for completed_gestures: every goal is checked
// against the literal cumulant definitions at every candidate start index.
// Shares nothing with the incremental matcher beyond the value types.

#include "gesture_core.hpp"

namespace ghrl::oracle {

inline bool literal_swipe(const TouchHistory& h, Cell q1, Cell q2) {
  if (h.empty()) return false;
  const std::size_t t = h.size() - 1;
  for (std::size_t i = 0; i < t; ++i) {
    if (i + 1 > t - 1) continue;  // need room for q1 at i+1 and q2 at t-1
    bool ok = h[i].is_lift() && h[t].is_lift();
    ok = ok && h[i + 1] == TouchSymbol::touch(q1) && h[t - 1] == TouchSymbol::touch(q2);
    for (std::size_t j = i + 1; ok && j < t; ++j) ok = !h[j].is_lift();
    if (ok) return true;
  }
  return false;
}

inline bool literal_tap(const TouchHistory& h, Cell c) {
  const std::size_t t = h.size();
  return t >= 3 && h[t - 3].is_lift() && h[t - 2] == TouchSymbol::touch(c) && h[t - 1].is_lift();
}

inline bool literal_fling(const GridGeometry& g, const TouchHistory& h, Direction d) {
  for (Cell a = 0; a < g.cells(); ++a) {
    for (Cell b = 0; b < g.cells(); ++b) {
      if (a == b || !literal_swipe(h, a, b)) continue;
      // Quantization recomputed inline: first maximum of the normalized
      // dot product over the eight compass steps.
      const int dr = g.row_of(b) - g.row_of(a);
      const int dc = g.col_of(b) - g.col_of(a);
      double best = -1e300;
      int best_idx = -1;
      for (int k = 0; k < 8; ++k) {
        const auto [kr, kc] = direction_step(static_cast<Direction>(k));
        const double norm = (kr != 0 && kc != 0) ? std::sqrt(2.0) : 1.0;
        const double dot = (kr * dr + kc * dc) / norm;
        if (dot > best + 1e-12) {
          best = dot;
          best_idx = k;
        }
      }
      if (best_idx == static_cast<int>(d)) return true;
    }
  }
  return false;
}

inline GoalSet completed_gestures(const GridGeometry& g, const TouchHistory& h) {
  GoalSet out;
  for (const auto& goal : enumerate_goals(g)) {
    bool hit = false;
    switch (goal.gesture_class()) {
      case GestureClass::Tap: hit = literal_tap(h, goal.tap_cell()); break;
      case GestureClass::Swipe: hit = literal_swipe(h, goal.start_cell(), goal.end_cell()); break;
      case GestureClass::Fling: hit = literal_fling(g, h, goal.direction()); break;
    }
    if (hit) out.push_back(goal);
  }
  return out;
}

}  // namespace ghrl::oracle
