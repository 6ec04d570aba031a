#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "avsim/move_graph.hpp"

namespace avsim::testing {

// Brute-force oracle written straight from the selection rule: scan every
// other pose, keep the admissible ones and take the minimum of the ranking key.
inline std::optional<std::string> oracle_pointer(const std::vector<ScenePose>& poses, size_t from,
                                          Action action, const MoveGraphParams& p) {
  const ScenePose& a = poses[from];
  struct Best {
    long long k1, k2;
    std::string id;
  };
  std::optional<Best> best;
  for (std::size_t j = 0; j < poses.size(); ++j) {
    if (j == from) continue;
    const ScenePose& b = poses[j];
    long long k1 = 0, k2 = 0;
    if (action == Action::kRotateCw || action == Action::kRotateCcw) {
      const double dist = (b.position - a.position).norm();
      const double want = action == Action::kRotateCcw ? p.rotation_step : -p.rotation_step;
      double dyaw = b.yaw_degrees() - a.yaw_degrees() - want;
      while (dyaw > 180.0) dyaw -= 360.0;
      while (dyaw <= -180.0) dyaw += 360.0;
      if (dist > p.cluster_radius || std::abs(dyaw) > p.yaw_tolerance) continue;
      k1 = std::llround(std::abs(dyaw) * 1e6);
      k2 = std::llround(dist * 1e6);
    } else {
      const Displacement d = relative_displacement(a, b);
      if (std::abs(d.yaw_delta) > p.yaw_tolerance) continue;
      const double dist = std::sqrt(d.forward * d.forward + d.right * d.right);
      if (dist <= p.cluster_radius || dist > p.max_step_ratio * p.target_step) continue;
      double ax = 0, ay = 0;  // (forward, right)
      switch (action) {
        case Action::kForward: ax = 1; break;
        case Action::kBackward: ax = -1; break;
        case Action::kLeft: ay = -1; break;
        default: ay = 1; break;
      }
      const double c = std::clamp((d.forward * ax + d.right * ay) / dist, -1.0, 1.0);
      const double angle = std::acos(c) * 180.0 / std::numbers::pi;
      if (angle > p.cone_half_angle) continue;
      k1 = std::llround(std::abs(dist - p.target_step) * 1e6);
      k2 = std::llround(angle * 1e6);
    }
    const Best cand{k1, k2, b.frame_id};
    if (!best || std::tie(cand.k1, cand.k2, cand.id) < std::tie(best->k1, best->k2, best->id)) {
      best = cand;
    }
  }
  if (!best) return std::nullopt;
  return best->id;
}

inline std::size_t oracle_mismatches(const MoveGraph& g, const std::vector<ScenePose>& poses,
                         const MoveGraphParams& p = {}) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    for (Action a : kAllActions) {
      if (oracle_pointer(poses, i, a, p) != g.next(poses[i].frame_id, a)) ++bad;
    }
  }
  return bad;
}

}  // namespace avsim::testing
