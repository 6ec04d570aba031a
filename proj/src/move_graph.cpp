#include "avsim/move_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <tuple>
#include <unordered_map>

#include <fmt/format.h>

#include "avsim/error.hpp"
#include "avsim/parallel.hpp"

namespace avsim {

namespace {

constexpr std::array<std::string_view, kActionCount> kActionNames = {
    "forward", "backward", "left", "right", "rotate_cw", "rotate_ccw"};

// Unit direction of each translation in the (forward, right) plane.
constexpr std::array<std::array<double, 2>, 4> kTranslationAxes = {
    {{1.0, 0.0}, {-1.0, 0.0}, {0.0, -1.0}, {0.0, 1.0}}};

bool is_rotation(Action a) { return a == Action::kRotateCw || a == Action::kRotateCcw; }

// Selection keys are quantized so that ranking is a strict weak order that
// does not depend on the order candidates are visited in.
long long quantize(double x) { return std::llround(x * 1e6); }

using CandidateKey = std::tuple<long long, long long, std::string>;

std::optional<CandidateKey> translation_key(const ScenePose& from, const ScenePose& to,
                                            Action action, const MoveGraphParams& p) {
  const Displacement d = relative_displacement(from, to);
  if (std::abs(d.yaw_delta) > p.yaw_tolerance) return std::nullopt;
  const double dist = d.planar_distance();
  if (dist <= p.cluster_radius || dist > p.max_step_ratio * p.target_step) return std::nullopt;
  const auto& axis = kTranslationAxes[action_index(action)];
  const double cosang = std::clamp((d.forward * axis[0] + d.right * axis[1]) / dist, -1.0, 1.0);
  const double angle = std::acos(cosang) * 180.0 / std::numbers::pi;
  if (angle > p.cone_half_angle) return std::nullopt;
  return CandidateKey{quantize(std::abs(dist - p.target_step)), quantize(angle), to.frame_id};
}

std::optional<CandidateKey> rotation_key(const ScenePose& from, const ScenePose& to, Action action,
                                         const MoveGraphParams& p) {
  const double dist = (to.position - from.position).norm();
  if (dist > p.cluster_radius) return std::nullopt;
  const double target = action == Action::kRotateCcw ? p.rotation_step : -p.rotation_step;
  const double dev =
      std::abs(wrap_degrees(wrap_degrees(to.yaw_degrees() - from.yaw_degrees()) - target));
  if (dev > p.yaw_tolerance) return std::nullopt;
  return CandidateKey{quantize(dev), quantize(dist), to.frame_id};
}

std::optional<CandidateKey> candidate_key(const ScenePose& from, const ScenePose& to,
                                          Action action, const MoveGraphParams& p) {
  if (from.frame_id == to.frame_id) return std::nullopt;
  return is_rotation(action) ? rotation_key(from, to, action, p)
                             : translation_key(from, to, action, p);
}

bool is_duplicate(const ScenePose& a, const ScenePose& b, const MoveGraphParams& p) {
  return (a.position - b.position).norm() <= p.cluster_radius &&
         std::abs(wrap_degrees(b.yaw_degrees() - a.yaw_degrees())) <= p.yaw_tolerance;
}

void validate_params(const MoveGraphParams& p) {
  if (!(p.target_step > 0.0) || !(p.rotation_step > 0.0) || !(p.cone_half_angle > 0.0) ||
      !(p.cluster_radius >= 0.0) || !(p.yaw_tolerance >= 0.0) || !(p.max_step_ratio >= 1.0)) {
    throw UserError("move graph parameters out of range");
  }
}

void check_unique_ids(const std::vector<ScenePose>& poses) {
  std::set<std::string> seen;
  for (const auto& pose : poses) {
    if (!seen.insert(pose.frame_id).second) {
      throw IntegrityError(fmt::format("duplicate frame_id: {}", pose.frame_id));
    }
  }
}

struct CellHash {
  size_t operator()(const std::array<long long, 3>& c) const {
    return std::hash<long long>()(c[0] * 73856093LL ^ c[1] * 19349663LL ^ c[2] * 83492791LL);
  }
};

}  // namespace

std::string_view action_name(Action action) { return kActionNames[action_index(action)]; }

Action parse_action(std::string_view name) {
  for (int i = 0; i < kActionCount; ++i) {
    if (kActionNames[i] == name) return static_cast<Action>(i);
  }
  throw UserError(fmt::format("unknown action '{}' (valid: forward, backward, left, right, "
                              "rotate_cw, rotate_ccw)",
                              name));
}

Action action_from_index(int index) {
  if (index < 0 || index >= kActionCount) {
    throw UserError(fmt::format("action index {} out of range [0, {}]", index, kActionCount - 1));
  }
  return static_cast<Action>(index);
}

void MoveGraph::set(const std::string& frame_id, Action action, std::string target) {
  pointers_[frame_id][action_index(action)] = std::move(target);
}

void MoveGraph::erase(const std::string& frame_id, Action action) {
  auto it = pointers_.find(frame_id);
  if (it == pointers_.end()) return;
  it->second[action_index(action)].clear();
  if (std::all_of(it->second.begin(), it->second.end(), [](const auto& s) { return s.empty(); })) {
    pointers_.erase(it);
  }
}

std::optional<std::string> MoveGraph::next(const std::string& frame_id, Action action) const {
  auto it = pointers_.find(frame_id);
  if (it == pointers_.end()) return std::nullopt;
  const std::string& target = it->second[action_index(action)];
  if (target.empty()) return std::nullopt;
  return target;
}

std::vector<MoveGraph::Edge> MoveGraph::edges() const {
  std::vector<Edge> out;
  for (const auto& [frame, targets] : pointers_) {
    for (int a = 0; a < kActionCount; ++a) {
      if (!targets[a].empty()) out.push_back(Edge{frame, static_cast<Action>(a), targets[a]});
    }
  }
  return out;
}

std::size_t MoveGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& [frame, targets] : pointers_) {
    for (const auto& t : targets) n += t.empty() ? 0 : 1;
  }
  return n;
}

MoveGraph build_move_graph(const std::vector<ScenePose>& poses, const MoveGraphParams& params) {
  validate_params(params);
  check_unique_ids(poses);
  const size_t n = poses.size();

  // Translation candidates share the source heading, so bucket by yaw.
  // Bins at least as wide as the tolerance, so candidates sit in adjacent bins.
  const int yaw_bins =
      std::max(1, static_cast<int>(std::floor(360.0 / std::max(params.yaw_tolerance, 1e-3))));
  auto yaw_bin = [&](double yaw) {
    const int b = static_cast<int>(std::floor((yaw + 180.0) / 360.0 * yaw_bins));
    return std::clamp(b, 0, yaw_bins - 1);
  };
  std::vector<std::vector<size_t>> by_yaw(yaw_bins);
  for (size_t i = 0; i < n; ++i) by_yaw[yaw_bin(poses[i].yaw_degrees())].push_back(i);

  // Rotation candidates and duplicates are co-located, so bucket by 3D cell.
  const double cell = std::max(params.cluster_radius, 1e-6);
  auto cell_of = [&](const Vec3& p) {
    return std::array<long long, 3>{static_cast<long long>(std::floor(p.x() / cell)),
                                    static_cast<long long>(std::floor(p.y() / cell)),
                                    static_cast<long long>(std::floor(p.z() / cell))};
  };
  std::unordered_map<std::array<long long, 3>, std::vector<size_t>, CellHash> by_cell;
  for (size_t i = 0; i < n; ++i) by_cell[cell_of(poses[i].position)].push_back(i);

  auto colocated = [&](size_t i) {
    std::vector<size_t> out;
    const auto c = cell_of(poses[i].position);
    for (long long dx = -1; dx <= 1; ++dx)
      for (long long dy = -1; dy <= 1; ++dy)
        for (long long dz = -1; dz <= 1; ++dz) {
          auto it = by_cell.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (it != by_cell.end()) out.insert(out.end(), it->second.begin(), it->second.end());
        }
    return out;
  };

  // Duplicate detection, reported for the lexicographically first pair.
  std::optional<std::pair<std::string, std::string>> duplicate;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j : colocated(i)) {
      if (j == i || !is_duplicate(poses[i], poses[j], params)) continue;
      auto pair = std::minmax(poses[i].frame_id, poses[j].frame_id);
      std::pair<std::string, std::string> p(pair.first, pair.second);
      if (!duplicate || p < *duplicate) duplicate = p;
    }
  }
  if (duplicate) {
    throw UserError(fmt::format("ambiguous duplicate poses: {} and {}", duplicate->first,
                                duplicate->second));
  }

  std::vector<std::array<std::optional<CandidateKey>, kActionCount>> best(n);
  parallel_for(n, [&](size_t i) {
    const ScenePose& from = poses[i];
    auto offer = [&](size_t j, Action a) {
      auto key = candidate_key(from, poses[j], a, params);
      auto& slot = best[i][action_index(a)];
      if (key && (!slot || *key < *slot)) slot = std::move(key);
    };
    const int b = yaw_bin(from.yaw_degrees());
    std::set<int> bins;
    if (yaw_bins < 3) {
      for (int k = 0; k < yaw_bins; ++k) bins.insert(k);
    } else {
      for (int db = -1; db <= 1; ++db) bins.insert((b + db + yaw_bins) % yaw_bins);
    }
    for (int bin : bins) {
      for (size_t j : by_yaw[bin]) {
        for (int a = 0; a < 4; ++a) offer(j, static_cast<Action>(a));
      }
    }
    for (size_t j : colocated(i)) {
      offer(j, Action::kRotateCw);
      offer(j, Action::kRotateCcw);
    }
  });

  MoveGraph graph;
  for (size_t i = 0; i < n; ++i) {
    for (int a = 0; a < kActionCount; ++a) {
      if (best[i][a]) graph.set(poses[i].frame_id, static_cast<Action>(a), std::get<2>(*best[i][a]));
    }
  }
  return graph;
}

std::vector<std::string> check_move_graph_structure(const MoveGraph& graph,
                                                    const std::vector<std::string>& frame_ids) {
  std::vector<std::string> violations;
  const std::set<std::string> known(frame_ids.begin(), frame_ids.end());
  for (const auto& e : graph.edges()) {
    const auto name = action_name(e.action);
    if (!known.count(e.frame_id)) {
      violations.push_back(fmt::format("unknown source frame {} ({})", e.frame_id, name));
    }
    if (!known.count(e.target_frame_id)) {
      violations.push_back(
          fmt::format("dangling pointer {} --{}--> {}", e.frame_id, name, e.target_frame_id));
    }
    if (e.frame_id == e.target_frame_id) {
      violations.push_back(fmt::format("self-pointer {} --{}-->", e.frame_id, name));
    }
    if (e.action == Action::kRotateCw) {
      auto back = graph.next(e.target_frame_id, Action::kRotateCcw);
      if (back && *back != e.frame_id) {
        violations.push_back(fmt::format("rotate_cw {} -> {} not inverted by rotate_ccw (-> {})",
                                         e.frame_id, e.target_frame_id, *back));
      }
    }
  }
  return violations;
}

std::vector<std::string> verify_move_graph(const MoveGraph& graph,
                                           const std::vector<ScenePose>& poses,
                                           const MoveGraphParams& params) {
  std::vector<std::string> ids;
  for (const auto& p : poses) ids.push_back(p.frame_id);
  std::vector<std::string> violations = check_move_graph_structure(graph, ids);

  // Exhaustive reconstruction over every ordered pair.
  for (const ScenePose& from : poses) {
    for (Action a : kAllActions) {
      std::optional<CandidateKey> best;
      for (const ScenePose& to : poses) {
        auto key = candidate_key(from, to, a, params);
        if (key && (!best || *key < *best)) best = key;
      }
      const auto expected = best ? std::optional<std::string>(std::get<2>(*best)) : std::nullopt;
      const auto actual = graph.next(from.frame_id, a);
      if (expected != actual) {
        violations.push_back(fmt::format("{} --{}--> expected {}, found {}", from.frame_id,
                                         action_name(a), expected.value_or("(none)"),
                                         actual.value_or("(none)")));
      }
    }
  }
  return violations;
}

}  // namespace avsim
