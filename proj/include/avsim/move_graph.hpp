#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "avsim/geometry.hpp"

namespace avsim {

enum class Action : int {
  kForward = 0,
  kBackward = 1,
  kLeft = 2,
  kRight = 3,
  kRotateCw = 4,
  kRotateCcw = 5,
};

constexpr int kActionCount = 6;
constexpr std::array<Action, kActionCount> kAllActions = {
    Action::kForward, Action::kBackward,  Action::kLeft,
    Action::kRight,   Action::kRotateCw, Action::kRotateCcw};

std::string_view action_name(Action action);
/// Throws UserError naming the valid names.
Action parse_action(std::string_view name);
/// Throws UserError naming the valid range.
Action action_from_index(int index);
inline int action_index(Action a) { return static_cast<int>(a); }

/// Successor frame for each (frame, action); absent pointers are not stored.
class MoveGraph {
 public:
  struct Edge {
    std::string frame_id;
    Action action;
    std::string target_frame_id;
    bool operator==(const Edge&) const = default;
  };

  void set(const std::string& frame_id, Action action, std::string target);
  void erase(const std::string& frame_id, Action action);
  std::optional<std::string> next(const std::string& frame_id, Action action) const;

  /// Edges sorted by (frame_id, action).
  std::vector<Edge> edges() const;
  std::size_t edge_count() const;

  bool operator==(const MoveGraph&) const = default;

 private:
  std::map<std::string, std::array<std::string, kActionCount>> pointers_;
};

struct MoveGraphParams {
  double target_step = 0.30;        // meters
  double rotation_step = 30.0;      // degrees
  double cone_half_angle = 45.0;    // degrees
  double cluster_radius = 0.05;     // meters
  double yaw_tolerance = 5.0;       // degrees
  double max_step_ratio = 1.5;      // translation candidates farther than this x step are ignored
};

/// Movement pointers over a set of poses. Translation pointers pick the frame
/// inside the direction cone with near-equal heading whose planar distance is
/// closest to the target step; rotation pointers connect co-located frames whose
/// heading differs by the signed rotation step (counterclockwise seen from above
/// is rotate_ccw). Throws UserError on duplicate poses.
MoveGraph build_move_graph(const std::vector<ScenePose>& poses, const MoveGraphParams& params = {});

/// Empty iff `graph` equals an exhaustive O(n^2) reconstruction from `poses`
/// and has no self-pointers, dangling targets or non-inverse rotation pairs.
std::vector<std::string> verify_move_graph(const MoveGraph& graph,
                                           const std::vector<ScenePose>& poses,
                                           const MoveGraphParams& params = {});

/// Structural checks only (no reconstruction): dangling targets, self-pointers,
/// rotate_cw / rotate_ccw inverse pairs.
std::vector<std::string> check_move_graph_structure(const MoveGraph& graph,
                                                    const std::vector<std::string>& frame_ids);

}  // namespace avsim
