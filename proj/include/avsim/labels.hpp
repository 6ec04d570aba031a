#pragma once

// Occlusion-aware 2D labels from 3D instance point clouds.

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avsim/dataset.hpp"

namespace avsim {

struct LabelParams {
  double occlusion_slack = 0.05;  // meters added to fused depth
  double percentile_lo = 2.0;
  double percentile_hi = 98.0;
  int min_visible_points = 20;
  /// Inliers are points within the percentile band widened on each side by
  /// max(band_slack_min_px, band_slack_fraction * band width).
  double band_slack_fraction = 0.25;
  double band_slack_min_px = 1.0;
  double box_margin_px = 1.0;

  void validate() const;
};

/// Visible cloud points of one instance in one frame, as continuous image
/// coordinates. A point is visible when it projects inside the image in front
/// of the camera and z <= fused depth + slack; missing depth (0) does not occlude.
/// With margin_px > 0, points up to that far outside the image are also kept,
/// tested against the nearest border pixel.
std::vector<Projection> visible_projections(const PointCloud& cloud, const ScenePose& pose,
                                            const DepthImage& fused_depth, double occlusion_slack,
                                            double margin_px = 0.0);

/// Nearest-rank percentile (p in [0, 100]) of a non-empty sample.
double nearest_rank_percentile(std::vector<double> values, double p);

/// Box over pixel centers covered by the inlier extent of the projections.
BoundingBox percentile_box(const std::vector<Projection>& points, const LabelParams& params,
                           int width, int height);

/// Absent when fewer than min_visible_points points are visible. Points just
/// outside the border still extend the box (see box_margin_px) so that boxes
/// cut by the image edge reach it.
std::optional<InstanceAnnotation> project_instance(const PointCloud& cloud, const ScenePose& pose,
                                                   const DepthImage& fused_depth,
                                                   const LabelParams& params = {});

/// 1 when width >= 100 and height >= 75, 2 when width >= 50 and height >= 30, else 3.
int assign_difficulty(const BoundingBox& box);

struct LabelStats {
  std::map<int, int> boxes_per_instance;
  std::array<int, 3> boxes_per_difficulty{};
  int frames = 0;

  std::string to_json() const;
};

struct LabelResult {
  std::vector<InstanceAnnotation> annotations;  // frame order, then instance id
  LabelStats stats;
};

/// Fused depth of the i-th manifest frame.
using DepthProvider = std::function<DepthImage(std::size_t frame_index)>;

LabelResult label_scene(const FrameSource& scene, const DepthProvider& fused_depth,
                        const LabelParams& params = {}, int threads = 0);

}  // namespace avsim
