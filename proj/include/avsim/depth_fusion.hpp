#pragma once

// Multi-view depth improvement: neighbors' depth maps are back-projected and
// re-projected into the target view with z-buffering, and every pixel keeps
// the smallest valid value. Remaining holes are interpolated.

#include <string>
#include <vector>

#include "avsim/dataset.hpp"

namespace avsim {

struct FusionParams {
  int k_neighbors = 6;
  /// 0 splats each projected point into one pixel; 1 into the 3x3 block around it.
  int splat_radius = 0;
  bool interpolate = true;
};

/// The k frames with the highest overlap score max(0, cos(view angle)) / (1 + distance),
/// excluding the target; ties broken by frame_id.
std::vector<std::string> select_fusion_neighbors(const FrameSource& scene,
                                                 const std::string& target, int k);

double view_overlap_score(const ScenePose& a, const ScenePose& b);

DepthImage fuse_depth(const FrameSource& scene, const std::string& target,
                      const FusionParams& params = {});

/// Fills each zero pixel with the inverse-distance weighted mean of the nearest
/// valid pixel along each of the 8 compass directions, repeating until every
/// pixel is filled. An all-zero map is returned unchanged.
DepthImage interpolate_holes(const DepthImage& depth);

/// Fused depth for every frame, in manifest order.
std::vector<DepthImage> fuse_scene(const FrameSource& scene, const FusionParams& params = {},
                                   int threads = 0);

}  // namespace avsim
