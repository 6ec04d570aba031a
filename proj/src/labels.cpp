#include "avsim/labels.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <json.hpp>

#include "avsim/error.hpp"
#include "avsim/parallel.hpp"

namespace avsim {

namespace {

// Pixel index range [lo, hi) whose centers lie in [a, b].
std::pair<int, int> covered_pixels(double a, double b) {
  int lo = static_cast<int>(std::ceil(a - 0.5));
  int hi = static_cast<int>(std::floor(b - 0.5)) + 1;
  if (lo >= hi) {
    lo = static_cast<int>(std::floor((a + b) / 2.0));
    hi = lo + 1;
  }
  return {lo, hi};
}

std::pair<double, double> inlier_extent(std::vector<double> values, const LabelParams& p) {
  std::sort(values.begin(), values.end());
  const double lo = nearest_rank_percentile(values, p.percentile_lo);
  const double hi = nearest_rank_percentile(values, p.percentile_hi);
  const double slack = std::max(p.band_slack_min_px, p.band_slack_fraction * (hi - lo));
  double a = hi, b = lo;
  for (double v : values) {
    if (v < lo - slack || v > hi + slack) continue;
    a = std::min(a, v);
    b = std::max(b, v);
  }
  return {a, b};
}

}  // namespace

void LabelParams::validate() const {
  if (!(occlusion_slack >= 0.0)) throw UserError("occlusion slack must be >= 0");
  if (!(percentile_lo >= 0.0 && percentile_lo <= percentile_hi && percentile_hi <= 100.0)) {
    throw UserError(fmt::format("percentile band [{}, {}] invalid", percentile_lo, percentile_hi));
  }
  if (min_visible_points < 1) throw UserError("min_visible_points must be >= 1");
  if (!(band_slack_fraction >= 0.0) || !(band_slack_min_px >= 0.0) || !(box_margin_px >= 0.0)) {
    throw UserError("band slack must be >= 0");
  }
}

std::vector<Projection> visible_projections(const PointCloud& cloud, const ScenePose& pose,
                                            const DepthImage& fused, double slack, double margin) {
  const PinholeCamera cam(pose);
  const Intrinsics& k = pose.intrinsics;
  if (fused.width() != k.width || fused.height() != k.height) {
    throw IntegrityError(fmt::format("frame {}: fused depth is {}x{}, intrinsics say {}x{}",
                                     pose.frame_id, fused.width(), fused.height(), k.width, k.height));
  }
  std::vector<Projection> out;
  for (const auto& p : cloud.points) {
    const auto proj = cam.project(p);
    if (!proj || !(proj->u >= -margin && proj->v >= -margin && proj->u < k.width + margin &&
                   proj->v < k.height + margin)) {
      continue;
    }
    const std::uint16_t d =
        fused.at(std::clamp(proj->px(), 0, k.width - 1), std::clamp(proj->py(), 0, k.height - 1));
    if (d != 0 && proj->z > depth_meters(d) + slack) continue;
    out.push_back(*proj);
  }
  return out;
}

double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty()) throw UserError("percentile of an empty sample");
  if (!std::is_sorted(values.begin(), values.end())) std::sort(values.begin(), values.end());
  const auto n = static_cast<long>(values.size());
  const long rank = std::clamp(static_cast<long>(std::ceil(p / 100.0 * n - 1e-9)), 1L, n);
  return values[rank - 1];
}

BoundingBox percentile_box(const std::vector<Projection>& points, const LabelParams& params,
                           int width, int height) {
  std::vector<double> us, vs;
  us.reserve(points.size());
  vs.reserve(points.size());
  for (const auto& p : points) {
    us.push_back(p.u);
    vs.push_back(p.v);
  }
  const auto [u0, u1] = inlier_extent(std::move(us), params);
  const auto [v0, v1] = inlier_extent(std::move(vs), params);
  const auto [xmin, xmax] = covered_pixels(u0, u1);
  const auto [ymin, ymax] = covered_pixels(v0, v1);
  return clip_box(BoundingBox{xmin, ymin, xmax, ymax}, width, height);
}

std::optional<InstanceAnnotation> project_instance(const PointCloud& cloud, const ScenePose& pose,
                                                   const DepthImage& fused, const LabelParams& params) {
  if (cloud.points.empty()) {
    throw UserError(fmt::format("instance {}: empty point cloud", cloud.instance_id));
  }
  const Intrinsics& k = pose.intrinsics;
  const auto visible =
      visible_projections(cloud, pose, fused, params.occlusion_slack, params.box_margin_px);
  const auto in_image = std::count_if(visible.begin(), visible.end(), [&](const Projection& p) {
    return p.u >= 0.0 && p.v >= 0.0 && p.u < k.width && p.v < k.height;
  });
  if (in_image < params.min_visible_points) return std::nullopt;
  InstanceAnnotation a;
  a.frame_id = pose.frame_id;
  a.instance_id = cloud.instance_id;
  a.visible_point_count = static_cast<int>(in_image);
  a.box = percentile_box(visible, params, pose.intrinsics.width, pose.intrinsics.height);
  // The inlier band can sit entirely in the border margin when the in-image
  // points are a sliver of the visible set.
  if (!a.box.valid()) return std::nullopt;
  a.box.instance_id = cloud.instance_id;
  a.difficulty = a.box.difficulty = assign_difficulty(a.box);
  return a;
}

int assign_difficulty(const BoundingBox& box) {
  if (box.width() >= 100 && box.height() >= 75) return 1;
  if (box.width() >= 50 && box.height() >= 30) return 2;
  return 3;
}

std::string LabelStats::to_json() const {
  nlohmann::ordered_json j;
  j["frames"] = frames;
  j["boxes"] = boxes_per_difficulty[0] + boxes_per_difficulty[1] + boxes_per_difficulty[2];
  nlohmann::ordered_json per_instance = nlohmann::ordered_json::object();
  for (const auto& [id, n] : boxes_per_instance) per_instance[std::to_string(id)] = n;
  j["boxes_per_instance"] = per_instance;
  j["boxes_per_difficulty"] = {{"1", boxes_per_difficulty[0]},
                               {"2", boxes_per_difficulty[1]},
                               {"3", boxes_per_difficulty[2]}};
  return j.dump(2) + "\n";
}

LabelResult label_scene(const FrameSource& scene, const DepthProvider& fused_depth,
                        const LabelParams& params, int threads) {
  params.validate();
  const auto& m = scene.manifest();
  std::vector<PointCloud> clouds;
  for (const auto& inst : m.instances) {
    if (!inst.has_cloud) continue;
    clouds.push_back(scene.cloud(inst.instance_id));
    clouds.back().instance_id = inst.instance_id;
  }
  std::sort(clouds.begin(), clouds.end(),
            [](const auto& a, const auto& b) { return a.instance_id < b.instance_id; });

  std::vector<std::vector<InstanceAnnotation>> per_frame(m.frames.size());
  parallel_for(
      m.frames.size(),
      [&](size_t i) {
        const ScenePose& pose = m.frames[i];
        try {
          const DepthImage depth = fused_depth(i);
          for (const auto& c : clouds) {
            if (auto a = project_instance(c, pose, depth, params)) per_frame[i].push_back(*a);
          }
        } catch (const Error& e) {
          throw Error(e.kind(), fmt::format("frame {}: {}", pose.frame_id, e.what()));
        }
      },
      threads > 0 ? threads : default_thread_count());

  LabelResult out;
  out.stats.frames = static_cast<int>(m.frames.size());
  for (const auto& c : clouds) out.stats.boxes_per_instance[c.instance_id] = 0;
  for (auto& frame : per_frame) {
    for (auto& a : frame) {
      ++out.stats.boxes_per_instance[a.instance_id];
      ++out.stats.boxes_per_difficulty[a.difficulty - 1];
      out.annotations.push_back(std::move(a));
    }
  }
  return out;
}

}  // namespace avsim
