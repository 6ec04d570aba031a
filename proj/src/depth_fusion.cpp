#include "avsim/depth_fusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "avsim/error.hpp"
#include "avsim/parallel.hpp"

namespace avsim {

namespace {

constexpr std::array<std::array<int, 2>, 8> kCompass = {
    {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}}};

// One interpolation pass. Returns the number of pixels filled.
size_t interpolate_pass(const DepthImage& in, DepthImage& out) {
  const int w = in.width(), h = in.height();
  std::vector<double> num(static_cast<size_t>(w) * h, 0.0);
  std::vector<double> den(num.size(), 0.0);
  std::vector<std::uint16_t> near_val(num.size());
  std::vector<int> near_steps(num.size());

  for (const auto& [dx, dy] : kCompass) {
    // Nearest valid pixel from p along (dx, dy) is p + d when valid, otherwise
    // the nearest from p + d; scan so that p + d is always visited first.
    const double step_len = std::hypot(dx, dy);
    const int y0 = dy > 0 ? h - 1 : 0, y1 = dy > 0 ? -1 : h, sy = dy > 0 ? -1 : 1;
    const int x0 = dx > 0 ? w - 1 : 0, x1 = dx > 0 ? -1 : w, sx = dx > 0 ? -1 : 1;
    for (int y = y0; y != y1; y += sy) {
      for (int x = x0; x != x1; x += sx) {
        const size_t i = static_cast<size_t>(y) * w + x;
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) {
          near_val[i] = 0;
          continue;
        }
        const size_t j = static_cast<size_t>(ny) * w + nx;
        if (in.at(nx, ny) != 0) {
          near_val[i] = in.at(nx, ny);
          near_steps[i] = 1;
        } else {
          near_val[i] = near_val[j];
          near_steps[i] = near_steps[j] + 1;
        }
        if (in.at(x, y) == 0 && near_val[i] != 0) {
          const double wgt = 1.0 / (near_steps[i] * step_len);
          num[i] += wgt * near_val[i];
          den[i] += wgt;
        }
      }
    }
  }

  size_t filled = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      if (in.at(x, y) != 0 || den[i] == 0.0) continue;
      out.at(x, y) = static_cast<std::uint16_t>(std::clamp(std::lround(num[i] / den[i]), 1L,
                                                           static_cast<long>(kMaxDepthMm)));
      ++filled;
    }
  }
  return filled;
}

}  // namespace

double view_overlap_score(const ScenePose& a, const ScenePose& b) {
  const double c = std::max(0.0, a.view_direction().dot(b.view_direction()));
  return c / (1.0 + (a.position - b.position).norm());
}

std::vector<std::string> select_fusion_neighbors(const FrameSource& scene, const std::string& target,
                                                 int k) {
  if (k < 0) throw UserError(fmt::format("k_neighbors must be >= 0, got {}", k));
  const ScenePose& t = scene.pose(target);
  std::vector<std::pair<double, const std::string*>> scored;
  for (const auto& p : scene.manifest().frames) {
    if (p.frame_id == target) continue;
    scored.emplace_back(view_overlap_score(t, p), &p.frame_id);
  }
  const size_t n = std::min(scored.size(), static_cast<size_t>(k));
  std::partial_sort(scored.begin(), scored.begin() + n, scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return *a.second < *b.second;
  });
  std::vector<std::string> out;
  for (size_t i = 0; i < n; ++i) out.push_back(*scored[i].second);
  return out;
}

DepthImage fuse_depth(const FrameSource& scene, const std::string& target, const FusionParams& params) {
  if (params.splat_radius < 0) throw UserError("splat_radius must be >= 0");
  const ScenePose& tpose = scene.pose(target);
  const PinholeCamera tcam(tpose);
  const Intrinsics& tk = tpose.intrinsics;
  DepthImage out = scene.depth(target);
  if (out.width() != tk.width || out.height() != tk.height) {
    throw IntegrityError(fmt::format("frame {}: depth is {}x{}, intrinsics say {}x{}", target,
                                     out.width(), out.height(), tk.width, tk.height));
  }

  for (const auto& nid : select_fusion_neighbors(scene, target, params.k_neighbors)) {
    const ScenePose& npose = scene.pose(nid);
    const PinholeCamera ncam(npose);
    const DepthImage nd = scene.depth(nid);
    // Neighbor camera frame -> target camera frame.
    const Mat3 rel = tcam.world_from_camera().transpose() * ncam.world_from_camera();
    const Vec3 off = tcam.to_camera(ncam.position());
    const Intrinsics& nk = npose.intrinsics;
    for (int y = 0; y < nd.height(); ++y) {
      for (int x = 0; x < nd.width(); ++x) {
        const std::uint16_t mm = nd.at(x, y);
        if (mm == 0) continue;
        const double z = depth_meters(mm);
        const Vec3 pn((x + 0.5 - nk.cx) / nk.fx * z, (y + 0.5 - nk.cy) / nk.fy * z, z);
        const Vec3 pt = rel * pn + off;
        if (!(pt.z() > 0.0)) continue;
        const double u = tk.cx + tk.fx * pt.x() / pt.z();
        const double v = tk.cy + tk.fy * pt.y() / pt.z();
        if (!(u >= 0.0 && v >= 0.0 && u < tk.width && v < tk.height)) continue;
        const std::uint16_t val = depth_millimeters(pt.z());
        if (val == 0) continue;
        const int px = static_cast<int>(u), py = static_cast<int>(v);
        for (int yy = std::max(0, py - params.splat_radius);
             yy <= std::min(tk.height - 1, py + params.splat_radius); ++yy) {
          for (int xx = std::max(0, px - params.splat_radius);
               xx <= std::min(tk.width - 1, px + params.splat_radius); ++xx) {
            std::uint16_t& cur = out.at(xx, yy);
            if (cur == 0 || val < cur) cur = val;
          }
        }
      }
    }
  }
  return params.interpolate ? interpolate_holes(out) : out;
}

DepthImage interpolate_holes(const DepthImage& depth) {
  auto has_zero = [](const DepthImage& d) {
    return std::any_of(d.data().begin(), d.data().end(), [](auto v) { return v == 0; });
  };
  DepthImage cur = depth;
  while (has_zero(cur)) {
    DepthImage next = cur;
    if (interpolate_pass(cur, next) == 0) break;  // nothing valid to spread from
    cur = std::move(next);
  }
  return cur;
}

std::vector<DepthImage> fuse_scene(const FrameSource& scene, const FusionParams& params, int threads) {
  const auto& frames = scene.manifest().frames;
  std::vector<DepthImage> out(frames.size());
  parallel_for(
      frames.size(), [&](size_t i) { out[i] = fuse_depth(scene, frames[i].frame_id, params); },
      threads > 0 ? threads : default_thread_count());
  return out;
}

}  // namespace avsim
