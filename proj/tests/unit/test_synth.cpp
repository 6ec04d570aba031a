#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "avsim/error.hpp"
#include "avsim/synth.hpp"
#include "test_util.hpp"

using namespace avsim;

namespace {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int label = -1;  // -1 nothing, 0 room / occluder
};

// Independent per-pixel oracle: slab intersection of the pixel-center ray
// against every box, and the room interior from the inside.
// `pad` grows (or shrinks) every box so that rays grazing an edge can be
// checked against both outcomes.
Hit trace_pixel(const SynthSceneSpec& spec, const ScenePose& pose, int x, int y, double pad = 0.0) {
  const Intrinsics& k = pose.intrinsics;
  const Vec3 dir_cam((x + 0.5 - k.cx) / k.fx, (y + 0.5 - k.cy) / k.fy, 1.0);
  const Vec3 d = pose.rotation() * dir_cam;
  const Vec3 o = pose.position;
  Hit best;
  auto consider_box = [&](Vec3 lo, Vec3 hi, int label) {
    lo.array() -= pad;
    hi.array() += pad;
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
      if (std::abs(d[i]) < 1e-15) {
        if (o[i] < lo[i] || o[i] > hi[i]) return;
        continue;
      }
      double a = (lo[i] - o[i]) / d[i], b = (hi[i] - o[i]) / d[i];
      if (a > b) std::swap(a, b);
      t0 = std::max(t0, a);
      t1 = std::min(t1, b);
    }
    if (t0 <= t1 && t0 > 0 && t0 < best.t) best = Hit{t0, label};
  };
  for (const auto& b : spec.objects) consider_box(b.min(), b.max(), b.instance_id);
  for (const auto& b : spec.occluders) consider_box(b.min(), b.max(), 0);
  // Room: exit distance of the interior.
  double exit = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (d[i] > 1e-15) exit = std::min(exit, (spec.room_max[i] - o[i]) / d[i]);
    if (d[i] < -1e-15) exit = std::min(exit, (spec.room_min[i] - o[i]) / d[i]);
  }
  if (exit < best.t) best = Hit{exit, 0};
  return best;
}

SynthSceneSpec small_spec() {
  SynthSceneSpec s;
  s.room_max = Vec3(3.0, 3.0, 2.5);
  s.grid = GridSpec{1.2, 1.2, 2, 2};
  s.objects.push_back(SynthBox{1, Vec3(2.3, 1.35, 1.0), Vec3(0.2, 0.2, 0.2), Color{200, 30, 30}});
  s.objects.push_back(SynthBox{2, Vec3(1.35, 2.3, 0.9), Vec3(0.15, 0.25, 0.1), Color{30, 200, 30}});
  s.objects.push_back(SynthBox{2, Vec3(1.35, 2.3, 0.97), Vec3(0.16, 0.26, 0.04), Color{30, 30, 200}});
  s.occluders.push_back(SynthBox{0, Vec3(0.6, 1.5, 0.9), Vec3(0.05, 1.0, 1.8), Color{120, 120, 120}});
  return s;
}

}  // namespace

TEST_CASE("1x1 grid, no objects: 12 frames of wall depth") {
  SynthSceneSpec s;
  s.grid = GridSpec{1.3, 2.1, 1, 1};
  const auto scene = generate_scene(s);
  const auto& frames = scene.scene.frames();
  REQUIRE(frames.size() == 12);
  CHECK(scene.visibility.empty());
  for (size_t f = 0; f < frames.size(); ++f) {
    const ScenePose& pose = scene.scene.manifest().frames[f];
    for (int y = 0; y < 240; y += 7) {
      for (int x = 0; x < 320; x += 7) {
        const Hit h = trace_pixel(s, pose, x, y);
        CHECK(frames[f].depth.at(x, y) == depth_millimeters(h.t));
      }
    }
  }
}

TEST_CASE("renderer matches the per-pixel ray oracle") {
  const SynthSceneSpec s = small_spec();
  const auto poses = synth_poses(s);
  REQUIRE(poses.size() == 48);
  size_t instance_pixels = 0;
  for (size_t i = 0; i < poses.size(); i += 5) {
    const RenderedView v = render_view(s, poses[i], RenderOptions{});
    for (int y = 0; y < 240; y += 3) {
      for (int x = 0; x < 320; x += 3) {
        // Depth along the optical axis equals the ray parameter at unit camera z.
        const Hit grow = trace_pixel(s, poses[i], x, y, 1e-9);
        const Hit shrink = trace_pixel(s, poses[i], x, y, -1e-9);
        const bool match_grow = std::abs(v.depth.at(x, y) - grow.t) < 1e-5 && v.label.at(x, y) == grow.label;
        const bool match_shrink =
            std::abs(v.depth.at(x, y) - shrink.t) < 1e-5 && v.label.at(x, y) == shrink.label;
        CHECK_MESSAGE((match_grow || match_shrink), poses[i].frame_id, " pixel ", x, ",", y);
        instance_pixels += v.label.at(x, y) > 0;
      }
    }
  }
  CHECK(instance_pixels > 100);
}

TEST_CASE("ground-truth boxes are tight over the visible mask") {
  const SynthSceneSpec s = small_spec();
  const auto scene = generate_scene(s);
  REQUIRE_FALSE(scene.visibility.empty());
  for (const auto& rec : scene.visibility) {
    const RenderedView v = render_view(s, scene.scene.pose(rec.frame_id), RenderOptions{});
    BoundingBox box{1 << 30, 1 << 30, -1, -1};
    int count = 0;
    for (int y = 0; y < 240; ++y) {
      for (int x = 0; x < 320; ++x) {
        if (v.label.at(x, y) != rec.instance_id) continue;
        ++count;
        box.xmin = std::min(box.xmin, x);
        box.ymin = std::min(box.ymin, y);
        box.xmax = std::max(box.xmax, x + 1);
        box.ymax = std::max(box.ymax, y + 1);
      }
    }
    CHECK(count == rec.pixel_count);
    CHECK(box.xmin == rec.box.xmin);
    CHECK(box.ymin == rec.box.ymin);
    CHECK(box.xmax == rec.box.xmax);
    CHECK(box.ymax == rec.box.ymax);
  }
}

TEST_CASE("a cube enclosed by walls is never visible") {
  SynthSceneSpec s;
  s.grid = GridSpec{1.0, 1.0, 3, 3};
  s.objects.push_back(SynthBox{7, Vec3(3.4, 3.4, 1.0), Vec3(0.2, 0.2, 0.2), Color{250, 0, 0}});
  s.objects.push_back(SynthBox{8, Vec3(1.3, 2.4, 1.0), Vec3(0.2, 0.2, 0.2), Color{0, 250, 0}});
  // Two slabs closing off the corner around instance 7.
  s.occluders.push_back(SynthBox{0, Vec3(3.0, 3.5, 1.25), Vec3(0.05, 1.0, 2.5), Color{100, 100, 100}});
  s.occluders.push_back(SynthBox{0, Vec3(3.5, 3.0, 1.25), Vec3(1.0, 0.05, 2.5), Color{100, 100, 100}});
  const auto scene = generate_scene(s);
  bool saw_other = false;
  for (const auto& r : scene.visibility) {
    CHECK(r.instance_id != 7);
    saw_other |= r.instance_id == 8;
  }
  CHECK(saw_other);
}

TEST_CASE("generation is deterministic, noise included") {
  SynthSceneSpec s = small_spec();
  s.rgb_noise_sigma = 4.0;
  s.seed = 99;
  const auto a = generate_scene(s, GenerateOptions{true, 3});
  const auto b = generate_scene(s, GenerateOptions{true, 1});
  REQUIRE(a.scene.frames().size() == b.scene.frames().size());
  for (size_t i = 0; i < a.scene.frames().size(); ++i) {
    CHECK(a.scene.frames()[i].rgb == b.scene.frames()[i].rgb);
    CHECK(a.scene.frames()[i].depth == b.scene.frames()[i].depth);
  }
  CHECK(a.visibility.size() == b.visibility.size());
  CHECK(visibility_to_json(a.visibility) == visibility_to_json(b.visibility));
}

TEST_CASE("poses: ids, grid, and 9-digit stability") {
  const auto poses = synth_poses(small_spec());
  CHECK(poses.front().frame_id == "p0000_y000");
  CHECK(poses[1].frame_id == "p0000_y030");
  CHECK(poses.back().frame_id == "p0003_y330");
  for (const auto& p : poses) {
    CHECK(p.position.x() == quantize_decimal(p.position.x()));
    CHECK(p.orientation.w() == quantize_decimal(p.orientation.w()));
    CHECK(p.orientation.z() == quantize_decimal(p.orientation.z()));
    CHECK_NOTHROW(p.validate());
  }
}

TEST_CASE("empty grid and invalid specs") {
  SynthSceneSpec s;
  s.room_max = Vec3(0.5, 0.5, 2.5);
  CHECK_THROWS_AS(synth_poses(s), UserError);
  s = SynthSceneSpec{};
  s.rotation_step = 7.0;
  CHECK_THROWS_AS(s.validate(), UserError);
  s = SynthSceneSpec{};
  s.objects.push_back(SynthBox{1, Vec3(3.95, 1, 1), Vec3(0.2, 0.2, 0.2)});
  CHECK_THROWS_AS(s.validate(), UserError);
  s = SynthSceneSpec{};
  s.grid_spacing = 0.0;
  CHECK_THROWS_AS(s.validate(), UserError);
}

TEST_CASE("camera clearance drops grid points next to boxes") {
  SynthSceneSpec s;
  s.grid = GridSpec{1.0, 1.0, 3, 1};
  s.objects.push_back(SynthBox{1, Vec3(1.3, 1.0, 1.0), Vec3(0.1, 0.1, 0.1)});
  CHECK(camera_positions(s).size() == 2);
}

TEST_CASE("instance clouds lie on part surfaces at the sampling pitch") {
  const SynthSceneSpec s = small_spec();
  const PointCloud c = sample_instance_cloud(s, 1);
  // 0.2 m faces at 5 mm: 41 x 41 samples per face.
  CHECK(c.points.size() == 6u * 41u * 41u);
  const SynthBox& b = s.objects[0];
  for (const auto& p : c.points) {
    const Vec3 lo = b.min(), hi = b.max();
    bool on_face = false;
    for (int i = 0; i < 3; ++i) {
      on_face |= std::abs(p[i] - lo[i]) < 1e-9 || std::abs(p[i] - hi[i]) < 1e-9;
      CHECK(p[i] >= lo[i] - 1e-9);
      CHECK(p[i] <= hi[i] + 1e-9);
    }
    CHECK(on_face);
  }
  CHECK(sample_instance_cloud(s, 2).points.size() > c.points.size() / 2);
  CHECK_THROWS_AS(sample_instance_cloud(s, 42), UserError);
}

TEST_CASE("corrupt_depth counts and identities") {
  DepthImage d = make_depth(40, 30);
  int valid = 0;
  for (int y = 0; y < 30; ++y) {
    for (int x = 0; x < 40; ++x) {
      d.at(x, y) = (x * 7 + y) % 11 == 0 ? 0 : static_cast<std::uint16_t>(1000 + x + y);
      valid += d.at(x, y) != 0;
    }
  }
  CHECK(corrupt_depth(d, 0.0, 0.0, 1) == d);
  const DepthImage all = corrupt_depth(d, 1.0, 0.0, 1);
  for (auto v : all.data()) CHECK(v == 0);

  const DepthImage c = corrupt_depth(d, 0.3, 0.1, 5);
  int zeroed = 0, inflated = 0, decreased = 0;
  for (int y = 0; y < 30; ++y) {
    for (int x = 0; x < 40; ++x) {
      if (d.at(x, y) == 0) {
        CHECK(c.at(x, y) == 0);
        continue;
      }
      if (c.at(x, y) == 0) ++zeroed;
      else if (c.at(x, y) > d.at(x, y)) {
        ++inflated;
        CHECK(c.at(x, y) >= 1.5 * d.at(x, y));
        CHECK(c.at(x, y) <= 3.0 * d.at(x, y) + 1);
      } else if (c.at(x, y) < d.at(x, y)) {
        ++decreased;
      }
    }
  }
  CHECK(zeroed == static_cast<int>(std::floor(0.3 * valid)));
  CHECK(inflated == static_cast<int>(std::floor(0.1 * valid)));
  CHECK(decreased == 0);
  CHECK(corrupt_depth(d, 0.3, 0.1, 5) == c);
  CHECK_FALSE(corrupt_depth(d, 0.3, 0.1, 6) == c);
  CHECK_THROWS_AS(corrupt_depth(d, 0.7, 0.4, 1), UserError);
  CHECK_THROWS_AS(corrupt_depth(d, -0.1, 0.0, 1), UserError);
}

TEST_CASE("raycast_visibility: visible, occluded, out of view") {
  SynthSceneSpec s;
  s.occluders.push_back(SynthBox{0, Vec3(2.0, 1.0, 1.0), Vec3(0.05, 1.0, 1.0)});
  const ScenePose pose = avsim::testing::level_pose("a", 1.0, 1.0, 1.0, 0.0);
  CHECK(raycast_visibility(Vec3(1.8, 1.0, 1.0), pose, s) == RayVisibility::kVisible);
  CHECK(raycast_visibility(Vec3(2.5, 1.0, 1.0), pose, s) == RayVisibility::kOccluded);
  CHECK(raycast_visibility(Vec3(0.5, 1.0, 1.0), pose, s) == RayVisibility::kOutOfView);
  CHECK(raycast_visibility(Vec3(1.1, 3.0, 1.0), pose, s) == RayVisibility::kOutOfView);
  // A point on the occluder's own front face is visible.
  CHECK(raycast_visibility(Vec3(1.975, 1.1, 1.05), pose, s) == RayVisibility::kVisible);
  // A point on its back face is not.
  CHECK(raycast_visibility(Vec3(2.025, 1.1, 1.05), pose, s) == RayVisibility::kOccluded);
}

TEST_CASE("spec and visibility JSON round trips") {
  SynthSceneSpec s = random_scene_spec(3);
  s.rgb_noise_sigma = 2.5;
  const std::string text = synth_spec_to_json(s);
  const SynthSceneSpec back = synth_spec_from_json(text);
  CHECK(synth_spec_to_json(back) == text);
  CHECK(back.objects.size() == s.objects.size());

  const auto scene = generate_scene(small_spec());
  const auto vis = visibility_from_json(visibility_to_json(scene.visibility));
  REQUIRE(vis.size() == scene.visibility.size());
  CHECK(visibility_to_json(vis) == visibility_to_json(scene.visibility));
  CHECK_THROWS_AS(synth_spec_from_json("{"), ParseError);
  CHECK_THROWS_AS(synth_spec_from_json(R"({"grid_spacing": -1})"), UserError);
}

TEST_CASE("random layouts respect the gap and are seeded") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SynthSceneSpec s = random_scene_spec(seed);
    CHECK_NOTHROW(s.validate());
    CHECK(s.instance_ids().size() == 10);
    CHECK(synth_spec_to_json(random_scene_spec(seed)) == synth_spec_to_json(s));
    std::vector<SynthBox> all = s.objects;
    all.insert(all.end(), s.occluders.begin(), s.occluders.end());
    for (size_t i = 0; i < all.size(); ++i) {
      for (size_t j = i + 1; j < all.size(); ++j) {
        const Vec3 gap = (all[i].min() - all[j].max()).cwiseMax(all[j].min() - all[i].max());
        CHECK(gap.maxCoeff() >= 0.1 - 1e-6);
      }
    }
    const auto n = camera_positions(s).size();
    CHECK(n >= 70);
    CHECK(n <= 100);
  }
}
