#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "avsim/depth_fusion.hpp"
#include "avsim/error.hpp"
#include "avsim/synth.hpp"
#include "test_util.hpp"

using namespace avsim;
using avsim::testing::level_pose;

namespace {

MemoryScene two_view_scene(const DepthImage& target, const DepthImage& neighbor, double neighbor_yaw = 0.0) {
  SceneManifest m;
  m.scene_id = "two";
  m.frames = {level_pose("t", 1, 1, 1, 0), level_pose("n", 1, 1, 1, neighbor_yaw)};
  return MemoryScene(m, {RGBDFrame{"t", make_rgb(320, 240), target}, RGBDFrame{"n", make_rgb(320, 240), neighbor}},
                     {});
}

// Straight-line walk in each compass direction, the definition of the fill rule.
DepthImage brute_force_fill(const DepthImage& in) {
  DepthImage out = in;
  const int dirs[8][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
  for (int y = 0; y < in.height(); ++y) {
    for (int x = 0; x < in.width(); ++x) {
      if (in.at(x, y) != 0) continue;
      double num = 0, den = 0;
      for (const auto& d : dirs) {
        for (int s = 1;; ++s) {
          const int xx = x + s * d[0], yy = y + s * d[1];
          if (xx < 0 || yy < 0 || xx >= in.width() || yy >= in.height()) break;
          if (in.at(xx, yy) == 0) continue;
          const double w = 1.0 / (s * std::hypot(d[0], d[1]));
          num += w * in.at(xx, yy);
          den += w;
          break;
        }
      }
      if (den > 0) out.at(x, y) = static_cast<std::uint16_t>(std::lround(num / den));
    }
  }
  return out;
}

double mae(const DepthImage& a, const DepthImage& truth) {
  double s = 0;
  for (size_t i = 0; i < a.data().size(); ++i) s += std::abs(double(a.data()[i]) - truth.data()[i]);
  return s / a.data().size() / 1000.0;
}

SynthSceneSpec fusion_spec() {
  SynthSceneSpec s;
  s.room_max = Vec3(3.0, 3.0, 2.5);
  s.grid = GridSpec{1.05, 1.05, 3, 3};
  s.objects.push_back(SynthBox{1, Vec3(2.4, 1.6, 1.0), Vec3(0.25, 0.2, 0.3), Color{200, 30, 30}});
  s.objects.push_back(SynthBox{2, Vec3(1.5, 2.5, 0.8), Vec3(0.2, 0.2, 0.2), Color{30, 200, 30}});
  s.occluders.push_back(SynthBox{0, Vec3(0.5, 1.5, 0.9), Vec3(0.05, 1.0, 1.8), Color{90, 90, 90}});
  return s;
}

}  // namespace

TEST_CASE("interpolate_holes: identities and constant field") {
  DepthImage d = make_depth(20, 10);
  std::fill(d.data().begin(), d.data().end(), std::uint16_t{2000});
  CHECK(interpolate_holes(d) == d);
  d.at(7, 4) = 0;
  CHECK(interpolate_holes(d).at(7, 4) == 2000);
  const DepthImage zero = make_depth(20, 10);
  CHECK(interpolate_holes(zero) == zero);
}

TEST_CASE("interpolate_holes matches the straight-walk definition") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> val(500, 4000);
  std::bernoulli_distribution hole(0.3);
  for (int t = 0; t < 20; ++t) {
    DepthImage d = make_depth(37, 23);
    for (auto& v : d.data()) v = hole(rng) ? 0 : static_cast<std::uint16_t>(val(rng));
    const DepthImage expected = brute_force_fill(d);
    REQUIRE(std::none_of(expected.data().begin(), expected.data().end(), [](auto v) { return v == 0; }));
    CHECK(interpolate_holes(d) == expected);
  }
}

TEST_CASE("interpolate_holes fills regions no compass ray reaches") {
  DepthImage d = make_depth(30, 30);
  d.at(0, 1) = 1500;  // (29, 29) is not on any compass ray from here
  const DepthImage out = interpolate_holes(d);
  CHECK(std::none_of(out.data().begin(), out.data().end(), [](auto v) { return v == 0; }));
}

TEST_CASE("fuse_depth: identity with k = 0") {
  DepthImage t = make_depth(320, 240);
  for (int y = 0; y < 240; ++y)
    for (int x = 0; x < 320; ++x) t.at(x, y) = static_cast<std::uint16_t>(1000 + x + y);
  const MemoryScene s = two_view_scene(t, t);
  CHECK(fuse_depth(s, "t", FusionParams{0, 0, true}) == t);
}

TEST_CASE("fuse_depth: missing pixel filled from a neighbor") {
  DepthImage t = make_depth(320, 240);
  DepthImage n = make_depth(320, 240);
  n.at(100, 50) = 1200;
  const MemoryScene s = two_view_scene(t, n);
  const DepthImage out = fuse_depth(s, "t", FusionParams{1, 0, false});
  CHECK(out.at(100, 50) == 1200);
  size_t nonzero = 0;
  for (auto v : out.data()) nonzero += v != 0;
  CHECK(nonzero == 1);
}

TEST_CASE("fuse_depth: minimum keeps the neighbor's smaller value, zero never wins") {
  DepthImage t = make_depth(320, 240);
  DepthImage n = make_depth(320, 240);
  std::fill(t.data().begin(), t.data().end(), std::uint16_t{3000});
  std::fill(n.data().begin(), n.data().end(), std::uint16_t{1500});
  n.at(10, 10) = 0;
  const MemoryScene s = two_view_scene(t, n);
  const DepthImage out = fuse_depth(s, "t", FusionParams{1, 0, false});
  CHECK(out.at(160, 120) == 1500);
  CHECK(out.at(10, 10) == 3000);
}

TEST_CASE("fuse_depth: inflated pixel restored on a synthetic scene") {
  auto synth = generate_scene(fusion_spec());
  MemoryScene& scene = synth.scene;
  const std::string target = "p0004_y000";
  const DepthImage truth = scene.depth(target);
  DepthImage bad = truth;
  bad.at(200, 100) = static_cast<std::uint16_t>(bad.at(200, 100) * 2);
  scene.set_depth(target, bad);
  const DepthImage out = fuse_depth(scene, target, FusionParams{6, 0, false});
  CHECK(std::abs(int(out.at(200, 100)) - int(truth.at(200, 100))) <= 5);
}

TEST_CASE("select_fusion_neighbors") {
  auto synth = generate_scene(fusion_spec(), GenerateOptions{false, 1});
  const MemoryScene& scene = synth.scene;
  CHECK(select_fusion_neighbors(scene, "p0004_y000", 0).empty());
  CHECK_THROWS_AS(select_fusion_neighbors(scene, "nope", 3), UserError);

  // Co-located 180 degrees scores 0, below any same-facing frame.
  const ScenePose& t = scene.pose("p0004_y000");
  CHECK(view_overlap_score(t, scene.pose("p0004_y180")) == 0.0);
  CHECK(view_overlap_score(t, scene.pose("p0000_y000")) > 0.0);

  // Exhaustive oracle over every frame.
  for (const auto& target : scene.manifest().frames) {
    std::vector<std::pair<double, std::string>> all;
    for (const auto& p : scene.manifest().frames) {
      if (p.frame_id == target.frame_id) continue;
      const double cosang = std::max(0.0, target.rotation().col(2).dot(p.rotation().col(2)));
      all.emplace_back(-cosang / (1.0 + (target.position - p.position).norm()), p.frame_id);
    }
    std::sort(all.begin(), all.end());
    const auto got = select_fusion_neighbors(scene, target.frame_id, 3);
    REQUIRE(got.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(got[i] == all[i].second);
  }
}

TEST_CASE("fusion properties on a corrupted synthetic scene") {
  auto synth = generate_scene(fusion_spec());
  MemoryScene& scene = synth.scene;
  std::vector<DepthImage> truth, corrupted;
  for (size_t i = 0; i < scene.frames().size(); ++i) {
    const auto& id = scene.frames()[i].frame_id;
    truth.push_back(scene.depth(id));
    corrupted.push_back(corrupt_depth(truth.back(), 0.3, 0.1, 1000 + i));
    scene.set_depth(id, corrupted.back());
  }
  const auto fused = fuse_scene(scene, FusionParams{6, 0, true}, 2);
  double mae_bad = 0, mae_fused = 0;
  size_t zeroed_valid = 0, increased = 0;
  for (size_t i = 0; i < fused.size(); ++i) {
    mae_bad += mae(corrupted[i], truth[i]);
    mae_fused += mae(fused[i], truth[i]);
    for (size_t p = 0; p < fused[i].data().size(); ++p) {
      const auto in = corrupted[i].data()[p];
      if (in == 0) continue;
      zeroed_valid += fused[i].data()[p] == 0;
      increased += fused[i].data()[p] > in;
    }
  }
  CHECK(zeroed_valid == 0);
  CHECK(increased == 0);
  MESSAGE("corrupted MAE ", mae_bad / fused.size(), " fused MAE ", mae_fused / fused.size());
  CHECK(mae_bad >= 5.0 * mae_fused);

  // Neighbor order does not matter: reversing the manifest gives the same maps.
  SceneManifest m = scene.manifest();
  std::reverse(m.frames.begin(), m.frames.end());
  std::vector<RGBDFrame> frames = scene.frames();
  const MemoryScene reversed(m, frames, {});
  for (size_t i = 0; i < fused.size(); i += 17) {
    CHECK(fuse_depth(reversed, scene.frames()[i].frame_id) == fused[i]);
  }
}
