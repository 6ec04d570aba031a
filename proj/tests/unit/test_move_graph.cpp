#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "avsim/error.hpp"
#include "avsim/move_graph.hpp"
#include "avsim/synth.hpp"
#include "move_graph_oracle.hpp"
#include "test_util.hpp"

using namespace avsim;
using avsim::testing::level_pose;
using avsim::testing::oracle_mismatches;
using avsim::testing::oracle_pointer;

namespace {

std::vector<ScenePose> grid_poses(int nx, int ny, double spacing = 0.30, int yaws = 12) {
  SynthSceneSpec spec;
  spec.grid = GridSpec{1.0, 1.0, nx, ny};
  spec.grid_spacing = spacing;
  spec.rotation_step = 360.0 / yaws;
  return synth_poses(spec);
}

}  // namespace

TEST_CASE("single pose has no pointers") {
  const auto g = build_move_graph({level_pose("a", 0, 0, 1, 0)});
  CHECK(g.edge_count() == 0);
}

TEST_CASE("two poses along the view axis") {
  const std::vector<ScenePose> poses = {level_pose("rear", 0, 0, 1, 0), level_pose("front", 0.30, 0, 1, 0)};
  const auto g = build_move_graph(poses);
  CHECK(g.next("rear", Action::kForward) == std::optional<std::string>("front"));
  CHECK(g.next("front", Action::kBackward) == std::optional<std::string>("rear"));
  CHECK_FALSE(g.next("rear", Action::kBackward));
  CHECK_FALSE(g.next("rear", Action::kLeft));
  CHECK(g.edge_count() == 2);
  CHECK(oracle_mismatches(g, poses) == 0);
}

TEST_CASE("co-located rotations connect in opposite senses") {
  const std::vector<ScenePose> poses = {level_pose("y0", 0, 0, 1, 0), level_pose("y30", 0, 0, 1, 30)};
  const auto g = build_move_graph(poses);
  CHECK(g.next("y0", Action::kRotateCcw) == std::optional<std::string>("y30"));
  CHECK(g.next("y30", Action::kRotateCw) == std::optional<std::string>("y0"));
  CHECK_FALSE(g.next("y0", Action::kRotateCw));
  CHECK(g.edge_count() == 2);
}

TEST_CASE("strafing: left is +90 degrees from the heading") {
  // Heading +x; left of the camera is +y.
  const std::vector<ScenePose> poses = {level_pose("c", 0, 0, 1, 0), level_pose("l", 0, 0.3, 1, 0),
                                        level_pose("r", 0, -0.3, 1, 0)};
  const auto g = build_move_graph(poses);
  CHECK(g.next("c", Action::kLeft) == std::optional<std::string>("l"));
  CHECK(g.next("c", Action::kRight) == std::optional<std::string>("r"));
}

TEST_CASE("2x2x12 grid matches the oracle and verifies clean") {
  const auto poses = grid_poses(2, 2);
  REQUIRE(poses.size() == 48);
  const auto g = build_move_graph(poses);
  CHECK(oracle_mismatches(g, poses) == 0);
  CHECK(verify_move_graph(g, poses).empty());
  // Yaw 0 looks along +x: the x = 1.0 column moves forward to x = 1.3.
  CHECK(g.next("p0000_y000", Action::kForward) == std::optional<std::string>("p0001_y000"));
  CHECK(g.next("p0002_y000", Action::kForward) == std::optional<std::string>("p0003_y000"));
}

TEST_CASE("perfect grid: forward then backward returns, rotate_ccw cycles") {
  const auto poses = grid_poses(5, 4);
  const auto g = build_move_graph(poses);
  CHECK(oracle_mismatches(g, poses) == 0);
  for (const auto& p : poses) {
    auto f = g.next(p.frame_id, Action::kForward);
    if (f) CHECK(g.next(*f, Action::kBackward) == std::optional<std::string>(p.frame_id));
    std::string cur = p.frame_id;
    for (int k = 0; k < 12; ++k) {
      auto n = g.next(cur, Action::kRotateCcw);
      REQUIRE(n);
      cur = *n;
    }
    CHECK(cur == p.frame_id);
  }
}

TEST_CASE("pose ordering does not change the graph") {
  auto poses = grid_poses(4, 3);
  const auto g = build_move_graph(poses);
  std::mt19937_64 rng(5);
  for (int t = 0; t < 5; ++t) {
    std::shuffle(poses.begin(), poses.end(), rng);
    CHECK(build_move_graph(poses) == g);
  }
}

TEST_CASE("jittered poses match the oracle") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> pos(0.0, 0.03);
  std::normal_distribution<double> yaw(0.0, 2.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<ScenePose> poses;
    for (int ix = 0; ix < 5; ++ix) {
      for (int iy = 0; iy < 5; ++iy) {
        // Shared per-point position jitter keeps rotation clusters intact.
        const double x = ix * 0.3 + pos(rng), y = iy * 0.3 + pos(rng);
        for (int k = 0; k < 12; ++k) {
          poses.push_back(level_pose(fmt::format("f{}_{}_{}", ix, iy, k), x + pos(rng) * 0.2,
                                     y + pos(rng) * 0.2, 1.0, k * 30.0 + yaw(rng)));
        }
      }
    }
    const auto g = build_move_graph(poses);
    CHECK(oracle_mismatches(g, poses) == 0);
    for (const auto& v : verify_move_graph(g, poses)) {
      // Noise may legitimately break rotation inverses; reconstruction must agree.
      CHECK(v.find("expected") == std::string::npos);
    }
  }
}

TEST_CASE("duplicate poses are rejected naming the pair") {
  const std::vector<ScenePose> poses = {level_pose("b", 0, 0, 1, 0), level_pose("a", 0.01, 0, 1, 2),
                                        level_pose("c", 1, 0, 1, 0)};
  try {
    build_move_graph(poses);
    FAIL("expected UserError");
  } catch (const UserError& e) {
    CHECK(std::string(e.what()).find("a and b") != std::string::npos);
  }
  const std::vector<ScenePose> same_id = {level_pose("a", 0, 0, 1, 0), level_pose("a", 1, 0, 1, 0)};
  CHECK_THROWS_AS(build_move_graph(same_id), IntegrityError);
}

TEST_CASE("verify_move_graph reports injected defects") {
  const auto poses = grid_poses(2, 2);
  auto g = build_move_graph(poses);

  auto self = g;
  self.set("p0000_y000", Action::kForward, "p0000_y000");
  const auto v1 = check_move_graph_structure(self, [&] {
    std::vector<std::string> ids;
    for (const auto& p : poses) ids.push_back(p.frame_id);
    return ids;
  }());
  REQUIRE(v1.size() == 1);
  CHECK(v1[0].find("p0000_y000") != std::string::npos);

  auto rot = g;
  rot.set("p0000_y000", Action::kRotateCw, "p0000_y060");
  std::vector<std::string> ids;
  for (const auto& p : poses) ids.push_back(p.frame_id);
  const auto v2 = check_move_graph_structure(rot, ids);
  CHECK(v2.size() == 1);

  auto dangling = g;
  dangling.set("p0000_y000", Action::kLeft, "nowhere");
  CHECK(check_move_graph_structure(dangling, ids).size() == 1);
  CHECK_FALSE(verify_move_graph(dangling, poses).empty());
}

TEST_CASE("action names and indices") {
  for (int i = 0; i < kActionCount; ++i) {
    const Action a = action_from_index(i);
    CHECK(parse_action(action_name(a)) == a);
  }
  CHECK(action_name(Action::kRotateCcw) == "rotate_ccw");
  CHECK_THROWS_AS(action_from_index(6), UserError);
  CHECK_THROWS_AS(parse_action("jump"), UserError);
}
