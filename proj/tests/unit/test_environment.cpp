#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include <fmt/format.h>

#include "avsim/environment.hpp"
#include "avsim/error.hpp"
#include "test_util.hpp"

using namespace avsim;
using avsim::testing::level_pose;

namespace {

// Row of positions x = 0, 0.3, ..., 0.3 (n-1) at y = 0, each with 12 headings.
// Instance 7 is annotated in every frame facing +x (yaw 0) except the last
// position; instance 8 is never annotated.
MemoryScene line_scene(int n) {
  SceneManifest m;
  m.scene_id = "line";
  m.scan_id = "line";
  std::vector<RGBDFrame> frames;
  for (int i = 0; i < n; ++i) {
    for (int yaw = 0; yaw < 360; yaw += 30) {
      const std::string id = fmt::format("x{}_y{:03d}", i, yaw);
      ScenePose p = level_pose(id, 0.3 * i, 0.0, 1.0, yaw);
      p.intrinsics.width = 8;
      p.intrinsics.height = 6;
      m.frames.push_back(p);
      RGBDFrame f{id, RgbImage(8, 6, 3, static_cast<std::uint8_t>(i * 12 + yaw / 30)),
                  DepthImage(8, 6, 1, 1000)};
      frames.push_back(std::move(f));
      if (yaw == 0 && i + 1 < n) {
        InstanceAnnotation a;
        a.frame_id = id;
        a.instance_id = 7;
        a.box = BoundingBox{1, 1, 4 + i % 3, 5, 7, 3};
        m.annotations.push_back(a);
      }
    }
  }
  m.instances = {{7, "object_7", false}, {8, "object_8", false}};
  m.move_graph = build_move_graph(m.frames);
  return MemoryScene(std::move(m), std::move(frames), {});
}

std::vector<double> one_hot_like(int n, int k, double p) {
  std::vector<double> v(n, (1.0 - p) / (n - 1));
  v[k] = p;
  return v;
}

}  // namespace

TEST_CASE("scene without move graph is rejected") {
  SceneManifest m;
  m.scene_id = "bare";
  MemoryScene s(m, {}, {});
  CHECK_THROWS_AS(EpisodeScene{s}, UserError);
}

TEST_CASE("reset from an explicit start") {
  const MemoryScene raw = line_scene(4);
  const EpisodeScene scene(raw);
  auto [s, o] = reset(scene, 7, std::string("x1_y000"));
  CHECK(s.frame_id == "x1_y000");
  CHECK(s.t == 0);
  CHECK_FALSE(s.terminated);
  CHECK(s.reason == TerminationReason::kNone);
  REQUIRE(s.box);
  CHECK(*s.box == BoundingBox{1, 1, 5, 5, 7, 3});
  CHECK(o.frame_id == "x1_y000");
  CHECK(o.box == s.box);
  CHECK(o.rgb == raw.rgb("x1_y000"));

  CHECK_THROWS_AS(reset_state(scene, 7, std::string("x1_y030")), UserError);
  CHECK_THROWS_AS(reset_state(scene, 7, std::string("x3_y000")), UserError);
}

TEST_CASE("instance never visible has no valid start") {
  const MemoryScene raw = line_scene(3);
  const EpisodeScene scene(raw);
  CHECK_THROWS_WITH_AS(reset_state(scene, 8, std::uint64_t{1}),
                       doctest::Contains("no valid start"), UserError);
  CHECK_THROWS_AS(reset_state(scene, 8, std::string("x0_y000")), UserError);
  CHECK(scene.annotated_instances() == std::vector<int>{7});
}

TEST_CASE("seeded sampling is deterministic and uniform over annotated frames") {
  const MemoryScene raw = line_scene(5);
  const EpisodeScene scene(raw);
  const auto& starts = scene.start_frames(7);
  REQUIRE(starts.size() == 4);
  std::map<std::string, int> counts;
  for (std::uint64_t seed = 0; seed < 4000; ++seed) {
    const EpisodeState a = reset_state(scene, 7, seed);
    CHECK(a == reset_state(scene, 7, seed));
    counts[a.frame_id]++;
  }
  CHECK(counts.size() == 4);
  for (const auto& [id, c] : counts) {
    CHECK(scene.box(id, 7).has_value());
    CHECK(c == doctest::Approx(1000).epsilon(0.1));
  }
}

TEST_CASE("step follows move graph pointers") {
  const MemoryScene raw = line_scene(4);
  const EpisodeScene scene(raw);
  EpisodeState s = reset_state(scene, 7, std::string("x0_y000"));
  s = step_state(s, Action::kForward, scene);
  CHECK(s.frame_id == "x1_y000");
  CHECK(s.t == 1);
  CHECK(s.box.has_value());
  s = step_state(s, Action::kRotateCcw, scene);
  CHECK(s.frame_id == "x1_y030");
  CHECK(s.t == 2);
  CHECK_FALSE(s.box.has_value());  // lost target: box absent, episode continues
  CHECK_FALSE(s.terminated);
  s = step_state(s, Action::kRotateCw, scene);
  CHECK(s.frame_id == "x1_y000");
  CHECK(s.box.has_value());
}

TEST_CASE("blocked action under stay keeps the frame and counts the step") {
  const MemoryScene raw = line_scene(3);
  const EpisodeScene scene(raw);
  EpisodeState s = reset_state(scene, 7, std::string("x0_y000"));
  REQUIRE_FALSE(scene.graph().next("x0_y000", Action::kBackward));
  REQUIRE_FALSE(scene.graph().next("x0_y000", Action::kLeft));
  const EpisodeState b = step_state(s, Action::kBackward, scene);
  CHECK(b.frame_id == "x0_y000");
  CHECK(b.t == 1);
  CHECK_FALSE(b.terminated);
  CHECK(b.box == s.box);

  EpisodeConfig term;
  term.blocked = BlockedPolicy::kTerminate;
  const EpisodeState c = step_state(s, Action::kLeft, scene, term);
  CHECK(c.frame_id == "x0_y000");
  CHECK(c.t == 1);
  CHECK(c.terminated);
  CHECK(c.reason == TerminationReason::kBlocked);
}

TEST_CASE("episode terminates at T with reason max-steps") {
  const MemoryScene raw = line_scene(3);
  const EpisodeScene scene(raw);
  EpisodeState s = reset_state(scene, 7, std::string("x0_y000"));
  for (int t = 1; t <= 5; ++t) {
    REQUIRE_FALSE(s.terminated);
    s = step_state(s, Action::kRotateCw, scene);
    CHECK(s.t == t);
  }
  CHECK(s.terminated);
  CHECK(s.reason == TerminationReason::kMaxSteps);
  CHECK(termination_name(s.reason) == "max-steps");
  CHECK_THROWS_AS(step_state(s, Action::kForward, scene), ContractError);
  CHECK_THROWS_AS(step(s, Action::kForward, scene), ContractError);
}

TEST_CASE("episode properties over random action sequences") {
  const MemoryScene raw = line_scene(5);
  const EpisodeScene scene(raw);
  std::set<std::string> frame_ids;
  for (const auto& p : raw.manifest().frames) frame_ids.insert(p.frame_id);

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    EpisodeConfig cfg;
    cfg.max_steps = 1 + static_cast<int>(rng() % 7);
    const std::uint64_t seed = rng();
    std::vector<Action> actions;
    for (int i = 0; i < cfg.max_steps; ++i) actions.push_back(action_from_index(rng() % 6));

    auto run = [&] {
      std::vector<std::string> visited;
      EpisodeState s = reset_state(scene, 7, seed, cfg);
      visited.push_back(s.frame_id);
      int steps = 0;
      while (!s.terminated) {
        s = step_state(s, actions[steps++], scene, cfg);
        visited.push_back(s.frame_id);
        CHECK(s.t <= cfg.max_steps);
        CHECK(s.box == scene.box(s.frame_id, 7));
      }
      CHECK(steps == cfg.max_steps);  // stay policy, no confidence stop
      CHECK(s.reason == TerminationReason::kMaxSteps);
      return visited;
    };
    const auto a = run();
    CHECK(a == run());
    for (const auto& id : a) CHECK(frame_ids.count(id) == 1);
  }
}

TEST_CASE("confidence stop is a strict inequality") {
  const MemoryScene raw = line_scene(3);
  const EpisodeScene scene(raw);
  const EpisodeState s = reset_state(scene, 7, std::string("x0_y000"));

  const EpisodeState hi = check_confidence_stop(s, one_hot_like(4, 2, 0.95));
  CHECK(hi.terminated);
  CHECK(hi.reason == TerminationReason::kConfidence);

  const std::vector<double> exact = {0.9, 0.1};
  CHECK_FALSE(check_confidence_stop(s, exact).terminated);

  const std::vector<double> uniform(33, 1.0 / 33.0);
  CHECK_FALSE(check_confidence_stop(s, uniform).terminated);

  EpisodeConfig low;
  low.confidence_threshold = 0.5;
  CHECK(check_confidence_stop(s, exact, low).terminated);

  const std::vector<double> unnormalized = {0.5, 0.5 + 2e-6};
  CHECK_THROWS_AS(check_confidence_stop(s, unnormalized), ContractError);
  const std::vector<double> within = {0.5, 0.5 + 5e-7};
  CHECK_NOTHROW(check_confidence_stop(s, within));
  const std::vector<double> negative = {1.5, -0.5};
  CHECK_THROWS_AS(check_confidence_stop(s, negative), ContractError);
  CHECK_THROWS_AS(check_confidence_stop(s, std::vector<double>{}), ContractError);
}

TEST_CASE("confidence stop ends the episode before T") {
  const MemoryScene raw = line_scene(3);
  const EpisodeScene scene(raw);
  EpisodeState s = reset_state(scene, 7, std::string("x0_y000"));
  s = step_state(s, Action::kForward, scene);
  s = check_confidence_stop(s, one_hot_like(3, 0, 0.91));
  CHECK(s.terminated);
  CHECK(s.t == 1);
  CHECK_THROWS_AS(step_state(s, Action::kForward, scene), ContractError);
}

TEST_CASE("config validation") {
  EpisodeConfig c;
  CHECK_NOTHROW(c.validate());
  c.max_steps = 0;
  CHECK_THROWS_AS(c.validate(), UserError);
  c.max_steps = 5;
  c.confidence_threshold = 0.0;
  CHECK_THROWS_AS(c.validate(), UserError);
  c.confidence_threshold = 1.0;
  CHECK_NOTHROW(c.validate());
  c.confidence_threshold = 1.01;
  CHECK_THROWS_AS(c.validate(), UserError);
}

TEST_CASE("trace records serialize as json lines") {
  TraceRecord a{0, "x0_y000", Action::kForward, BoundingBox{1, 2, 3, 4, 7, 3}, 7, 0.5};
  TraceRecord b{1, "x1_y000", std::nullopt, std::nullopt, 3, 0.25};
  CHECK(trace_to_jsonl({a, b}) ==
        "{\"t\":0,\"frame_id\":\"x0_y000\",\"action\":\"forward\",\"box\":[1,2,3,4],"
        "\"classifier_top1\":7,\"score\":0.5}\n"
        "{\"t\":1,\"frame_id\":\"x1_y000\",\"action\":null,\"box\":null,"
        "\"classifier_top1\":3,\"score\":0.25}\n");
}
