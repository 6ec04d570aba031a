#include <doctest.h>

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "avsim/analysis.hpp"
#include "avsim/dataset.hpp"
#include "avsim/error.hpp"
#include "avsim/plot.hpp"
#include "test_util.hpp"

using namespace avsim;
using avsim::testing::level_pose;

namespace {

InstanceAnnotation gt(const std::string& frame, int id, int x0, int y0, int x1, int y1) {
  InstanceAnnotation a;
  a.frame_id = frame;
  a.instance_id = id;
  a.box = BoundingBox{x0, y0, x1, y1, id, 0};
  return a;
}

Detection det(const std::string& frame, int id, int x0, int y0, int x1, int y1, double s) {
  return Detection{frame, id, BoundingBox{x0, y0, x1, y1, id, 0}, s};
}

// Independent AP: sentinel-padded recall/precision arrays, envelope, and a sum
// over the points where recall changes.
double oracle_ap(std::vector<Detection> dets, const std::vector<InstanceAnnotation>& gts,
                 double thr) {
  if (gts.empty()) return 0.0;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<bool> used(gts.size(), false);
  std::vector<double> tp, fp;
  for (const auto& d : dets) {
    int best = -1;
    double best_iou = thr;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].frame_id != d.frame_id) continue;
      const double o = iou(d.box, gts[g].box);
      if (o >= best_iou && (best < 0 || o > iou(d.box, gts[best].box))) {
        best = static_cast<int>(g);
        best_iou = o;
      }
    }
    if (best >= 0) used[best] = true;
    tp.push_back(best >= 0 ? 1.0 : 0.0);
    fp.push_back(best >= 0 ? 0.0 : 1.0);
  }
  std::vector<double> mrec = {0.0}, mpre = {0.0};
  double ctp = 0, cfp = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    ctp += tp[i];
    cfp += fp[i];
    mrec.push_back(ctp / gts.size());
    mpre.push_back(ctp / (ctp + cfp));
  }
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) {
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  }
  return ap;
}

struct RandomCase {
  std::vector<InstanceAnnotation> gts;
  std::vector<Detection> dets;
};

RandomCase random_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coord(0, 60), size(8, 30), frame(0, 4), inst(1, 3), n(0, 12);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  RandomCase c;
  const int ng = n(rng);
  for (int i = 0; i < ng; ++i) {
    const int x = coord(rng), y = coord(rng);
    c.gts.push_back(gt(fmt::format("f{}", frame(rng)), inst(rng), x, y, x + size(rng), y + size(rng)));
  }
  const int nd = n(rng) + 3;
  for (int i = 0; i < nd; ++i) {
    if (!c.gts.empty() && score(rng) < 0.6) {
      // Perturbed copy of a ground-truth box.
      const auto& g = c.gts[rng() % c.gts.size()];
      std::uniform_int_distribution<int> jit(-4, 4);
      c.dets.push_back(det(g.frame_id, g.instance_id, g.box.xmin + jit(rng), g.box.ymin + jit(rng),
                           g.box.xmax + jit(rng), g.box.ymax + jit(rng), score(rng)));
    } else {
      const int x = coord(rng), y = coord(rng);
      c.dets.push_back(det(fmt::format("f{}", frame(rng)), inst(rng), x, y, x + size(rng),
                           y + size(rng), score(rng)));
    }
  }
  return c;
}

SceneManifest plan_scene() {
  SceneManifest m;
  m.scene_id = "plan";
  for (int i = 0; i < 4; ++i) m.frames.push_back(level_pose(fmt::format("f{}", i), 0.3 * i, 0.0, 1.0, 90.0 * i));
  m.instances = {{1, "a", true}, {2, "b", true}, {3, "c", true}};
  m.annotations = {gt("f0", 1, 0, 0, 5, 5), gt("f2", 1, 0, 0, 5, 5), gt("f3", 1, 1, 1, 5, 5),
                   gt("f1", 2, 0, 0, 5, 5)};
  return m;
}

}  // namespace

TEST_CASE("AP hand cases") {
  const std::vector<InstanceAnnotation> one = {gt("a", 1, 0, 0, 10, 10)};

  SUBCASE("perfect detector") {
    std::vector<InstanceAnnotation> g = one;
    g.push_back(gt("b", 2, 5, 5, 20, 30));
    g.push_back(gt("b", 1, 30, 30, 40, 40));
    std::vector<Detection> d;
    for (const auto& a : g) d.push_back({a.frame_id, a.instance_id, a.box, 1.0});
    const ApResult r = average_precision(d, g);
    CHECK(r.mean_ap == 1.0);
    CHECK(r.per_instance.size() == 2);
  }
  SUBCASE("true positive then false positive") {
    // IoU 0.6: 10x10 against 10x6 inside it. IoU 0.2: against 4x5 inside it.
    const Detection tp = det("a", 1, 0, 0, 10, 6, 0.9);
    const Detection fp = det("a", 1, 0, 0, 4, 5, 0.8);
    CHECK(iou(tp.box, one[0].box) == doctest::Approx(0.6));
    CHECK(iou(fp.box, one[0].box) == doctest::Approx(0.2));
    CHECK(average_precision({tp, fp}, one).mean_ap == 1.0);
    CHECK(average_precision({tp, fp}, one, 0.5, ApInterpolation::kElevenPoint).mean_ap == 1.0);
  }
  SUBCASE("no detections") {
    const ApResult r = average_precision({}, one);
    CHECK(r.mean_ap == 0.0);
    CHECK(r.per_instance.at(1) == 0.0);
  }
  SUBCASE("false positive first") {
    const std::vector<Detection> d = {det("a", 1, 50, 50, 60, 60, 0.9), det("a", 1, 0, 0, 10, 10, 0.5)};
    CHECK(average_precision(d, one).mean_ap == doctest::Approx(0.5));
    CHECK(average_precision(d, one, 0.5, ApInterpolation::kElevenPoint).mean_ap ==
          doctest::Approx(0.5));
  }
  SUBCASE("duplicates count once") {
    const std::vector<InstanceAnnotation> g = {gt("a", 1, 0, 0, 10, 10), gt("b", 1, 0, 0, 10, 10)};
    const std::vector<Detection> d = {det("a", 1, 0, 0, 10, 10, 0.9), det("a", 1, 0, 0, 10, 10, 0.8),
                                      det("b", 1, 0, 0, 10, 10, 0.7)};
    // Precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1.
    CHECK(average_precision(d, g).mean_ap == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0));
    CHECK(average_precision(d, g, 0.5, ApInterpolation::kElevenPoint).mean_ap ==
          doctest::Approx((6.0 + 5.0 * 2.0 / 3.0) / 11.0));
  }
  SUBCASE("wrong frame or instance never matches") {
    CHECK(average_precision({det("b", 1, 0, 0, 10, 10, 1.0)}, one).mean_ap == 0.0);
    const ApResult r = average_precision({det("a", 9, 0, 0, 10, 10, 1.0)}, one);
    CHECK(r.mean_ap == 0.0);
    CHECK(r.per_instance.count(9) == 0);
  }
  SUBCASE("threshold and score errors") {
    CHECK_THROWS_AS(average_precision({}, one, 0.0), UserError);
    CHECK_THROWS_AS(average_precision({det("a", 1, 0, 0, 1, 1, std::nan(""))}, one), UserError);
    CHECK(average_precision({}, {}).mean_ap == 0.0);
  }
}

TEST_CASE("AP agrees with the independent oracle on random cases") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const RandomCase c = random_case(rng);
    const ApResult r = average_precision(c.dets, c.gts);
    double mean = 0.0;
    for (const auto& [id, ap] : r.per_instance) {
      std::vector<InstanceAnnotation> g;
      std::vector<Detection> d;
      for (const auto& a : c.gts) if (a.instance_id == id) g.push_back(a);
      for (const auto& x : c.dets) if (x.instance_id == id) d.push_back(x);
      CHECK(ap == doctest::Approx(oracle_ap(d, g, 0.5)).epsilon(1e-12));
      CHECK(ap >= 0.0);
      CHECK(ap <= 1.0);
      mean += ap / r.per_instance.size();
    }
    CHECK(r.mean_ap == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("AP is invariant under strictly monotone score transforms") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const RandomCase c = random_case(rng);
    std::vector<Detection> t = c.dets;
    const int kind = trial % 3;
    for (auto& d : t) {
      d.score = kind == 0 ? std::exp(4.0 * d.score) - 3.0
                          : kind == 1 ? std::pow(d.score, 3) * 100.0 : std::atan(d.score - 0.5);
    }
    for (auto mode : {ApInterpolation::kAllPoints, ApInterpolation::kElevenPoint}) {
      const ApResult a = average_precision(c.dets, c.gts, 0.5, mode);
      const ApResult b = average_precision(t, c.gts, 0.5, mode);
      CHECK(a.per_instance == b.per_instance);
      CHECK(a.mean_ap == b.mean_ap);
    }
  }
}

TEST_CASE("size filter") {
  const std::vector<InstanceAnnotation> g = {gt("a", 1, 0, 0, 100, 75), gt("a", 1, 0, 0, 99, 75)};
  CHECK(filter_min_size(g, 100, 75).size() == 1);
  const std::vector<Detection> d = {det("a", 1, 0, 0, 50, 30, 1.0), det("a", 1, 0, 0, 50, 29, 1.0)};
  CHECK(filter_min_size(d, 50, 30).size() == 1);
}

TEST_CASE("score position map") {
  const SceneManifest m = plan_scene();
  const std::vector<FrameScore> s = {{"f0", 1, 0.5}, {"f2", 1, 0.5}, {"f3", 1, 0.5}, {"f1", 1, 0.9}};
  const auto recs = score_position_map(m, 1, s);
  REQUIRE(recs.size() == 3);
  for (const auto& r : recs) CHECK(r.score == 0.5);
  CHECK(recs[1].frame_id == "f2");
  CHECK(recs[1].x == doctest::Approx(0.6));
  CHECK(recs[1].yaw_deg == doctest::Approx(180.0));
  CHECK(score_position_map(m, 3, s).empty());
  const auto missing = score_position_map(m, 2, s);
  REQUIRE(missing.size() == 1);
  CHECK(missing[0].score == 0.0);
  CHECK_THROWS_AS(score_position_map(m, 42, s), UserError);
}

TEST_CASE("score distance sensitivity") {
  const SceneManifest m = plan_scene();
  CHECK(score_distance_sensitivity(m, {{"f0", 1, 0.8}}).empty());
  const auto two = score_distance_sensitivity(m, {{"f0", 1, 0.8}, {"f1", 1, 0.6}});
  REQUIRE(two.size() == 1);
  CHECK(two[0].distance_m == doctest::Approx(0.30));
  CHECK(two[0].abs_score_diff == doctest::Approx(0.2));
  const std::vector<FrameScore> all = {{"f0", 1, 0.1}, {"f1", 1, 0.0}, {"f2", 1, 0.7},
                                       {"f3", 1, 0.2}, {"f0", 2, 0.0}, {"f1", 2, 0.0}};
  CHECK(score_distance_sensitivity(m, all).size() == 6);  // instance 2 never detected
  CHECK_THROWS_AS(score_distance_sensitivity(m, {{"zz", 1, 0.5}}), UserError);
  CHECK_THROWS_AS(score_distance_sensitivity(m, {{"f0", 1, 0.5}, {"f0", 1, 0.4}}), UserError);
}

TEST_CASE("csv round trip and schemas") {
  const std::vector<Detection> d = {det("a", 1, 0, 2, 10, 12, 0.25), det("b_1", 7, 3, 4, 5, 6, 1e-7)};
  const CsvTable t = detections_to_csv(d);
  CHECK(csv_to_text(t).rfind("frame_id,instance_id,xmin,ymin,xmax,ymax,score\n", 0) == 0);
  const auto back = detections_from_csv(csv_from_text(csv_to_text(t)));
  REQUIRE(back.size() == 2);
  CHECK(back[1].box == d[1].box);
  CHECK(back[1].score == 1e-7);
  CHECK_THROWS_AS(csv_from_text("a,b\n1\n"), ParseError);
  CHECK_THROWS_AS(csv_from_text(""), ParseError);
  CHECK_THROWS_AS(detections_from_csv(csv_from_text("frame_id,score\na,1\n")), ParseError);
  CHECK_THROWS_AS(scores_from_csv(csv_from_text("frame_id,instance_id,score\na,1,x\n")), ParseError);
  CHECK_THROWS_AS(csv_to_text(CsvTable{"t", {"a"}, {{"x,y"}}}), UserError);
  const auto sc = scores_from_csv(csv_from_text("frame_id,instance_id,score\r\nf0,2,0.5\r\n"));
  REQUIRE(sc.size() == 1);
  CHECK(sc[0].instance_id == 2);
}

TEST_CASE("report emission") {
  avsim::testing::TempDir dir("report");
  SUBCASE("empty") {
    const auto files = emit_report({}, dir.path() / "empty");
    REQUIRE(files.size() == 1);
    CHECK(read_text(files[0]) == "{\n  \"artifacts\": []\n}\n");
  }
  SUBCASE("accuracy table layout and determinism") {
    AccuracyRow ours{"ours", {0, 3, 5}, {0.25, 0.5, 0.625}, {}, 8};
    AccuracyRow rnd{"random", {0, 3, 5}, {0.25, 0.3, 0.375}, {}, 8};
    const CsvTable acc = accuracy_table({ours, rnd});
    CHECK(csv_to_text(acc) == "method,0,3,5\nours,0.25,0.5,0.625\nrandom,0.25,0.3,0.375\n");
    const std::vector<CsvTable> tables = {acc, sensitivity_table({{1, "f0", "f1", 0.3, 0.2}})};
    emit_report(tables, dir.path() / "a");
    emit_report({tables[1], tables[0]}, dir.path() / "b");
    for (const char* f : {"accuracy.csv", "score_sensitivity.csv", "index.json"}) {
      CHECK(read_text(dir.path() / "a" / f) == read_text(dir.path() / "b" / f));
    }
    CHECK(read_text(dir.path() / "a" / "index.json").find("\"accuracy.csv\"") <
          read_text(dir.path() / "a" / "index.json").find("\"score_sensitivity.csv\""));
    AccuracyRow odd{"forward", {0, 3}, {0.25, 0.5}, {}, 8};
    CHECK_THROWS_AS(accuracy_table({ours, odd}), UserError);
    CHECK_THROWS_AS(emit_report({acc, acc}, dir.path() / "c"), UserError);
  }
  SUBCASE("unwritable directory") {
    write_text(dir.path() / "file", "x");
    CHECK_THROWS_AS(emit_report({}, dir.path() / "file" / "sub"), IoError);
  }
}

TEST_CASE("raster plots") {
  const SceneManifest m = plan_scene();
  const CsvTable pos = position_table(1, score_position_map(m, 1, {{"f0", 1, 1.0}, {"f2", 1, 0.0}}));
  const RgbImage h = plot_heatmap(pos, 200, 160);
  CHECK(h.width() == 200);
  CHECK(h.height() == 160);
  auto count = [](const RgbImage& img, std::array<std::uint8_t, 3> c) {
    int n = 0;
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        n += img.at(x, y, 0) == c[0] && img.at(x, y, 1) == c[1] && img.at(x, y, 2) == c[2];
      }
    }
    return n;
  };
  CHECK(count(h, score_color(1.0)) > 20);  // dot plus color bar
  CHECK(score_color(0.0) == std::array<std::uint8_t, 3>{49, 54, 149});
  CHECK(score_color(7.0) == score_color(1.0));
  CHECK(plot_heatmap(pos, 200, 160) == h);

  const CsvTable acc = accuracy_table({AccuracyRow{"ours", {0, 5}, {0.2, 0.8}, {}, 1}});
  const RgbImage c = plot_curve(acc);
  CHECK(c.width() == 640);
  CHECK(count(c, {31, 119, 180}) > 50);
  const RgbImage s = plot_curve(sensitivity_table({{1, "f0", "f1", 0.3, 0.2}, {1, "f0", "f2", 0.6, 0.4}}));
  CHECK(count(s, {214, 39, 40}) > 10);
  CHECK_THROWS_AS(plot_curve(CsvTable{"x", {"a", "b"}, {}}), UserError);
  CHECK_THROWS_AS(plot_heatmap(CsvTable{"x", {"a"}, {}}), ParseError);
  CHECK_THROWS_AS(plot_curve(acc, 20, 20), UserError);
}
