// avsim: command-line entry point for every pipeline stage.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "avsim/analysis.hpp"
#include "avsim/benchmark.hpp"
#include "avsim/dataset.hpp"
#include "avsim/depth_fusion.hpp"
#include "avsim/environment.hpp"
#include "avsim/error.hpp"
#include "avsim/image_io.hpp"
#include "avsim/labels.hpp"
#include "avsim/move_graph.hpp"
#include "avsim/parallel.hpp"
#include "avsim/plot.hpp"
#include "avsim/policy.hpp"
#include "avsim/recognition.hpp"
#include "avsim/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace avsim {
namespace {

// Shared across subcommands; set from --threads (or AVSIM_THREADS).
struct Globals {
  int threads = 0;
};

int thread_count(const Globals& g) { return g.threads > 0 ? g.threads : default_thread_count(); }

// Success summaries are one JSON object per line on stdout.
void report(const json& j) { std::cout << j.dump() << std::endl; }

std::unique_ptr<DiskScene> open_scene(const fs::path& dir) { return load_scene(dir); }

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UserError(fmt::format("{}: '{}' is not an integer", what, item));
    }
    pos = comma + 1;
  }
  return out;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::size_t pos = 0;
    while (pos <= item.size()) {
      const std::size_t comma = std::min(item.find(',', pos), item.size());
      if (comma > pos) out.push_back(item.substr(pos, comma - pos));
      pos = comma + 1;
    }
  }
  return out;
}

// ---------------------------------------------------------------- gen-synth

struct GenSynthOpts {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string objects;
  std::string backgrounds;
  int views = 12;
  int background_count = 10;
};

void run_gen_synth(const GenSynthOpts& o, const Globals& g) {
  const std::string text = read_text(o.spec);
  const SynthSceneSpec spec = load_scene_spec(text, o.seed);
  GenerateOptions gen;
  gen.threads = thread_count(g);
  const SynthScene s = generate_scene(spec, gen);
  save_scene(s.scene.manifest(), s.scene, o.out);
  write_text(fs::path(o.out) / "visibility.json", visibility_to_json(s.visibility));
  write_text(fs::path(o.out) / "synth_spec.json", synth_spec_to_json(spec));
  json r = {{"command", "gen-synth"},
            {"scene_id", spec.scene_id},
            {"frames", s.scene.manifest().frames.size()},
            {"instances", s.scene.manifest().instances.size()}};
  if (!o.objects.empty()) {
    const Intrinsics k = spec.intrinsics;
    const auto views = render_catalog_views(catalog_from_spec(spec), k, o.views);
    write_object_views(o.objects, views);
    r["object_views"] = views.size();
  }
  if (!o.backgrounds.empty()) {
    const auto bgs = render_backgrounds(spec, o.background_count, spec.seed);
    write_backgrounds(o.backgrounds, bgs);
    r["backgrounds"] = bgs.size();
  }
  report(r);
}

// ---------------------------------------------------------------- ingest / validate

struct IngestOpts {
  std::string format;
  std::string in;
  std::string out;
};

void run_ingest(const IngestOpts& o) {
  const SceneManifest m = ingest_external(o.in, o.format, o.out);
  report({{"command", "ingest"},
          {"scene_id", m.scene_id},
          {"frames", m.frames.size()},
          {"annotations", m.annotations.size()},
          {"move_graph", m.move_graph.has_value()}});
}

struct SceneOpts {
  std::string scene;
};

void run_validate(const SceneOpts& o) {
  const auto scene = open_scene(o.scene);
  const SceneManifest& m = scene->manifest();
  std::vector<std::string> issues;
  std::size_t edges = 0;
  if (m.move_graph) {
    issues = check_move_graph_structure(*m.move_graph, m.frame_ids());
    edges = m.move_graph->edge_count();
  }
  for (const auto& f : m.frames) {
    for (const fs::path rel : {rgb_path(f.frame_id), depth_path(f.frame_id)}) {
      if (!fs::exists(fs::path(o.scene) / rel)) issues.push_back("missing " + rel.string());
    }
  }
  if (!issues.empty()) {
    throw IntegrityError(fmt::format("{} violation(s); first: {}", issues.size(), issues.front()));
  }
  report({{"command", "validate"},
          {"status", "ok"},
          {"frames", m.frames.size()},
          {"instances", m.instances.size()},
          {"annotations", m.annotations.size()},
          {"move_edges", edges}});
}

// ---------------------------------------------------------------- build-graph

struct GraphOpts {
  std::string scene;
  MoveGraphParams params;
};

void run_build_graph(const GraphOpts& o) {
  auto scene = open_scene(o.scene);
  SceneManifest& m = scene->mutable_manifest();
  m.move_graph = build_move_graph(m.frames, o.params);
  save_metadata(m, o.scene);
  report({{"command", "build-graph"},
          {"frames", m.frames.size()},
          {"move_edges", m.move_graph->edge_count()}});
}

// ---------------------------------------------------------------- fuse-depth

struct FuseOpts {
  std::string scene;
  FusionParams params;
  bool no_interpolate = false;
};

void run_fuse_depth(FuseOpts o, const Globals& g) {
  o.params.interpolate = !o.no_interpolate;
  const auto scene = open_scene(o.scene);
  const auto fused = fuse_scene(*scene, o.params, thread_count(g));
  const auto& frames = scene->manifest().frames;
  parallel_for(
      frames.size(),
      [&](std::size_t i) { write_png(fs::path(o.scene) / fused_depth_path(frames[i].frame_id), fused[i]); },
      thread_count(g));
  report({{"command", "fuse-depth"}, {"frames", frames.size()}, {"k", o.params.k_neighbors}});
}

// ---------------------------------------------------------------- label

struct LabelOpts {
  std::string scene;
  LabelParams params;
  std::string depth = "auto";
};

void run_label(const LabelOpts& o, const Globals& g) {
  auto scene = open_scene(o.scene);
  SceneManifest& m = scene->mutable_manifest();
  bool use_fused = o.depth == "fused";
  if (o.depth == "auto") {
    use_fused = std::all_of(m.frames.begin(), m.frames.end(), [&](const ScenePose& f) {
      return fs::exists(fs::path(o.scene) / fused_depth_path(f.frame_id));
    });
  }
  const DiskScene& s = *scene;
  const LabelResult r = label_scene(
      s,
      [&](std::size_t i) {
        const std::string& id = s.manifest().frames[i].frame_id;
        if (!use_fused) return s.depth(id);
        auto d = s.fused_depth(id);
        if (!d) throw LoadError(fmt::format("fused depth for frame '{}' is missing", id));
        return *d;
      },
      o.params, thread_count(g));
  m.annotations = r.annotations;
  save_metadata(m, o.scene);
  write_text(fs::path(o.scene) / "label_stats.json", r.stats.to_json());
  report({{"command", "label"},
          {"depth", use_fused ? "fused" : "raw"},
          {"annotations", r.annotations.size()},
          {"stats", json::parse(r.stats.to_json())}});
}

// ---------------------------------------------------------------- train-classifier

struct ClassifierOpts {
  std::string objects;
  std::vector<std::string> backgrounds;
  std::string out;
  std::uint64_t seed = 0;
  CompositeTrainingConfig config;
};

void run_train_classifier(ClassifierOpts o, const Globals& g) {
  const auto views = read_object_views(o.objects);
  std::vector<RgbImage> bgs;
  for (const auto& dir : split_list(o.backgrounds)) {
    auto b = read_backgrounds(dir);
    bgs.insert(bgs.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
  }
  if (bgs.empty()) throw UserError("no background images found");
  o.config.augmentation.seed = o.seed;
  o.config.classifier.seed = o.seed;
  o.config.threads = thread_count(g);
  TrainReport rep;
  const ClassifierModel model = train_composite_classifier(views, bgs, o.config, &rep);
  save_classifier(model, o.out);
  report({{"command", "train-classifier"},
          {"classes", model.classes.size()},
          {"object_views", views.size()},
          {"backgrounds", bgs.size()},
          {"train_accuracy", rep.train_accuracy},
          {"final_loss", rep.epoch_loss.empty() ? 0.0 : rep.epoch_loss.back()}});
}

// ---------------------------------------------------------------- policies

struct LoadedScenes {
  std::vector<std::unique_ptr<DiskScene>> disk;
  std::vector<std::unique_ptr<ActiveScene>> active;
  std::vector<const ActiveScene*> view() const {
    std::vector<const ActiveScene*> v;
    for (const auto& a : active) v.push_back(a.get());
    return v;
  }
};

LoadedScenes load_active_scenes(const std::vector<std::string>& dirs, const ClassifierModel& clf,
                                const Globals& g) {
  LoadedScenes out;
  for (const auto& dir : split_list(dirs)) {
    out.disk.push_back(open_scene(dir));
    if (!out.disk.back()->manifest().move_graph) {
      throw UserError(fmt::format("scene '{}' has no move graph; run build-graph first", dir));
    }
    if (out.disk.back()->manifest().annotations.empty()) {
      throw UserError(fmt::format("scene '{}' has no annotations; run label first", dir));
    }
    out.active.push_back(build_active_scene(*out.disk.back(), clf, thread_count(g)));
  }
  if (out.active.empty()) throw UserError("no scenes given");
  return out;
}

struct TrainPolicyOpts {
  std::vector<std::string> scenes;
  std::string classifier;
  std::string out;
  int steps = 5;
  double conf = 0.9;
  long long episodes = 640000;
  std::uint64_t seed = 0;
  int batch = 32;
  double lr = 0.05;
  int hidden = 32;
  double init_range = 0.05;
  bool baseline = false;
  std::string history;
};

void run_train_policy(const TrainPolicyOpts& o, const Globals& g) {
  if (o.episodes < 1) throw UserError("--episodes must be positive");
  const ClassifierModel clf = load_classifier(o.classifier);
  const LoadedScenes scenes = load_active_scenes(o.scenes, clf, g);
  TrainConfig tc;
  tc.batch_episodes = o.batch;
  tc.batches = static_cast<int>((o.episodes + o.batch - 1) / std::max(1, o.batch));
  tc.learning_rate = o.lr;
  tc.baseline = o.baseline;
  tc.seed = o.seed;
  tc.episode.max_steps = o.steps;
  tc.episode.confidence_threshold = o.conf;
  tc.init.hidden = o.hidden;
  tc.init.init_range = o.init_range;
  tc.threads = thread_count(g);
  std::vector<TrainStats> hist;
  const PolicyParams params = train_policy(scenes.view(), tc, &hist);
  save_policy(params, o.out);
  if (!o.history.empty()) {
    CsvTable t{"train_history", {"batch", "mean_reward", "accuracy", "gradient_norm"}, {}};
    for (std::size_t i = 0; i < hist.size(); ++i) {
      t.rows.push_back({std::to_string(i), format_number(hist[i].mean_reward),
                        format_number(hist[i].accuracy), format_number(hist[i].gradient_norm)});
    }
    write_csv(o.history, t);
  }
  // Mean over the last tenth of training as a progress summary.
  const std::size_t tail = std::max<std::size_t>(1, hist.size() / 10);
  double reward = 0.0, acc = 0.0;
  for (std::size_t i = hist.size() - tail; i < hist.size(); ++i) {
    reward += hist[i].mean_reward / tail;
    acc += hist[i].accuracy / tail;
  }
  report({{"command", "train-policy"},
          {"batches", tc.batches},
          {"episodes", static_cast<long long>(tc.batches) * tc.batch_episodes},
          {"parameters", params.parameter_count()},
          {"final_mean_reward", reward},
          {"final_accuracy", acc}});
}

struct EvalPolicyOpts {
  std::vector<std::string> scenes;
  std::string classifier;
  std::vector<std::string> policies;
  std::string budgets = "0,3,5,10,20";
  std::string out;
  double conf = 0.9;
  std::uint64_t seed = 0;
  int max_starts = 0;
  bool greedy = false;
};

void run_eval_policy(const EvalPolicyOpts& o, const Globals& g) {
  const ClassifierModel clf = load_classifier(o.classifier);
  const LoadedScenes scenes = load_active_scenes(o.scenes, clf, g);
  EvalConfig ec;
  ec.budgets = parse_int_list(o.budgets, "--budgets");
  ec.episode.confidence_threshold = o.conf;
  ec.seed = o.seed;
  ec.max_starts = o.max_starts;
  ec.threads = thread_count(g);
  const auto names = split_list(o.policies);
  if (names.empty()) throw UserError("no policies given");
  std::size_t files = 0;
  for (const auto& n : names) files += (n != "random" && n != "forward");
  std::vector<AccuracyRow> rows;
  for (const auto& n : names) {
    std::unique_ptr<Policy> p;
    if (n == "random" || n == "forward") {
      p = baseline_policy(parse_baseline(n));
    } else {
      // A single checkpoint is "ours"; several are told apart by file stem.
      const std::string method = files == 1 ? "ours" : fs::path(n).stem().string();
      p = std::make_unique<LearnedPolicy>(load_policy(n), o.greedy, method);
    }
    rows.push_back(evaluate_policy(*p, scenes.view(), ec));
  }
  write_csv(o.out, accuracy_table(rows));
  json methods = json::object();
  for (const auto& r : rows) methods[r.method] = r.accuracy;
  report({{"command", "eval-policy"},
          {"budgets", ec.budgets},
          {"episodes_per_budget", rows.front().episodes_per_budget},
          {"accuracy", methods}});
}

// ---------------------------------------------------------------- eval-detections / analyze / plot

struct EvalDetOpts {
  std::string scene;
  std::string detections;
  double iou = 0.5;
  std::string out;
  bool eleven_point = false;
  int min_width = 0;
  int min_height = 0;
};

void run_eval_detections(const EvalDetOpts& o, const Globals& g) {
  const auto scene = open_scene(o.scene);
  auto dets = detections_from_csv(read_csv(o.detections));
  auto gt = scene->manifest().annotations;
  if (o.min_width > 0 || o.min_height > 0) {
    gt = filter_min_size(gt, o.min_width, o.min_height);
    dets = filter_min_size(dets, o.min_width, o.min_height);
  }
  const ApResult r = average_precision(
      dets, gt, o.iou, o.eleven_point ? ApInterpolation::kElevenPoint : ApInterpolation::kAllPoints,
      thread_count(g));
  write_csv(o.out, ap_table(r));
  report({{"command", "eval-detections"},
          {"instances", r.per_instance.size()},
          {"detections", dets.size()},
          {"mean_ap", r.mean_ap}});
}

struct AnalyzeOpts {
  std::string scene;
  std::string scores;
  std::string classifier;
  std::string kind;
  std::string out;
  std::vector<int> instances;
};

// Classifier probability of the annotated instance on every annotated crop.
std::vector<FrameScore> classifier_scores(const DiskScene& scene, const ClassifierModel& clf,
                                          const Globals& g) {
  const auto& anns = scene.manifest().annotations;
  std::vector<FrameScore> out(anns.size());
  parallel_for(
      anns.size(),
      [&](std::size_t i) {
        const auto& a = anns[i];
        const Distribution d = classify(clf, crop_image(scene.rgb(a.frame_id), a.box));
        out[i] = {a.frame_id, a.instance_id, d.prob_of(a.instance_id)};
      },
      thread_count(g));
  return out;
}

void run_analyze(const AnalyzeOpts& o, const Globals& g) {
  if (o.scores.empty() == o.classifier.empty()) {
    throw UserError("give exactly one of --scores and --classifier");
  }
  const auto scene = open_scene(o.scene);
  const SceneManifest& m = scene->manifest();
  const std::vector<FrameScore> scores =
      o.scores.empty() ? classifier_scores(*scene, load_classifier(o.classifier), g)
                       : scores_from_csv(read_csv(o.scores));
  std::vector<CsvTable> tables;
  if (o.kind == "heatmap") {
    std::vector<int> ids = o.instances;
    if (ids.empty()) {
      for (const auto& a : m.annotations) ids.push_back(a.instance_id);
      std::sort(ids.begin(), ids.end());
      ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    }
    for (int id : ids) tables.push_back(position_table(id, score_position_map(m, id, scores)));
  } else {
    tables.push_back(sensitivity_table(score_distance_sensitivity(m, scores)));
  }
  // Keep computed scores next to the report so it can be reproduced.
  if (o.scores.empty()) {
    CsvTable t = scores_to_csv(scores);
    t.name = "scores";
    tables.push_back(std::move(t));
  }
  const auto files = emit_report(tables, o.out);
  report({{"command", "analyze"}, {"kind", o.kind}, {"tables", files.size()}});
}

struct PlotOpts {
  std::string in;
  std::string kind;
  std::string out;
  int width = 0;
  int height = 0;
};

void run_plot(const PlotOpts& o) {
  const CsvTable t = read_csv(o.in);
  RgbImage img = o.kind == "heatmap"
                     ? plot_heatmap(t, o.width > 0 ? o.width : 480, o.height > 0 ? o.height : 480)
                     : plot_curve(t, o.width > 0 ? o.width : 640, o.height > 0 ? o.height : 480);
  write_png(o.out, img);
  report({{"command", "plot"}, {"kind", o.kind}, {"width", img.width()}, {"height", img.height()}});
}

// ---------------------------------------------------------------- trace

struct TraceOpts {
  std::string scene;
  int instance = 0;
  std::string start;
  std::uint64_t seed = 0;
  std::string actions;
  int steps = 5;
};

// Replays an action list without a classifier; one JSON record per visited frame.
void run_trace(const TraceOpts& o) {
  const auto scene = open_scene(o.scene);
  const EpisodeScene es(*scene);
  EpisodeConfig cfg;
  cfg.max_steps = o.steps;
  EpisodeState s = o.start.empty() ? reset_state(es, o.instance, o.seed, cfg)
                                   : reset_state(es, o.instance, o.start, cfg);
  const std::vector<int> actions =
      o.actions.empty() ? std::vector<int>{} : parse_int_list(o.actions, "--actions");
  std::vector<TraceRecord> trace;
  for (std::size_t i = 0;; ++i) {
    TraceRecord r;
    r.t = s.t;
    r.frame_id = s.frame_id;
    r.box = s.box;
    if (s.terminated || i >= actions.size()) {
      trace.push_back(r);
      break;
    }
    r.action = action_from_index(actions[i]);
    trace.push_back(r);
    s = step_state(s, *r.action, es, cfg);
  }
  std::cout << trace_to_jsonl(trace);
}

// ---------------------------------------------------------------- main

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

int fail(ErrorKind kind, const std::string& msg) {
  std::cerr << fmt::format("error kind={} code={} msg=\"{}\"", to_string(kind),
                           static_cast<int>(kind), one_line(msg))
            << std::endl;
  return static_cast<int>(kind);
}

int run(int argc, char** argv) {
  CLI::App app{"avsim: active-vision dataset simulator and benchmark"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "INI/TOML file of defaults, one [subcommand] section each; flags override it");
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads (0: AVSIM_THREADS or hardware count)")
      ->envname("AVSIM_THREADS")
      ->check(CLI::NonNegativeNumber);

  GenSynthOpts gs;
  auto* c_gen = app.add_subcommand("gen-synth", "Render a synthetic scene from a JSON spec");
  c_gen->add_option("--spec", gs.spec, "Scene spec JSON")->required()->check(CLI::ExistingFile);
  c_gen->add_option("--out", gs.out, "Output scene directory")->required();
  c_gen->add_option("--seed", gs.seed, "Override the spec's seed");
  c_gen->add_option("--objects", gs.objects, "Also write close-up object views here");
  c_gen->add_option("--backgrounds", gs.backgrounds, "Also write object-free backgrounds here");
  c_gen->add_option("--views", gs.views, "Object views per instance")->check(CLI::PositiveNumber);
  c_gen->add_option("--background-count", gs.background_count, "Background images")
      ->check(CLI::PositiveNumber);

  IngestOpts ing;
  auto* c_ing = app.add_subcommand("ingest", "Convert an external dataset to the canonical layout");
  c_ing->add_option("--format", ing.format, "Source layout tag")
      ->required()
      ->check(CLI::IsMember(supported_ingest_formats()));
  c_ing->add_option("--in", ing.in, "Source directory")->required()->check(CLI::ExistingDirectory);
  c_ing->add_option("--out", ing.out, "Output scene directory")->required();

  SceneOpts val;
  auto* c_val = app.add_subcommand("validate", "Check a scene directory; nonzero exit on violation");
  c_val->add_option("--scene", val.scene, "Scene directory")->required();

  GraphOpts gr;
  auto* c_graph = app.add_subcommand("build-graph", "Compute movement pointers (movegraph.json)");
  c_graph->add_option("--scene", gr.scene, "Scene directory")->required();
  c_graph->add_option("--step", gr.params.target_step, "Target translation step (m)")
      ->check(CLI::PositiveNumber);
  c_graph->add_option("--rot", gr.params.rotation_step, "Rotation step (degrees)")
      ->check(CLI::Range(0.0, 180.0));
  c_graph->add_option("--cone", gr.params.cone_half_angle, "Direction cone half-angle (degrees)");
  c_graph->add_option("--cluster-radius", gr.params.cluster_radius, "Co-location radius (m)");
  c_graph->add_option("--yaw-tolerance", gr.params.yaw_tolerance, "Heading tolerance (degrees)");
  c_graph->add_option("--max-step-ratio", gr.params.max_step_ratio,
                      "Ignore translation candidates beyond this multiple of --step");

  FuseOpts fu;
  auto* c_fuse = app.add_subcommand("fuse-depth", "Multi-view depth fusion into depth_fused/");
  c_fuse->add_option("--scene", fu.scene, "Scene directory")->required();
  c_fuse->add_option("--k", fu.params.k_neighbors, "Neighbor views per frame")
      ->check(CLI::NonNegativeNumber);
  c_fuse->add_option("--splat-radius", fu.params.splat_radius, "Splat radius in pixels")
      ->check(CLI::Range(0, 4));
  c_fuse->add_flag("--no-interpolate", fu.no_interpolate, "Leave holes unfilled");

  LabelOpts lb;
  auto* c_label = app.add_subcommand("label", "Project instance clouds into 2D boxes (annotations.json)");
  c_label->add_option("--scene", lb.scene, "Scene directory")->required();
  c_label->add_option("--eps", lb.params.occlusion_slack, "Occlusion slack (m)")
      ->check(CLI::NonNegativeNumber);
  c_label->add_option("--min-points", lb.params.min_visible_points, "Minimum visible points")
      ->check(CLI::NonNegativeNumber);
  c_label->add_option("--depth", lb.depth, "Depth used for occlusion: auto (fused when present), fused, raw")
      ->check(CLI::IsMember({"auto", "fused", "raw"}));

  ClassifierOpts cl;
  auto* c_clf = app.add_subcommand("train-classifier", "Train the instance classifier by compositing");
  c_clf->add_option("--objects", cl.objects, "Object view directory")->required();
  c_clf->add_option("--backgrounds", cl.backgrounds, "Background directories")->required();
  c_clf->add_option("--out", cl.out, "Output model file")->required();
  c_clf->add_option("--seed", cl.seed, "Augmentation and SGD seed");
  c_clf->add_option("--samples", cl.config.samples_per_instance, "Composites per instance")
      ->check(CLI::PositiveNumber);
  c_clf->add_option("--epochs", cl.config.classifier.epochs, "Training epochs")
      ->check(CLI::PositiveNumber);
  c_clf->add_option("--lr", cl.config.classifier.learning_rate, "Learning rate")
      ->check(CLI::PositiveNumber);
  c_clf->add_option("--l2", cl.config.classifier.l2, "Weight decay")->check(CLI::NonNegativeNumber);
  c_clf->add_option("--scale-min", cl.config.augmentation.scale_min, "Smallest paste scale");
  c_clf->add_option("--scale-max", cl.config.augmentation.scale_max, "Largest paste scale");
  c_clf->add_option("--pixel-noise", cl.config.augmentation.pixel_noise, "Composite noise sigma")
      ->check(CLI::NonNegativeNumber);
  c_clf->add_option("--crop-jitter", cl.config.augmentation.crop_jitter, "Crop jitter fraction")
      ->check(CLI::NonNegativeNumber);

  TrainPolicyOpts tp;
  auto* c_tp = app.add_subcommand("train-policy", "Train the movement policy with REINFORCE");
  c_tp->add_option("--scenes", tp.scenes, "Labeled scene directories with move graphs")->required();
  c_tp->add_option("--classifier", tp.classifier, "Classifier model")->required();
  c_tp->add_option("--out", tp.out, "Output policy file")->required();
  c_tp->add_option("--T", tp.steps, "Move budget per episode")->check(CLI::NonNegativeNumber);
  c_tp->add_option("--conf", tp.conf, "Confidence stop threshold (strict)")->check(CLI::Range(0.0, 1.0));
  c_tp->add_option("--episodes", tp.episodes, "Training episodes (rounded up to whole batches)");
  c_tp->add_option("--seed", tp.seed, "Training seed");
  c_tp->add_option("--batch", tp.batch, "Episodes per update (M)")->check(CLI::PositiveNumber);
  c_tp->add_option("--lr", tp.lr, "Learning rate")->check(CLI::PositiveNumber);
  c_tp->add_option("--hidden", tp.hidden, "Hidden units (0: linear policy)")
      ->check(CLI::NonNegativeNumber);
  c_tp->add_option("--init-range", tp.init_range, "Initial weight range")
      ->check(CLI::NonNegativeNumber);
  c_tp->add_flag("--baseline", tp.baseline, "Subtract the batch-mean reward");
  c_tp->add_option("--history", tp.history, "Optional per-batch CSV");

  EvalPolicyOpts ep;
  auto* c_ep = app.add_subcommand("eval-policy", "Accuracy per move budget for one or more policies");
  c_ep->add_option("--scenes", ep.scenes, "Labeled scene directories with move graphs")->required();
  c_ep->add_option("--classifier", ep.classifier, "Classifier model")->required();
  c_ep->add_option("--policy", ep.policies, "Policy file, random or forward (repeat or comma-separate)")
      ->required();
  c_ep->add_option("--budgets", ep.budgets, "Comma-separated move budgets");
  c_ep->add_option("--out", ep.out, "Output CSV (method, budgets...)")->required();
  c_ep->add_option("--conf", ep.conf, "Confidence stop threshold (strict)")->check(CLI::Range(0.0, 1.0));
  c_ep->add_option("--seed", ep.seed, "Evaluation seed");
  c_ep->add_option("--max-starts", ep.max_starts, "Sample this many starts (0: all)")
      ->check(CLI::NonNegativeNumber);
  c_ep->add_flag("--greedy", ep.greedy, "Learned policies take their most likely action");

  EvalDetOpts ed;
  auto* c_ed = app.add_subcommand("eval-detections", "Per-instance AP and mAP against annotations");
  c_ed->add_option("--scene", ed.scene, "Scene directory")->required();
  c_ed->add_option("--detections", ed.detections, "Detections CSV")->required();
  c_ed->add_option("--iou", ed.iou, "IoU threshold")->check(CLI::Range(0.0, 1.0));
  c_ed->add_option("--out", ed.out, "Output CSV")->required();
  c_ed->add_flag("--eleven-point", ed.eleven_point, "11-point interpolated AP");
  c_ed->add_option("--min-width", ed.min_width, "Drop boxes narrower than this")
      ->check(CLI::NonNegativeNumber);
  c_ed->add_option("--min-height", ed.min_height, "Drop boxes shorter than this")
      ->check(CLI::NonNegativeNumber);

  AnalyzeOpts an;
  auto* c_an = app.add_subcommand("analyze", "Score-position and score-distance tables");
  c_an->add_option("--scene", an.scene, "Scene directory")->required();
  c_an->add_option("--scores", an.scores, "Scores CSV (frame_id, instance_id, score)");
  c_an->add_option("--classifier", an.classifier, "Score annotated crops with this model instead");
  c_an->add_option("--kind", an.kind, "heatmap or sensitivity")
      ->required()
      ->check(CLI::IsMember({"heatmap", "sensitivity"}));
  c_an->add_option("--out", an.out, "Output directory")->required();
  c_an->add_option("--instance", an.instances, "Heatmap instances (default: all annotated)");

  PlotOpts pl;
  auto* c_plot = app.add_subcommand("plot", "Raster figure from an analysis CSV");
  c_plot->add_option("--in", pl.in, "Input CSV")->required();
  c_plot->add_option("--kind", pl.kind, "heatmap or curve")
      ->required()
      ->check(CLI::IsMember({"heatmap", "curve"}));
  c_plot->add_option("--out", pl.out, "Output PNG")->required();
  c_plot->add_option("--width", pl.width, "Width in pixels (0: 480 heatmap, 640 curve)");
  c_plot->add_option("--height", pl.height, "Height in pixels (0: 480)");

  TraceOpts tr;
  auto* c_tr = app.add_subcommand("trace", "Replay an action list and print the visited frames");
  c_tr->add_option("--scene", tr.scene, "Scene directory")->required();
  c_tr->add_option("--instance", tr.instance, "Target instance")->required();
  c_tr->add_option("--start", tr.start, "Start frame (default: seeded draw)");
  c_tr->add_option("--seed", tr.seed, "Start-frame seed");
  c_tr->add_option("--actions", tr.actions, "Comma-separated action indices 0-5");
  c_tr->add_option("--T", tr.steps, "Move budget")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(ErrorKind::kUser, e.what());
  }

  if (*c_gen) run_gen_synth(gs, g);
  if (*c_ing) run_ingest(ing);
  if (*c_val) run_validate(val);
  if (*c_graph) run_build_graph(gr);
  if (*c_fuse) run_fuse_depth(fu, g);
  if (*c_label) run_label(lb, g);
  if (*c_clf) run_train_classifier(cl, g);
  if (*c_tp) run_train_policy(tp, g);
  if (*c_ep) run_eval_policy(ep, g);
  if (*c_ed) run_eval_detections(ed, g);
  if (*c_an) run_analyze(an, g);
  if (*c_plot) run_plot(pl);
  if (*c_tr) run_trace(tr);
  return 0;
}

}  // namespace
}  // namespace avsim

int main(int argc, char** argv) {
  try {
    return avsim::run(argc, argv);
  } catch (const avsim::Error& e) {
    return avsim::fail(e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return avsim::fail(avsim::ErrorKind::kIntegrity, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return avsim::fail(avsim::ErrorKind::kUser, e.what());
  } catch (const std::exception& e) {
    return avsim::fail(avsim::ErrorKind::kInternal, e.what());
  }
}
