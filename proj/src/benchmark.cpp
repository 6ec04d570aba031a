#include "avsim/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "avsim/error.hpp"
#include "avsim/image_io.hpp"
#include "avsim/parallel.hpp"

namespace avsim {

namespace {

constexpr double kViewDistance = 0.6;

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  std::uint64_t out;
  seq.generate(reinterpret_cast<std::uint32_t*>(&out), reinterpret_cast<std::uint32_t*>(&out) + 2);
  return out;
}

double box_gap(const SynthBox& a, const SynthBox& b) {
  const Vec3 d = ((a.center - b.center).cwiseAbs() - (a.size + b.size) / 2.0).cwiseMax(0.0);
  return d.norm();
}

BenchmarkParams benchmark_params_from(const nlohmann::json& j) {
  BenchmarkParams p;
  p.body_width = j.value("body_width", p.body_width);
  p.body_height = j.value("body_height", p.body_height);
  p.band_height = j.value("band_height", p.band_height);
  p.bands_per_body = j.value("bands_per_body", p.bands_per_body);
  p.band_contrast = j.value("band_contrast", p.band_contrast);
  p.room_x = j.value("room_x", p.room_x);
  p.room_y = j.value("room_y", p.room_y);
  p.grid_nx = j.value("grid_nx", p.grid_nx);
  p.grid_ny = j.value("grid_ny", p.grid_ny);
  p.occluders = j.value("occluders", p.occluders);
  p.image_width = j.value("image_width", p.image_width);
  p.image_height = j.value("image_height", p.image_height);
  p.focal = j.value("focal", p.focal);
  p.rgb_noise_sigma = j.value("rgb_noise_sigma", p.rgb_noise_sigma);
  p.gap = j.value("gap", p.gap);
  for (const auto& [key, value] : j.items()) {
    static const std::set<std::string> known = {
        "body_width", "body_height", "band_height", "bands_per_body", "band_contrast",
        "room_x",     "room_y",      "grid_nx",     "grid_ny",        "occluders",
        "image_width", "image_height", "focal",     "rgb_noise_sigma", "gap"};
    if (!known.count(key)) throw UserError(fmt::format("benchmark_layout: unknown key '{}'", key));
  }
  if (p.bands_per_body < 1 || p.body_width <= 0.0 || p.body_height <= p.band_height ||
      p.band_height <= 0.0) {
    throw UserError("benchmark_layout: invalid object dimensions");
  }
  return p;
}

nlohmann::json parse_spec_json(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("scene spec: {}", e.what()));
  }
}

}  // namespace

Intrinsics benchmark_intrinsics(const BenchmarkParams& p) {
  Intrinsics k;
  k.fx = k.fy = p.focal;
  k.width = p.image_width;
  k.height = p.image_height;
  k.cx = p.image_width / 2.0;
  k.cy = p.image_height / 2.0;
  return k;
}

bool is_benchmark_spec(const std::string& text) {
  const auto j = parse_spec_json(text);
  return j.is_object() && j.contains("benchmark_layout");
}

SynthSceneSpec load_scene_spec(const std::string& text, std::optional<std::uint64_t> seed) {
  nlohmann::json j = parse_spec_json(text);
  if (!j.is_object()) throw UserError("scene spec must be a JSON object");
  if (seed) j["seed"] = *seed;
  if (!j.contains("benchmark_layout")) return synth_spec_from_json(j.dump());
  try {
    SynthSceneSpec s = benchmark_scene_spec(j.value("seed", std::uint64_t{0}),
                                            benchmark_params_from(j["benchmark_layout"]));
    s.scene_id = j.value("scene_id", s.scene_id);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw UserError(fmt::format("benchmark_layout: {}", e.what()));
  }
}

std::vector<CatalogObject> catalog_from_spec(const SynthSceneSpec& spec) {
  std::map<int, CatalogObject> by_id;
  for (const auto& b : spec.objects) {
    auto& o = by_id[b.instance_id];
    o.instance_id = b.instance_id;
    o.parts.push_back(b);
  }
  const auto ids = spec.instance_ids();
  std::vector<CatalogObject> out;
  for (auto& [id, o] : by_id) {
    Vec3 lo = o.parts.front().min(), hi = o.parts.front().max();
    for (const auto& p : o.parts) {
      lo = lo.cwiseMin(p.min());
      hi = hi.cwiseMax(p.max());
    }
    const Vec3 base((lo.x() + hi.x()) / 2.0, (lo.y() + hi.y()) / 2.0, lo.z());
    for (auto& p : o.parts) p.center -= base;
    const auto pos = std::find(ids.begin(), ids.end(), id) - ids.begin();
    o.name = static_cast<std::size_t>(pos) < spec.instance_names.size()
                 ? spec.instance_names[pos]
                 : fmt::format("object_{}", id);
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<CatalogObject> benchmark_catalog(const BenchmarkParams& p) {
  const std::array<Color, 3> bodies = {Color{170, 70, 60}, Color{70, 140, 80}, Color{70, 90, 160}};
  const double w = p.body_width, h = p.body_height;
  std::vector<CatalogObject> out;
  for (int b = 0; b < 3; ++b) {
    for (int k = 0; k < p.bands_per_body; ++k) {
      CatalogObject o;
      o.instance_id = static_cast<int>(out.size()) + 1;
      o.name = fmt::format("body{}_band{}", b, k);
      SynthBox body;
      body.instance_id = o.instance_id;
      body.size = Vec3(w, w, h);
      body.center = Vec3(0.0, 0.0, h / 2.0);
      body.color = bodies[b];
      SynthBox band = body;
      band.size = Vec3(w + 0.004, w + 0.004, p.band_height);
      // Bands step through heights and shades of the body color.
      const double frac = (k + 1.0) / (p.bands_per_body + 1.0);
      band.center = Vec3(0.0, 0.0, p.band_height / 2.0 + frac * (h - p.band_height));
      const double gain = 1.0 + p.band_contrast * (k % 2 == 0 ? 1.0 : -1.0) * (1 + k / 2);
      for (int c = 0; c < 3; ++c) {
        band.color[c] = static_cast<std::uint8_t>(std::clamp(std::lround(body.color[c] * gain), 0L, 255L));
      }
      o.parts = {body, band};
      out.push_back(std::move(o));
    }
  }
  return out;
}

AugmentationSpec benchmark_augmentation(const BenchmarkParams& params) {
  AugmentationSpec a;
  a.scale_min = 0.1;
  a.pixel_noise = params.rgb_noise_sigma;
  return a;
}

SynthSceneSpec benchmark_scene_spec(std::uint64_t seed, const BenchmarkParams& p) {
  RandomSceneParams rp;
  rp.room_x = p.room_x;
  rp.room_y = p.room_y;
  rp.grid_nx = p.grid_nx;
  rp.grid_ny = p.grid_ny;
  rp.instances = 0;
  rp.occluders = p.occluders;
  rp.gap = p.gap;
  SynthSceneSpec s = random_scene_spec(seed, rp);
  s.scene_id = fmt::format("bench_{}", seed);
  s.intrinsics = benchmark_intrinsics(p);
  s.rgb_noise_sigma = p.rgb_noise_sigma;
  s.surface_pitch = 0.01;

  std::mt19937_64 rng(sample_seed(seed, 0xbe7c, 1));
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  constexpr int kMaxTries = 20000;
  for (const CatalogObject& o : benchmark_catalog(p)) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxTries) throw UserError("benchmark scene: could not place objects");
      const Vec3 base(quantize_decimal(uni(p.gap, p.room_x - p.gap)),
                      quantize_decimal(uni(p.gap, p.room_y - p.gap)),
                      quantize_decimal(uni(0.75, 1.0)));
      std::vector<SynthBox> parts = o.parts;
      for (auto& part : parts) part.center += base;
      SynthBox hull = parts.front();
      bool ok = true;
      for (const auto* list : {&s.objects, &s.occluders}) {
        for (const auto& other : *list) ok = ok && box_gap(other, hull) >= p.gap;
      }
      if (!ok) continue;
      s.objects.insert(s.objects.end(), parts.begin(), parts.end());
      s.instance_names.push_back(o.name);
      break;
    }
  }
  s.validate();
  return s;
}

std::vector<ObjectView> render_catalog_views(const std::vector<CatalogObject>& catalog,
                                             const Intrinsics& intrinsics, int views) {
  if (views < 1) throw UserError("need at least one view per object");
  std::vector<ObjectView> out(catalog.size() * views);
  parallel_for(out.size(), [&](std::size_t i) {
    const CatalogObject& o = catalog[i / views];
    const int k = static_cast<int>(i % views);
    Vec3 lo = Vec3::Constant(1e9), hi = Vec3::Constant(-1e9);
    for (const auto& part : o.parts) {
      lo = lo.cwiseMin(part.min());
      hi = hi.cwiseMax(part.max());
    }
    const double extent = (hi - lo).maxCoeff();
    // Far enough that the whole object fits the narrower field of view.
    const double fov_fit = extent * std::max(intrinsics.fx / intrinsics.width,
                                             intrinsics.fy / intrinsics.height) * 1.6;
    const double distance = std::max({kViewDistance, fov_fit + extent});
    const double half_room = distance + extent + 1.0;
    SynthSceneSpec s;
    s.room_min = Vec3(0.0, 0.0, 0.0);
    s.room_max = Vec3(2 * half_room, 2 * half_room, std::max(2.5, 1.0 + 2 * extent + 1.0));
    const Vec3 base(half_room - (lo.x() + hi.x()) / 2.0, half_room - (lo.y() + hi.y()) / 2.0,
                    1.0 - (lo.z() + hi.z()) / 2.0);
    for (SynthBox part : o.parts) {
      part.center += base;
      s.objects.push_back(part);
    }
    const double yaw = 360.0 * k / views;
    const double rad = yaw * M_PI / 180.0;
    ScenePose pose;
    pose.frame_id = fmt::format("view_{}", k);
    // Camera behind the object along -heading, looking at its center.
    pose.position = Vec3(half_room - distance * std::cos(rad), half_room - distance * std::sin(rad), 1.0);
    pose.orientation = level_camera_orientation(yaw);
    pose.intrinsics = intrinsics;
    RenderOptions opt;
    opt.include_room = false;
    opt.only_instance = o.instance_id;
    const RenderedView v = render_view(s, pose, opt);
    BoundingBox box{v.label.width(), v.label.height(), 0, 0, o.instance_id, 0};
    for (int y = 0; y < v.label.height(); ++y) {
      for (int x = 0; x < v.label.width(); ++x) {
        if (v.label.at(x, y) != o.instance_id) continue;
        box.xmin = std::min(box.xmin, x);
        box.ymin = std::min(box.ymin, y);
        box.xmax = std::max(box.xmax, x + 1);
        box.ymax = std::max(box.ymax, y + 1);
      }
    }
    if (!box.valid()) throw IntegrityError(fmt::format("object {} not visible in its view", o.instance_id));
    ObjectView ov{o.instance_id, crop_image(v.rgb, box), MaskImage(box.width(), box.height(), 1)};
    for (int y = 0; y < box.height(); ++y) {
      for (int x = 0; x < box.width(); ++x) {
        ov.mask.at(x, y) = v.label.at(box.xmin + x, box.ymin + y) == o.instance_id ? 255 : 0;
      }
    }
    out[i] = std::move(ov);
  });
  return out;
}

std::vector<RgbImage> render_backgrounds(const SynthSceneSpec& spec, int count, std::uint64_t seed) {
  if (count < 1) throw UserError("need at least one background");
  const std::vector<ScenePose> poses = synth_poses(spec);
  std::vector<RgbImage> out(count);
  parallel_for(out.size(), [&](std::size_t i) {
    std::mt19937_64 rng(sample_seed(seed, 0xb6, i));
    RenderOptions opt;
    opt.include_objects = false;
    opt.noise_sigma = spec.rgb_noise_sigma;
    opt.noise_seed = rng();
    out[i] = render_view(spec, poses[rng() % poses.size()], opt).rgb;
  });
  return out;
}

void write_object_views(const std::filesystem::path& dir, const std::vector<ObjectView>& views) {
  std::map<int, int> next;
  for (const auto& v : views) {
    const int k = next[v.instance_id]++;
    const auto sub = dir / std::to_string(v.instance_id);
    std::error_code ec;
    std::filesystem::create_directories(sub, ec);
    if (ec) throw IoError(fmt::format("cannot create {}: {}", sub.string(), ec.message()));
    write_png(sub / fmt::format("view_{:03d}.png", k), v.rgb);
    write_png_mask(sub / fmt::format("view_{:03d}_mask.png", k), v.mask);
  }
}

std::vector<ObjectView> read_object_views(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw LoadError(fmt::format("object directory {} does not exist", dir.string()));
  }
  std::vector<std::pair<int, std::filesystem::path>> files;
  for (const auto& sub : std::filesystem::directory_iterator(dir)) {
    if (!sub.is_directory()) continue;
    const std::string name = sub.path().filename().string();
    int id = 0;
    try {
      std::size_t used = 0;
      id = std::stoi(name, &used);
      if (used != name.size() || id <= 0) throw std::invalid_argument(name);
    } catch (const std::exception&) {
      throw IntegrityError(fmt::format("object directory '{}' is not a positive instance id", name));
    }
    for (const auto& f : std::filesystem::directory_iterator(sub.path())) {
      const std::string fn = f.path().filename().string();
      if (f.path().extension() != ".png" || fn.ends_with("_mask.png")) continue;
      files.emplace_back(id, f.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw LoadError(fmt::format("no object views under {}", dir.string()));
  std::vector<ObjectView> out;
  for (const auto& [id, path] : files) {
    const auto mask_path = path.parent_path() / (path.stem().string() + "_mask.png");
    if (!std::filesystem::exists(mask_path)) {
      throw IntegrityError(fmt::format("object view {} has no mask", path.string()));
    }
    ObjectView v{id, read_png_rgb(path), read_png_mask(mask_path)};
    if (v.mask.width() != v.rgb.width() || v.mask.height() != v.rgb.height()) {
      throw IntegrityError(fmt::format("mask of {} has a different size", path.string()));
    }
    out.push_back(std::move(v));
  }
  return out;
}

void write_backgrounds(const std::filesystem::path& dir, const std::vector<RgbImage>& images) {
  for (std::size_t i = 0; i < images.size(); ++i) {
    write_png(dir / fmt::format("background_{:03d}.png", i), images[i]);
  }
}

std::vector<RgbImage> read_backgrounds(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw LoadError(fmt::format("background directory {} does not exist", dir.string()));
  }
  std::vector<std::filesystem::path> files;
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    const auto ext = f.path().extension();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(f.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw LoadError(fmt::format("no background images under {}", dir.string()));
  std::vector<RgbImage> out;
  for (const auto& f : files) out.push_back(read_image_rgb(f));
  return out;
}

ClassifierModel train_composite_classifier(const std::vector<ObjectView>& views,
                                           const std::vector<RgbImage>& backgrounds,
                                           const CompositeTrainingConfig& config,
                                           TrainReport* report) {
  config.augmentation.validate();
  if (config.samples_per_instance < 1) throw UserError("samples_per_instance must be >= 1");
  if (backgrounds.empty()) throw UserError("no background images");
  std::map<int, std::vector<const ObjectView*>> by_instance;
  for (const auto& v : views) by_instance[v.instance_id].push_back(&v);
  if (by_instance.size() < 2) throw UserError("need object views of at least two instances");

  std::vector<std::pair<int, int>> jobs;  // (instance, sample index)
  for (const auto& [id, list] : by_instance) {
    for (int k = 0; k < config.samples_per_instance; ++k) jobs.emplace_back(id, k);
  }
  std::vector<FeatureVector> features(jobs.size());
  std::vector<int> labels(jobs.size());
  const std::uint64_t seed = config.augmentation.seed;
  parallel_for(
      jobs.size(),
      [&](std::size_t i) {
        const auto [id, k] = jobs[i];
        const auto& list = by_instance.at(id);
        std::mt19937_64 rng(sample_seed(seed, static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(k)));
        const ObjectView& v = *list[k % list.size()];
        const RgbImage& bg = backgrounds[rng() % backgrounds.size()];
        const CompositeSample c = composite_training_sample(v.rgb, v.mask, bg, config.augmentation, rng);
        const BoundingBox crop =
            jittered_crop_box(c.box, config.augmentation.crop_jitter, bg.width(), bg.height(), rng);
        features[i] = extract_features(crop_image(c.image, crop));
        labels[i] = id;
      },
      config.threads > 0 ? config.threads : default_thread_count());
  return train_classifier(features, labels, config.classifier, report);
}

}  // namespace avsim
