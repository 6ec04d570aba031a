#include "avsim/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "avsim/parallel.hpp"

namespace avsim {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Flat shading per face normal so box edges carry gradient structure.
// Index: 2 * axis + (0 for the min face, 1 for the max face).
constexpr std::array<double, 6> kFaceShade = {0.80, 0.80, 0.90, 0.90, 0.60, 1.00};

struct Face {
  int axis = 0;          // plane normal axis
  double coord = 0.0;    // plane coordinate
  Vec3 lo, hi;           // face extent (lo[axis] == hi[axis] == coord)
  Color color{};
  std::int32_t label = 0;
};

Color shade(const Color& c, double f) {
  Color out;
  for (int i = 0; i < 3; ++i) out[i] = static_cast<std::uint8_t>(std::lround(c[i] * f));
  return out;
}

void add_box_faces(const Vec3& lo, const Vec3& hi, const Color& color, std::int32_t label,
                   std::vector<Face>& faces) {
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      Face f;
      f.axis = axis;
      f.coord = side == 0 ? lo[axis] : hi[axis];
      f.lo = lo;
      f.hi = hi;
      f.lo[axis] = f.hi[axis] = f.coord;
      f.color = shade(color, kFaceShade[2 * axis + side]);
      f.label = label;
      faces.push_back(f);
    }
  }
}

std::vector<Face> scene_faces(const SynthSceneSpec& spec, const RenderOptions& opt) {
  std::vector<Face> faces;
  if (opt.include_room) {
    for (int axis = 0; axis < 3; ++axis) {
      for (int side = 0; side < 2; ++side) {
        Face f;
        f.axis = axis;
        f.coord = side == 0 ? spec.room_min[axis] : spec.room_max[axis];
        f.lo = spec.room_min;
        f.hi = spec.room_max;
        f.lo[axis] = f.hi[axis] = f.coord;
        f.color = spec.room_colors[2 * axis + side];
        faces.push_back(f);
      }
    }
  }
  for (const auto& b : spec.objects) {
    if (!opt.include_objects) break;
    if (opt.only_instance && b.instance_id != *opt.only_instance) continue;
    add_box_faces(b.min(), b.max(), b.color, b.instance_id, faces);
  }
  if (opt.include_occluders && !opt.only_instance) {
    for (const auto& b : spec.occluders) add_box_faces(b.min(), b.max(), b.color, 0, faces);
  }
  return faces;
}

// Pixel rectangle [x0, x1) x [y0, y1) that can contain the face.
struct PixelRect {
  int x0, y0, x1, y1;
};

PixelRect face_rect(const Face& f, const PinholeCamera& cam) {
  const Intrinsics& k = cam.intrinsics();
  const PixelRect full{0, 0, k.width, k.height};
  const int a1 = (f.axis + 1) % 3;
  const int a2 = (f.axis + 2) % 3;
  double umin = std::numeric_limits<double>::infinity(), umax = -umin;
  double vmin = umin, vmax = -umin;
  for (int c = 0; c < 4; ++c) {
    Vec3 p = f.lo;
    p[a1] = (c & 1) ? f.hi[a1] : f.lo[a1];
    p[a2] = (c & 2) ? f.hi[a2] : f.lo[a2];
    const Vec3 q = cam.to_camera(p);
    if (q.z() < 1e-6) return full;  // straddles the image plane; test everything
    const double u = k.cx + k.fx * q.x() / q.z();
    const double v = k.cy + k.fy * q.y() / q.z();
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  PixelRect r;
  r.x0 = std::clamp(static_cast<int>(std::floor(umin)) - 1, 0, k.width);
  r.x1 = std::clamp(static_cast<int>(std::ceil(umax)) + 1, 0, k.width);
  r.y0 = std::clamp(static_cast<int>(std::floor(vmin)) - 1, 0, k.height);
  r.y1 = std::clamp(static_cast<int>(std::ceil(vmax)) + 1, 0, k.height);
  return r;
}

bool box_contains(const Vec3& lo, const Vec3& hi, const Vec3& p, double pad) {
  return (p.array() >= lo.array() - pad).all() && (p.array() <= hi.array() + pad).all();
}

double box_distance(const Vec3& lo, const Vec3& hi, const Vec3& p) {
  const Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(Vec3::Zero());
  return d.norm();
}

double box_gap(const SynthBox& a, const SynthBox& b) {
  const Vec3 d = (a.min() - b.max()).cwiseMax(b.min() - a.max()).cwiseMax(Vec3::Zero());
  return d.norm();
}

Vec3 quantized(const Vec3& v) {
  return Vec3(quantize_decimal(v.x()), quantize_decimal(v.y()), quantize_decimal(v.z()));
}

struct GridLayout {
  GridSpec spec;
  double spacing;
};

GridLayout grid_layout(const SynthSceneSpec& spec) {
  if (spec.grid) return {*spec.grid, spec.grid_spacing};
  GridSpec g;
  const double sx = spec.room_max.x() - spec.room_min.x() - 2.0 * spec.grid_margin;
  const double sy = spec.room_max.y() - spec.room_min.y() - 2.0 * spec.grid_margin;
  if (sx < 0.0 || sy < 0.0) return {GridSpec{0, 0, 0, 0}, spec.grid_spacing};
  g.nx = static_cast<int>(std::floor(sx / spec.grid_spacing + 1e-9)) + 1;
  g.ny = static_cast<int>(std::floor(sy / spec.grid_spacing + 1e-9)) + 1;
  g.x0 = spec.room_min.x() + spec.grid_margin + (sx - (g.nx - 1) * spec.grid_spacing) / 2.0;
  g.y0 = spec.room_min.y() + spec.grid_margin + (sy - (g.ny - 1) * spec.grid_spacing) / 2.0;
  return {g, spec.grid_spacing};
}

// Grid points as (flat grid index, position).
std::vector<std::pair<int, Vec3>> grid_points(const SynthSceneSpec& spec) {
  const auto [g, spacing] = grid_layout(spec);
  std::vector<std::pair<int, Vec3>> out;
  for (int iy = 0; iy < g.ny; ++iy) {
    for (int ix = 0; ix < g.nx; ++ix) {
      const Vec3 p = quantized(Vec3(g.x0 + ix * spacing, g.y0 + iy * spacing, spec.camera_height));
      if (!box_contains(spec.room_min, spec.room_max, p, -spec.camera_clearance)) continue;
      bool clear = true;
      for (const auto* list : {&spec.objects, &spec.occluders}) {
        for (const auto& b : *list) {
          if (box_distance(b.min(), b.max(), p) < spec.camera_clearance) clear = false;
        }
      }
      if (clear) out.emplace_back(iy * g.nx + ix, p);
    }
  }
  return out;
}

// Segment parameters [t0, t1] inside the box for p(t) = a + t (b - a), or empty.
std::optional<std::pair<double, double>> segment_box(const Vec3& a, const Vec3& b, const Vec3& lo,
                                                      const Vec3& hi) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  const Vec3 d = b - a;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (a[i] < lo[i] || a[i] > hi[i]) return std::nullopt;
      continue;
    }
    double ta = (lo[i] - a[i]) / d[i];
    double tb = (hi[i] - a[i]) / d[i];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1) return std::nullopt;
  return std::make_pair(t0, t1);
}

void sample_face_points(const Vec3& lo, const Vec3& hi, int axis, double coord, double pitch,
                        std::vector<Vec3>& out) {
  const int a1 = (axis + 1) % 3;
  const int a2 = (axis + 2) % 3;
  const double e1 = hi[a1] - lo[a1];
  const double e2 = hi[a2] - lo[a2];
  const int n1 = std::max(1, static_cast<int>(std::ceil(e1 / pitch - 1e-9)));
  const int n2 = std::max(1, static_cast<int>(std::ceil(e2 / pitch - 1e-9)));
  for (int i = 0; i <= n1; ++i) {
    for (int j = 0; j <= n2; ++j) {
      Vec3 p;
      p[axis] = coord;
      p[a1] = lo[a1] + e1 * i / n1;
      p[a2] = lo[a2] + e2 * j / n2;
      out.push_back(quantized(p));
    }
  }
}

ordered_json color_json(const Color& c) { return ordered_json::array({c[0], c[1], c[2]}); }

Color color_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw UserError(fmt::format("{}: color needs 3 entries", what));
  Color c;
  for (int i = 0; i < 3; ++i) {
    const int v = j[i].get<int>();
    if (v < 0 || v > 255) throw UserError(fmt::format("{}: color component {} outside [0, 255]", what, v));
    c[i] = static_cast<std::uint8_t>(v);
  }
  return c;
}

Vec3 vec_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw UserError(fmt::format("{}: expected a 3-vector", what));
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

ordered_json vec_json(const Vec3& v) { return ordered_json::array({v.x(), v.y(), v.z()}); }

SynthBox box_from(const json& j, const std::string& what) {
  SynthBox b;
  b.instance_id = j.value("instance_id", 0);
  b.center = vec_from(j.at("center"), what + ".center");
  b.size = vec_from(j.at("size"), what + ".size");
  if (j.contains("color")) b.color = color_from(j["color"], what);
  return b;
}

ordered_json box_json(const SynthBox& b, bool with_id) {
  ordered_json j;
  if (with_id) j["instance_id"] = b.instance_id;
  j["center"] = vec_json(b.center);
  j["size"] = vec_json(b.size);
  j["color"] = color_json(b.color);
  return j;
}

RandomSceneParams random_params_from(const json& j) {
  RandomSceneParams p;
  p.room_x = j.value("room_x", p.room_x);
  p.room_y = j.value("room_y", p.room_y);
  p.room_z = j.value("room_z", p.room_z);
  p.grid_nx = j.value("grid_nx", p.grid_nx);
  p.grid_ny = j.value("grid_ny", p.grid_ny);
  p.instances = j.value("instances", p.instances);
  p.occluders = j.value("occluders", p.occluders);
  p.min_object_size = j.value("min_object_size", p.min_object_size);
  p.max_object_size = j.value("max_object_size", p.max_object_size);
  p.min_object_z = j.value("min_object_z", p.min_object_z);
  p.max_object_z = j.value("max_object_z", p.max_object_z);
  p.gap = j.value("gap", p.gap);
  return p;
}

}  // namespace

void SynthSceneSpec::validate() const {
  if (!((room_max - room_min).array() > 0.0).all()) {
    throw UserError("synth spec: room extents must be positive");
  }
  if (!(grid_spacing > 0.0)) throw UserError("synth spec: grid_spacing must be positive");
  if (!(rotation_step > 0.0) || rotation_step > 360.0) {
    throw UserError(fmt::format("synth spec: rotation_step {} outside (0, 360]", rotation_step));
  }
  const double steps = 360.0 / rotation_step;
  if (std::abs(steps - std::round(steps)) > 1e-9) {
    throw UserError(fmt::format("synth spec: 360 is not divisible by rotation_step {}", rotation_step));
  }
  if (!(surface_pitch > 0.0)) throw UserError("synth spec: surface_pitch must be positive");
  if (rgb_noise_sigma < 0.0) throw UserError("synth spec: rgb_noise_sigma must be >= 0");
  if (grid && (grid->nx < 0 || grid->ny < 0)) throw UserError("synth spec: grid counts must be >= 0");
  intrinsics.validate();
  auto check_box = [&](const SynthBox& b, const std::string& what) {
    if (!(b.size.array() > 0.0).all()) throw UserError(fmt::format("synth spec: {} has non-positive size", what));
    if (!box_contains(room_min, room_max, b.min(), 1e-9) || !box_contains(room_min, room_max, b.max(), 1e-9)) {
      throw UserError(fmt::format("synth spec: {} extends outside the room", what));
    }
  };
  for (size_t i = 0; i < objects.size(); ++i) {
    if (objects[i].instance_id <= 0) {
      throw UserError(fmt::format("synth spec: object {} needs a positive instance_id", i));
    }
    check_box(objects[i], fmt::format("object {}", i));
  }
  for (size_t i = 0; i < occluders.size(); ++i) check_box(occluders[i], fmt::format("occluder {}", i));
}

std::vector<int> SynthSceneSpec::instance_ids() const {
  std::set<int> ids;
  for (const auto& b : objects) ids.insert(b.instance_id);
  return {ids.begin(), ids.end()};
}

SynthSceneSpec synth_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("synth spec: {}", e.what()));
  }
  try {
    SynthSceneSpec s;
    if (j.contains("random_layout")) {
      s = random_scene_spec(j.value("seed", std::uint64_t{0}), random_params_from(j["random_layout"]));
    }
    s.scene_id = j.value("scene_id", s.scene_id);
    if (j.contains("room_min")) s.room_min = vec_from(j["room_min"], "room_min");
    if (j.contains("room_max")) s.room_max = vec_from(j["room_max"], "room_max");
    if (j.contains("objects")) {
      s.objects.clear();
      for (size_t i = 0; i < j["objects"].size(); ++i) {
        s.objects.push_back(box_from(j["objects"][i], fmt::format("objects[{}]", i)));
      }
    }
    if (j.contains("instance_names")) s.instance_names = j["instance_names"].get<std::vector<std::string>>();
    if (j.contains("occluders")) {
      s.occluders.clear();
      for (size_t i = 0; i < j["occluders"].size(); ++i) {
        SynthBox b = box_from(j["occluders"][i], fmt::format("occluders[{}]", i));
        b.instance_id = 0;
        s.occluders.push_back(b);
      }
    }
    s.grid_spacing = j.value("grid_spacing", s.grid_spacing);
    s.rotation_step = j.value("rotation_step", s.rotation_step);
    if (j.contains("grid")) {
      const auto& g = j["grid"];
      s.grid = GridSpec{g.at("x0").get<double>(), g.at("y0").get<double>(), g.at("nx").get<int>(),
                        g.at("ny").get<int>()};
    }
    s.grid_margin = j.value("grid_margin", s.grid_margin);
    s.camera_clearance = j.value("camera_clearance", s.camera_clearance);
    s.camera_height = j.value("camera_height", s.camera_height);
    s.camera_pitch = j.value("camera_pitch", s.camera_pitch);
    if (j.contains("intrinsics")) {
      const auto& k = j["intrinsics"];
      s.intrinsics.fx = k.value("fx", s.intrinsics.fx);
      s.intrinsics.fy = k.value("fy", s.intrinsics.fy);
      s.intrinsics.cx = k.value("cx", s.intrinsics.cx);
      s.intrinsics.cy = k.value("cy", s.intrinsics.cy);
      s.intrinsics.width = k.value("width", s.intrinsics.width);
      s.intrinsics.height = k.value("height", s.intrinsics.height);
    }
    s.seed = j.value("seed", s.seed);
    s.surface_pitch = j.value("surface_pitch", s.surface_pitch);
    s.rgb_noise_sigma = j.value("rgb_noise_sigma", s.rgb_noise_sigma);
    if (j.contains("room_colors")) {
      if (j["room_colors"].size() != 6) throw UserError("synth spec: room_colors needs 6 colors");
      for (int i = 0; i < 6; ++i) s.room_colors[i] = color_from(j["room_colors"][i], "room_colors");
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw UserError(fmt::format("synth spec: {}", e.what()));
  }
}

std::string synth_spec_to_json(const SynthSceneSpec& s) {
  ordered_json j;
  j["scene_id"] = s.scene_id;
  j["room_min"] = vec_json(s.room_min);
  j["room_max"] = vec_json(s.room_max);
  j["objects"] = ordered_json::array();
  for (const auto& b : s.objects) j["objects"].push_back(box_json(b, true));
  j["instance_names"] = s.instance_names;
  j["occluders"] = ordered_json::array();
  for (const auto& b : s.occluders) j["occluders"].push_back(box_json(b, false));
  j["grid_spacing"] = s.grid_spacing;
  j["rotation_step"] = s.rotation_step;
  if (s.grid) j["grid"] = {{"x0", s.grid->x0}, {"y0", s.grid->y0}, {"nx", s.grid->nx}, {"ny", s.grid->ny}};
  j["grid_margin"] = s.grid_margin;
  j["camera_clearance"] = s.camera_clearance;
  j["camera_height"] = s.camera_height;
  j["camera_pitch"] = s.camera_pitch;
  const auto& k = s.intrinsics;
  j["intrinsics"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width},
                     {"height", k.height}};
  j["seed"] = s.seed;
  j["surface_pitch"] = s.surface_pitch;
  j["rgb_noise_sigma"] = s.rgb_noise_sigma;
  j["room_colors"] = ordered_json::array();
  for (const auto& c : s.room_colors) j["room_colors"].push_back(color_json(c));
  return j.dump(2) + "\n";
}

RenderedView render_view(const SynthSceneSpec& spec, const ScenePose& pose, const RenderOptions& opt) {
  const PinholeCamera cam(pose);
  const Intrinsics& k = pose.intrinsics;
  RenderedView out{make_rgb(k.width, k.height), Image<float>(k.width, k.height, 1),
                   Image<std::int32_t>(k.width, k.height, 1)};
  Image<double> zbuf(k.width, k.height, 1);
  std::fill(zbuf.data().begin(), zbuf.data().end(), std::numeric_limits<double>::infinity());
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      for (int c = 0; c < 3; ++c) out.rgb.at(x, y, c) = opt.background[c];
    }
  }

  // World ray through pixel (x, y) with unit camera depth: d = r0 + x' * rx + y' * ry.
  const Mat3& r = cam.world_from_camera();
  const Vec3 rx = r.col(0) / k.fx;
  const Vec3 ry = r.col(1) / k.fy;
  const Vec3 r0 = r.col(2) + rx * (0.5 - k.cx) + ry * (0.5 - k.cy);
  const Vec3& c0 = cam.position();

  for (const Face& f : scene_faces(spec, opt)) {
    const PixelRect rect = face_rect(f, cam);
    const int a = f.axis;
    const int a1 = (a + 1) % 3;
    const int a2 = (a + 2) % 3;
    const double num = f.coord - c0[a];
    for (int y = rect.y0; y < rect.y1; ++y) {
      const Vec3 row = r0 + ry * y;
      for (int x = rect.x0; x < rect.x1; ++x) {
        const Vec3 d = row + rx * x;
        if (std::abs(d[a]) < 1e-15) continue;
        const double t = num / d[a];  // camera-frame depth of the hit
        if (!(t > 0.0) || t >= zbuf.at(x, y)) continue;
        const double h1 = c0[a1] + t * d[a1];
        const double h2 = c0[a2] + t * d[a2];
        if (h1 < f.lo[a1] || h1 > f.hi[a1] || h2 < f.lo[a2] || h2 > f.hi[a2]) continue;
        zbuf.at(x, y) = t;
        out.depth.at(x, y) = static_cast<float>(t);
        out.label.at(x, y) = f.label;
        for (int c = 0; c < 3; ++c) out.rgb.at(x, y, c) = f.color[c];
      }
    }
  }

  if (opt.noise_sigma > 0.0) {
    std::mt19937_64 rng(opt.noise_seed);
    std::normal_distribution<double> noise(0.0, opt.noise_sigma);
    for (auto& v : out.rgb.data()) {
      v = static_cast<std::uint8_t>(std::clamp(std::lround(v + noise(rng)), 0L, 255L));
    }
  }
  return out;
}

std::vector<Vec3> camera_positions(const SynthSceneSpec& spec) {
  std::vector<Vec3> out;
  for (const auto& [index, p] : grid_points(spec)) out.push_back(p);
  return out;
}

std::vector<ScenePose> synth_poses(const SynthSceneSpec& spec) {
  spec.validate();
  const auto points = grid_points(spec);
  if (points.empty()) {
    throw UserError(fmt::format("synth spec {}: no camera grid points inside the room", spec.scene_id));
  }
  const int steps = static_cast<int>(std::lround(360.0 / spec.rotation_step));
  std::vector<Quat> orientations;
  for (int s = 0; s < steps; ++s) {
    Quat q = level_camera_orientation(s * spec.rotation_step, spec.camera_pitch);
    orientations.emplace_back(quantize_decimal(q.w()), quantize_decimal(q.x()),
                              quantize_decimal(q.y()), quantize_decimal(q.z()));
  }
  std::vector<ScenePose> poses;
  poses.reserve(points.size() * steps);
  for (const auto& [index, p] : points) {
    for (int s = 0; s < steps; ++s) {
      ScenePose pose;
      pose.frame_id = fmt::format("p{:04d}_y{:03d}", index, static_cast<int>(std::lround(s * spec.rotation_step)));
      pose.position = p;
      pose.orientation = orientations[s];
      pose.intrinsics = spec.intrinsics;
      poses.push_back(std::move(pose));
    }
  }
  return poses;
}

PointCloud sample_instance_cloud(const SynthSceneSpec& spec, int instance_id) {
  PointCloud cloud;
  cloud.instance_id = instance_id;
  for (const auto& b : spec.objects) {
    if (b.instance_id != instance_id) continue;
    const Vec3 lo = b.min(), hi = b.max();
    for (int axis = 0; axis < 3; ++axis) {
      sample_face_points(lo, hi, axis, lo[axis], spec.surface_pitch, cloud.points);
      sample_face_points(lo, hi, axis, hi[axis], spec.surface_pitch, cloud.points);
    }
  }
  if (cloud.points.empty()) throw UserError(fmt::format("synth spec: no instance {}", instance_id));
  return cloud;
}

SynthScene generate_scene(const SynthSceneSpec& spec, const GenerateOptions& options) {
  const auto poses = synth_poses(spec);
  const auto ids = spec.instance_ids();

  SceneManifest m;
  m.scene_id = spec.scene_id;
  m.scan_id = fmt::format("seed{}", spec.seed);
  m.frames = poses;
  for (size_t i = 0; i < ids.size(); ++i) {
    const std::string name =
        i < spec.instance_names.size() ? spec.instance_names[i] : fmt::format("object_{}", ids[i]);
    m.instances.push_back(InstanceRecord{ids[i], name, true});
  }
  std::vector<PointCloud> clouds;
  for (int id : ids) clouds.push_back(sample_instance_cloud(spec, id));

  std::vector<RGBDFrame> frames;
  std::vector<std::vector<VisibilityRecord>> per_frame(poses.size());
  if (options.render) {
    frames.resize(poses.size());
    parallel_for(
        poses.size(),
        [&](size_t i) {
          RenderOptions ro;
          ro.noise_sigma = spec.rgb_noise_sigma;
          ro.noise_seed = spec.seed * 1000003ULL + i;
          const RenderedView view = render_view(spec, poses[i], ro);
          RGBDFrame& f = frames[i];
          f.frame_id = poses[i].frame_id;
          f.rgb = view.rgb;
          f.depth = make_depth(view.depth.width(), view.depth.height());
          std::map<int, VisibilityRecord> vis;
          for (int y = 0; y < view.depth.height(); ++y) {
            for (int x = 0; x < view.depth.width(); ++x) {
              f.depth.at(x, y) = depth_millimeters(view.depth.at(x, y));
              const int id = view.label.at(x, y);
              if (id == 0) continue;
              auto [it, fresh] = vis.try_emplace(id);
              VisibilityRecord& rec = it->second;
              if (fresh) {
                rec.frame_id = f.frame_id;
                rec.instance_id = id;
                rec.box = BoundingBox{x, y, x + 1, y + 1, id, 0};
              }
              ++rec.pixel_count;
              rec.box.xmin = std::min(rec.box.xmin, x);
              rec.box.ymin = std::min(rec.box.ymin, y);
              rec.box.xmax = std::max(rec.box.xmax, x + 1);
              rec.box.ymax = std::max(rec.box.ymax, y + 1);
            }
          }
          for (auto& [id, rec] : vis) per_frame[i].push_back(rec);
        },
        options.threads > 0 ? options.threads : default_thread_count());
  }

  SynthScene out{MemoryScene(std::move(m), std::move(frames), std::move(clouds)), {}};
  for (auto& v : per_frame) {
    out.visibility.insert(out.visibility.end(), v.begin(), v.end());
  }
  return out;
}

std::string visibility_to_json(const std::vector<VisibilityRecord>& records) {
  ordered_json j = ordered_json::array();
  for (const auto& r : records) {
    ordered_json e;
    e["frame_id"] = r.frame_id;
    e["instance_id"] = r.instance_id;
    e["pixel_count"] = r.pixel_count;
    e["xmin"] = r.box.xmin;
    e["ymin"] = r.box.ymin;
    e["xmax"] = r.box.xmax;
    e["ymax"] = r.box.ymax;
    j.push_back(e);
  }
  return j.dump(1) + "\n";
}

std::vector<VisibilityRecord> visibility_from_json(const std::string& text) {
  std::vector<VisibilityRecord> out;
  try {
    const json j = json::parse(text);
    for (const auto& e : j) {
      VisibilityRecord r;
      r.frame_id = e.at("frame_id").get<std::string>();
      r.instance_id = e.at("instance_id").get<int>();
      r.pixel_count = e.at("pixel_count").get<int>();
      r.box = BoundingBox{e.at("xmin").get<int>(), e.at("ymin").get<int>(), e.at("xmax").get<int>(),
                          e.at("ymax").get<int>(), r.instance_id, 0};
      out.push_back(r);
    }
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("visibility table record {}: {}", out.size(), e.what()));
  }
  return out;
}

DepthImage corrupt_depth(const DepthImage& depth, double zero_fraction, double inflate_fraction,
                         std::uint64_t seed, double inflate_min, double inflate_max) {
  if (!(zero_fraction >= 0.0 && zero_fraction <= 1.0) || !(inflate_fraction >= 0.0 && inflate_fraction <= 1.0)) {
    throw UserError("corrupt_depth: fractions must lie in [0, 1]");
  }
  if (zero_fraction + inflate_fraction > 1.0 + 1e-12) {
    throw UserError(fmt::format("corrupt_depth: fractions sum to {} > 1", zero_fraction + inflate_fraction));
  }
  if (!(inflate_min > 1.0) || inflate_max < inflate_min) {
    throw UserError("corrupt_depth: inflation factors must satisfy 1 < min <= max");
  }
  DepthImage out = depth;
  auto px = out.data();
  std::vector<size_t> valid;
  for (size_t i = 0; i < px.size(); ++i) {
    if (px[i] != 0) valid.push_back(i);
  }
  const auto n_zero = static_cast<size_t>(std::floor(zero_fraction * valid.size() + 1e-9));
  const auto n_inflate =
      std::min(valid.size() - n_zero, static_cast<size_t>(std::floor(inflate_fraction * valid.size() + 1e-9)));
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first n_zero + n_inflate slots become a random subset.
  for (size_t i = 0; i < n_zero + n_inflate; ++i) {
    std::uniform_int_distribution<size_t> pick(i, valid.size() - 1);
    std::swap(valid[i], valid[pick(rng)]);
  }
  std::uniform_real_distribution<double> factor(inflate_min, inflate_max);
  for (size_t i = 0; i < n_zero; ++i) px[valid[i]] = 0;
  for (size_t i = n_zero; i < n_zero + n_inflate; ++i) {
    const double f = factor(rng);
    const double mm = std::ceil(px[valid[i]] * f);  // strictly larger for any factor > 1
    px[valid[i]] = static_cast<std::uint16_t>(std::min<double>(mm, kMaxDepthMm));
  }
  return out;
}

RayVisibility raycast_visibility(const Vec3& point, const ScenePose& pose, const SynthSceneSpec& spec) {
  const PinholeCamera cam(pose);
  const auto proj = cam.project(point);
  const Intrinsics& k = pose.intrinsics;
  if (!proj || proj->u < 0.0 || proj->v < 0.0 || proj->u >= k.width || proj->v >= k.height) {
    return RayVisibility::kOutOfView;
  }
  const double length = (point - cam.position()).norm();
  if (length < 1e-12) return RayVisibility::kVisible;
  const double tol = 1e-7 / length;  // ignore contact shorter than 0.1 um
  for (const auto* list : {&spec.objects, &spec.occluders}) {
    for (const auto& b : *list) {
      const auto hit = segment_box(cam.position(), point, b.min(), b.max());
      if (!hit) continue;
      const double t0 = std::max(hit->first, 0.0);
      const double t1 = std::min(hit->second, 1.0 - tol);
      if (t1 - t0 > tol) return RayVisibility::kOccluded;
    }
  }
  return RayVisibility::kVisible;
}

SynthSceneSpec random_scene_spec(std::uint64_t seed, const RandomSceneParams& p) {
  if (p.instances < 0 || p.occluders < 0 || p.grid_nx < 1 || p.grid_ny < 1) {
    throw UserError("random scene: counts must be non-negative and the grid non-empty");
  }
  if (!(p.min_object_size > 0.0) || p.max_object_size < p.min_object_size ||
      p.max_object_z < p.min_object_z) {
    throw UserError("random scene: invalid object size or height range");
  }
  SynthSceneSpec s;
  s.scene_id = fmt::format("random_{}", seed);
  s.seed = seed;
  s.room_max = Vec3(p.room_x, p.room_y, p.room_z);
  GridSpec g;
  g.nx = p.grid_nx;
  g.ny = p.grid_ny;
  g.x0 = quantize_decimal((p.room_x - (p.grid_nx - 1) * s.grid_spacing) / 2.0);
  g.y0 = quantize_decimal((p.room_y - (p.grid_ny - 1) * s.grid_spacing) / 2.0);
  s.grid = g;

  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto q = [](double v) { return quantize_decimal(v); };
  auto fits = [&](const SynthBox& b) {
    if (!box_contains(s.room_min, s.room_max, b.min(), -p.gap) ||
        !box_contains(s.room_min, s.room_max, b.max(), -p.gap)) {
      return false;
    }
    for (const auto* list : {&s.objects, &s.occluders}) {
      for (const auto& o : *list) {
        if (box_gap(o, b) < p.gap) return false;
      }
    }
    return true;
  };

  constexpr int kMaxTries = 10000;
  for (int i = 0; i < p.occluders; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxTries) throw UserError("random scene: could not place occluders");
      SynthBox b;
      const bool along_x = uni(0.0, 1.0) < 0.5;
      const double len = uni(0.6, 1.2);
      const double height = uni(1.4, std::min(2.0, p.room_z - p.gap));
      b.size = Vec3(q(along_x ? len : 0.05), q(along_x ? 0.05 : len), q(height));
      b.center = Vec3(q(uni(0.0, p.room_x)), q(uni(0.0, p.room_y)), q(height / 2.0 + p.gap));
      const auto grey = static_cast<std::uint8_t>(uni(90.0, 180.0));
      b.color = Color{grey, grey, grey};
      if (fits(b)) {
        s.occluders.push_back(b);
        break;
      }
    }
  }
  for (int i = 0; i < p.instances; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxTries) throw UserError("random scene: could not place objects");
      SynthBox b;
      b.instance_id = i + 1;
      b.size = Vec3(q(uni(p.min_object_size, p.max_object_size)), q(uni(p.min_object_size, p.max_object_size)),
                    q(uni(p.min_object_size, p.max_object_size)));
      b.center = Vec3(q(uni(0.0, p.room_x)), q(uni(0.0, p.room_y)), q(uni(p.min_object_z, p.max_object_z)));
      for (auto& c : b.color) c = static_cast<std::uint8_t>(uni(30.0, 250.0));
      if (fits(b)) {
        s.objects.push_back(b);
        s.instance_names.push_back(fmt::format("object_{}", b.instance_id));
        break;
      }
    }
  }
  return s;
}

}  // namespace avsim
