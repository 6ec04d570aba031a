#include "avsim/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "avsim/image_io.hpp"

namespace avsim {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kSceneFile = "scene.json";
constexpr const char* kPosesFile = "poses.jsonl";
constexpr const char* kAnnotationsFile = "annotations.json";
constexpr const char* kMoveGraphFile = "movegraph.json";

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create directory {}: {}", dir.string(), ec.message()));
}

std::string pose_record(const ScenePose& p) {
  const Intrinsics& k = p.intrinsics;
  const Quat& q = p.orientation;
  return fmt::format(
      "{{\"frame_id\":{},\"position\":[{},{},{}],\"quaternion\":[{},{},{},{}],"
      "\"intrinsics\":{{\"fx\":{},\"fy\":{},\"cx\":{},\"cy\":{},\"width\":{},\"height\":{}}}}}",
      nlohmann::json(p.frame_id).dump(), format_decimal(p.position.x()),
      format_decimal(p.position.y()), format_decimal(p.position.z()), format_decimal(q.w()),
      format_decimal(q.x()), format_decimal(q.y()), format_decimal(q.z()), format_decimal(k.fx),
      format_decimal(k.fy), format_decimal(k.cx), format_decimal(k.cy), k.width, k.height);
}

ScenePose parse_pose_record(const std::string& line, size_t index) {
  auto fail = [&](const std::string& why) -> ParseError {
    return ParseError(fmt::format("{} record {}: {}", kPosesFile, index, why));
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  ScenePose pose;
  try {
    pose.frame_id = j.at("frame_id").get<std::string>();
    const auto& pos = j.at("position");
    const auto& quat = j.at("quaternion");
    if (pos.size() != 3) throw fail("position must have 3 entries");
    if (quat.size() != 4) throw fail("quaternion must have 4 entries [w,x,y,z]");
    pose.position = Vec3(pos[0].get<double>(), pos[1].get<double>(), pos[2].get<double>());
    pose.orientation = Quat(quat[0].get<double>(), quat[1].get<double>(), quat[2].get<double>(),
                            quat[3].get<double>());
    const auto& k = j.at("intrinsics");
    pose.intrinsics.fx = k.at("fx").get<double>();
    pose.intrinsics.fy = k.at("fy").get<double>();
    pose.intrinsics.cx = k.at("cx").get<double>();
    pose.intrinsics.cy = k.at("cy").get<double>();
    pose.intrinsics.width = k.at("width").get<int>();
    pose.intrinsics.height = k.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  const double norm = pose.orientation.norm();
  if (!std::isfinite(norm) || std::abs(norm - 1.0) > 1e-3) {
    throw IntegrityError(fmt::format("{} record {} ({}): quaternion norm {} deviates from 1",
                                     kPosesFile, index, pose.frame_id, norm));
  }
  if (!pose.position.allFinite()) throw fail("non-finite position");
  try {
    pose.intrinsics.validate();
  } catch (const UserError& e) {
    throw fail(e.what());
  }
  return pose;
}

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(fmt::format("missing file: {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  out << text;
  out.flush();
  if (!out) throw IoError(fmt::format("write failed: {}", path.string()));
}


std::vector<std::string> SceneManifest::frame_ids() const {
  std::vector<std::string> ids;
  ids.reserve(frames.size());
  for (const auto& f : frames) ids.push_back(f.frame_id);
  return ids;
}

fs::path rgb_path(const std::string& frame_id) { return fs::path("rgb") / (frame_id + ".png"); }
fs::path depth_path(const std::string& frame_id) {
  return fs::path("depth") / (frame_id + ".png");
}
fs::path cloud_path(int instance_id) {
  return fs::path("instances") / fmt::format("{}.ply", instance_id);
}
fs::path fused_depth_path(const std::string& frame_id) {
  return fs::path("depth_fused") / (frame_id + ".png");
}

std::string format_decimal(double x) {
  if (x == 0.0) return "0";  // folds -0
  return fmt::format("{:.9g}", x);
}

double quantize_decimal(double x) { return std::strtod(format_decimal(x).c_str(), nullptr); }

std::map<std::string, std::string> serialize_metadata(const SceneManifest& m) {
  std::map<std::string, std::string> files;

  ordered_json scene;
  scene["scene_id"] = m.scene_id;
  scene["scan_id"] = m.scan_id;
  scene["instances"] = ordered_json::array();
  for (const auto& inst : m.instances) {
    ordered_json cloud = inst.has_cloud ? ordered_json(cloud_path(inst.instance_id).generic_string())
                                        : ordered_json(nullptr);
    scene["instances"].push_back(
        {{"instance_id", inst.instance_id}, {"name", inst.name}, {"cloud", cloud}});
  }
  files[kSceneFile] = scene.dump(2) + "\n";

  std::string poses;
  for (const auto& p : m.frames) poses += pose_record(p) + "\n";
  files[kPosesFile] = poses;

  ordered_json ann = ordered_json::array();
  for (const auto& a : m.annotations) {
    ann.push_back({{"frame_id", a.frame_id},
                   {"instance_id", a.instance_id},
                   {"xmin", a.box.xmin},
                   {"ymin", a.box.ymin},
                   {"xmax", a.box.xmax},
                   {"ymax", a.box.ymax},
                   {"difficulty", a.difficulty},
                   {"visible_point_count", a.visible_point_count}});
  }
  files[kAnnotationsFile] = ann.dump(1) + "\n";

  if (m.move_graph) {
    ordered_json edges = ordered_json::array();
    for (const auto& e : m.move_graph->edges()) {
      edges.push_back({{"frame_id", e.frame_id},
                       {"action", std::string(action_name(e.action))},
                       {"target_frame_id", e.target_frame_id}});
    }
    files[kMoveGraphFile] = edges.dump(1) + "\n";
  }
  return files;
}

bool manifests_equal(const SceneManifest& a, const SceneManifest& b) {
  return serialize_metadata(a) == serialize_metadata(b);
}

void check_manifest(const SceneManifest& m) {
  std::set<std::string> ids;
  for (const auto& f : m.frames) {
    if (!ids.insert(f.frame_id).second) {
      throw IntegrityError(fmt::format("duplicate frame_id: {}", f.frame_id));
    }
    if (std::abs(f.orientation.norm() - 1.0) > 1e-3) {
      throw IntegrityError(fmt::format("frame {}: quaternion norm {} deviates from 1", f.frame_id,
                                       f.orientation.norm()));
    }
  }
  std::set<int> instances;
  for (const auto& inst : m.instances) {
    if (!instances.insert(inst.instance_id).second) {
      throw IntegrityError(fmt::format("duplicate instance_id: {}", inst.instance_id));
    }
  }
  for (size_t i = 0; i < m.annotations.size(); ++i) {
    const auto& a = m.annotations[i];
    if (!ids.count(a.frame_id)) {
      throw IntegrityError(
          fmt::format("annotation {}: unknown frame_id {}", i, a.frame_id));
    }
    if (!instances.count(a.instance_id)) {
      throw IntegrityError(
          fmt::format("annotation {}: unknown instance_id {}", i, a.instance_id));
    }
  }
  if (m.move_graph) {
    for (const auto& e : m.move_graph->edges()) {
      if (!ids.count(e.frame_id) || !ids.count(e.target_frame_id)) {
        throw IntegrityError(fmt::format("movegraph: dangling pointer {} --{}--> {}", e.frame_id,
                                         action_name(e.action), e.target_frame_id));
      }
    }
  }
}

// FrameSource

const ScenePose& FrameSource::pose(const std::string& frame_id) const {
  auto it = index_.find(frame_id);
  if (it == index_.end()) throw UserError(fmt::format("unknown frame_id: {}", frame_id));
  return manifest().frames[it->second];
}

bool FrameSource::has_frame(const std::string& frame_id) const {
  return index_.count(frame_id) > 0;
}

void FrameSource::rebuild_index() {
  index_.clear();
  const auto& frames = manifest().frames;
  for (size_t i = 0; i < frames.size(); ++i) index_[frames[i].frame_id] = i;
}

// MemoryScene

MemoryScene::MemoryScene(SceneManifest manifest, std::vector<RGBDFrame> frames,
                         std::vector<PointCloud> clouds)
    : manifest_(std::move(manifest)), frames_(std::move(frames)), clouds_(std::move(clouds)) {
  rebuild_index();
  for (size_t i = 0; i < frames_.size(); ++i) frame_slot_[frames_[i].frame_id] = i;
}

const RGBDFrame& MemoryScene::frame(const std::string& frame_id) const {
  auto it = frame_slot_.find(frame_id);
  if (it == frame_slot_.end()) throw UserError(fmt::format("unknown frame_id: {}", frame_id));
  return frames_[it->second];
}

RgbImage MemoryScene::rgb(const std::string& frame_id) const { return frame(frame_id).rgb; }
DepthImage MemoryScene::depth(const std::string& frame_id) const { return frame(frame_id).depth; }

void MemoryScene::set_depth(const std::string& frame_id, DepthImage depth) {
  auto it = frame_slot_.find(frame_id);
  if (it == frame_slot_.end()) throw UserError(fmt::format("unknown frame_id: {}", frame_id));
  frames_[it->second].depth = std::move(depth);
}

PointCloud MemoryScene::cloud(int instance_id) const {
  for (const auto& c : clouds_) {
    if (c.instance_id == instance_id) return c;
  }
  throw UserError(fmt::format("unknown instance_id: {}", instance_id));
}

// DiskScene

DiskScene::DiskScene(fs::path root, SceneManifest manifest)
    : root_(std::move(root)), manifest_(std::move(manifest)) {
  rebuild_index();
}

RgbImage DiskScene::rgb(const std::string& frame_id) const {
  pose(frame_id);
  return read_png_rgb(root_ / rgb_path(frame_id));
}

DepthImage DiskScene::depth(const std::string& frame_id) const {
  pose(frame_id);
  return read_png_depth(root_ / depth_path(frame_id));
}

std::optional<DepthImage> DiskScene::fused_depth(const std::string& frame_id) const {
  const fs::path p = root_ / fused_depth_path(frame_id);
  if (!fs::exists(p)) return std::nullopt;
  return read_png_depth(p);
}

PointCloud DiskScene::cloud(int instance_id) const {
  return read_cloud(root_ / cloud_path(instance_id), instance_id);
}

// Point clouds

void write_cloud(const fs::path& path, const PointCloud& cloud) {
  std::string text = fmt::format(
      "ply\nformat ascii 1.0\ncomment instance_id {}\nelement vertex {}\nproperty double x\n"
      "property double y\nproperty double z\nend_header\n",
      cloud.instance_id, cloud.points.size());
  for (const auto& p : cloud.points) {
    text += fmt::format("{} {} {}\n", format_decimal(p.x()), format_decimal(p.y()),
                        format_decimal(p.z()));
  }
  write_text(path, text);
}

PointCloud read_cloud(const fs::path& path, int instance_id) {
  std::istringstream in(read_text(path));
  std::string line;
  size_t vertex_count = 0;
  bool header_done = false;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("element vertex", 0) == 0) {
      vertex_count = std::stoul(line.substr(15));
    } else if (line == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) throw ParseError(fmt::format("{}: missing PLY header", path.string()));
  PointCloud cloud;
  cloud.instance_id = instance_id;
  cloud.points.reserve(vertex_count);
  for (size_t i = 0; i < vertex_count; ++i) {
    ++line_no;
    if (!std::getline(in, line)) {
      throw ParseError(fmt::format("{}: expected {} points, found {}", path.string(),
                                   vertex_count, i));
    }
    double x, y, z;
    if (std::sscanf(line.c_str(), "%lf %lf %lf", &x, &y, &z) != 3) {
      throw ParseError(fmt::format("{} line {}: malformed point", path.string(), line_no));
    }
    cloud.points.emplace_back(x, y, z);
  }
  return cloud;
}

// Load / save

std::unique_ptr<DiskScene> load_scene(const fs::path& root) {
  SceneManifest m;

  const std::string scene_text = read_text(root / kSceneFile);
  try {
    const auto j = nlohmann::json::parse(scene_text);
    m.scene_id = j.at("scene_id").get<std::string>();
    m.scan_id = j.value("scan_id", std::string());
    size_t i = 0;
    for (const auto& inst : j.at("instances")) {
      InstanceRecord r;
      try {
        r.instance_id = inst.at("instance_id").get<int>();
        r.name = inst.value("name", std::string());
        r.has_cloud = !inst.contains("cloud") || !inst.at("cloud").is_null();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(fmt::format("{} instance record {}: {}", kSceneFile, i, e.what()));
      }
      m.instances.push_back(std::move(r));
      ++i;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("{}: {}", kSceneFile, e.what()));
  }

  std::istringstream poses(read_text(root / kPosesFile));
  std::string line;
  size_t index = 0;
  while (std::getline(poses, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    m.frames.push_back(parse_pose_record(line, index));
    ++index;
  }

  const fs::path ann_path = root / kAnnotationsFile;
  if (fs::exists(ann_path)) {
    try {
      const auto j = nlohmann::json::parse(read_text(ann_path));
      size_t i = 0;
      for (const auto& r : j) {
        try {
          InstanceAnnotation a;
          a.frame_id = r.at("frame_id").get<std::string>();
          a.instance_id = r.at("instance_id").get<int>();
          a.box.xmin = r.at("xmin").get<int>();
          a.box.ymin = r.at("ymin").get<int>();
          a.box.xmax = r.at("xmax").get<int>();
          a.box.ymax = r.at("ymax").get<int>();
          a.difficulty = r.at("difficulty").get<int>();
          a.visible_point_count = r.at("visible_point_count").get<int>();
          a.box.instance_id = a.instance_id;
          a.box.difficulty = a.difficulty;
          m.annotations.push_back(std::move(a));
        } catch (const nlohmann::json::exception& e) {
          throw ParseError(fmt::format("{} record {}: {}", kAnnotationsFile, i, e.what()));
        }
        ++i;
      }
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(fmt::format("{}: {}", kAnnotationsFile, e.what()));
    }
  }

  const fs::path graph_path = root / kMoveGraphFile;
  if (fs::exists(graph_path)) {
    MoveGraph graph;
    try {
      const auto j = nlohmann::json::parse(read_text(graph_path));
      size_t i = 0;
      for (const auto& r : j) {
        try {
          graph.set(r.at("frame_id").get<std::string>(),
                    parse_action(r.at("action").get<std::string>()),
                    r.at("target_frame_id").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
          throw ParseError(fmt::format("{} record {}: {}", kMoveGraphFile, i, e.what()));
        } catch (const UserError& e) {
          throw ParseError(fmt::format("{} record {}: {}", kMoveGraphFile, i, e.what()));
        }
        ++i;
      }
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(fmt::format("{}: {}", kMoveGraphFile, e.what()));
    }
    m.move_graph = std::move(graph);
  }

  check_manifest(m);

  for (const auto& f : m.frames) {
    for (const fs::path& rel : {rgb_path(f.frame_id), depth_path(f.frame_id)}) {
      if (!fs::exists(root / rel)) {
        throw LoadError(fmt::format("missing file: {}", (root / rel).string()));
      }
    }
  }
  for (const auto& inst : m.instances) {
    if (!inst.has_cloud) continue;
    const fs::path p = root / cloud_path(inst.instance_id);
    if (!fs::exists(p)) throw LoadError(fmt::format("missing file: {}", p.string()));
  }

  return std::make_unique<DiskScene>(root, std::move(m));
}

void save_metadata(const SceneManifest& manifest, const fs::path& root) {
  check_manifest(manifest);
  ensure_dir(root);
  for (const auto& [name, text] : serialize_metadata(manifest)) write_text(root / name, text);
  if (!manifest.move_graph) {
    std::error_code ec;
    fs::remove(root / kMoveGraphFile, ec);
  }
}

void save_scene(const SceneManifest& manifest, const FrameSource& frames, const fs::path& root) {
  check_manifest(manifest);
  ensure_dir(root / "rgb");
  ensure_dir(root / "depth");
  ensure_dir(root / "instances");
  save_metadata(manifest, root);
  for (const auto& f : manifest.frames) {
    const RgbImage rgb = frames.rgb(f.frame_id);
    const DepthImage depth = frames.depth(f.frame_id);
    if (rgb.width() != f.intrinsics.width || rgb.height() != f.intrinsics.height ||
        depth.width() != f.intrinsics.width || depth.height() != f.intrinsics.height) {
      throw IntegrityError(fmt::format("frame {}: image size does not match intrinsics",
                                       f.frame_id));
    }
    write_png(root / rgb_path(f.frame_id), rgb);
    write_png(root / depth_path(f.frame_id), depth);
  }
  for (const auto& inst : manifest.instances) {
    if (!inst.has_cloud) continue;
    write_cloud(root / cloud_path(inst.instance_id), frames.cloud(inst.instance_id));
  }
}

}  // namespace avsim
