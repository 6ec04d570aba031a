// Adapters from external scene layouts into the canonical layout.
//
// colmap-text: a COLMAP sparse model exported as text (cameras.txt, images.txt)
//   with color images under images/<NAME> and registered depth maps under
//   depth/<stem>.png.
// avd: the public active-vision dataset layout: COLMAP text model at the root,
//   color under jpg_rgb/<NAME>, depth under high_res_depth/<stem with the
//   trailing "01" replaced by "03">.png, and annotations.json mapping each image
//   name to its bounding boxes [xmin, ymin, xmax, ymax, instance_id, difficulty]
//   and movement pointers. instance_id_map.txt ("name id" lines) is optional.

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "avsim/dataset.hpp"
#include "avsim/image_io.hpp"

namespace avsim {

namespace fs = std::filesystem;

namespace {

struct ExternalImage {
  std::string name;
  int camera_id = 0;
  ScenePose pose;
};

std::vector<std::string> data_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(fmt::format("missing file: {}", path.string()));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

std::map<int, Intrinsics> read_colmap_cameras(const fs::path& root) {
  const fs::path path = root / "cameras.txt";
  if (!fs::exists(path)) {
    throw UserError(fmt::format("missing required metadata: intrinsics ({} not found)",
                                path.string()));
  }
  std::map<int, Intrinsics> cameras;
  size_t record = 0;
  for (const auto& line : data_lines(path)) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ss(line);
    int id = 0;
    std::string model;
    Intrinsics k;
    if (!(ss >> id >> model >> k.width >> k.height)) {
      throw ParseError(fmt::format("cameras.txt record {}: malformed camera line", record));
    }
    std::vector<double> params;
    for (double v; ss >> v;) params.push_back(v);
    if (model == "PINHOLE" && params.size() >= 4) {
      k.fx = params[0];
      k.fy = params[1];
      k.cx = params[2];
      k.cy = params[3];
    } else if (model == "SIMPLE_PINHOLE" && params.size() >= 3) {
      k.fx = k.fy = params[0];
      k.cx = params[1];
      k.cy = params[2];
    } else {
      throw UserError(fmt::format(
          "cameras.txt record {}: unsupported camera model {} (supported: PINHOLE, "
          "SIMPLE_PINHOLE)",
          record, model));
    }
    try {
      k.validate();
    } catch (const UserError& e) {
      throw ParseError(fmt::format("cameras.txt record {}: {}", record, e.what()));
    }
    cameras[id] = k;
    ++record;
  }
  return cameras;
}

std::vector<ExternalImage> read_colmap_images(const fs::path& root,
                                              const std::map<int, Intrinsics>& cameras) {
  const fs::path path = root / "images.txt";
  if (!fs::exists(path)) {
    throw UserError(fmt::format("missing required metadata: poses ({} not found)", path.string()));
  }
  const auto lines = data_lines(path);
  std::vector<ExternalImage> images;
  // Records are line pairs: the image line, then its 2D points line.
  for (size_t i = 0; i < lines.size(); i += 2) {
    if (lines[i].find_first_not_of(" \t") == std::string::npos) {
      --i;  // tolerate stray blank lines between records
      continue;
    }
    const size_t record = images.size();
    std::istringstream ss(lines[i]);
    int image_id = 0;
    double qw, qx, qy, qz, tx, ty, tz;
    ExternalImage img;
    if (!(ss >> image_id >> qw >> qx >> qy >> qz >> tx >> ty >> tz >> img.camera_id >> img.name)) {
      throw ParseError(fmt::format("images.txt record {}: malformed image line", record));
    }
    auto cam = cameras.find(img.camera_id);
    if (cam == cameras.end()) {
      throw UserError(fmt::format(
          "missing required metadata: intrinsics for camera_id {} (image {})", img.camera_id,
          img.name));
    }
    // COLMAP stores camera-from-world; the canonical pose is world-from-camera.
    Quat q_cw(qw, qx, qy, qz);
    if (std::abs(q_cw.norm() - 1.0) > 1e-3) {
      throw IntegrityError(
          fmt::format("images.txt record {}: quaternion norm {} deviates from 1", record, q_cw.norm()));
    }
    q_cw.normalize();
    img.pose.frame_id = fs::path(img.name).stem().string();
    img.pose.orientation = q_cw.conjugate();
    img.pose.position = -(img.pose.orientation * Vec3(tx, ty, tz));
    img.pose.intrinsics = cam->second;
    images.push_back(std::move(img));
  }
  return images;
}

DepthImage resample_nearest(const DepthImage& depth, int width, int height) {
  if (depth.width() == width && depth.height() == height) return depth;
  DepthImage out = make_depth(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(depth.height() - 1, y * depth.height() / height);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(depth.width() - 1, x * depth.width() / width);
      out.at(x, y) = depth.at(sx, sy);
    }
  }
  return out;
}

struct ExternalLayout {
  fs::path rgb_dir;
  fs::path depth_dir;
  std::string (*depth_stem)(const std::string&);
};

std::string same_stem(const std::string& s) { return s; }

std::string avd_depth_stem(const std::string& s) {
  if (s.size() >= 2 && s.compare(s.size() - 2, 2, "01") == 0) return s.substr(0, s.size() - 2) + "03";
  return s;
}

class ConvertedScene : public FrameSource {
 public:
  ConvertedScene(SceneManifest m, const fs::path& in_root, ExternalLayout layout,
                 std::map<std::string, std::string> names)
      : manifest_(std::move(m)), in_root_(in_root), layout_(layout), names_(std::move(names)) {
    rebuild_index();
  }
  const SceneManifest& manifest() const override { return manifest_; }
  RgbImage rgb(const std::string& frame_id) const override {
    return read_image_rgb(in_root_ / layout_.rgb_dir / names_.at(frame_id));
  }
  DepthImage depth(const std::string& frame_id) const override {
    const auto& k = pose(frame_id).intrinsics;
    const fs::path p = in_root_ / layout_.depth_dir / (layout_.depth_stem(frame_id) + ".png");
    return resample_nearest(read_png_depth(p), k.width, k.height);
  }
  PointCloud cloud(int instance_id) const override {
    throw UserError(fmt::format("instance {} has no point cloud", instance_id));
  }

 private:
  SceneManifest manifest_;
  fs::path in_root_;
  ExternalLayout layout_;
  std::map<std::string, std::string> names_;
};

void read_avd_annotations(const fs::path& in_root, SceneManifest& m,
                          const std::map<std::string, std::string>& name_to_frame) {
  const fs::path path = in_root / "annotations.json";
  if (!fs::exists(path)) {
    throw UserError(fmt::format("missing required metadata: {}", path.string()));
  }
  std::ifstream in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("annotations.json: {}", e.what()));
  }

  std::map<int, std::string> names;
  const fs::path map_path = in_root / "instance_id_map.txt";
  if (fs::exists(map_path)) {
    for (const auto& line : data_lines(map_path)) {
      std::istringstream ss(line);
      std::string name;
      int id;
      if (ss >> name >> id) names[id] = name;
    }
  }

  MoveGraph graph;
  std::set<int> instance_ids;
  for (const auto& [image_name, record] : j.items()) {
    auto frame = name_to_frame.find(image_name);
    if (frame == name_to_frame.end()) continue;  // annotated image without a pose
    for (const auto& b : record.value("bounding_boxes", nlohmann::json::array())) {
      if (b.size() < 5) {
        throw ParseError(fmt::format("annotations.json {}: box needs at least 5 entries", image_name));
      }
      InstanceAnnotation a;
      a.frame_id = frame->second;
      a.instance_id = b[4].get<int>();
      a.box = BoundingBox{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>(),
                          a.instance_id, b.size() > 5 ? b[5].get<int>() : 3};
      a.difficulty = a.box.difficulty;
      instance_ids.insert(a.instance_id);
      m.annotations.push_back(a);
    }
    for (Action action : kAllActions) {
      const std::string key(action_name(action));
      if (!record.contains(key) || !record[key].is_string()) continue;
      auto target = name_to_frame.find(record[key].get<std::string>());
      if (target != name_to_frame.end()) graph.set(frame->second, action, target->second);
    }
  }
  for (int id : instance_ids) {
    auto it = names.find(id);
    m.instances.push_back(
        InstanceRecord{id, it != names.end() ? it->second : fmt::format("instance_{}", id), false});
  }
  m.move_graph = std::move(graph);
}

}  // namespace

std::vector<std::string> supported_ingest_formats() { return {"avd", "colmap-text"}; }

SceneManifest ingest_external(const fs::path& in_root, const std::string& format_tag,
                              const fs::path& out_root) {
  ExternalLayout layout;
  if (format_tag == "colmap-text") {
    layout = ExternalLayout{"images", "depth", &same_stem};
  } else if (format_tag == "avd") {
    layout = ExternalLayout{"jpg_rgb", "high_res_depth", &avd_depth_stem};
  } else {
    throw UserError(fmt::format("unknown format tag '{}' (supported: avd, colmap-text)", format_tag));
  }

  const auto cameras = read_colmap_cameras(in_root);
  const auto images = read_colmap_images(in_root, cameras);

  SceneManifest m;
  m.scene_id = in_root.filename().string();
  if (m.scene_id.empty()) m.scene_id = in_root.parent_path().filename().string();
  m.scan_id = format_tag;
  std::map<std::string, std::string> frame_to_name;
  std::map<std::string, std::string> name_to_frame;
  for (const auto& img : images) {
    m.frames.push_back(img.pose);
    frame_to_name[img.pose.frame_id] = img.name;
    name_to_frame[img.name] = img.pose.frame_id;
  }
  if (format_tag == "avd") read_avd_annotations(in_root, m, name_to_frame);

  ConvertedScene source(m, in_root, layout, frame_to_name);
  save_scene(m, source, out_root);
  return m;
}

}  // namespace avsim
