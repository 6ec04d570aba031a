#pragma once

// Canonical on-disk scene layout:
//
//   scene.json              scene_id, scan_id, instance list
//   poses.jsonl             one record per frame: frame_id, position[3],
//                           quaternion[w,x,y,z], intrinsics
//   rgb/<frame_id>.png      8-bit RGB
//   depth/<frame_id>.png    16-bit single channel, millimeters, 0 = missing
//   instances/<id>.ply      ASCII point list, meters, world frame
//   annotations.json        list of {frame_id, instance_id, xmin, ymin, xmax,
//                           ymax, difficulty, visible_point_count}
//   movegraph.json          list of {frame_id, action, target_frame_id} (optional)
//
// Real numbers are written with 9 significant digits.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "avsim/annotation.hpp"
#include "avsim/geometry.hpp"
#include "avsim/image.hpp"
#include "avsim/move_graph.hpp"

namespace avsim {

struct InstanceRecord {
  int instance_id = 0;
  std::string name;
  /// False for ingested scenes that carry 2D labels but no 3D cloud.
  bool has_cloud = true;

  bool operator==(const InstanceRecord&) const = default;
};

struct SceneManifest {
  std::string scene_id;
  std::string scan_id;
  std::vector<ScenePose> frames;
  std::vector<InstanceRecord> instances;
  std::optional<MoveGraph> move_graph;
  std::vector<InstanceAnnotation> annotations;

  std::vector<std::string> frame_ids() const;
};

/// Canonical relative paths.
std::filesystem::path rgb_path(const std::string& frame_id);
std::filesystem::path depth_path(const std::string& frame_id);
std::filesystem::path cloud_path(int instance_id);
std::filesystem::path fused_depth_path(const std::string& frame_id);

/// Whole-file text I/O. read_text throws LoadError, write_text IoError;
/// write_text creates missing parent directories.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Rounds to the value that the 9-significant-digit text form parses back to.
double quantize_decimal(double x);
std::string format_decimal(double x);

/// Exact text of every metadata file the manifest serializes to.
std::map<std::string, std::string> serialize_metadata(const SceneManifest& manifest);

/// Equality of the serialized forms (numbers compared as decimal strings).
bool manifests_equal(const SceneManifest& a, const SceneManifest& b);

/// Cross-reference checks shared by loading and saving: unique frame ids,
/// annotation and move-graph references resolve, quaternion norms.
void check_manifest(const SceneManifest& manifest);

/// Read access to a scene's frames. Implementations index poses by frame_id.
class FrameSource {
 public:
  virtual ~FrameSource() = default;

  virtual const SceneManifest& manifest() const = 0;
  virtual RgbImage rgb(const std::string& frame_id) const = 0;
  virtual DepthImage depth(const std::string& frame_id) const = 0;
  virtual PointCloud cloud(int instance_id) const = 0;

  /// Throws UserError for unknown frame ids.
  const ScenePose& pose(const std::string& frame_id) const;
  bool has_frame(const std::string& frame_id) const;

 protected:
  void rebuild_index();

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

/// Fully in-memory scene (synthetic generation, tests).
class MemoryScene : public FrameSource {
 public:
  MemoryScene(SceneManifest manifest, std::vector<RGBDFrame> frames,
              std::vector<PointCloud> clouds);

  const SceneManifest& manifest() const override { return manifest_; }
  SceneManifest& mutable_manifest() { return manifest_; }
  RgbImage rgb(const std::string& frame_id) const override;
  DepthImage depth(const std::string& frame_id) const override;
  PointCloud cloud(int instance_id) const override;

  const std::vector<RGBDFrame>& frames() const { return frames_; }
  const std::vector<PointCloud>& clouds() const { return clouds_; }
  void set_depth(const std::string& frame_id, DepthImage depth);

 private:
  const RGBDFrame& frame(const std::string& frame_id) const;

  SceneManifest manifest_;
  std::vector<RGBDFrame> frames_;
  std::vector<PointCloud> clouds_;
  std::unordered_map<std::string, std::size_t> frame_slot_;
};

/// Scene on disk; images and clouds are read on demand.
class DiskScene : public FrameSource {
 public:
  DiskScene(std::filesystem::path root, SceneManifest manifest);

  const SceneManifest& manifest() const override { return manifest_; }
  SceneManifest& mutable_manifest() { return manifest_; }
  RgbImage rgb(const std::string& frame_id) const override;
  DepthImage depth(const std::string& frame_id) const override;
  PointCloud cloud(int instance_id) const override;

  const std::filesystem::path& root() const { return root_; }
  /// Cached fused depth when present, else std::nullopt.
  std::optional<DepthImage> fused_depth(const std::string& frame_id) const;

 private:
  std::filesystem::path root_;
  SceneManifest manifest_;
};

/// Loads and validates a canonical scene directory. Throws LoadError for a
/// missing file, ParseError with the record index for malformed records and
/// IntegrityError for broken cross-references.
std::unique_ptr<DiskScene> load_scene(const std::filesystem::path& root);

/// Writes the manifest's metadata plus every frame image and point cloud.
void save_scene(const SceneManifest& manifest, const FrameSource& frames,
                const std::filesystem::path& root);
/// Rewrites only the metadata files (poses, annotations, move graph, scene.json).
void save_metadata(const SceneManifest& manifest, const std::filesystem::path& root);

void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_cloud(const std::filesystem::path& path, int instance_id);

/// Converts an external layout into the canonical layout at `out_root`.
/// Supported tags are listed by supported_ingest_formats().
SceneManifest ingest_external(const std::filesystem::path& in_root, const std::string& format_tag,
                              const std::filesystem::path& out_root);
std::vector<std::string> supported_ingest_formats();

}  // namespace avsim
