#pragma once

// Procedural densely-sampled scenes with exact ground truth.
//
// A scene is an axis-aligned room containing axis-aligned parallelepipeds:
// instance parts (several parts may share one instance_id) and anonymous
// occluders. Cameras sit on a rectangular grid at a fixed height and are
// rotated in fixed yaw steps at every grid point. Frames are rendered by
// z-buffering every box face per pixel, so depth, color and instance labels
// are exact at pixel centers.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "avsim/dataset.hpp"

namespace avsim {

using Color = std::array<std::uint8_t, 3>;

struct SynthBox {
  int instance_id = 0;  // 0 for occluders
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Constant(0.1);
  Color color{200, 40, 40};

  Vec3 min() const { return center - size / 2.0; }
  Vec3 max() const { return center + size / 2.0; }
};

struct GridSpec {
  double x0 = 0.0;
  double y0 = 0.0;
  int nx = 1;
  int ny = 1;
};

struct SynthSceneSpec {
  std::string scene_id = "synth";
  Vec3 room_min = Vec3(0.0, 0.0, 0.0);
  Vec3 room_max = Vec3(4.0, 4.0, 2.5);
  std::vector<SynthBox> objects;
  std::vector<std::string> instance_names;  // optional, parallel to instance_ids()
  std::vector<SynthBox> occluders;
  double grid_spacing = 0.30;
  double rotation_step = 30.0;
  std::optional<GridSpec> grid;  // default: fill the room leaving grid_margin to the walls
  double grid_margin = 0.30;
  double camera_clearance = 0.10;  // grid points this close to a box are dropped
  double camera_height = 1.0;
  double camera_pitch = 0.0;  // degrees, positive looks down
  Intrinsics intrinsics;
  std::uint64_t seed = 0;
  double surface_pitch = 0.005;  // point-cloud sampling pitch, meters
  double rgb_noise_sigma = 0.0;  // per-channel Gaussian sensor noise, 8-bit levels
  std::array<Color, 6> room_colors = {Color{150, 150, 140}, Color{140, 150, 150},
                                      Color{150, 140, 150}, Color{145, 145, 145},
                                      Color{110, 95, 80},   Color{235, 235, 235}};  // -x +x -y +y floor ceiling

  /// Throws UserError when invariants are violated.
  void validate() const;
  std::vector<int> instance_ids() const;
};

SynthSceneSpec synth_spec_from_json(const std::string& json_text);
std::string synth_spec_to_json(const SynthSceneSpec& spec);

/// Per-frame, per-instance exact visibility from the renderer.
struct VisibilityRecord {
  std::string frame_id;
  int instance_id = 0;
  int pixel_count = 0;
  BoundingBox box;  // tight box over the visible-pixel mask
};

struct RenderedView {
  RgbImage rgb;
  Image<float> depth;        // meters along the optical axis, 0 = nothing hit
  Image<std::int32_t> label; // instance id per pixel, 0 = background / occluder
};

struct RenderOptions {
  bool include_room = true;
  bool include_objects = true;
  bool include_occluders = true;
  std::optional<int> only_instance;  // render just this instance's parts
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  Color background{0, 0, 0};
};

RenderedView render_view(const SynthSceneSpec& spec, const ScenePose& pose,
                         const RenderOptions& options);

/// Camera grid positions (x, y) that survive the clearance test.
std::vector<Vec3> camera_positions(const SynthSceneSpec& spec);
/// One pose per (grid point, yaw step); throws UserError when the grid is empty.
std::vector<ScenePose> synth_poses(const SynthSceneSpec& spec);

PointCloud sample_instance_cloud(const SynthSceneSpec& spec, int instance_id);

struct SynthScene {
  MemoryScene scene;
  std::vector<VisibilityRecord> visibility;
};

struct GenerateOptions {
  bool render = true;  // false: poses, clouds and an empty visibility table only
  int threads = 0;     // 0 = default_thread_count()
};

SynthScene generate_scene(const SynthSceneSpec& spec, const GenerateOptions& options = {});

std::string visibility_to_json(const std::vector<VisibilityRecord>& records);
std::vector<VisibilityRecord> visibility_from_json(const std::string& text);

/// Zeroes floor(zero_fraction * valid) valid pixels and multiplies a disjoint
/// floor(inflate_fraction * valid) by factors drawn from [inflate_min, inflate_max].
DepthImage corrupt_depth(const DepthImage& depth, double zero_fraction, double inflate_fraction,
                         std::uint64_t seed, double inflate_min = 1.5, double inflate_max = 3.0);

enum class RayVisibility { kVisible, kOccluded, kOutOfView };

/// Analytic segment-vs-box test from the camera center to `point` against every
/// object part and occluder.
RayVisibility raycast_visibility(const Vec3& point, const ScenePose& pose,
                                 const SynthSceneSpec& spec);

struct RandomSceneParams {
  double room_x = 4.2;
  double room_y = 4.2;
  double room_z = 2.5;
  int grid_nx = 10;
  int grid_ny = 10;
  int instances = 10;
  int occluders = 3;
  double min_object_size = 0.10;
  double max_object_size = 0.25;
  double min_object_z = 0.55;
  double max_object_z = 1.35;
  double gap = 0.10;  // minimum clearance between any two boxes
};

/// A seeded random layout: instances around the camera grid, slab occluders.
SynthSceneSpec random_scene_spec(std::uint64_t seed, const RandomSceneParams& params = {});

}  // namespace avsim
