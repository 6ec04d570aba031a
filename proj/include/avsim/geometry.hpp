#pragma once

// Camera geometry and the scene data model.
//
// Conventions: right-handed world frame with +Z up. Camera frame is +X right,
// +Y down, +Z forward. Pixel (i, j) covers [i, i+1) x [j, j+1); its center
// is at (i + 0.5, j + 0.5). Orientations are world-from-camera.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "avsim/image.hpp"

namespace avsim {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

struct Intrinsics {
  double fx = 300.0;
  double fy = 300.0;
  double cx = 160.0;
  double cy = 120.0;
  int width = 320;
  int height = 240;

  /// Throws UserError when the invariants are violated.
  void validate() const;

  bool operator==(const Intrinsics&) const = default;
};

struct ScenePose {
  std::string frame_id;
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
  Intrinsics intrinsics;

  /// Serialized quaternions carry 9 significant digits, so geometry always
  /// goes through the normalized rotation.
  Mat3 rotation() const { return orientation.normalized().toRotationMatrix(); }
  /// Unit optical axis in world coordinates.
  Vec3 view_direction() const { return rotation().col(2); }
  /// Heading of the optical axis about world +Z, degrees in (-180, 180].
  double yaw_degrees() const;

  void validate() const;
};

/// Orientation for a level camera looking along heading `yaw_deg` (about +Z,
/// counterclockwise from +X seen from above), tilted down by `pitch_deg`.
Quat level_camera_orientation(double yaw_deg, double pitch_deg = 0.0);

struct RGBDFrame {
  std::string frame_id;
  RgbImage rgb;
  DepthImage depth;
};

/// Axis-aligned pixel box, inclusive-exclusive.
struct BoundingBox {
  int xmin = 0;
  int ymin = 0;
  int xmax = 0;
  int ymax = 0;
  int instance_id = 0;
  int difficulty = 0;

  int width() const noexcept { return xmax - xmin; }
  int height() const noexcept { return ymax - ymin; }
  long area() const noexcept {
    return width() > 0 && height() > 0 ? static_cast<long>(width()) * height() : 0L;
  }
  bool valid() const noexcept { return xmin < xmax && ymin < ymax; }

  bool operator==(const BoundingBox&) const = default;
};

double iou(const BoundingBox& a, const BoundingBox& b);

/// Clip to [0, width) x [0, height). The result may be invalid (empty).
BoundingBox clip_box(const BoundingBox& box, int width, int height);

struct PointCloud {
  int instance_id = 0;
  std::vector<Vec3> points;
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;  // depth along the optical axis, meters

  /// Pixel containing (u, v).
  int px() const;
  int py() const;
};

/// Precomputed world-to-image mapping for one pose (normalized rotation).
class PinholeCamera {
 public:
  explicit PinholeCamera(const ScenePose& pose);

  std::optional<Projection> project(const Vec3& world) const;
  Vec3 to_camera(const Vec3& world) const { return rot_t_ * (world - position_); }
  Vec3 back_project(double u, double v, double z) const;

  const Mat3& world_from_camera() const { return rot_; }
  const Vec3& position() const { return position_; }
  const Intrinsics& intrinsics() const { return intr_; }

 private:
  Mat3 rot_;
  Mat3 rot_t_;
  Vec3 position_;
  Intrinsics intr_;
};

/// Pinhole projection; std::nullopt marks a point at or behind the camera.
std::optional<Projection> project_point(const Vec3& world, const ScenePose& pose);

/// Inverse of project_point for a continuous image location and axial depth.
Vec3 back_project(double u, double v, double z, const ScenePose& pose);

/// Camera-frame ray direction through (u, v), scaled so that its z is 1.
Vec3 pixel_ray_camera(double u, double v, const Intrinsics& intr);

struct Displacement {
  double forward = 0.0;
  double right = 0.0;
  double up = 0.0;
  double yaw_delta = 0.0;  // degrees in (-180, 180]

  double planar_distance() const;
};

/// Position of `b` expressed in `a`'s camera axes plus the heading change.
Displacement relative_displacement(const ScenePose& a, const ScenePose& b);

/// Wraps an angle in degrees into (-180, 180].
double wrap_degrees(double deg);

}  // namespace avsim
