#include "avsim/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace avsim {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

}  // namespace

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw UserError(fmt::format("intrinsics: focal lengths must be positive (fx={}, fy={})", fx, fy));
  }
  if (width <= 0 || height <= 0) {
    throw UserError(fmt::format("intrinsics: image size must be positive ({}x{})", width, height));
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw UserError(fmt::format("intrinsics: principal point ({}, {}) outside {}x{} image", cx, cy,
                                width, height));
  }
}

double ScenePose::yaw_degrees() const {
  const Vec3 f = view_direction();
  if (std::abs(f.x()) < 1e-12 && std::abs(f.y()) < 1e-12) return 0.0;
  return wrap_degrees(std::atan2(f.y(), f.x()) * kRadToDeg);
}

void ScenePose::validate() const {
  if (std::abs(orientation.norm() - 1.0) > 1e-3) {
    throw UserError(fmt::format("pose {}: quaternion norm {} is not 1", frame_id, orientation.norm()));
  }
  if (!position.allFinite()) throw UserError(fmt::format("pose {}: non-finite position", frame_id));
  intrinsics.validate();
}

Quat level_camera_orientation(double yaw_deg, double pitch_deg) {
  const double yaw = yaw_deg * kDegToRad;
  const double pitch = pitch_deg * kDegToRad;
  const Vec3 heading(std::cos(yaw), std::sin(yaw), 0.0);
  const Vec3 forward = std::cos(pitch) * heading - std::sin(pitch) * Vec3::UnitZ();
  const Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  Quat q(r);
  q.normalize();
  // Canonical sign keeps serialized poses stable.
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const int ix0 = std::max(a.xmin, b.xmin);
  const int iy0 = std::max(a.ymin, b.ymin);
  const int ix1 = std::min(a.xmax, b.xmax);
  const int iy1 = std::min(a.ymax, b.ymax);
  const long inter = (ix1 > ix0 && iy1 > iy0) ? static_cast<long>(ix1 - ix0) * (iy1 - iy0) : 0L;
  const long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

BoundingBox clip_box(const BoundingBox& box, int width, int height) {
  BoundingBox out = box;
  out.xmin = std::clamp(box.xmin, 0, width);
  out.xmax = std::clamp(box.xmax, 0, width);
  out.ymin = std::clamp(box.ymin, 0, height);
  out.ymax = std::clamp(box.ymax, 0, height);
  return out;
}

int Projection::px() const { return static_cast<int>(std::floor(u)); }
int Projection::py() const { return static_cast<int>(std::floor(v)); }

PinholeCamera::PinholeCamera(const ScenePose& pose)
    : rot_(pose.rotation()), rot_t_(rot_.transpose()), position_(pose.position),
      intr_(pose.intrinsics) {}

std::optional<Projection> PinholeCamera::project(const Vec3& world) const {
  const Vec3 cam = to_camera(world);
  if (!(cam.z() > 0.0)) return std::nullopt;
  return Projection{intr_.cx + intr_.fx * cam.x() / cam.z(),
                    intr_.cy + intr_.fy * cam.y() / cam.z(), cam.z()};
}

Vec3 PinholeCamera::back_project(double u, double v, double z) const {
  return position_ + rot_ * (pixel_ray_camera(u, v, intr_) * z);
}

std::optional<Projection> project_point(const Vec3& world, const ScenePose& pose) {
  return PinholeCamera(pose).project(world);
}

Vec3 pixel_ray_camera(double u, double v, const Intrinsics& intr) {
  return Vec3((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
}

Vec3 back_project(double u, double v, double z, const ScenePose& pose) {
  return PinholeCamera(pose).back_project(u, v, z);
}

double Displacement::planar_distance() const { return std::hypot(forward, right); }

double wrap_degrees(double deg) {
  double w = std::fmod(deg, 360.0);
  if (w <= -180.0) w += 360.0;
  if (w > 180.0) w -= 360.0;
  return w;
}

Displacement relative_displacement(const ScenePose& a, const ScenePose& b) {
  const Vec3 d = a.rotation().transpose() * (b.position - a.position);
  return Displacement{d.z(), d.x(), -d.y(), wrap_degrees(b.yaw_degrees() - a.yaw_degrees())};
}

}  // namespace avsim
