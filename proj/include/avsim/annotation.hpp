#pragma once

#include <string>

#include "avsim/geometry.hpp"

namespace avsim {

/// One instance's 2D label in one frame.
struct InstanceAnnotation {
  std::string frame_id;
  int instance_id = 0;
  BoundingBox box;
  int visible_point_count = 0;
  int difficulty = 3;

  bool operator==(const InstanceAnnotation&) const = default;
};

}  // namespace avsim
