#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "avsim/error.hpp"

namespace avsim {

/// Dense row-major image with interleaved channels.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, T fill = T{})
      : width_(width), height_(height), channels_(channels) {
    if (width < 0 || height < 0 || channels <= 0) {
      throw UserError("image dimensions must be non-negative");
    }
    data_.assign(static_cast<size_t>(width) * height * channels, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return data_.empty(); }
  size_t pixel_count() const noexcept { return static_cast<size_t>(width_) * height_; }

  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  T& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  bool operator==(const Image&) const = default;

 private:
  size_t index(int x, int y, int c) const noexcept {
    return (static_cast<size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

/// 8-bit RGB.
using RgbImage = Image<std::uint8_t>;
/// 16-bit depth in millimeters, 0 = missing.
using DepthImage = Image<std::uint16_t>;
/// 8-bit single-channel mask, nonzero = set.
using MaskImage = Image<std::uint8_t>;

inline RgbImage make_rgb(int width, int height) { return RgbImage(width, height, 3); }
inline DepthImage make_depth(int width, int height) { return DepthImage(width, height, 1); }

constexpr double kMillimetersPerMeter = 1000.0;
constexpr std::uint16_t kMaxDepthMm = 65535;

inline double depth_meters(std::uint16_t mm) { return mm / kMillimetersPerMeter; }

inline std::uint16_t depth_millimeters(double meters) {
  if (!(meters > 0.0)) return 0;
  const double mm = meters * kMillimetersPerMeter + 0.5;
  if (mm >= kMaxDepthMm) return kMaxDepthMm;
  return static_cast<std::uint16_t>(mm);
}

}  // namespace avsim
