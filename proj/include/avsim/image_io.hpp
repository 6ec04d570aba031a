#pragma once

#include <filesystem>

#include "avsim/image.hpp"

namespace avsim {

/// 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const RgbImage& image);
/// 16-bit single-channel PNG (big-endian per the PNG standard), lossless.
void write_png(const std::filesystem::path& path, const DepthImage& image);

/// Reads any 8-bit PNG and converts it to RGB (gray expanded, alpha dropped).
RgbImage read_png_rgb(const std::filesystem::path& path);
/// Reads a 16-bit (or 8-bit) single-channel PNG into a depth map.
DepthImage read_png_depth(const std::filesystem::path& path);
/// Reads a single-channel 8-bit PNG mask (or the first channel of a color PNG).
MaskImage read_png_mask(const std::filesystem::path& path);
/// Baseline JPEG decoding to RGB.
RgbImage read_jpeg_rgb(const std::filesystem::path& path);
/// Dispatches on extension (.png, .jpg, .jpeg).
RgbImage read_image_rgb(const std::filesystem::path& path);

void write_png_mask(const std::filesystem::path& path, const MaskImage& mask);

}  // namespace avsim
