#include "avsim/image_io.hpp"

#include <csetjmp>
#include <algorithm>
#include <cctype>
#include <cstdio>
#include <memory>
#include <vector>

#include <fmt/format.h>
#include <jpeglib.h>
#include <png.h>

namespace avsim {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;  // row-major, channels x bit_depth/8 per pixel
};

void png_warning_fn(png_structp, png_const_charp) {}

void write_raw(const std::filesystem::path& path, int width, int height, int color_type,
               int bit_depth, const std::vector<std::uint8_t>& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError(fmt::format("cannot open {} for writing", path.string()));

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const size_t stride = static_cast<size_t>(width) * channels * (bit_depth / 8);
  // libpng reports errors by longjmp; only trivially destructible state lives
  // between here and the jump target.
  if (setjmp(png_jmpbuf(png))) {
    throw IoError(fmt::format("PNG encoding failed: {}", path.string()));
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + stride * y));
  }
  png_write_end(png, nullptr);
  if (std::ferror(file.get())) throw IoError(fmt::format("write failed: {}", path.string()));
}

DecodedPng read_raw(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw LoadError(fmt::format("missing file: {}", path.string()));

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  DecodedPng out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    throw ParseError(fmt::format("malformed PNG: {}", path.string()));
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * out.height);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + stride * y;
  png_read_image(png, rows.data());
  return out;
}

std::uint16_t sample16(const DecodedPng& d, size_t index) {
  if (d.bit_depth == 16) {
    return static_cast<std::uint16_t>((d.bytes[2 * index] << 8) | d.bytes[2 * index + 1]);
  }
  return d.bytes[index];
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  if (image.channels() != 3) throw UserError("write_png: RGB image must have 3 channels");
  auto span = image.data();
  write_raw(path, image.width(), image.height(), PNG_COLOR_TYPE_RGB, 8,
            std::vector<std::uint8_t>(span.begin(), span.end()));
}

void write_png(const std::filesystem::path& path, const DepthImage& image) {
  std::vector<std::uint8_t> bytes(image.pixel_count() * 2);
  auto span = image.data();
  for (size_t i = 0; i < span.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(span[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(span[i] & 0xff);
  }
  write_raw(path, image.width(), image.height(), PNG_COLOR_TYPE_GRAY, 16, bytes);
}

void write_png_mask(const std::filesystem::path& path, const MaskImage& mask) {
  auto span = mask.data();
  write_raw(path, mask.width(), mask.height(), PNG_COLOR_TYPE_GRAY, 8,
            std::vector<std::uint8_t>(span.begin(), span.end()));
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
  const DecodedPng d = read_raw(path);
  RgbImage img = make_rgb(d.width, d.height);
  const int bytes_per_sample = d.bit_depth / 8;
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const size_t px = static_cast<size_t>(y) * d.width + x;
      for (int c = 0; c < 3; ++c) {
        const int src_c = d.channels >= 3 ? c : 0;
        const size_t idx = (px * d.channels + src_c) * bytes_per_sample;
        img.at(x, y, c) = d.bytes[idx];  // high byte for 16-bit
      }
    }
  }
  return img;
}

DepthImage read_png_depth(const std::filesystem::path& path) {
  const DecodedPng d = read_raw(path);
  if (d.channels != 1) {
    throw ParseError(fmt::format("{}: depth PNG must be single-channel", path.string()));
  }
  DepthImage img = make_depth(d.width, d.height);
  auto out = img.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = sample16(d, i);
  return img;
}

MaskImage read_png_mask(const std::filesystem::path& path) {
  const DecodedPng d = read_raw(path);
  MaskImage mask(d.width, d.height, 1);
  const int bytes_per_sample = d.bit_depth / 8;
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const size_t px = static_cast<size_t>(y) * d.width + x;
      mask.at(x, y) = d.bytes[px * d.channels * bytes_per_sample];
    }
  }
  return mask;
}

namespace {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

}  // namespace

RgbImage read_jpeg_rgb(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw LoadError(fmt::format("missing file: {}", path.string()));

  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  RgbImage img;
  std::vector<std::uint8_t> row;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ParseError(fmt::format("malformed JPEG: {}", path.string()));
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img = make_rgb(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
  row.resize(static_cast<size_t>(cinfo.output_width) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    const int y = static_cast<int>(cinfo.output_scanline);
    JSAMPROW rows[1] = {row.data()};
    jpeg_read_scanlines(&cinfo, rows, 1);
    std::copy(row.begin(), row.end(), img.data().begin() + static_cast<size_t>(y) * row.size());
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

RgbImage read_image_rgb(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg_rgb(path);
  if (ext == ".png") return read_png_rgb(path);
  throw UserError(fmt::format("unsupported image encoding: {}", path.string()));
}

}  // namespace avsim
