#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "edtrack/types.hpp"

namespace edtrack {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

/// Reads a single-channel PNG, expanding palettes and dropping alpha; RGB
/// inputs are rejected. Samples are returned at the file's bit depth (8 or 16).
inline std::vector<std::uint16_t> read_gray_png(const std::string& path, int& width, int& height, int& bit_depth) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open PNG '" + path + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw IoError("'" + path + "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng: cannot create info struct");
  }
  // Everything with a destructor lives above setjmp so a libpng longjmp
  // cannot skip its construction.
  std::vector<std::uint16_t> out;
  std::vector<png_byte> buf;
  std::vector<png_bytep> rows;
  std::string error;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed decoding PNG '" + path + "'");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
    depth = 8;
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_PALETTE || (color & PNG_COLOR_MASK_COLOR)) error = "is not single-channel";
  png_read_update_info(png, info);
  if (error.empty()) {
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buf.resize(rowbytes * h);
    rows.resize(h);
    for (png_uint_32 r = 0; r < h; ++r) rows[r] = buf.data() + r * rowbytes;
    png_read_image(png, rows.data());
    out.resize(std::size_t(w) * h);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (depth == 16) {
        out[i] = std::uint16_t((buf[2 * i] << 8) | buf[2 * i + 1]);  // PNG is big-endian
      } else {
        out[i] = buf[i];
      }
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!error.empty()) throw IoError("PNG '" + path + "' " + error);
  width = int(w);
  height = int(h);
  bit_depth = depth;
  return out;
}

inline void write_gray_png(const std::string& path, int width, int height, int bit_depth,
                           const std::vector<std::uint16_t>& samples) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng: cannot create info struct");
  }
  const int bytes = bit_depth / 8;
  std::vector<png_byte> buf(std::size_t(width) * height * bytes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (bytes == 2) {
      buf[2 * i] = png_byte(samples[i] >> 8);  // PNG is big-endian
      buf[2 * i + 1] = png_byte(samples[i] & 0xff);
    } else {
      buf[i] = png_byte(samples[i]);
    }
  }
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r) rows[r] = buf.data() + std::size_t(r) * width * bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed encoding PNG '" + path + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

/// Depth PNG (16-bit, 8-bit accepted) scaled to meters; 0 stays invalid.
inline DepthMap load_depth_png(const std::string& path, double depth_scale) {
  int w = 0, h = 0, bits = 0;
  const auto raw = detail::read_gray_png(path, w, h, bits);
  DepthMap d(w, h);
  for (std::size_t i = 0; i < raw.size(); ++i) d.data[i] = raw[i] * depth_scale;
  return d;
}

/// Rounds meters to the nearest depth_scale unit; values beyond 16 bits are an error.
inline void save_depth_png(const std::string& path, const DepthMap& depth, double depth_scale) {
  if (!(depth_scale > 0)) throw InvalidParameterError("depth_scale must be positive");
  std::vector<std::uint16_t> raw(depth.data.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double d = depth.data[i];
    if (!std::isfinite(d) || d < 0) throw InvalidParameterError("depth map has negative or non-finite values");
    const double units = std::round(d / depth_scale);
    if (units > 65535) throw InvalidParameterError("depth exceeds the 16-bit range at this depth_scale");
    raw[i] = std::uint16_t(units);
  }
  detail::write_gray_png(path, depth.width, depth.height, 16, raw);
}

/// Mask PNG; any nonzero sample is tissue (stored as 1).
inline MaskMap load_mask_png(const std::string& path) {
  int w = 0, h = 0, bits = 0;
  const auto raw = detail::read_gray_png(path, w, h, bits);
  MaskMap m(w, h);
  for (std::size_t i = 0; i < raw.size(); ++i) m.data[i] = raw[i] != 0;
  return m;
}

inline void save_mask_png(const std::string& path, const MaskMap& mask) {
  std::vector<std::uint16_t> raw(mask.data.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = mask.data[i] ? 255 : 0;
  detail::write_gray_png(path, mask.width, mask.height, 8, raw);
}

}  // namespace edtrack
