#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fe4dgs/errors.hpp"

namespace fe4dgs {

/// Decoded PNG samples, row-major and interleaved.
struct PngImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  int bit_depth = 8;         // 8 or 16
  std::vector<std::uint16_t> samples;

  std::uint16_t at(std::size_t y, std::size_t x, std::size_t c) const { return samples[(y * width + x) * channels + c]; }
};

/// Reads a PNG as gray or RGB, 8-bit unless the file stores 16-bit samples.
/// 16-bit files are read as linear values (no gamma conversion); alpha is
/// discarded.
inline PngImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError(path.string() + ": " + image.message);
  }
  PngImage out;
  out.width = image.width;
  out.height = image.height;
  out.channels = (image.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  const bool wide = (image.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  out.bit_depth = wide ? 16 : 8;
  image.format = (out.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY) | (wide ? PNG_FORMAT_FLAG_LINEAR : 0u);
  const std::size_t n = out.width * out.height * out.channels;
  if (wide) {
    std::vector<png_uint_16> buf(n);
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
      throw DataError(path.string() + ": " + image.message);
    }
    out.samples.assign(buf.begin(), buf.end());
  } else {
    std::vector<png_byte> buf(n);
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
      throw DataError(path.string() + ": " + image.message);
    }
    out.samples.assign(buf.begin(), buf.end());
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const PngImage& img) {
  if (img.channels != 1 && img.channels != 3) throw ConfigError("write_png: channels must be 1 or 3");
  if (img.bit_depth != 8 && img.bit_depth != 16) throw ConfigError("write_png: bit depth must be 8 or 16");
  if (img.samples.size() != img.width * img.height * img.channels) throw ConfigError("write_png: sample count mismatch");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = (img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY) | (img.bit_depth == 16 ? PNG_FORMAT_FLAG_LINEAR : 0u);
  int ok = 0;
  if (img.bit_depth == 16) {
    std::vector<png_uint_16> buf(img.samples.begin(), img.samples.end());
    ok = png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr);
  } else {
    std::vector<png_byte> buf(img.samples.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<png_byte>(std::min<std::uint16_t>(img.samples[i], 255));
    ok = png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr);
  }
  if (!ok) throw DataError(path.string() + ": " + image.message);
}

/// [0, 1] value to an 8-bit code with rounding and clamping.
inline std::uint16_t to_u8(double v) { return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace fe4dgs
