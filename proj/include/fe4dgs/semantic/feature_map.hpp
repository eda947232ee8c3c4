#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fe4dgs/errors.hpp"

namespace fe4dgs {

/// Teacher feature map, channel-major (c, then row, then column).
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}
  FeatureMap(std::size_t c, std::size_t h, std::size_t w, std::vector<double> values)
      : channels(c), height(h), width(w), data(std::move(values)) {
    if (data.size() != c * h * w) throw ConfigError("FeatureMap: data length does not match shape");
  }

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

  void validate() const {
    if (channels == 0 || height == 0 || width == 0) throw DataError("FeatureMap: dimensions must be positive");
    if (data.size() != channels * height * width) throw DataError("FeatureMap: data length mismatch");
    for (double v : data) {
      if (!std::isfinite(v)) throw DataError("FeatureMap: non-finite value");
    }
  }

  bool operator==(const FeatureMap&) const = default;
};

// On-disk layout (all little-endian):
//   0  char[4]  "FE4D"
//   4  u16      format version (1)
//   6  u32      C
//   10 u32      H
//   14 u32      W
//   18 f32[C*H*W] channel-major payload
inline constexpr std::array<char, 4> kFeatureMagic{'F', 'E', '4', 'D'};
inline constexpr std::uint16_t kFeatureFormatVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 18;

namespace detail {
static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

template <typename T>
void put_le(std::vector<char>& out, std::size_t offset, T value) {
  std::memcpy(out.data() + offset, &value, sizeof(T));
}

template <typename T>
T get_le(const std::vector<char>& in, std::size_t offset) {
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

inline std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for " + path.string());
}
}  // namespace detail

inline std::vector<char> encode_feature_map(const FeatureMap& map) {
  std::vector<char> out(kFeatureHeaderBytes + map.data.size() * 4);
  std::copy(kFeatureMagic.begin(), kFeatureMagic.end(), out.begin());
  detail::put_le<std::uint16_t>(out, 4, kFeatureFormatVersion);
  detail::put_le<std::uint32_t>(out, 6, static_cast<std::uint32_t>(map.channels));
  detail::put_le<std::uint32_t>(out, 10, static_cast<std::uint32_t>(map.height));
  detail::put_le<std::uint32_t>(out, 14, static_cast<std::uint32_t>(map.width));
  for (std::size_t i = 0; i < map.data.size(); ++i) {
    detail::put_le<float>(out, kFeatureHeaderBytes + 4 * i, static_cast<float>(map.data[i]));
  }
  return out;
}

inline FeatureMap decode_feature_map(const std::vector<char>& bytes) {
  if (bytes.size() < 4) throw FormatError("feature file truncated in magic", bytes.size());
  for (std::size_t i = 0; i < 4; ++i) {
    if (bytes[i] != kFeatureMagic[i]) throw FormatError("feature file has bad magic", i);
  }
  if (bytes.size() < kFeatureHeaderBytes) throw FormatError("feature file truncated in header", bytes.size());
  const auto version = detail::get_le<std::uint16_t>(bytes, 4);
  if (version != kFeatureFormatVersion) {
    throw FormatError("unsupported feature format version " + std::to_string(version), 4);
  }
  FeatureMap map;
  map.channels = detail::get_le<std::uint32_t>(bytes, 6);
  map.height = detail::get_le<std::uint32_t>(bytes, 10);
  map.width = detail::get_le<std::uint32_t>(bytes, 14);
  if (map.channels == 0 || map.height == 0 || map.width == 0) {
    throw FormatError("feature file has a zero dimension", 6);
  }
  const std::size_t count = map.channels * map.height * map.width;
  const std::size_t expected = kFeatureHeaderBytes + count * 4;
  if (bytes.size() < expected) {
    throw FormatError("feature payload truncated: expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size()),
                      bytes.size());
  }
  if (bytes.size() > expected) throw FormatError("trailing bytes after feature payload", expected);
  map.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t offset = kFeatureHeaderBytes + i * 4;
    const float v = detail::get_le<float>(bytes, offset);
    if (!std::isfinite(v)) throw FormatError("non-finite value in feature payload", offset);
    map.data[i] = v;
  }
  return map;
}

inline FeatureMap load_feature_map(const std::filesystem::path& path) {
  return decode_feature_map(detail::read_all(path));
}

inline void save_feature_map(const std::filesystem::path& path, const FeatureMap& map) {
  detail::write_all(path, encode_feature_map(map));
}

}  // namespace fe4dgs
