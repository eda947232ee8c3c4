#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/gaussians/camera.hpp"
#include "fe4dgs/io/png.hpp"
#include "fe4dgs/semantic/feature_map.hpp"
#include "fe4dgs/semantic/prototypes.hpp"

namespace fe4dgs {

// Directory layout, frame i written as %06d:
//   images/i.png            8-bit RGB
//   depth/i.png | i.feat    16-bit gray times depth_scale, or a 1-channel feature file
//   masks/i.png             8-bit gray, > 127 is foreground; absent means all ones
//   features/i.feat         teacher features
//   labels/i.png            8-bit gray class ids, 255 for none (evaluation only)
//   poses_bounds.txt        17 values per row; absent means identity poses
//   times.txt               one timestamp per row; absent means uniform in [0, 1]

struct DatasetOptions {
  double depth_scale = 1.0 / 1000.0;  // meters per 16-bit unit
  double default_focal = 0.0;         // identity-pose focal when no poses file; 0 means max(W, H)
};

struct Dataset {
  std::vector<CameraFrame> frames;
  std::vector<std::optional<LabelMap>> labels;

  bool has_labels() const {
    for (const auto& l : labels) {
      if (!l) return false;
    }
    return !labels.empty();
  }
};

inline std::string frame_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.%s", i, ext);
  return buf;
}

/// LLFF rows hold a camera-to-world 3x4 with columns (down, right, back,
/// translation) and a fifth column (H, W, focal), then near and far. The
/// principal point sits at the image centre ((W - 1) / 2, (H - 1) / 2).
struct LlffRow {
  std::array<double, 17> v{};
};

inline void llff_to_camera(const LlffRow& row, CameraFrame& f) {
  auto at = [&](int r, int c) { return row.v[static_cast<std::size_t>(r * 5 + c)]; };
  Mat3 r_c2w;
  Vec3 t;
  for (int r = 0; r < 3; ++r) {
    r_c2w(r, 0) = at(r, 1);   // x: right
    r_c2w(r, 1) = at(r, 0);   // y: down
    r_c2w(r, 2) = -at(r, 2);  // z: forward
    t(r) = at(r, 3);
  }
  const double h = at(0, 4), w = at(1, 4), focal = at(2, 4);
  if (!(focal > 0.0)) throw DataError("poses file: focal length must be positive");
  if (std::lround(h) != static_cast<long>(f.height) || std::lround(w) != static_cast<long>(f.width)) {
    throw DataError("poses file: image size " + std::to_string(std::lround(w)) + "x" + std::to_string(std::lround(h)) +
                    " does not match images " + std::to_string(f.width) + "x" + std::to_string(f.height));
  }
  f.intrinsics = make_intrinsics(focal, focal, 0.5 * (w - 1.0), 0.5 * (h - 1.0));
  Mat4 w2c = Mat4::Identity();
  w2c.topLeftCorner<3, 3>() = r_c2w.transpose();
  w2c.topRightCorner<3, 1>() = -r_c2w.transpose() * t;
  f.extrinsics = w2c;
}

inline LlffRow camera_to_llff(const CameraFrame& f, double near_bound, double far_bound) {
  const Mat3 r_c2w = f.rotation().transpose();
  const Vec3 t = -r_c2w * f.translation();
  LlffRow row;
  auto at = [&](int r, int c) -> double& { return row.v[static_cast<std::size_t>(r * 5 + c)]; };
  for (int r = 0; r < 3; ++r) {
    at(r, 0) = r_c2w(r, 1);
    at(r, 1) = r_c2w(r, 0);
    at(r, 2) = -r_c2w(r, 2);
    at(r, 3) = t(r);
  }
  at(0, 4) = static_cast<double>(f.height);
  at(1, 4) = static_cast<double>(f.width);
  at(2, 4) = f.fx();
  row.v[15] = near_bound;
  row.v[16] = far_bound;
  return row;
}

/// Label PNG code for pixels without a class (negative labels).
inline constexpr std::uint16_t kNoLabelCode = 255;

/// Class ids in [0, 254] as 8-bit gray; negative ids become kNoLabelCode.
inline PngImage label_png(const LabelMap& labels) {
  PngImage out{labels.width, labels.height, 1, 8, std::vector<std::uint16_t>(labels.labels.size())};
  for (std::size_t k = 0; k < out.samples.size(); ++k) {
    const int c = labels.labels[k];
    if (c >= static_cast<int>(kNoLabelCode)) throw ConfigError("label_png: class id above 254");
    out.samples[k] = c < 0 ? kNoLabelCode : static_cast<std::uint16_t>(c);
  }
  return out;
}

namespace detail {

inline std::vector<std::vector<double>> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t\r")] == '#') continue;
    std::istringstream ss(line);
    std::vector<double> row;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + tok + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::size_t count_frames(const std::filesystem::path& dir, const char* ext) {
  std::size_t n = 0;
  while (std::filesystem::exists(dir / frame_name(n, ext))) ++n;
  return n;
}

inline void require_count(const std::filesystem::path& dir, const char* ext, std::size_t expected) {
  const std::size_t n = count_frames(dir, ext);
  if (n != expected) {
    throw DataError(dir.string() + ": " + std::to_string(n) + " ." + ext + " frames, expected " +
                    std::to_string(expected) + " to match images/");
  }
}

inline PngImage read_checked(const std::filesystem::path& p, std::size_t h, std::size_t w, std::size_t channels) {
  PngImage img = read_png(p);
  if (img.width != w || img.height != h) {
    throw DataError(p.string() + ": size " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                    " differs from " + std::to_string(w) + "x" + std::to_string(h));
  }
  if (img.channels != channels) throw DataError(p.string() + ": expected " + std::to_string(channels) + " channel(s)");
  return img;
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& root, const DatasetOptions& opt = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root / "images")) throw DataError(root.string() + ": missing images/ directory");
  const std::size_t n = detail::count_frames(root / "images", "png");
  if (n == 0) throw DataError(root.string() + ": images/ has no frames (expected images/000000.png, ...)");

  Dataset ds;
  ds.frames.resize(n);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const PngImage img = read_png(root / "images" / frame_name(i, "png"));
    if (img.channels != 3) throw DataError((root / "images" / frame_name(i, "png")).string() + ": expected RGB");
    if (i > 0 && (img.width != ds.frames[0].width || img.height != ds.frames[0].height)) {
      throw DataError("images/" + frame_name(i, "png") + ": image dimensions are not uniform");
    }
    CameraFrame& f = ds.frames[i];
    f.width = img.width;
    f.height = img.height;
    const double denom = img.bit_depth == 16 ? 65535.0 : 255.0;
    f.image = Tensor({f.height, f.width, 3});
    for (std::size_t k = 0; k < f.image.size(); ++k) f.image[k] = img.samples[k] / denom;
  }
  const std::size_t h = ds.frames[0].height, w = ds.frames[0].width;

  const bool depth_png = fs::exists(root / "depth" / frame_name(0, "png"));
  const bool depth_feat = fs::exists(root / "depth" / frame_name(0, "feat"));
  if (depth_png || depth_feat) detail::require_count(root / "depth", depth_png ? "png" : "feat", n);
  const bool masks = fs::is_directory(root / "masks");
  if (masks) detail::require_count(root / "masks", "png", n);
  const bool features = fs::is_directory(root / "features");
  if (features) detail::require_count(root / "features", "feat", n);
  const bool labels = fs::is_directory(root / "labels");
  if (labels) detail::require_count(root / "labels", "png", n);

  std::vector<double> times(n);
  if (fs::exists(root / "times.txt")) {
    const auto rows = detail::read_rows(root / "times.txt");
    if (rows.size() != n) throw DataError("times.txt: " + std::to_string(rows.size()) + " rows for " + std::to_string(n) + " frames");
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].size() != 1) throw DataError("times.txt: row " + std::to_string(i) + " must hold one value");
      times[i] = rows[i][0];
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) times[i] = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
  }

  std::vector<std::vector<double>> poses;
  if (fs::exists(root / "poses_bounds.txt")) {
    poses = detail::read_rows(root / "poses_bounds.txt");
    if (poses.size() != n) throw DataError("poses_bounds.txt: " + std::to_string(poses.size()) + " rows for " + std::to_string(n) + " frames");
  }

  for (std::size_t i = 0; i < n; ++i) {
    CameraFrame& f = ds.frames[i];
    f.time = times[i];
    if (!poses.empty()) {
      if (poses[i].size() != 17) throw DataError("poses_bounds.txt: row " + std::to_string(i) + " has " + std::to_string(poses[i].size()) + " values, expected 17");
      LlffRow row;
      std::copy(poses[i].begin(), poses[i].end(), row.v.begin());
      llff_to_camera(row, f);
    } else {
      const double focal = opt.default_focal > 0.0 ? opt.default_focal : static_cast<double>(std::max(w, h));
      f.intrinsics = make_intrinsics(focal, focal, 0.5 * (static_cast<double>(w) - 1.0), 0.5 * (static_cast<double>(h) - 1.0));
      f.extrinsics = Mat4::Identity();
    }

    if (depth_png) {
      const PngImage d = detail::read_checked(root / "depth" / frame_name(i, "png"), h, w, 1);
      f.depth = Tensor({h, w});
      for (std::size_t k = 0; k < f.depth.size(); ++k) f.depth[k] = d.samples[k] * opt.depth_scale;
    } else if (depth_feat) {
      const FeatureMap d = load_feature_map(root / "depth" / frame_name(i, "feat"));
      if (d.channels != 1 || d.height != h || d.width != w) throw DataError("depth/" + frame_name(i, "feat") + ": expected a 1-channel map at image size");
      f.depth = Tensor({h, w});
      for (std::size_t k = 0; k < f.depth.size(); ++k) f.depth[k] = d.data[k];
    }

    f.mask = Tensor({h, w}, 1.0);
    if (masks) {
      const PngImage m = detail::read_checked(root / "masks" / frame_name(i, "png"), h, w, 1);
      const std::uint16_t cut = m.bit_depth == 16 ? 32767 : 127;
      for (std::size_t k = 0; k < f.mask.size(); ++k) f.mask[k] = m.samples[k] > cut ? 1.0 : 0.0;
    }
    if (features) f.features = load_feature_map(root / "features" / frame_name(i, "feat"));
    if (labels) {
      const PngImage l = detail::read_checked(root / "labels" / frame_name(i, "png"), h, w, 1);
      LabelMap lm(h, w);
      for (std::size_t k = 0; k < l.samples.size(); ++k) lm.labels[k] = l.samples[k] == kNoLabelCode ? -1 : static_cast<int>(l.samples[k]);
      ds.labels[i] = std::move(lm);
    }
    f.validate();
  }
  return ds;
}

/// [H, W, 3] color in [0, 1] to 8-bit RGB.
inline PngImage color_png(const Tensor& color) {
  if (color.rank() != 3 || color.dim(2) != 3) throw ConfigError("color_png: expected [H, W, 3], got " + color.shape_string());
  PngImage rgb{color.dim(1), color.dim(0), 3, 8, std::vector<std::uint16_t>(color.size())};
  for (std::size_t k = 0; k < rgb.samples.size(); ++k) rgb.samples[k] = to_u8(color[k]);
  return rgb;
}

/// [H, W] depth to 16-bit gray in units of `scale`, clamped to the code range.
inline PngImage depth_png(const Tensor& depth, double scale) {
  if (depth.rank() != 2) throw ConfigError("depth_png: expected [H, W], got " + depth.shape_string());
  PngImage out{depth.dim(1), depth.dim(0), 1, 16, std::vector<std::uint16_t>(depth.size())};
  for (std::size_t k = 0; k < out.samples.size(); ++k) {
    out.samples[k] = static_cast<std::uint16_t>(std::clamp(std::lround(depth[k] / scale), 0L, 65535L));
  }
  return out;
}

/// Writes frames (and optional labels) in the layout read by load_dataset.
/// Depth goes to 16-bit PNG; values outside the representable range are
/// clamped.
inline void write_dataset(const std::filesystem::path& root, const std::vector<CameraFrame>& frames,
                          const std::vector<LabelMap>& labels = {}, const DatasetOptions& opt = {}) {
  namespace fs = std::filesystem;
  if (frames.empty()) throw ConfigError("write_dataset: no frames");
  if (!labels.empty() && labels.size() != frames.size()) throw ConfigError("write_dataset: label count differs from frame count");
  for (const char* sub : {"images", "depth", "masks"}) fs::create_directories(root / sub);
  const bool features = frames[0].features.has_value();
  if (features) fs::create_directories(root / "features");
  if (!labels.empty()) fs::create_directories(root / "labels");

  std::ofstream poses(root / "poses_bounds.txt"), times(root / "times.txt");
  if (!poses || !times) throw DataError(root.string() + ": cannot write poses or times");
  poses << std::setprecision(17);
  times << std::setprecision(17);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const CameraFrame& f = frames[i];
    const std::size_t h = f.height, w = f.width;
    write_png(root / "images" / frame_name(i, "png"), color_png(f.image));

    double near_bound = std::numeric_limits<double>::infinity(), far_bound = 0.0;
    for (std::size_t k = 0; k < f.depth.size(); ++k) {
      if (f.depth[k] > 0.0) {
        near_bound = std::min(near_bound, f.depth[k]);
        far_bound = std::max(far_bound, f.depth[k]);
      }
    }
    write_png(root / "depth" / frame_name(i, "png"),
              f.depth.empty() ? PngImage{w, h, 1, 16, std::vector<std::uint16_t>(h * w, 0)} : depth_png(f.depth, opt.depth_scale));

    PngImage mask{w, h, 1, 8, std::vector<std::uint16_t>(h * w, 255)};
    if (!f.mask.empty()) {
      for (std::size_t k = 0; k < mask.samples.size(); ++k) mask.samples[k] = f.mask[k] > 0.5 ? 255 : 0;
    }
    write_png(root / "masks" / frame_name(i, "png"), mask);

    if (features) {
      if (!f.features) throw ConfigError("write_dataset: frame " + std::to_string(i) + " lacks features");
      save_feature_map(root / "features" / frame_name(i, "feat"), *f.features);
    }
    if (!labels.empty()) {
      write_png(root / "labels" / frame_name(i, "png"), label_png(labels[i]));
    }

    if (!std::isfinite(near_bound)) near_bound = far_bound = 0.0;
    const LlffRow row = camera_to_llff(f, near_bound, far_bound);
    for (std::size_t k = 0; k < row.v.size(); ++k) poses << (k ? " " : "") << row.v[k];
    poses << '\n';
    times << f.time << '\n';
  }
}

/// Every `every`-th frame starting at `offset` is held out for testing.
struct FrameSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline FrameSplit split_every_nth(std::size_t count, std::size_t every = 8, std::size_t offset = 0) {
  if (every < 2) throw ConfigError("split_every_nth: period must be at least 2");
  FrameSplit s;
  for (std::size_t i = 0; i < count; ++i) {
    (i >= offset && (i - offset) % every == 0 ? s.test : s.train).push_back(i);
  }
  return s;
}

inline std::vector<CameraFrame> select_frames(const std::vector<CameraFrame>& frames, const std::vector<std::size_t>& idx) {
  std::vector<CameraFrame> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(frames.at(i));
  return out;
}

}  // namespace fe4dgs
