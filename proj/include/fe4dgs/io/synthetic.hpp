#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/gaussians/camera.hpp"
#include "fe4dgs/gaussians/cloud.hpp"
#include "fe4dgs/numerics/rng.hpp"
#include "fe4dgs/rasterizer/render.hpp"
#include "fe4dgs/semantic/decoder.hpp"
#include "fe4dgs/semantic/prototypes.hpp"

namespace fe4dgs {

/// A backdrop plane (class 0) behind `blobs` clusters of concentric
/// Gaussians (classes 1..blobs), each moving on a scripted sinusoid.
struct SyntheticParams {
  std::uint64_t seed = 7;
  std::size_t width = 48;
  std::size_t height = 48;
  std::size_t frames = 20;
  std::size_t blobs = 3;
  std::size_t gaussians_per_blob = 4;
  std::size_t backdrop_grid = 8;        // backdrop Gaussians per side
  std::size_t teacher_channels = 16;    // C_t, at least blobs + 1
  std::size_t feature_height = 32;
  std::size_t feature_width = 32;
  double motion_amplitude = 0.25;       // world units
  double feature_scale = 1.0;           // norm of each class pattern
  double backdrop_depth = 4.0;
  double blob_scale = 0.085;            // outer blob Gaussian scale per unit depth
  double blob_spread = 0.26;            // blob distance from the optical axis per unit depth

  std::size_t classes() const { return blobs + 1; }

  void validate() const {
    if (width < 2 || height < 2) throw ConfigError("synthetic scene: resolution must be at least 2x2");
    if (frames == 0) throw ConfigError("synthetic scene: frame count must be positive");
    if (gaussians_per_blob == 0 || backdrop_grid < 2) throw ConfigError("synthetic scene: empty script");
    if (teacher_channels < classes()) throw ConfigError("synthetic scene: teacher_channels must be >= blobs + 1");
    if (feature_height == 0 || feature_width == 0) throw ConfigError("synthetic scene: zero feature resolution");
    if (!(motion_amplitude >= 0.0)) throw ConfigError("synthetic scene: motion amplitude must be >= 0");
  }
};

struct SyntheticScene {
  SyntheticParams params;
  GaussianCloud canonical;              // features hold the one-hot class id
  std::vector<std::size_t> blob_of;     // per Gaussian, 0 = backdrop
  std::vector<Vec3> blob_centres;       // canonical centre per blob (index 0 unused)
  std::vector<double> blob_phase;
  std::vector<CameraFrame> frames;
  std::vector<LabelMap> labels;         // image resolution

  Vec3 blob_offset(std::size_t blob, double t) const {
    if (blob == 0) return Vec3::Zero();
    const double a = params.motion_amplitude, ph = blob_phase[blob];
    const double w = 2.0 * std::numbers::pi * t;
    return Vec3(a * std::sin(w + ph), 0.5 * a * std::sin(2.0 * w + ph), 0.0);
  }

  GaussianCloud cloud_at(double t) const {
    GaussianCloud c = canonical;
    for (std::size_t i = 0; i < c.size(); ++i) c.set_position(i, c.position(i) + blob_offset(blob_of[i], t));
    return c;
  }
};

inline CameraFrame synthetic_camera(const SyntheticParams& p) {
  CameraFrame f;
  f.width = p.width;
  f.height = p.height;
  const double focal = static_cast<double>(std::max(p.width, p.height));
  f.intrinsics = make_intrinsics(focal, focal, 0.5 * static_cast<double>(p.width - 1),
                                 0.5 * static_cast<double>(p.height - 1));
  return f;
}

inline double uniform_time(std::size_t i, std::size_t count) {
  return count > 1 ? static_cast<double>(i) / static_cast<double>(count - 1) : 0.0;
}

/// Renders every frame of the scripted scene with the engine's rasterizer:
/// color, depth, an all-ones mask, teacher features (each class's pattern
/// blended by the compositing weights, then resized to the teacher
/// resolution) and per-pixel labels (class with the largest weight).
inline SyntheticScene make_synthetic_scene(const SyntheticParams& p) {
  p.validate();
  Pcg32 rng(p.seed);
  SyntheticScene s;
  s.params = p;
  const std::size_t classes = p.classes();
  const std::size_t g = p.backdrop_grid;
  const std::size_t count = g * g + p.blobs * p.gaussians_per_blob;
  s.canonical = GaussianCloud(count, classes);
  s.blob_of.assign(count, 0);
  const CameraFrame cam = synthetic_camera(p);
  const double half_x = p.backdrop_depth * 0.5 * static_cast<double>(p.width) / cam.fx() * 1.15;
  const double half_y = p.backdrop_depth * 0.5 * static_cast<double>(p.height) / cam.fy() * 1.15;

  auto set = [&](std::size_t i, const Vec3& pos, const Vec3& scale, const Vec3& color, double opacity, std::size_t cls) {
    s.canonical.set_position(i, pos);
    s.canonical.rotations[4 * i] = 1.0;
    for (int a = 0; a < 3; ++a) {
      s.canonical.log_scales[3 * i + a] = std::log(scale[a]);
      s.canonical.colors[3 * i + a] = color[a];
    }
    s.canonical.opacity_logits[i] = logit(opacity);
    s.canonical.features[i * classes + cls] = 1.0;
    s.blob_of[i] = cls;
  };

  std::size_t i = 0;
  const double step_x = 2.0 * half_x / static_cast<double>(g - 1), step_y = 2.0 * half_y / static_cast<double>(g - 1);
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c < g; ++c, ++i) {
      const double u = static_cast<double>(c) / static_cast<double>(g - 1);
      const double v = static_cast<double>(r) / static_cast<double>(g - 1);
      const Vec3 pos(-half_x + step_x * static_cast<double>(c), -half_y + step_y * static_cast<double>(r),
                     p.backdrop_depth + rng.uniform(-0.02, 0.02));
      const Vec3 color(0.25 + 0.45 * u, 0.30 + 0.35 * v, 0.55 - 0.25 * u * v);
      set(i, pos, Vec3(0.6 * step_x, 0.6 * step_y, 0.02), color, 0.98, 0);
    }
  }

  static constexpr std::array<std::array<double, 3>, 6> kPalette{
      {{0.90, 0.20, 0.15}, {0.15, 0.75, 0.25}, {0.20, 0.30, 0.90}, {0.95, 0.85, 0.10}, {0.80, 0.20, 0.80}, {0.10, 0.80, 0.85}}};
  s.blob_centres.assign(p.blobs + 1, Vec3::Zero());
  s.blob_phase.assign(p.blobs + 1, 0.0);
  for (std::size_t b = 1; b <= p.blobs; ++b) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(b - 1) / static_cast<double>(p.blobs) + 0.3;
    const double z = 2.5 + 0.5 * static_cast<double>(b - 1) / static_cast<double>(std::max<std::size_t>(p.blobs - 1, 1));
    const double radius = p.blobs > 1 ? p.blob_spread * z : 0.0;
    s.blob_centres[b] = Vec3(radius * std::cos(angle), radius * std::sin(angle), z);
    s.blob_phase[b] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const auto& base = kPalette[(b - 1) % kPalette.size()];
    for (std::size_t j = 0; j < p.gaussians_per_blob; ++j, ++i) {
      const double shrink = 1.0 - 0.6 * static_cast<double>(j) / static_cast<double>(p.gaussians_per_blob);
      // In-plane jitter only: every Gaussian of a blob sits at the scripted depth.
      const Vec3 jitter(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), 0.0);
      const Vec3 color(std::clamp(base[0] + 0.08 * static_cast<double>(j), 0.0, 1.0),
                       std::clamp(base[1] + 0.05 * static_cast<double>(j), 0.0, 1.0),
                       std::clamp(base[2] - 0.04 * static_cast<double>(j), 0.0, 1.0));
      set(i, s.blob_centres[b] + jitter * shrink, Vec3::Constant(p.blob_scale * z * shrink), color, 0.95, b);
    }
  }

  for (std::size_t fi = 0; fi < p.frames; ++fi) {
    CameraFrame f = cam;
    f.time = uniform_time(fi, p.frames);
    const RenderOutput r = render(s.cloud_at(f.time), f);
    f.image = r.color;
    f.depth = r.depth;
    f.mask = Tensor({p.height, p.width}, 1.0);
    Tensor teacher_hi({p.height, p.width, p.teacher_channels});
    LabelMap labels(p.height, p.width);
    for (std::size_t px = 0; px < p.height * p.width; ++px) {
      double best = -1.0;
      for (std::size_t k = 0; k < classes; ++k) {
        const double w = r.feature[px * classes + k];
        teacher_hi[px * p.teacher_channels + k] = p.feature_scale * w;
        if (w > best) {
          best = w;
          labels.labels[px] = static_cast<int>(k);
        }
      }
    }
    const auto plan = ResizePlan::make(p.height, p.width, p.feature_height, p.feature_width);
    f.features = from_hwc(resize_bilinear(plan, teacher_hi));
    s.frames.push_back(std::move(f));
    s.labels.push_back(std::move(labels));
  }
  return s;
}

}  // namespace fe4dgs
