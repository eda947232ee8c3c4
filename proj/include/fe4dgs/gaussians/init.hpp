#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <unordered_map>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/gaussians/camera.hpp"
#include "fe4dgs/gaussians/cloud.hpp"
#include "fe4dgs/numerics/rng.hpp"

namespace fe4dgs {

struct InitOptions {
  std::size_t feature_dim = 128;
  double initial_opacity = 0.1;
  std::uint64_t seed = 0;
  std::size_t neighbors = 3;
};

/// Back-projects pixel (u, v) with depth d through K^-1 and then T^-1.
inline Vec3 back_project(const CameraFrame& frame, double u, double v, double d) {
  const Vec3 cam = frame.intrinsics.inverse() * Vec3(u, v, 1.0) * d;
  const Mat3 r = frame.rotation();
  return r.transpose() * (cam - frame.translation());
}

/// Mean squared distance to the k nearest other points, via a uniform voxel
/// grid searched in growing Chebyshev shells.
inline std::vector<double> mean_sq_knn_distance(std::span<const Vec3> pts, std::size_t k) {
  const std::size_t n = pts.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  k = std::min(k, n - 1);

  Vec3 lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 extent = (hi - lo).cwiseMax(1e-12);
  double cell = std::cbrt(extent.prod() / static_cast<double>(n)) * 1.5;
  cell = std::max(cell, extent.maxCoeff() / 512.0);
  if (!(cell > 0.0)) cell = 1.0;

  auto key_of = [&](const std::array<std::int64_t, 3>& c) {
    return (c[0] * 73856093LL) ^ (c[1] * 19349663LL) ^ (c[2] * 83492791LL);
  };
  auto cell_of = [&](const Vec3& p) {
    return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor((p[0] - lo[0]) / cell)),
                                       static_cast<std::int64_t>(std::floor((p[1] - lo[1]) / cell)),
                                       static_cast<std::int64_t>(std::floor((p[2] - lo[2]) / cell))};
  };
  std::unordered_map<std::int64_t, std::vector<std::uint32_t>> grid;
  std::array<std::int64_t, 3> max_cell{0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    auto c = cell_of(pts[i]);
    for (int a = 0; a < 3; ++a) max_cell[a] = std::max(max_cell[a], c[a]);
    grid[key_of(c)].push_back(static_cast<std::uint32_t>(i));
  }
  const std::int64_t max_ring = std::max({max_cell[0], max_cell[1], max_cell[2]}) + 1;

  std::vector<double> best;
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cell_of(pts[i]);
    best.clear();
    for (std::int64_t r = 0; r <= max_ring; ++r) {
      for (std::int64_t dx = -r; dx <= r; ++dx) {
        for (std::int64_t dy = -r; dy <= r; ++dy) {
          for (std::int64_t dz = -r; dz <= r; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            auto it = grid.find(key_of({c[0] + dx, c[1] + dy, c[2] + dz}));
            if (it == grid.end()) continue;
            for (std::uint32_t j : it->second) {
              if (j == i) continue;
              const std::array<std::int64_t, 3> cj = cell_of(pts[j]);
              if (cj != std::array<std::int64_t, 3>{c[0] + dx, c[1] + dy, c[2] + dz}) continue;
              best.push_back((pts[j] - pts[i]).squaredNorm());
            }
          }
        }
      }
      if (best.size() >= k) {
        std::nth_element(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(k - 1), best.end());
        const double kth = best[k - 1];
        const double reach = static_cast<double>(r) * cell;
        if (kth <= reach * reach) break;
      }
    }
    std::partial_sort(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(k), best.end());
    out[i] = std::accumulate(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(k), 0.0) /
             static_cast<double>(k);
  }
  return out;
}

/// Holistic RGB-D initialization: every masked pixel with positive depth is
/// lifted to world space, the union over frames is uniformly subsampled
/// (seeded) to `target_count`, and isotropic scales come from the mean
/// distance to the nearest neighbours.
inline GaussianCloud init_from_rgbd(std::span<const CameraFrame> frames, std::size_t target_count,
                                    const InitOptions& options = {}) {
  if (frames.empty()) throw ConfigError("init_from_rgbd: at least one frame is required");
  if (target_count == 0) throw ConfigError("init_from_rgbd: target_count must be positive");

  struct Sample {
    Vec3 point;
    Vec3 color;
  };
  std::vector<Sample> samples;
  for (const auto& frame : frames) {
    frame.validate();
    if (frame.depth.empty()) throw DataError("init_from_rgbd: frame without depth");
    const Mat3 k_inv = frame.intrinsics.inverse();
    const Mat3 r_t = frame.rotation().transpose();
    const Vec3 t = frame.translation();
    for (std::size_t v = 0; v < frame.height; ++v) {
      for (std::size_t u = 0; u < frame.width; ++u) {
        const std::size_t pix = v * frame.width + u;
        if (!frame.mask.empty() && !(frame.mask[pix] > 0.5)) continue;
        const double d = frame.depth[pix];
        if (!(d > 0.0)) continue;
        const Vec3 cam = k_inv * Vec3(static_cast<double>(u), static_cast<double>(v), 1.0) * d;
        Vec3 color = Vec3::Constant(0.5);
        if (!frame.image.empty()) color = Vec3(frame.image.at(v, u, 0), frame.image.at(v, u, 1), frame.image.at(v, u, 2));
        samples.push_back({r_t * (cam - t), color});
      }
    }
  }
  if (samples.empty()) throw DataError("init_from_rgbd: no masked pixels with positive depth");

  std::vector<std::size_t> chosen(samples.size());
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  if (samples.size() > target_count) {
    Pcg32 rng(options.seed);
    for (std::size_t i = 0; i < target_count; ++i) {
      const auto span = static_cast<std::uint32_t>(samples.size() - i);
      std::swap(chosen[i], chosen[i + rng.below(span)]);
    }
    chosen.resize(target_count);
    std::sort(chosen.begin(), chosen.end());
  }

  const std::size_t count = chosen.size();
  GaussianCloud cloud(count, options.feature_dim);
  std::vector<Vec3> pts(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Sample& s = samples[chosen[i]];
    pts[i] = s.point;
    cloud.set_position(i, s.point);
    for (int c = 0; c < 3; ++c) cloud.colors[3 * i + c] = std::clamp(s.color[c], 0.0, 1.0);
    cloud.rotations[4 * i] = 1.0;
    cloud.opacity_logits[i] = logit(options.initial_opacity);
  }
  const auto dist2 = mean_sq_knn_distance(pts, options.neighbors);
  double fallback = 1e-2;
  if (count >= 2) {
    Vec3 lo = pts[0], hi = pts[0];
    for (const auto& p : pts) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    fallback = std::max(1e-7, ((hi - lo).norm() * 1e-3) * ((hi - lo).norm() * 1e-3));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const double d2 = count >= 2 ? std::max(dist2[i], 1e-7) : fallback;
    const double ls = std::log(std::sqrt(d2));
    for (int a = 0; a < 3; ++a) cloud.log_scales[3 * i + a] = ls;
  }
  return cloud;
}

/// Radius of the sphere around the centroid of the camera centres, scaled
/// by 1.1 (the conventional "cameras extent"); falls back to the cloud's
/// bounding radius when there is a single fixed viewpoint.
inline double scene_extent(std::span<const CameraFrame> frames, const GaussianCloud& cloud) {
  Vec3 centroid = Vec3::Zero();
  std::vector<Vec3> centres;
  for (const auto& f : frames) {
    centres.push_back(-f.rotation().transpose() * f.translation());
    centroid += centres.back();
  }
  double radius = 0.0;
  if (!centres.empty()) {
    centroid /= static_cast<double>(centres.size());
    for (const auto& c : centres) radius = std::max(radius, (c - centroid).norm());
  }
  if (radius < 1e-6 && cloud.size() > 0) {
    Vec3 mean = Vec3::Zero();
    for (std::size_t i = 0; i < cloud.size(); ++i) mean += cloud.position(i);
    mean /= static_cast<double>(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) radius = std::max(radius, (cloud.position(i) - mean).norm());
  }
  return std::max(radius, 1e-6) * 1.1;
}

}  // namespace fe4dgs
