#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/gaussians/camera.hpp"
#include "fe4dgs/gaussians/cloud.hpp"
#include "fe4dgs/numerics/parallel.hpp"
#include "fe4dgs/numerics/tensor.hpp"
#include "fe4dgs/rasterizer/projection.hpp"
#include "fe4dgs/rasterizer/tiles.hpp"

namespace fe4dgs {

/// One composited Gaussian at one pixel.
struct Contribution {
  std::uint32_t list_pos;  // position in the tile's list
  double alpha;
  double gauss;            // exp(power), before opacity and the cap
  double transmittance;    // T before this Gaussian
};

/// Everything render_backward needs to replay the compositing.
struct CompositingRecord {
  std::vector<ProjectedGaussian> projected;
  TileBins bins;
  std::vector<std::vector<Contribution>> per_tile;
  std::vector<std::uint32_t> pixel_begin;  // offset into the pixel's tile vector
  std::vector<std::uint32_t> pixel_count;
  std::vector<double> final_transmittance;
  std::uint64_t fingerprint = 0;
};

struct RenderOutput {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t feature_dim = 0;
  Tensor color;    // [H, W, 3]
  Tensor depth;    // [H, W]
  Tensor feature;  // [H, W, N]
  Tensor alpha;    // [H, W]
  CompositingRecord record;
};

namespace detail {
inline void fnv_mix(std::uint64_t& h, const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

inline std::uint64_t render_fingerprint(const GaussianCloud& g, const CameraFrame& frame) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix_vec = [&](const std::vector<double>& v) { fnv_mix(h, v.data(), v.size() * sizeof(double)); };
  mix_vec(g.positions);
  mix_vec(g.rotations);
  mix_vec(g.log_scales);
  mix_vec(g.opacity_logits);
  mix_vec(g.colors);
  mix_vec(g.features);
  fnv_mix(h, frame.intrinsics.data(), 9 * sizeof(double));
  fnv_mix(h, frame.extrinsics.data(), 16 * sizeof(double));
  fnv_mix(h, &frame.width, sizeof(frame.width));
  fnv_mix(h, &frame.height, sizeof(frame.height));
  return h;
}

inline double gaussian_power(const ProjectedGaussian& g, double px, double py) {
  const double dx = px - g.mean2d.x(), dy = py - g.mean2d.y();
  return -0.5 * (g.conic[0] * dx * dx + g.conic[2] * dy * dy) - g.conic[1] * dx * dy;
}
}  // namespace detail

/// Tile-based front-to-back compositing of color, view depth and the N
/// feature channels with identical weights w_i = alpha_i * T_i.
inline RenderOutput render(const GaussianCloud& snapshot, const CameraFrame& frame, const RenderSettings& settings = {}) {
  const std::size_t h = frame.height, w = frame.width, n = snapshot.feature_dim;
  if (h == 0 || w == 0) throw ConfigError("render: frame has zero size");
  RenderOutput out;
  out.width = w;
  out.height = h;
  out.feature_dim = n;
  out.color = Tensor({h, w, 3});
  out.depth = Tensor({h, w});
  out.feature = Tensor({h, w, n});
  out.alpha = Tensor({h, w});

  CompositingRecord& rec = out.record;
  rec.fingerprint = detail::render_fingerprint(snapshot, frame);
  rec.projected = project(snapshot, frame, settings);
  const auto order = depth_order(rec.projected);
  rec.bins = bin_tiles(rec.projected, order, h, w, settings.tile_size);
  rec.per_tile.resize(rec.bins.num_tiles());
  rec.pixel_begin.assign(h * w, 0);
  rec.pixel_count.assign(h * w, 0);
  rec.final_transmittance.assign(h * w, 1.0);

  const int ts = rec.bins.tile_size;
  parallel_for(rec.bins.num_tiles(), settings.threads, [&](std::size_t tile) {
    const auto& list = rec.bins.lists[tile];
    auto& contribs = rec.per_tile[tile];
    const std::size_t tx = tile % static_cast<std::size_t>(rec.bins.tiles_x);
    const std::size_t ty = tile / static_cast<std::size_t>(rec.bins.tiles_x);
    const std::size_t x_end = std::min(w, (tx + 1) * static_cast<std::size_t>(ts));
    const std::size_t y_end = std::min(h, (ty + 1) * static_cast<std::size_t>(ts));
    for (std::size_t py = ty * static_cast<std::size_t>(ts); py < y_end; ++py) {
      for (std::size_t px = tx * static_cast<std::size_t>(ts); px < x_end; ++px) {
        const std::size_t pix = py * w + px;
        rec.pixel_begin[pix] = static_cast<std::uint32_t>(contribs.size());
        double t = 1.0;
        double c[3] = {0, 0, 0};
        double d = 0.0;
        double* f = out.feature.data() + pix * n;
        for (std::uint32_t pos = 0; pos < list.size(); ++pos) {
          const ProjectedGaussian& g = rec.projected[list[pos]];
          if (!in_footprint(g, static_cast<double>(px), static_cast<double>(py))) continue;
          const double power = detail::gaussian_power(g, static_cast<double>(px), static_cast<double>(py));
          if (power > 0.0) continue;
          const double gauss = std::exp(power);
          const double alpha = std::min(settings.alpha_cap, g.opacity * gauss);
          if (alpha < settings.alpha_min) continue;
          const double weight = alpha * t;
          for (int k = 0; k < 3; ++k) c[k] += weight * g.color[k];
          d += weight * g.view_depth;
          const double* z = snapshot.feature(g.source);
          for (std::size_t k = 0; k < n; ++k) f[k] += weight * z[k];
          contribs.push_back({pos, alpha, gauss, t});
          t *= 1.0 - alpha;
          if (t < settings.min_transmittance) break;
        }
        rec.pixel_count[pix] = static_cast<std::uint32_t>(contribs.size()) - rec.pixel_begin[pix];
        rec.final_transmittance[pix] = t;
        for (int k = 0; k < 3; ++k) out.color[pix * 3 + static_cast<std::size_t>(k)] = c[k] + t * settings.background[k];
        out.depth[pix] = d;
        out.alpha[pix] = 1.0 - t;
      }
    }
  });
  return out;
}

/// Cotangents of a scalar loss with respect to the render outputs. Empty
/// tensors stand for zero.
struct RenderCotangent {
  Tensor color;
  Tensor depth;
  Tensor feature;
  Tensor alpha;
};

struct RenderGradients {
  GaussianCloud params;                   // dL/d raw snapshot parameters
  std::vector<double> viewspace_grad;     // |dL/d mean2d| in NDC units, per Gaussian
  std::vector<std::uint8_t> visible;      // Gaussian was binned into at least one tile
};

/// Exact gradients of the compositing, alpha evaluation, EWA projection,
/// covariance composition and activations. Per-tile partial gradients are
/// merged in fixed tile order, so results do not depend on the thread count.
inline RenderGradients render_backward(const GaussianCloud& snapshot, const CameraFrame& frame, const RenderOutput& out,
                                       const RenderCotangent& cot, const RenderSettings& settings = {}) {
  const CompositingRecord& rec = out.record;
  if (rec.fingerprint != detail::render_fingerprint(snapshot, frame) || out.width != frame.width ||
      out.height != frame.height) {
    throw ContractError("render_backward: compositing record does not match this snapshot/frame");
  }
  const std::size_t h = out.height, w = out.width, n = snapshot.feature_dim;
  auto check = [&](const Tensor& t, std::vector<std::size_t> shape, const char* name) {
    if (!t.empty() && t.shape() != shape) throw ConfigError(std::string("render_backward: bad shape for ") + name);
  };
  check(cot.color, {h, w, 3}, "dL/dcolor");
  check(cot.depth, {h, w}, "dL/ddepth");
  check(cot.feature, {h, w, n}, "dL/dfeature");
  check(cot.alpha, {h, w}, "dL/dalpha");

  // Per tile list entry: mean2d(2) conic(3) opacity(1) color(3) depth(1) feature(n).
  const std::size_t stride = 10 + n;
  std::vector<std::vector<double>> partial(rec.bins.num_tiles());
  const int ts = rec.bins.tile_size;

  parallel_for(rec.bins.num_tiles(), settings.threads, [&](std::size_t tile) {
    const auto& list = rec.bins.lists[tile];
    const auto& contribs = rec.per_tile[tile];
    auto& acc = partial[tile];
    acc.assign(list.size() * stride, 0.0);
    const std::size_t tx = tile % static_cast<std::size_t>(rec.bins.tiles_x);
    const std::size_t ty = tile / static_cast<std::size_t>(rec.bins.tiles_x);
    const std::size_t x_end = std::min(w, (tx + 1) * static_cast<std::size_t>(ts));
    const std::size_t y_end = std::min(h, (ty + 1) * static_cast<std::size_t>(ts));
    std::vector<double> suffix_f(n);
    for (std::size_t py = ty * static_cast<std::size_t>(ts); py < y_end; ++py) {
      for (std::size_t px = tx * static_cast<std::size_t>(ts); px < x_end; ++px) {
        const std::size_t pix = py * w + px;
        const double gc[3] = {cot.color.empty() ? 0.0 : cot.color[pix * 3], cot.color.empty() ? 0.0 : cot.color[pix * 3 + 1],
                              cot.color.empty() ? 0.0 : cot.color[pix * 3 + 2]};
        const double gd = cot.depth.empty() ? 0.0 : cot.depth[pix];
        const double ga = cot.alpha.empty() ? 0.0 : cot.alpha[pix];
        const double* gf = cot.feature.empty() ? nullptr : cot.feature.data() + pix * n;
        const double t_final = rec.final_transmittance[pix];

        // Suffix sums of everything behind the current Gaussian, including background.
        double suffix_c = t_final * (gc[0] * settings.background[0] + gc[1] * settings.background[1] +
                                     gc[2] * settings.background[2]);
        double suffix_d = 0.0;
        double suffix_fdot = 0.0;
        const std::uint32_t begin = rec.pixel_begin[pix];
        for (std::uint32_t k = rec.pixel_count[pix]; k-- > 0;) {
          const Contribution& ct = contribs[begin + k];
          const ProjectedGaussian& g = rec.projected[list[ct.list_pos]];
          double* a = acc.data() + ct.list_pos * stride;
          const double weight = ct.alpha * ct.transmittance;
          const double* z = snapshot.feature(g.source);

          double own = gc[0] * g.color[0] + gc[1] * g.color[1] + gc[2] * g.color[2] + gd * g.view_depth;
          for (int c = 0; c < 3; ++c) a[6 + c] += weight * gc[c];
          a[9] += weight * gd;
          double fdot = 0.0;
          if (gf) {
            for (std::size_t c = 0; c < n; ++c) {
              a[10 + c] += weight * gf[c];
              fdot += gf[c] * z[c];
            }
          }
          own += fdot;
          const double one_minus = 1.0 - ct.alpha;
          const double d_alpha = ct.transmittance * own - (suffix_c + suffix_d + suffix_fdot) / one_minus +
                                 ga * t_final / one_minus;
          suffix_c += weight * (gc[0] * g.color[0] + gc[1] * g.color[1] + gc[2] * g.color[2]);
          suffix_d += weight * gd * g.view_depth;
          suffix_fdot += weight * fdot;

          if (g.opacity * ct.gauss >= settings.alpha_cap) continue;  // clamped alpha is constant
          a[5] += d_alpha * ct.gauss;
          const double d_power = d_alpha * g.opacity * ct.gauss;
          const double dx = static_cast<double>(px) - g.mean2d.x(), dy = static_cast<double>(py) - g.mean2d.y();
          a[0] += d_power * (g.conic[0] * dx + g.conic[1] * dy);
          a[1] += d_power * (g.conic[1] * dx + g.conic[2] * dy);
          a[2] += d_power * (-0.5 * dx * dx);
          a[3] += d_power * (-dx * dy);
          a[4] += d_power * (-0.5 * dy * dy);
        }
      }
    }
  });

  // Deterministic merge in tile order.
  const std::size_t np = rec.projected.size();
  std::vector<double> merged(np * stride, 0.0);
  std::vector<std::uint8_t> touched(np, 0);
  for (std::size_t tile = 0; tile < rec.bins.num_tiles(); ++tile) {
    const auto& list = rec.bins.lists[tile];
    for (std::size_t pos = 0; pos < list.size(); ++pos) {
      const double* src = partial[tile].data() + pos * stride;
      double* dst = merged.data() + list[pos] * stride;
      for (std::size_t c = 0; c < stride; ++c) dst[c] += src[c];
      touched[list[pos]] = 1;
    }
  }

  RenderGradients result;
  result.params = GaussianCloud::zeros_like(snapshot);
  result.viewspace_grad.assign(snapshot.size(), 0.0);
  result.visible.assign(snapshot.size(), 0);
  parallel_for(np, settings.threads, [&](std::size_t j) {
    if (!touched[j]) return;
    const ProjectedGaussian& g = rec.projected[j];
    const double* m = merged.data() + j * stride;
    ProjectedGrad pg;
    pg.mean2d = Vec2(m[0], m[1]);
    pg.conic = Vec3(m[2], m[3], m[4]);
    pg.opacity = m[5];
    pg.color = Vec3(m[6], m[7], m[8]);
    pg.depth = m[9];
    project_one_backward(snapshot, g.source, frame, settings, pg, result.params);
    for (std::size_t c = 0; c < n; ++c) result.params.features[g.source * n + c] += m[10 + c];
    const double ndc_x = m[0] * 0.5 * static_cast<double>(w), ndc_y = m[1] * 0.5 * static_cast<double>(h);
    result.viewspace_grad[g.source] = std::sqrt(ndc_x * ndc_x + ndc_y * ndc_y);
    result.visible[g.source] = 1;
  });
  return result;
}

}  // namespace fe4dgs
