#pragma once

#include <cmath>
#include <span>

#include "fe4dgs/gaussians/camera.hpp"
#include "fe4dgs/hexplane.hpp"
#include "fe4dgs/rasterizer/render.hpp"
#include "fe4dgs/semantic/decoder.hpp"
#include "fe4dgs/training/config.hpp"

namespace fe4dgs {

struct LossBreakdown {
  double total = 0.0;
  double rgb = 0.0;
  double depth = 0.0;
  double feat = 0.0;
  double tv = 0.0;
};

/// Cotangents produced by total_loss, already scaled by the loss weights.
struct LossGradients {
  RenderCotangent render;
  Tensor decoded;  // dL/d decoded teacher-space features; empty when unused
};

/// Weighted sum of the color, depth, feature and TV terms.
///
/// Color: mean absolute error over masked pixels and the three channels.
/// Depth: mean absolute error over masked pixels whose rendered alpha is at
/// least `depth_alpha_threshold`; the selection itself carries no gradient.
/// Feature: `decoded` against the frame's teacher map; zero when `decoded`
/// is null. TV: over `field`; zero when `field` is null.
/// With `grads`, cotangents are written there and the TV gradient is added
/// into `grid_grad`.
inline LossBreakdown total_loss(const RenderOutput& r, const CameraFrame& frame, const Tensor* decoded,
                                const HexPlaneField* field, const TrainConfig& cfg, LossGradients* grads = nullptr,
                                std::span<double> grid_grad = {}) {
  const std::size_t h = r.height, w = r.width, hw = h * w;
  if (frame.height != h || frame.width != w) throw ConfigError("total_loss: render and frame differ in size");
  if (frame.image.empty()) throw DataError("total_loss: frame has no color image");
  auto masked = [&](std::size_t p) { return frame.mask.empty() || frame.mask[p] > 0.5; };

  LossBreakdown out;
  if (grads) {
    grads->render = RenderCotangent{Tensor({h, w, 3}), Tensor({h, w}), {}, {}};
    grads->decoded = Tensor();
  }

  std::size_t color_pixels = 0;
  for (std::size_t p = 0; p < hw; ++p) color_pixels += masked(p);
  if (color_pixels > 0) {
    const double inv = 1.0 / (3.0 * static_cast<double>(color_pixels));
    double sum = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      if (!masked(p)) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = r.color[3 * p + c] - frame.image[3 * p + c];
        sum += std::abs(d);
        if (grads) grads->render.color[3 * p + c] = cfg.lambda_rgb * inv * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
      }
    }
    out.rgb = sum * inv;
  }

  if (!frame.depth.empty()) {
    std::size_t count = 0;
    for (std::size_t p = 0; p < hw; ++p) count += masked(p) && r.alpha[p] >= cfg.depth_alpha_threshold;
    if (count > 0) {
      const double inv = 1.0 / static_cast<double>(count);
      double sum = 0.0;
      for (std::size_t p = 0; p < hw; ++p) {
        if (!masked(p) || r.alpha[p] < cfg.depth_alpha_threshold) continue;
        const double d = r.depth[p] - frame.depth[p];
        sum += std::abs(d);
        if (grads) grads->render.depth[p] = cfg.lambda_depth * inv * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
      }
      out.depth = sum * inv;
    }
  }

  if (decoded) {
    if (!frame.features) throw ConfigError("total_loss: feature term requested but the frame has no teacher map");
    Tensor g;
    out.feat = feature_loss(*decoded, *frame.features, grads ? &g : nullptr);
    if (grads) {
      for (double& v : g.storage()) v *= cfg.lambda_feat;
      grads->decoded = std::move(g);
    }
  }

  if (field) out.tv = tv_loss(*field, grads ? grid_grad : std::span<double>{}, cfg.lambda_tv);

  out.total = cfg.lambda_rgb * out.rgb + cfg.lambda_depth * out.depth + cfg.lambda_feat * out.feat +
              cfg.lambda_tv * out.tv;
  return out;
}

}  // namespace fe4dgs
