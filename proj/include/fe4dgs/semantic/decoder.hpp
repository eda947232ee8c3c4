#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/numerics/mlp.hpp"
#include "fe4dgs/numerics/rng.hpp"
#include "fe4dgs/numerics/tensor.hpp"
#include "fe4dgs/semantic/feature_map.hpp"

namespace fe4dgs {

/// Bilinear resampling weights from an (in_h, in_w) grid to (out_h, out_w),
/// half-pixel centres (align_corners = false), edges clamped. Equal sizes
/// reduce to the identity.
struct ResizePlan {
  std::size_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::vector<std::array<std::uint32_t, 4>> taps;  // per output pixel
  std::vector<std::array<double, 4>> weights;

  static ResizePlan make(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w) {
    if (in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) throw ConfigError("ResizePlan: zero-sized grid");
    ResizePlan p{in_h, in_w, out_h, out_w, {}, {}};
    p.taps.resize(out_h * out_w);
    p.weights.resize(out_h * out_w);
    auto axis = [](std::size_t dst, std::size_t in, std::size_t out, std::size_t& i0, std::size_t& i1, double& f) {
      double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      i0 = static_cast<std::size_t>(std::floor(src));
      i1 = std::min(i0 + 1, in - 1);
      f = src - static_cast<double>(i0);
    };
    for (std::size_t y = 0; y < out_h; ++y) {
      std::size_t y0, y1;
      double fy;
      axis(y, in_h, out_h, y0, y1, fy);
      for (std::size_t x = 0; x < out_w; ++x) {
        std::size_t x0, x1;
        double fx;
        axis(x, in_w, out_w, x0, x1, fx);
        const std::size_t o = y * out_w + x;
        p.taps[o] = {static_cast<std::uint32_t>(y0 * in_w + x0), static_cast<std::uint32_t>(y0 * in_w + x1),
                     static_cast<std::uint32_t>(y1 * in_w + x0), static_cast<std::uint32_t>(y1 * in_w + x1)};
        p.weights[o] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
      }
    }
    return p;
  }
};

/// Resamples an [in_h, in_w, C] tensor with `plan`.
inline Tensor resize_bilinear(const ResizePlan& plan, const Tensor& in) {
  if (in.rank() != 3 || in.dim(0) != plan.in_h || in.dim(1) != plan.in_w) {
    throw ConfigError("resize_bilinear: input shape " + in.shape_string() + " does not match plan");
  }
  const std::size_t c = in.dim(2);
  Tensor out({plan.out_h, plan.out_w, c});
  for (std::size_t o = 0; o < plan.taps.size(); ++o) {
    double* dst = out.data() + o * c;
    for (int k = 0; k < 4; ++k) {
      const double w = plan.weights[o][static_cast<std::size_t>(k)];
      if (w == 0.0) continue;
      const double* src = in.data() + plan.taps[o][static_cast<std::size_t>(k)] * c;
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += w * src[ch];
    }
  }
  return out;
}

/// Adjoint of resize_bilinear.
inline Tensor resize_bilinear_backward(const ResizePlan& plan, const Tensor& grad_out) {
  const std::size_t c = grad_out.dim(2);
  Tensor g({plan.in_h, plan.in_w, c});
  for (std::size_t o = 0; o < plan.taps.size(); ++o) {
    const double* src = grad_out.data() + o * c;
    for (int k = 0; k < 4; ++k) {
      const double w = plan.weights[o][static_cast<std::size_t>(k)];
      if (w == 0.0) continue;
      double* dst = g.data() + plan.taps[o][static_cast<std::size_t>(k)] * c;
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += w * src[ch];
    }
  }
  return g;
}

/// Maps N rendered channels to C_t teacher channels per pixel: y = W v + b.
struct PointwiseDecoder {
  std::size_t in_channels = 0;   // N
  std::size_t out_channels = 0;  // C_t
  std::vector<double> weight;    // C_t x N, row-major
  std::vector<double> bias;      // C_t

  static PointwiseDecoder create(std::size_t n, std::size_t c_t, Pcg32& rng) {
    if (n == 0 || c_t == 0) throw ConfigError("PointwiseDecoder: channel counts must be positive");
    PointwiseDecoder d{n, c_t, std::vector<double>(n * c_t), std::vector<double>(c_t, 0.0)};
    const double bound = std::sqrt(6.0 / static_cast<double>(n));
    for (double& w : d.weight) w = rng.uniform(-bound, bound);
    return d;
  }

  std::size_t num_params() const { return weight.size() + bias.size(); }

  bool operator==(const PointwiseDecoder&) const = default;
};

struct DecodedFeatures {
  Tensor features;  // [H_f, W_f, C_t]
  Tensor resized;   // [H_f, W_f, N], kept for the backward pass
  ResizePlan plan;
};

/// Bilinear resize of the rendered [H, W, N] map to (out_h, out_w), then the
/// per-pixel affine map.
inline DecodedFeatures decode_features(const PointwiseDecoder& dec, const Tensor& rendered, std::size_t out_h,
                                       std::size_t out_w) {
  if (rendered.rank() != 3 || rendered.dim(2) != dec.in_channels) {
    throw ConfigError("decode_features: rendered map " + rendered.shape_string() + " does not have " +
                      std::to_string(dec.in_channels) + " channels");
  }
  DecodedFeatures out;
  out.plan = ResizePlan::make(rendered.dim(0), rendered.dim(1), out_h, out_w);
  out.resized = resize_bilinear(out.plan, rendered);
  const auto p = static_cast<Eigen::Index>(out_h * out_w);
  out.features = Tensor({out_h, out_w, dec.out_channels});
  // Owning operands keep the result independent of buffer alignment.
  const RowMatrix v = ConstMatrixMap(out.resized.data(), p, static_cast<Eigen::Index>(dec.in_channels));
  const RowMatrix w = ConstMatrixMap(dec.weight.data(), static_cast<Eigen::Index>(dec.out_channels),
                                     static_cast<Eigen::Index>(dec.in_channels));
  const Eigen::RowVectorXd b = Eigen::Map<const Eigen::RowVectorXd>(dec.bias.data(), static_cast<Eigen::Index>(dec.out_channels));
  RowMatrix y = v * w.transpose();
  y.rowwise() += b;
  MatrixMap(out.features.data(), p, static_cast<Eigen::Index>(dec.out_channels)) = y;
  return out;
}

struct DecoderGradients {
  std::vector<double> weight;
  std::vector<double> bias;
  Tensor rendered;  // dL/d rendered map, [H, W, N]
};

inline DecoderGradients decode_features_backward(const PointwiseDecoder& dec, const DecodedFeatures& fwd,
                                                 const Tensor& grad) {
  if (!grad.same_shape(fwd.features)) throw ConfigError("decode_features_backward: gradient shape mismatch");
  const auto p = static_cast<Eigen::Index>(fwd.plan.out_h * fwd.plan.out_w);
  const auto n = static_cast<Eigen::Index>(dec.in_channels), c = static_cast<Eigen::Index>(dec.out_channels);
  DecoderGradients out{std::vector<double>(dec.weight.size()), std::vector<double>(dec.bias.size()), {}};
  const RowMatrix g = ConstMatrixMap(grad.data(), p, c);
  const RowMatrix v = ConstMatrixMap(fwd.resized.data(), p, n);
  const RowMatrix w = ConstMatrixMap(dec.weight.data(), c, n);
  MatrixMap(out.weight.data(), c, n) = RowMatrix(g.transpose() * v);
  Eigen::Map<Eigen::RowVectorXd>(out.bias.data(), c) = Eigen::RowVectorXd(g.colwise().sum());
  Tensor dv({fwd.plan.out_h, fwd.plan.out_w, dec.in_channels});
  MatrixMap(dv.data(), p, n) = RowMatrix(g * w);
  out.rendered = resize_bilinear_backward(fwd.plan, dv);
  return out;
}

/// Channel-major FeatureMap as an [H, W, C] tensor.
inline Tensor to_hwc(const FeatureMap& m) {
  Tensor t({m.height, m.width, m.channels});
  for (std::size_t c = 0; c < m.channels; ++c) {
    for (std::size_t y = 0; y < m.height; ++y) {
      for (std::size_t x = 0; x < m.width; ++x) t.at(y, x, c) = m.at(c, y, x);
    }
  }
  return t;
}

inline FeatureMap from_hwc(const Tensor& t) {
  if (t.rank() != 3) throw ConfigError("from_hwc: expected an [H, W, C] tensor");
  FeatureMap m{t.dim(2), t.dim(0), t.dim(1), std::vector<double>(t.size())};
  for (std::size_t c = 0; c < m.channels; ++c) {
    for (std::size_t y = 0; y < m.height; ++y) {
      for (std::size_t x = 0; x < m.width; ++x) m.at(c, y, x) = t.at(y, x, c);
    }
  }
  return m;
}

/// Mean over pixels of the channel-summed L1 distance. When `grad` is given
/// it receives dL/dpred.
inline double feature_loss(const Tensor& pred, const FeatureMap& gt, Tensor* grad = nullptr) {
  if (pred.rank() != 3 || pred.dim(0) != gt.height || pred.dim(1) != gt.width || pred.dim(2) != gt.channels) {
    throw ConfigError("feature_loss: prediction " + pred.shape_string() + " does not match teacher map (" +
                      std::to_string(gt.channels) + ", " + std::to_string(gt.height) + ", " +
                      std::to_string(gt.width) + ")");
  }
  const double inv = 1.0 / static_cast<double>(gt.height * gt.width);
  if (grad) *grad = Tensor(pred.shape());
  double sum = 0.0;
  for (std::size_t y = 0; y < gt.height; ++y) {
    for (std::size_t x = 0; x < gt.width; ++x) {
      for (std::size_t c = 0; c < gt.channels; ++c) {
        const double d = pred.at(y, x, c) - gt.at(c, y, x);
        sum += std::abs(d);
        if (grad) grad->at(y, x, c) = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
      }
    }
  }
  return sum * inv;
}

}  // namespace fe4dgs
