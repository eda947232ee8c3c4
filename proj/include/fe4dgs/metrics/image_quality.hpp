#pragma once

#include <array>
#include <cmath>
#include <limits>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/numerics/tensor.hpp"

namespace fe4dgs {

/// 10 log10(1 / MSE) over every element; +inf when the images are equal.
inline double psnr(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ConfigError("psnr: shapes " + a.shape_string() + " and " + b.shape_string() + " differ");
  if (a.empty()) throw ConfigError("psnr: empty image");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

/// Rec. 601 luma for [H, W, 3]; [H, W] passes through.
inline Tensor to_luma(const Tensor& img) {
  if (img.rank() == 2) return img;
  if (img.rank() != 3 || img.dim(2) != 3) throw ConfigError("to_luma: expected [H, W] or [H, W, 3], got " + img.shape_string());
  Tensor y({img.dim(0), img.dim(1)});
  for (std::size_t p = 0; p < y.size(); ++p) {
    y[p] = 0.299 * img[3 * p] + 0.587 * img[3 * p + 1] + 0.114 * img[3 * p + 2];
  }
  return y;
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Mean local SSIM of the luma channels over every window position that
/// fits inside the image (no padding), Gaussian-weighted.
inline double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt = {}) {
  if (!a.same_shape(b)) throw ConfigError("ssim: shapes " + a.shape_string() + " and " + b.shape_string() + " differ");
  const Tensor x = to_luma(a), y = to_luma(b);
  const auto win = static_cast<std::size_t>(opt.window);
  const std::size_t h = x.dim(0), w = x.dim(1);
  if (h < win || w < win) {
    throw ConfigError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                      std::to_string(win) + "x" + std::to_string(win) + " window");
  }
  std::vector<double> g(win);
  double norm = 0.0;
  const double centre = 0.5 * static_cast<double>(win - 1);
  for (std::size_t i = 0; i < win; ++i) {
    const double d = static_cast<double>(i) - centre;
    g[i] = std::exp(-d * d / (2.0 * opt.sigma * opt.sigma));
    norm += g[i];
  }
  for (double& v : g) v /= norm;

  // Separable weighted moments: horizontal pass then vertical pass.
  const std::size_t ow = w - win + 1, oh = h - win + 1;
  auto filter = [&](auto value) {
    Tensor horiz({h, ow});
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < win; ++k) s += g[k] * value(r, c + k);
        horiz.at(r, c) = s;
      }
    }
    Tensor out({oh, ow});
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < win; ++k) s += g[k] * horiz.at(r + k, c);
        out.at(r, c) = s;
      }
    }
    return out;
  };
  const Tensor mx = filter([&](std::size_t r, std::size_t c) { return x.at(r, c); });
  const Tensor my = filter([&](std::size_t r, std::size_t c) { return y.at(r, c); });
  const Tensor sxx = filter([&](std::size_t r, std::size_t c) { return x.at(r, c) * x.at(r, c); });
  const Tensor syy = filter([&](std::size_t r, std::size_t c) { return y.at(r, c) * y.at(r, c); });
  const Tensor sxy = filter([&](std::size_t r, std::size_t c) { return x.at(r, c) * y.at(r, c); });
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + opt.c1) * (2.0 * cxy + opt.c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + opt.c1) * (vx + vy + opt.c2));
  }
  return total / static_cast<double>(mx.size());
}

}  // namespace fe4dgs
