#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/metrics/image_quality.hpp"
#include "fe4dgs/numerics/rng.hpp"

using namespace fe4dgs;

namespace {

Tensor random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Pcg32 rng(seed);
  Tensor t({h, w, 3});
  for (double& v : t.storage()) v = rng.uniform(0.0, 1.0);
  return t;
}

}  // namespace

TEST(Psnr, EqualImagesGiveInfinity) {
  const Tensor a = random_image(8, 8, 1);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
}

TEST(Psnr, UniformOffsetOfTenthIsTwentyDb) {
  const Tensor a({4, 5, 3}, 0.3), b({4, 5, 3}, 0.4);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);
}

TEST(Psnr, MatchesTwoLineOracle) {
  const Tensor a = random_image(9, 7, 2), b = random_image(9, 7, 3);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]) / static_cast<double>(a.size());
  EXPECT_NEAR(psnr(a, b), -10.0 * std::log10(mse), 1e-12);
}

TEST(Psnr, ShapeMismatchThrows) {
  EXPECT_THROW(psnr(Tensor({2, 2, 3}), Tensor({2, 3, 3})), ConfigError);
}

TEST(Ssim, IdenticalImagesGiveOne) {
  const Tensor a = random_image(16, 16, 4);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, ConstantImagesMatchClosedForm) {
  // Zero variances leave only the luminance term.
  const double x = 0.2, y = 0.7;
  const Tensor a({12, 13, 3}, x), b({12, 13, 3}, y);
  const SsimOptions o;
  const double expected = (2 * x * y + o.c1) / (x * x + y * y + o.c1);
  EXPECT_NEAR(ssim(a, b), expected, 1e-12);
}

TEST(Ssim, IsSymmetric) {
  const Tensor a = random_image(20, 15, 5), b = random_image(20, 15, 6);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-14);
}

TEST(Ssim, StaysWithinUnitInterval) {
  const Tensor a = random_image(14, 14, 7);
  Tensor b = a;
  for (double& v : b.storage()) v = 1.0 - v;
  const double s = ssim(a, b);
  EXPECT_GE(s, -1.0);
  EXPECT_LT(s, 0.0);
}

TEST(Ssim, ImageSmallerThanWindowThrows) {
  EXPECT_THROW(ssim(Tensor({10, 20, 3}), Tensor({10, 20, 3})), ConfigError);
}

TEST(Ssim, BruteForceWindowAgrees) {
  // Direct 2-D weighted sums at every valid window position.
  const Tensor a = random_image(13, 12, 8), b = random_image(13, 12, 9);
  const Tensor x = to_luma(a), y = to_luma(b);
  const SsimOptions o;
  double g[11], norm = 0.0;
  for (int i = 0; i < 11; ++i) norm += (g[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2 * o.sigma * o.sigma)));
  double total = 0.0;
  int windows = 0;
  for (std::size_t r = 0; r + 11 <= 13; ++r) {
    for (std::size_t c = 0; c + 11 <= 12; ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double wgt = g[i] * g[j] / (norm * norm);
          const double xv = x.at(r + i, c + j), yv = y.at(r + i, c + j);
          mx += wgt * xv;
          my += wgt * yv;
          sxx += wgt * xv * xv;
          syy += wgt * yv * yv;
          sxy += wgt * xv * yv;
        }
      }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += (2 * mx * my + o.c1) * (2 * cxy + o.c2) / ((mx * mx + my * my + o.c1) * (vx + vy + o.c2));
      ++windows;
    }
  }
  EXPECT_NEAR(ssim(a, b), total / windows, 1e-12);
}

TEST(Luma, UsesRec601Weights) {
  Tensor a({1, 1, 3});
  a[0] = 1.0;
  a[1] = 0.5;
  a[2] = 0.25;
  EXPECT_NEAR(to_luma(a)[0], 0.299 + 0.587 * 0.5 + 0.114 * 0.25, 1e-15);
}
