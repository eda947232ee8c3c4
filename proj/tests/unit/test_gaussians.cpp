#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>

#include "fe4dgs/diagnostics/finite_difference.hpp"
#include "fe4dgs/gaussians/camera.hpp"
#include "fe4dgs/gaussians/cloud.hpp"
#include "fe4dgs/gaussians/covariance.hpp"
#include "fe4dgs/gaussians/density.hpp"
#include "fe4dgs/gaussians/init.hpp"

using namespace fe4dgs;

namespace {

Vec4 random_quaternion(Pcg32& rng) { return {rng.normal(), rng.normal(), rng.normal(), rng.normal()}; }

// Explicit R diag(s)^2 R^T from a hand-written rotation matrix.
Mat3 explicit_product(const Mat3& r, const Vec3& s) {
  Mat3 out = Mat3::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k) out(i, j) += r(i, k) * s[k] * s[k] * r(j, k);
    }
  }
  return out;
}

CameraFrame blank_frame(std::size_t w, std::size_t h, const Mat3& k) {
  CameraFrame f;
  f.width = w;
  f.height = h;
  f.intrinsics = k;
  f.image = Tensor({h, w, 3}, 0.5);
  f.depth = Tensor({h, w}, 0.0);
  f.mask = Tensor({h, w}, 0.0);
  return f;
}

GaussianCloud random_cloud(std::size_t k, std::size_t n, Pcg32& rng) {
  GaussianCloud c(k, n);
  for (double& v : c.positions) v = rng.uniform(-1, 1);
  for (double& v : c.rotations) v = rng.normal();
  for (double& v : c.log_scales) v = rng.uniform(-3, -1);
  for (double& v : c.opacity_logits) v = rng.uniform(-2, 2);
  for (double& v : c.colors) v = rng.uniform();
  for (double& v : c.features) v = rng.normal();
  return c;
}

}  // namespace

TEST(ComposeCovariance, IdentityRotationUnitScale) {
  EXPECT_TRUE(compose_covariance({1, 0, 0, 0}, {1, 1, 1}).isApprox(Mat3::Identity(), 1e-15));
}

TEST(ComposeCovariance, AxisAligned) {
  const Mat3 s = compose_covariance({1, 0, 0, 0}, {2, 1, 1});
  EXPECT_TRUE(s.isApprox(Vec3(4, 1, 1).asDiagonal().toDenseMatrix(), 1e-15));
}

TEST(ComposeCovariance, NinetyDegreesAboutZ) {
  const double h = std::sqrt(0.5);
  Mat3 r;
  r << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Mat3 expected = explicit_product(r, {2, 1, 1});
  const Mat3 got = compose_covariance({h, 0, 0, h}, {2, 1, 1});
  EXPECT_LT((got - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(got(1, 1), 4.0, 1e-12);
  EXPECT_NEAR(got(0, 0), 1.0, 1e-12);
}

TEST(ComposeCovariance, DegenerateQuaternionThrows) {
  EXPECT_THROW(compose_covariance({0, 0, 0, 1e-13}, {1, 1, 1}), NumericalError);
}

TEST(ComposeCovariance, PositiveSemidefiniteOnRandomSamples) {
  Pcg32 rng(11);
  for (int i = 0; i < 10000; ++i) {
    const Vec4 q = random_quaternion(rng);
    const Vec3 s(std::exp(rng.uniform(-6, 2)), std::exp(rng.uniform(-6, 2)), std::exp(rng.uniform(-6, 2)));
    const Mat3 sigma = compose_covariance(q, s);
    Eigen::SelfAdjointEigenSolver<Mat3> es(sigma);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(ComposeCovariance, SignInvariant) {
  Pcg32 rng(12);
  for (int i = 0; i < 200; ++i) {
    const Vec4 q = random_quaternion(rng);
    const Vec3 s(rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.1, 2));
    EXPECT_EQ(compose_covariance(q, s), compose_covariance(-q, s));
  }
}

TEST(ComposeCovariance, BackwardMatchesFiniteDifferences) {
  Pcg32 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Vec4 q = random_quaternion(rng);
    Vec3 s(rng.uniform(0.2, 2), rng.uniform(0.2, 2), rng.uniform(0.2, 2));
    Mat3 g;
    for (int i = 0; i < 9; ++i) g.data()[i] = rng.uniform(-1, 1);
    const CovarianceGrad cg = compose_covariance_backward(q, s, g);
    std::vector<double> params{q[0], q[1], q[2], q[3], s[0], s[1], s[2]};
    std::vector<double> analytic{cg.dq[0], cg.dq[1], cg.dq[2], cg.dq[3], cg.ds[0], cg.ds[1], cg.ds[2]};
    auto loss = [&] {
      const Mat3 sigma = compose_covariance({params[0], params[1], params[2], params[3]},
                                            {params[4], params[5], params[6]});
      return (sigma.array() * g.array()).sum();
    };
    auto r = check_gradient("cov", params, analytic, loss);
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_index;
  }
}

TEST(EvaluateGaussian, AtMeanIsOne) {
  EXPECT_DOUBLE_EQ(evaluate_gaussian({1, 2, 3}, {1, 2, 3}, Mat3::Identity()), 1.0);
}

TEST(EvaluateGaussian, UnitOffset) {
  EXPECT_NEAR(evaluate_gaussian({1, 0, 0}, {0, 0, 0}, Mat3::Identity()), std::exp(-0.5), 1e-9);
  EXPECT_NEAR(std::exp(-0.5), 0.60653, 1e-5);
}

TEST(EvaluateGaussian, MatchesExplicitInverse) {
  Pcg32 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    Mat3 a;
    for (int i = 0; i < 9; ++i) a.data()[i] = rng.uniform(-1, 1);
    const Mat3 sigma = a * a.transpose() + 0.5 * Mat3::Identity();
    const Vec3 x(rng.normal(), rng.normal(), rng.normal()), mu(rng.normal(), rng.normal(), rng.normal());
    // Regularized covariance inverted by cofactors.
    const Mat3 m = sigma + kCovarianceRegularizer * Mat3::Identity();
    Mat3 cof;
    cof << m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1), m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2),
        m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1), m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2),
        m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0), m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2),
        m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0), m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1),
        m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    const double det = m(0, 0) * cof(0, 0) + m(0, 1) * cof(1, 0) + m(0, 2) * cof(2, 0);
    const Vec3 d = x - mu;
    const double expected = std::exp(-0.5 * d.dot((cof / det) * d));
    EXPECT_NEAR(evaluate_gaussian(x, mu, sigma), expected, 1e-12);
  }
}

TEST(EvaluateGaussian, SingularAfterRegularizationThrows) {
  EXPECT_THROW(evaluate_gaussian({0, 0, 0}, {0, 0, 0}, Vec3(-1e-9, 1, 1).asDiagonal().toDenseMatrix()), NumericalError);
}

TEST(CameraFrame, ValidateRejectsBadInputs) {
  CameraFrame f = blank_frame(4, 4, make_intrinsics(10, 10, 2, 2));
  EXPECT_NO_THROW(f.validate());
  CameraFrame neg = f;
  neg.intrinsics(0, 0) = -1;
  EXPECT_THROW(neg.validate(), DataError);
  CameraFrame skew = f;
  skew.extrinsics(0, 1) = 0.1;
  EXPECT_THROW(skew.validate(), DataError);
  CameraFrame depth = f;
  depth.mask[5] = 1.0;
  depth.depth[5] = -0.5;
  EXPECT_THROW(depth.validate(), DataError);
}

TEST(InitFromRgbd, IdentityCameraSinglePixel) {
  CameraFrame f = blank_frame(1, 1, Mat3::Identity());
  f.mask[0] = 1.0;
  f.depth[0] = 2.0;
  const GaussianCloud c = init_from_rgbd(std::span<const CameraFrame>(&f, 1), 10);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_TRUE(c.position(0).isApprox(Vec3(0, 0, 2)));
  EXPECT_NEAR(c.opacity(0), 0.1, 1e-15);
  for (double z : c.features) EXPECT_EQ(z, 0.0);
}

TEST(InitFromRgbd, PinholeBackProjectionByHand) {
  CameraFrame f = blank_frame(200, 100, make_intrinsics(100, 100, 50, 50));
  const std::size_t idx = 50 * 200 + 150;
  f.mask[idx] = 1.0;
  f.depth[idx] = 1.0;
  const GaussianCloud c = init_from_rgbd(std::span<const CameraFrame>(&f, 1), 5);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_NEAR(c.positions[0], 1.0, 1e-12);
  EXPECT_NEAR(c.positions[1], 0.0, 1e-12);
  EXPECT_NEAR(c.positions[2], 1.0, 1e-12);
}

TEST(InitFromRgbd, EmptyMaskedUnionThrows) {
  CameraFrame f = blank_frame(4, 4, make_intrinsics(10, 10, 2, 2));
  EXPECT_THROW(init_from_rgbd(std::span<const CameraFrame>(&f, 1), 5), DataError);
  EXPECT_THROW(init_from_rgbd(std::span<const CameraFrame>(), 5), ConfigError);
  f.mask[0] = 1;
  f.depth[0] = 1;
  EXPECT_THROW(init_from_rgbd(std::span<const CameraFrame>(&f, 1), 0), ConfigError);
}

TEST(InitFromRgbd, AcceptsDefaultTargetCount) {
  CameraFrame f = blank_frame(40, 30, make_intrinsics(40, 40, 20, 15));
  f.mask.fill(1.0);
  f.depth.fill(3.0);
  const GaussianCloud c = init_from_rgbd(std::span<const CameraFrame>(&f, 1), 90000);
  EXPECT_EQ(c.size(), 1200u);
  EXPECT_NO_THROW(c.validate());
}

TEST(InitFromRgbd, RoundTripReprojectsToSourcePixel) {
  Pcg32 rng(15);
  std::vector<CameraFrame> frames;
  for (int n = 0; n < 2; ++n) {
    CameraFrame f = blank_frame(32, 24, make_intrinsics(30, 28, 15.5, 11.5));
    const Eigen::AngleAxisd aa(0.2 * (n + 1), Vec3(0.3, 1, 0.1).normalized());
    f.extrinsics.topLeftCorner<3, 3>() = aa.toRotationMatrix();
    f.extrinsics.topRightCorner<3, 1>() = Vec3(0.1 * n, -0.2, 0.3);
    for (std::size_t i = 0; i < f.depth.size(); ++i) {
      f.mask[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
      f.depth[i] = rng.uniform(0.5, 4.0);
    }
    frames.push_back(std::move(f));
  }
  InitOptions opt;
  opt.seed = 3;
  const GaussianCloud c = init_from_rgbd(frames, 300, opt);
  ASSERT_EQ(c.size(), 300u);
  for (std::size_t i = 0; i < c.size(); ++i) {
    bool found = false;
    for (const auto& f : frames) {
      const Vec3 pc = f.rotation() * c.position(i) + f.translation();
      const double u = f.fx() * pc.x() / pc.z() + f.cx(), v = f.fy() * pc.y() / pc.z() + f.cy();
      const double ru = std::round(u), rv = std::round(v);
      if (ru < 0 || rv < 0 || ru >= 32 || rv >= 24) continue;
      const auto idx = static_cast<std::size_t>(rv) * 32 + static_cast<std::size_t>(ru);
      if (std::abs(u - ru) <= 0.5 && std::abs(v - rv) <= 0.5 && f.mask[idx] > 0.5 &&
          std::abs(pc.z() - f.depth[idx]) < 1e-6) {
        found = true;
      }
    }
    EXPECT_TRUE(found) << "point " << i;
  }
}

TEST(InitFromRgbd, SeededSubsamplingIsReproducible) {
  CameraFrame f = blank_frame(20, 20, make_intrinsics(20, 20, 10, 10));
  f.mask.fill(1.0);
  f.depth.fill(2.0);
  InitOptions opt;
  opt.seed = 9;
  const auto a = init_from_rgbd(std::span<const CameraFrame>(&f, 1), 50, opt);
  const auto b = init_from_rgbd(std::span<const CameraFrame>(&f, 1), 50, opt);
  EXPECT_EQ(a, b);
}

TEST(MeanSqKnn, MatchesBruteForce) {
  Pcg32 rng(16);
  std::vector<Vec3> pts;
  for (int i = 0; i < 400; ++i) pts.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 0.2));
  const auto fast = mean_sq_knn_distance(pts, 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j != i) d.push_back((pts[i] - pts[j]).squaredNorm());
    }
    std::sort(d.begin(), d.end());
    EXPECT_NEAR(fast[i], (d[0] + d[1] + d[2]) / 3.0, 1e-12);
  }
}

TEST(DensifyAndPrune, NoOpWhenNothingQualifies) {
  Pcg32 rng(17);
  GaussianCloud c = random_cloud(20, 4, rng);
  for (double& l : c.opacity_logits) l = 0.0;
  GradStats stats;
  stats.resize(c.size());
  stats.add(std::vector<double>(20, 1e-5), std::vector<std::uint8_t>(20, 1));
  const GaussianCloud before = c;
  DensityConfig cfg;
  const auto rep = densify_and_prune(c, stats, 600, cfg, 1.0, rng);
  EXPECT_EQ(c, before);
  EXPECT_EQ(rep.pruned + rep.cloned + rep.split, 0u);
}

TEST(DensifyAndPrune, PrunesLowOpacity) {
  Pcg32 rng(18);
  GaussianCloud c = random_cloud(10, 2, rng);
  for (double& l : c.opacity_logits) l = 1.0;
  c.opacity_logits[4] = logit(1e-4);
  GradStats stats;
  stats.resize(c.size());
  auto moments = GaussianMoments::for_cloud(c);
  const GaussianCloud before = c;
  densify_and_prune(c, stats, 0, DensityConfig{}, 1.0, rng, &moments);
  ASSERT_EQ(c.size(), 9u);
  EXPECT_EQ(moments.position.m.size(), 27u);
  EXPECT_EQ(moments.feature.m.size(), 18u);
  for (std::size_t i = 0, j = 0; i < before.size(); ++i) {
    if (i == 4) continue;
    EXPECT_EQ(c.position(j), before.position(i));
    EXPECT_EQ(c.features[2 * j], before.features[2 * i]);
    ++j;
  }
}

TEST(DensifyAndPrune, ClonesSmallAndSplitsLarge) {
  Pcg32 rng(19);
  GaussianCloud c = random_cloud(3, 2, rng);
  for (double& l : c.opacity_logits) l = 1.0;
  for (int a = 0; a < 3; ++a) {
    c.log_scales[a] = std::log(0.001);     // small: clone
    c.log_scales[3 + a] = std::log(0.5);   // large: split
    c.log_scales[6 + a] = std::log(0.5);   // cold
  }
  GradStats stats;
  stats.resize(3);
  stats.add({1e-3, 1e-3, 1e-6}, {1, 1, 1});
  auto moments = GaussianMoments::for_cloud(c);
  for (double& m : moments.position.m) m = 1.0;
  const GaussianCloud before = c;
  const auto rep = densify_and_prune(c, stats, 600, DensityConfig{}, 1.0, rng, &moments);
  EXPECT_EQ(rep.cloned, 1u);
  EXPECT_EQ(rep.split, 1u);
  // survivors (0, 2), clone of 0, two children of 1
  ASSERT_EQ(c.size(), 5u);
  EXPECT_EQ(c.position(0), before.position(0));
  EXPECT_EQ(c.position(1), before.position(2));
  EXPECT_EQ(c.position(2), before.position(0));
  for (std::size_t r = 3; r < 5; ++r) {
    EXPECT_NEAR(c.log_scales[3 * r], std::log(0.5) - std::log(1.6), 1e-12);
  }
  EXPECT_EQ(moments.position.m[0], 1.0);
  EXPECT_EQ(moments.position.m[6], 0.0);
  EXPECT_EQ(stats.accum, std::vector<double>(5, 0.0));
  EXPECT_NO_THROW(c.validate());
}

TEST(DensifyAndPrune, PreservesInvariantsOnRandomClouds) {
  Pcg32 rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    GaussianCloud c = random_cloud(50, 3, rng);
    for (double& l : c.opacity_logits) l = rng.uniform(-8, 3);
    GradStats stats;
    stats.resize(c.size());
    std::vector<double> norms(50);
    for (double& n : norms) n = rng.uniform(0, 4e-4);
    stats.add(norms, std::vector<std::uint8_t>(50, 1));
    auto moments = GaussianMoments::for_cloud(c);
    densify_and_prune(c, stats, 1000, DensityConfig{}, 2.0, rng, &moments);
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(moments.rotation.m.size(), c.rotations.size());
    EXPECT_EQ(stats.accum.size(), c.size());
  }
}

TEST(ResetOpacity, CapsOnlyAboveCap) {
  GaussianCloud c(2, 0);
  c.opacity_logits = {logit(0.9), logit(0.005)};
  reset_opacity(c, 0.01);
  EXPECT_NEAR(c.opacity(0), 0.01, 1e-15);
  EXPECT_EQ(c.opacity_logits[1], logit(0.005));
  EXPECT_THROW(reset_opacity(c, 1.0), ConfigError);
}

TEST(ResetOpacity, MaxBelowCapOnRandomCloud) {
  Pcg32 rng(21);
  GaussianCloud c = random_cloud(500, 0, rng);
  reset_opacity(c, 0.01);
  double mx = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) mx = std::max(mx, c.opacity(i));
  EXPECT_LE(mx, 0.01 + 1e-15);
}
