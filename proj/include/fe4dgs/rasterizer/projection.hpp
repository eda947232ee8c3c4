#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/gaussians/camera.hpp"
#include "fe4dgs/gaussians/cloud.hpp"
#include "fe4dgs/gaussians/covariance.hpp"

namespace fe4dgs {

struct RenderSettings {
  Vec3 background = Vec3::Zero();
  int tile_size = 16;
  double lowpass = 0.3;          // px^2 added to the screen-space covariance diagonal
  double alpha_cap = 0.99;
  double alpha_min = 1.0 / 255.0;
  double min_transmittance = 1e-4;
  double z_near = 0.01;
  std::size_t threads = 1;
};

struct ProjectedGaussian {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  Vec3 conic = Vec3::Zero();  // (a, b, c) of the inverse 2x2 covariance
  double view_depth = 0.0;
  int radius = 0;
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
  std::size_t source = 0;
};

namespace detail {
inline void check_finite_row(const GaussianCloud& g, std::size_t i) {
  auto bad = [&](const std::vector<double>& v, std::size_t width) {
    for (std::size_t a = 0; a < width; ++a) {
      if (!std::isfinite(v[i * width + a])) return true;
    }
    return false;
  };
  if (bad(g.positions, 3) || bad(g.rotations, 4) || bad(g.log_scales, 3) || bad(g.opacity_logits, 1) ||
      bad(g.colors, 3) || bad(g.features, g.feature_dim)) {
    throw NumericalError("render: non-finite parameter in Gaussian " + std::to_string(i));
  }
}

inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& p, double fx, double fy) {
  Eigen::Matrix<double, 2, 3> j;
  const double z = p.z(), z2 = z * z;
  j << fx / z, 0.0, -fx * p.x() / z2, 0.0, fy / z, -fy * p.y() / z2;
  return j;
}
}  // namespace detail

/// Screen-space footprint of Gaussian `i`, or std::nullopt if culled.
inline std::optional<ProjectedGaussian> project_one(const GaussianCloud& g, std::size_t i, const CameraFrame& frame,
                                                    const RenderSettings& settings) {
  detail::check_finite_row(g, i);
  const Mat3 w = frame.rotation();
  const Vec3 pc = w * g.position(i) + frame.translation();
  if (!(pc.z() > settings.z_near)) return std::nullopt;

  const Mat3 sigma = compose_covariance(g.rotation(i), g.scale(i));
  const auto j = detail::projection_jacobian(pc, frame.fx(), frame.fy());
  Mat2 cov = j * w * sigma * w.transpose() * j.transpose();
  cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
  cov(0, 0) += settings.lowpass;
  cov(1, 1) += settings.lowpass;
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
  if (!(det > 0.0)) return std::nullopt;

  ProjectedGaussian out;
  out.mean2d = Vec2(frame.fx() * pc.x() / pc.z() + frame.cx(), frame.fy() * pc.y() / pc.z() + frame.cy());
  out.cov2d = cov;
  out.conic = Vec3(cov(1, 1) / det, -cov(0, 1) / det, cov(0, 0) / det);
  out.view_depth = pc.z();
  const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
  const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
  out.radius = static_cast<int>(std::ceil(3.0 * std::sqrt(lambda_max)));
  if (out.radius < 1) return std::nullopt;
  out.color = g.color(i);
  out.opacity = g.opacity(i);
  out.source = i;
  return out;
}

/// EWA projection of every Gaussian in front of the near plane, in source
/// order.
inline std::vector<ProjectedGaussian> project(const GaussianCloud& snapshot, const CameraFrame& frame,
                                              const RenderSettings& settings = {}) {
  std::vector<ProjectedGaussian> out;
  out.reserve(snapshot.size());
  for (std::size_t i = 0; i < snapshot.size(); ++i) {
    if (auto p = project_one(snapshot, i, frame, settings)) out.push_back(*p);
  }
  return out;
}

/// Gradients arriving at one projected Gaussian from the compositing stage.
struct ProjectedGrad {
  Vec2 mean2d = Vec2::Zero();
  Vec3 conic = Vec3::Zero();
  double opacity = 0.0;  // w.r.t. the activated opacity
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
};

/// Chain rule from screen-space quantities back to raw parameters of Gaussian
/// `i`: position, raw quaternion, log-scale, opacity logit and raw color.
/// Results are added into `grad` (feature gradients are handled by the caller).
inline void project_one_backward(const GaussianCloud& g, std::size_t i, const CameraFrame& frame,
                                 const RenderSettings& settings, const ProjectedGrad& pg, GaussianCloud& grad) {
  const Mat3 w = frame.rotation();
  const Vec3 pc = w * g.position(i) + frame.translation();
  const double fx = frame.fx(), fy = frame.fy();
  const double x = pc.x(), y = pc.y(), z = pc.z();
  const Vec4 q = g.rotation(i);
  const Vec3 s = g.scale(i);
  const Mat3 sigma = compose_covariance(q, s);
  const Mat3 v = w * sigma * w.transpose();
  const auto j = detail::projection_jacobian(pc, fx, fy);
  Mat2 m = j * v * j.transpose();
  const double ca = m(0, 0) + settings.lowpass;
  const double cb = 0.5 * (m(0, 1) + m(1, 0));
  const double cc = m(1, 1) + settings.lowpass;
  const double det = ca * cc - cb * cb;
  const double det2 = det * det;

  const double da = pg.conic[0], db = pg.conic[1], dc = pg.conic[2];
  const double d_ca = da * (-cc * cc / det2) + db * (cb * cc / det2) + dc * (1.0 / det - ca * cc / det2);
  const double d_cb = da * (2.0 * cb * cc / det2) + db * (-1.0 / det - 2.0 * cb * cb / det2) + dc * (2.0 * ca * cb / det2);
  const double d_cc = da * (1.0 / det - ca * cc / det2) + db * (ca * cb / det2) + dc * (-ca * ca / det2);

  Mat2 gm;
  gm << d_ca, 0.5 * d_cb, 0.5 * d_cb, d_cc;
  const Mat3 dv = j.transpose() * gm * j;
  const Eigen::Matrix<double, 2, 3> dj = 2.0 * gm * j * v;
  const Mat3 dsigma = w.transpose() * dv * w;
  const CovarianceGrad cg = compose_covariance_backward(q, s, dsigma);

  Vec3 dpc = Vec3::Zero();
  const double z2 = z * z, z3 = z2 * z;
  dpc.z() += dj(0, 0) * (-fx / z2);
  dpc.x() += dj(0, 2) * (-fx / z2);
  dpc.z() += dj(0, 2) * (2.0 * fx * x / z3);
  dpc.z() += dj(1, 1) * (-fy / z2);
  dpc.y() += dj(1, 2) * (-fy / z2);
  dpc.z() += dj(1, 2) * (2.0 * fy * y / z3);
  dpc.x() += pg.mean2d.x() * fx / z;
  dpc.z() += pg.mean2d.x() * (-fx * x / z2);
  dpc.y() += pg.mean2d.y() * fy / z;
  dpc.z() += pg.mean2d.y() * (-fy * y / z2);
  dpc.z() += pg.depth;

  const Vec3 dmu = w.transpose() * dpc;
  for (int a = 0; a < 3; ++a) grad.positions[3 * i + a] += dmu[a];
  for (int a = 0; a < 4; ++a) grad.rotations[4 * i + a] += cg.dq[a];
  for (int a = 0; a < 3; ++a) grad.log_scales[3 * i + a] += cg.ds[a] * s[a];
  const double o = g.opacity(i);
  grad.opacity_logits[i] += pg.opacity * o * (1.0 - o);
  for (int a = 0; a < 3; ++a) {
    const double raw = g.colors[3 * i + a];
    if (raw >= 0.0 && raw <= 1.0) grad.colors[3 * i + a] += pg.color[a];
  }
}

}  // namespace fe4dgs
