#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/gaussians/cloud.hpp"

namespace fe4dgs {

inline constexpr double kMinQuaternionNorm = 1e-12;
inline constexpr double kCovarianceRegularizer = 1e-9;

/// Rotation matrix of a unit quaternion (w, x, y, z).
inline Mat3 rotation_from_unit_quaternion(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

inline Vec4 normalize_quaternion(const Vec4& q) {
  const double n = q.norm();
  if (!(n >= kMinQuaternionNorm)) {
    throw NumericalError("degenerate rotation: quaternion norm " + std::to_string(n) + " below 1e-12");
  }
  return q / n;
}

/// Sigma = R S S^T R^T with R from q / |q| and S = diag(s).
inline Mat3 compose_covariance(const Vec4& q, const Vec3& s) {
  const Mat3 m = rotation_from_unit_quaternion(normalize_quaternion(q)) * s.asDiagonal();
  return m * m.transpose();
}

struct CovarianceGrad {
  Vec4 dq = Vec4::Zero();  // w.r.t. the raw (unnormalized) quaternion
  Vec3 ds = Vec3::Zero();  // w.r.t. the scale (not its log)
};

/// Backward of compose_covariance. `dL_dsigma` is the gradient with respect
/// to every entry of Sigma, treated as independent (it need not be symmetric).
inline CovarianceGrad compose_covariance_backward(const Vec4& q, const Vec3& s, const Mat3& dL_dsigma) {
  const double norm = q.norm();
  if (!(norm >= kMinQuaternionNorm)) throw NumericalError("degenerate rotation in covariance backward");
  const Vec4 qn = q / norm;
  const Mat3 r = rotation_from_unit_quaternion(qn);
  const Mat3 m = r * s.asDiagonal();
  const Mat3 dm = (dL_dsigma + dL_dsigma.transpose()) * m;

  CovarianceGrad g;
  Mat3 dr;
  for (int j = 0; j < 3; ++j) {
    g.ds[j] = dm.col(j).dot(r.col(j));
    dr.col(j) = dm.col(j) * s[j];
  }

  const double w = qn[0], x = qn[1], y = qn[2], z = qn[3];
  Vec4 dqn;
  dqn[0] = 2 * (z * (dr(1, 0) - dr(0, 1)) + y * (dr(0, 2) - dr(2, 0)) + x * (dr(2, 1) - dr(1, 2)));
  dqn[1] = 2 * (y * (dr(1, 0) + dr(0, 1)) + z * (dr(2, 0) + dr(0, 2)) + w * (dr(2, 1) - dr(1, 2))) -
           4 * x * (dr(1, 1) + dr(2, 2));
  dqn[2] = 2 * (x * (dr(1, 0) + dr(0, 1)) + w * (dr(0, 2) - dr(2, 0)) + z * (dr(1, 2) + dr(2, 1))) -
           4 * y * (dr(0, 0) + dr(2, 2));
  dqn[3] = 2 * (w * (dr(1, 0) - dr(0, 1)) + x * (dr(2, 0) + dr(0, 2)) + y * (dr(1, 2) + dr(2, 1))) -
           4 * z * (dr(0, 0) + dr(1, 1));
  g.dq = (dqn - qn * qn.dot(dqn)) / norm;
  return g;
}

/// exp(-1/2 (x - mu)^T Sigma^-1 (x - mu)), with Sigma regularized by 1e-9 I.
inline double evaluate_gaussian(const Vec3& x, const Vec3& mu, const Mat3& sigma) {
  const Mat3 reg = sigma + kCovarianceRegularizer * Mat3::Identity();
  Eigen::FullPivLU<Mat3> lu(reg);
  if (!lu.isInvertible()) throw NumericalError("evaluate_gaussian: covariance is singular after regularization");
  const Vec3 d = x - mu;
  const double quad = d.dot(lu.solve(d));
  if (!std::isfinite(quad)) throw NumericalError("evaluate_gaussian: non-finite quadratic form");
  return std::exp(-0.5 * quad);
}

}  // namespace fe4dgs
