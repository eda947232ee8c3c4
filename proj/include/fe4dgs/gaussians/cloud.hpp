#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fe4dgs/errors.hpp"

namespace fe4dgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Canonical Gaussian parameters in raw (pre-activation) form.
///
/// Activations: rotation = q / |q|, scale = exp(log_scale),
/// opacity = sigmoid(logit), color = clamp(raw, 0, 1). Optimizer steps
/// project colors back into [0, 1], so the clamp is the identity in practice.
/// The same struct also serves as a gradient container of matching shape.
struct GaussianCloud {
  std::size_t feature_dim = 0;
  std::vector<double> positions;       // K x 3, world units
  std::vector<double> rotations;       // K x 4, (w, x, y, z), unnormalized
  std::vector<double> log_scales;      // K x 3
  std::vector<double> opacity_logits;  // K
  std::vector<double> colors;          // K x 3
  std::vector<double> features;        // K x N

  GaussianCloud() = default;
  GaussianCloud(std::size_t count, std::size_t n_features)
      : feature_dim(n_features),
        positions(count * 3, 0.0),
        rotations(count * 4, 0.0),
        log_scales(count * 3, 0.0),
        opacity_logits(count, 0.0),
        colors(count * 3, 0.0),
        features(count * n_features, 0.0) {}

  std::size_t size() const noexcept { return opacity_logits.size(); }

  static GaussianCloud zeros_like(const GaussianCloud& other) { return {other.size(), other.feature_dim}; }

  Vec3 position(std::size_t i) const { return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]}; }
  Vec4 rotation(std::size_t i) const {
    return {rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]};
  }
  Vec3 scale(std::size_t i) const {
    return {std::exp(log_scales[3 * i]), std::exp(log_scales[3 * i + 1]), std::exp(log_scales[3 * i + 2])};
  }
  double opacity(std::size_t i) const { return sigmoid(opacity_logits[i]); }
  Vec3 color(std::size_t i) const {
    return {std::clamp(colors[3 * i], 0.0, 1.0), std::clamp(colors[3 * i + 1], 0.0, 1.0),
            std::clamp(colors[3 * i + 2], 0.0, 1.0)};
  }
  const double* feature(std::size_t i) const { return features.data() + i * feature_dim; }

  void set_position(std::size_t i, const Vec3& p) {
    for (int k = 0; k < 3; ++k) positions[3 * i + k] = p[k];
  }

  /// Throws DataError if array lengths disagree or any value is non-finite.
  void validate() const {
    const std::size_t k = size();
    if (positions.size() != 3 * k || rotations.size() != 4 * k || log_scales.size() != 3 * k ||
        colors.size() != 3 * k || features.size() != feature_dim * k) {
      throw DataError("GaussianCloud: inconsistent array lengths");
    }
    auto check = [](const std::vector<double>& v, const char* name) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
          throw NumericalError(std::string("GaussianCloud: non-finite ") + name + " at flat index " +
                               std::to_string(i));
        }
      }
    };
    check(positions, "position");
    check(rotations, "rotation");
    check(log_scales, "log_scale");
    check(opacity_logits, "opacity_logit");
    check(colors, "color");
    check(features, "feature");
  }

  bool operator==(const GaussianCloud&) const = default;
};

}  // namespace fe4dgs
