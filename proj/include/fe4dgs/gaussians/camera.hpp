#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/gaussians/cloud.hpp"
#include "fe4dgs/numerics/tensor.hpp"
#include "fe4dgs/semantic/feature_map.hpp"

namespace fe4dgs {

/// One posed RGB-D observation. Pixel (u, v) is sampled at integer
/// coordinates (u = column, v = row); `extrinsics` maps world to camera.
struct CameraFrame {
  Mat3 intrinsics = Mat3::Identity();
  Mat4 extrinsics = Mat4::Identity();
  double time = 0.0;
  std::size_t width = 0;
  std::size_t height = 0;
  Tensor image;  // [H, W, 3] in [0, 1]
  Tensor depth;  // [H, W]
  Tensor mask;   // [H, W], 0 or 1
  std::optional<FeatureMap> features;

  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }
  Mat3 rotation() const { return extrinsics.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return extrinsics.topRightCorner<3, 1>(); }

  /// Validates intrinsics, rigidity of the extrinsics and any image payloads
  /// that are present.
  void validate() const {
    if (width == 0 || height == 0) throw DataError("CameraFrame: zero image size");
    if (!(fx() > 0.0) || !(fy() > 0.0)) throw DataError("CameraFrame: focal lengths must be positive");
    if (std::abs(intrinsics.determinant()) < 1e-12) throw DataError("CameraFrame: intrinsics not invertible");
    const Mat3 r = rotation();
    if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 || r.determinant() < 0.0) {
      throw DataError("CameraFrame: extrinsic rotation block is not orthonormal");
    }
    if ((extrinsics.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12) {
      throw DataError("CameraFrame: extrinsics bottom row must be (0, 0, 0, 1)");
    }
    if (!(time >= 0.0 && time <= 1.0)) throw DataError("CameraFrame: time must lie in [0, 1]");
    if (!image.empty() && image.shape() != std::vector<std::size_t>{height, width, 3}) {
      throw DataError("CameraFrame: image shape " + image.shape_string() + " does not match frame size");
    }
    if (!depth.empty() && depth.shape() != std::vector<std::size_t>{height, width}) {
      throw DataError("CameraFrame: depth shape does not match frame size");
    }
    if (!mask.empty() && mask.shape() != std::vector<std::size_t>{height, width}) {
      throw DataError("CameraFrame: mask shape does not match frame size");
    }
    if (!depth.empty() && !mask.empty()) {
      for (std::size_t i = 0; i < depth.size(); ++i) {
        if (mask[i] > 0.5 && !(depth[i] >= 0.0)) throw DataError("CameraFrame: negative depth inside mask");
      }
    }
    if (features) features->validate();
  }
};

inline Mat3 make_intrinsics(double fx, double fy, double cx, double cy) {
  Mat3 k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

}  // namespace fe4dgs
