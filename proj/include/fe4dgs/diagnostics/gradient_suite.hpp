#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "fe4dgs/deformation.hpp"
#include "fe4dgs/diagnostics/finite_difference.hpp"
#include "fe4dgs/hexplane.hpp"
#include "fe4dgs/numerics/rng.hpp"
#include "fe4dgs/rasterizer/render.hpp"
#include "fe4dgs/semantic/decoder.hpp"

namespace fe4dgs {

struct GradientSuiteOptions {
  std::uint64_t seed = 2024;
  std::size_t gaussians = 5;
  std::size_t width = 16;
  std::size_t height = 16;
  std::size_t feature_dim = 3;
  std::size_t teacher_channels = 4;
  std::size_t teacher_size = 8;  // decoded maps are resized to teacher_size^2
  double time = 0.37;
  double h = 1e-5;
  double floor = 1e-5;
  double tolerance = 1e-3;
};

struct GradientSuiteReport {
  std::vector<GradCheckResult> groups;
  double seconds = 0.0;

  bool passed(double tol) const {
    for (const auto& g : groups) {
      if (!g.passed(tol)) return false;
    }
    return !groups.empty();
  }
};

inline const char* deformation_net_name(std::size_t index) {
  static constexpr const char* kNames[] = {"mlp_hidden",           "mlp_extractor_position", "mlp_extractor_rotation",
                                           "mlp_extractor_scale",  "mlp_extractor_opacity",  "mlp_head_position",
                                           "mlp_head_rotation",    "mlp_head_scale",         "mlp_head_opacity",
                                           "mlp_f_feat"};
  return index < std::size(kNames) ? kNames[index] : "mlp_unknown";
}

/// Central-difference check of every trainable group through the full
/// forward path: HexPlane -> deformation networks -> rasterizer -> pointwise
/// decoder, plus the grid TV term. The scalar loss pairs each output with a
/// fixed random cotangent, so it is smooth wherever the rasterizer is.
inline GradientSuiteReport run_gradient_suite(const GradientSuiteOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  Pcg32 rng(opt.seed);
  const std::size_t w = opt.width, h = opt.height, n = opt.feature_dim;

  CameraFrame frame;
  frame.width = w;
  frame.height = h;
  const double focal = static_cast<double>(std::max(w, h));
  frame.intrinsics = make_intrinsics(focal, focal, 0.5 * static_cast<double>(w - 1), 0.5 * static_cast<double>(h - 1));
  GaussianCloud cloud(opt.gaussians, n);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double z = rng.uniform(2.0, 5.0);
    cloud.set_position(i, Vec3(rng.uniform(-0.35, 0.35) * z, rng.uniform(-0.35, 0.35) * z, z));
    for (std::size_t a = 0; a < 4; ++a) cloud.rotations[4 * i + a] = rng.normal();
    for (std::size_t a = 0; a < 3; ++a) {
      cloud.log_scales[3 * i + a] = std::log(rng.uniform(0.1, 0.4));
      cloud.colors[3 * i + a] = rng.uniform(0.1, 0.9);
    }
    cloud.opacity_logits[i] = logit(rng.uniform(0.2, 0.8));
    for (std::size_t a = 0; a < n; ++a) cloud.features[i * n + a] = rng.normal();
  }

  HexPlaneConfig hc;
  hc.multipliers = {1, 2};
  hc.base_resolution = {3, 3, 3, 4};
  hc.feat_dim = 3;
  HexPlaneField field(hc, Aabb{Vec3(-2.5, -2.5, 1.0), Vec3(2.5, 2.5, 6.0)});
  field.initialize(rng);
  for (double& v : field.mutable_values()) v += rng.uniform(-0.2, 0.2);

  DeformationConfig dc;
  dc.input_dim = hc.multipliers.size() * static_cast<std::size_t>(hc.feat_dim);
  dc.width = 8;
  dc.depth = 2;
  dc.feature_dim = n;
  dc.semantic_hidden = 5;
  DeformationNet net = DeformationNet::create(dc, rng);
  // Random weights everywhere, heads small, so every branch carries signal.
  for (std::size_t m = 0; m < net.all().size(); ++m) {
    const double scale = (m >= 5 && m <= 8) ? 0.03 : 0.3;
    for (double& v : net.all()[m]->mutable_params()) v = rng.uniform(-scale, scale);
  }
  PointwiseDecoder decoder = PointwiseDecoder::create(n, opt.teacher_channels, rng);

  RenderCotangent cot{Tensor({h, w, 3}), Tensor({h, w}), {}, {}};
  for (Tensor* x : {&cot.color, &cot.depth}) {
    for (double& v : x->values()) v = rng.uniform(-1.0, 1.0);
  }
  Tensor dec_cot({opt.teacher_size, opt.teacher_size, opt.teacher_channels});
  for (double& v : dec_cot.values()) v = rng.uniform(-1.0, 1.0);
  const double tv_weight = 0.5;

  auto loss = [&] {
    const DeformResult d = deform(cloud, field, net, opt.time);
    const RenderOutput o = render(d.snapshot, frame);
    const DecodedFeatures dec = decode_features(decoder, o.feature, opt.teacher_size, opt.teacher_size);
    double l = 0.0;
    for (std::size_t i = 0; i < o.color.size(); ++i) l += o.color[i] * cot.color[i];
    for (std::size_t i = 0; i < o.depth.size(); ++i) l += o.depth[i] * cot.depth[i];
    for (std::size_t i = 0; i < dec.features.size(); ++i) l += dec.features[i] * dec_cot[i];
    return l + tv_weight * tv_loss(field);
  };

  const DeformResult d = deform(cloud, field, net, opt.time);
  const RenderOutput o = render(d.snapshot, frame);
  const DecodedFeatures dec = decode_features(decoder, o.feature, opt.teacher_size, opt.teacher_size);
  const DecoderGradients dg = decode_features_backward(decoder, dec, dec_cot);
  cot.feature = dg.rendered;
  const RenderGradients rg = render_backward(d.snapshot, frame, o, cot);
  DeformGradients def = deform_backward(cloud, field, net, d.cache, rg.params);
  std::vector<double> grid_grad = def.grid;
  tv_loss(field, grid_grad, tv_weight);

  GradientSuiteReport report;
  auto add = [&](const std::string& name, std::span<double> params, std::span<const double> analytic) {
    report.groups.push_back(check_gradient(name, params, analytic, loss, opt.h, {}, opt.floor));
  };
  add("positions", cloud.positions, def.canonical.positions);
  add("rotations", cloud.rotations, def.canonical.rotations);
  add("log_scales", cloud.log_scales, def.canonical.log_scales);
  add("opacity_logits", cloud.opacity_logits, def.canonical.opacity_logits);
  add("colors", cloud.colors, def.canonical.colors);
  add("features", cloud.features, def.canonical.features);
  add("hexplane_grid", field.mutable_values(), grid_grad);
  const auto nets = net.all();
  for (std::size_t m = 0; m < nets.size(); ++m) {
    // Parameters are edited through a copy so the network's cache version
    // stays consistent with its contents.
    std::vector<double> p(nets[m]->params().begin(), nets[m]->params().end());
    report.groups.push_back(check_gradient(
        deformation_net_name(m), p, def.nets[m],
        [&] {
          std::copy(p.begin(), p.end(), nets[m]->mutable_params().begin());
          return loss();
        },
        opt.h, {}, opt.floor));
    std::copy(p.begin(), p.end(), nets[m]->mutable_params().begin());
  }
  add("decoder_weight", decoder.weight, dg.weight);
  add("decoder_bias", decoder.bias, dg.bias);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace fe4dgs
