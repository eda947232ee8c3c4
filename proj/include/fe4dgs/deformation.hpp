#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/gaussians/cloud.hpp"
#include "fe4dgs/hexplane.hpp"
#include "fe4dgs/numerics/mlp.hpp"
#include "fe4dgs/numerics/rng.hpp"

namespace fe4dgs {

/// Geometric branches in the fixed order used everywhere: position,
/// rotation, scale, opacity.
enum Branch : std::size_t { kBranchPosition = 0, kBranchRotation = 1, kBranchScale = 2, kBranchOpacity = 3 };
inline constexpr std::array<std::size_t, 4> kBranchDims{3, 4, 3, 1};

struct DeformationConfig {
  std::size_t input_dim = 64;     // HexPlane output width
  std::size_t width = 64;         // W
  std::size_t depth = 8;          // D, layers of the hidden decoder
  std::size_t feature_dim = 128;  // N
  std::size_t semantic_hidden = 64;
  bool enable_hexplane = true;
  bool enable_f_feat = true;
};

/// Hidden decoder, four extractor/head pairs and the semantic updater.
/// Every hidden layer uses relu; heads and the semantic output are linear.
struct DeformationNet {
  DeformationConfig config;
  Mlp f_out;
  std::array<Mlp, 4> extractors;
  std::array<Mlp, 4> heads;
  Mlp f_feat;

  /// Kaiming-uniform hidden layers; head weights and the last semantic layer
  /// start at zero so the initial deformation is exactly zero.
  static DeformationNet create(const DeformationConfig& cfg, Pcg32& rng) {
    if (cfg.width < 2 || cfg.width % 2 != 0) throw ConfigError("DeformationNet: width must be even and >= 2");
    if (cfg.depth < 1) throw ConfigError("DeformationNet: depth must be >= 1");
    if (cfg.input_dim == 0 || cfg.feature_dim == 0) throw ConfigError("DeformationNet: zero input/feature width");
    DeformationNet net;
    net.config = cfg;
    const std::size_t half = cfg.width / 2;

    std::vector<std::size_t> widths{cfg.input_dim};
    for (std::size_t l = 0; l < cfg.depth; ++l) widths.push_back(cfg.width);
    net.f_out = Mlp::zeros(widths, std::vector<Activation>(cfg.depth, Activation::kRelu));
    for (std::size_t l = 0; l < cfg.depth; ++l) net.f_out.kaiming_uniform(l, rng);

    for (std::size_t b = 0; b < 4; ++b) {
      net.extractors[b] = Mlp::zeros({cfg.width, half, half}, {Activation::kRelu, Activation::kRelu});
      net.extractors[b].kaiming_uniform(0, rng);
      net.extractors[b].kaiming_uniform(1, rng);
      net.heads[b] = Mlp::zeros({half, kBranchDims[b]}, {Activation::kNone});
    }
    net.f_feat = Mlp::zeros({4 * half, cfg.semantic_hidden, cfg.feature_dim}, {Activation::kRelu, Activation::kNone});
    net.f_feat.kaiming_uniform(0, rng);
    return net;
  }

  /// All networks in the order f_out, extractors, heads, f_feat.
  std::vector<Mlp*> all() {
    return {&f_out, &extractors[0], &extractors[1], &extractors[2], &extractors[3],
            &heads[0], &heads[1], &heads[2], &heads[3], &f_feat};
  }
  std::vector<const Mlp*> all() const {
    return {&f_out, &extractors[0], &extractors[1], &extractors[2], &extractors[3],
            &heads[0], &heads[1], &heads[2], &heads[3], &f_feat};
  }
};

/// h = F_out(f); `f` is [K, input_dim].
inline MlpForward decode_hidden(const DeformationNet& net, const Tensor& f) { return mlp_forward(net.f_out, f); }

struct BranchForward {
  std::array<Tensor, 4> deltas;    // [K, d_g]
  std::array<Tensor, 4> features;  // h_g, [K, W/2]
  std::array<MlpCache, 4> extractor_caches;
  std::array<MlpCache, 4> head_caches;
};

/// h_g = F_g^feat(h) and delta_g = F_g^head(h_g) for the four branches.
inline BranchForward decode_branches(const DeformationNet& net, const Tensor& h) {
  BranchForward out;
  for (std::size_t b = 0; b < 4; ++b) {
    auto ex = mlp_forward(net.extractors[b], h);
    auto hd = mlp_forward(net.heads[b], ex.output);
    out.features[b] = std::move(ex.output);
    out.extractor_caches[b] = std::move(ex.cache);
    out.deltas[b] = std::move(hd.output);
    out.head_caches[b] = std::move(hd.cache);
  }
  return out;
}

/// u_all = [h_mu | h_R | h_S | h_o], row by row.
inline Tensor concat_branch_features(const std::array<Tensor, 4>& hg) {
  const std::size_t k = hg[0].rank() == 2 ? hg[0].dim(0) : 1;
  const std::size_t w = hg[0].size() / std::max<std::size_t>(k, 1);
  Tensor u({k, 4 * w});
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t b = 0; b < 4; ++b) {
      std::copy(hg[b].data() + i * w, hg[b].data() + (i + 1) * w, u.data() + i * 4 * w + b * w);
    }
  }
  return u;
}

struct SemanticForward {
  Tensor updated;  // z' = z + delta_z, [K, N]
  MlpCache cache;
  bool applied = false;
};

/// z' = z + F_feat(u_all); with the semantic updater disabled, z' = z.
inline SemanticForward update_semantics(const DeformationNet& net, const std::array<Tensor, 4>& hg, const Tensor& z) {
  SemanticForward out;
  if (!net.config.enable_f_feat) {
    out.updated = z;
    return out;
  }
  auto fw = mlp_forward(net.f_feat, concat_branch_features(hg));
  if (fw.output.size() != z.size()) throw ConfigError("update_semantics: feature width mismatch");
  out.updated = z;
  for (std::size_t i = 0; i < z.size(); ++i) out.updated[i] += fw.output[i];
  out.cache = std::move(fw.cache);
  out.applied = true;
  return out;
}

/// Saved state of one deform() call.
struct DeformCache {
  double time = 0.0;
  bool active = false;
  Tensor latent;  // f, [K, input_dim]
  MlpCache hidden_cache;
  BranchForward branches;
  SemanticForward semantics;
};

struct DeformResult {
  GaussianCloud snapshot;
  DeformCache cache;
};

/// Deformed snapshot at time t. Deltas add to raw parameters (position,
/// unnormalized quaternion, log-scale, opacity logit) before activation;
/// colors pass through; the canonical cloud is not modified. With
/// `active == false` the snapshot is the canonical cloud itself.
inline DeformResult deform(const GaussianCloud& cloud, const HexPlaneField& field, const DeformationNet& net, double t,
                           bool active = true) {
  DeformResult result;
  result.snapshot = cloud;
  result.cache.time = t;
  result.cache.active = active;
  if (!active) return result;
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("deform: time must lie in [0, 1]");

  const std::size_t k = cloud.size();
  if (net.config.enable_hexplane) {
    if (field.output_dim() != net.config.input_dim) throw ConfigError("deform: HexPlane width does not match F_out input");
    result.cache.latent = hexplane_query_batch(field, cloud.positions, t);
  } else {
    result.cache.latent = Tensor({k, net.config.input_dim}, 0.0);
  }
  auto hidden = decode_hidden(net, result.cache.latent);
  result.cache.hidden_cache = std::move(hidden.cache);
  result.cache.branches = decode_branches(net, hidden.output);

  const auto& d = result.cache.branches.deltas;
  GaussianCloud& s = result.snapshot;
  for (std::size_t i = 0; i < k; ++i) {
    for (int a = 0; a < 3; ++a) s.positions[3 * i + a] += d[kBranchPosition][3 * i + a];
    for (int a = 0; a < 4; ++a) s.rotations[4 * i + a] += d[kBranchRotation][4 * i + a];
    for (int a = 0; a < 3; ++a) s.log_scales[3 * i + a] += d[kBranchScale][3 * i + a];
    s.opacity_logits[i] += d[kBranchOpacity][i];
  }
  Tensor z({k, cloud.feature_dim}, cloud.features);
  result.cache.semantics = update_semantics(net, result.cache.branches.features, z);
  s.features = std::move(result.cache.semantics.updated.storage());
  return result;
}

struct DeformGradients {
  GaussianCloud canonical;         // dL/d canonical parameters
  std::vector<double> grid;        // dL/d HexPlane values (empty when unused)
  std::vector<std::vector<double>> nets;  // per Mlp in DeformationNet::all() order
};

/// Chain rule from snapshot gradients back to the canonical cloud, the
/// HexPlane grids (through the latent, including its dependence on the
/// canonical position) and every network parameter.
inline DeformGradients deform_backward(const GaussianCloud& cloud, const HexPlaneField& field,
                                       const DeformationNet& net, const DeformCache& cache,
                                       const GaussianCloud& snapshot_grad) {
  DeformGradients out;
  out.canonical = snapshot_grad;
  const auto nets = net.all();
  out.nets.resize(nets.size());
  for (std::size_t n = 0; n < nets.size(); ++n) out.nets[n].assign(nets[n]->num_params(), 0.0);
  if (!cache.active) return out;

  const std::size_t k = cloud.size();
  if (cache.latent.rank() != 2 || cache.latent.dim(0) != k) throw ContractError("deform_backward: stale deform cache");
  const std::size_t half = net.config.width / 2;

  std::array<Tensor, 4> dh_g;
  for (std::size_t b = 0; b < 4; ++b) dh_g[b] = Tensor({k, half}, 0.0);

  if (cache.semantics.applied) {
    Tensor dz({k, cloud.feature_dim}, snapshot_grad.features);
    auto bw = mlp_backward(net.f_feat, cache.semantics.cache, dz);
    out.nets[9] = std::move(bw.param_grad);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t b = 0; b < 4; ++b) {
        std::copy(bw.input_grad.data() + i * 4 * half + b * half, bw.input_grad.data() + i * 4 * half + (b + 1) * half,
                  dh_g[b].data() + i * half);
      }
    }
  }

  Tensor dh({k, net.config.width}, 0.0);
  for (std::size_t b = 0; b < 4; ++b) {
    const std::size_t dim = kBranchDims[b];
    Tensor ddelta({k, dim});
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t a = 0; a < dim; ++a) {
        double g = 0.0;
        switch (b) {
          case kBranchPosition: g = snapshot_grad.positions[3 * i + a]; break;
          case kBranchRotation: g = snapshot_grad.rotations[4 * i + a]; break;
          case kBranchScale: g = snapshot_grad.log_scales[3 * i + a]; break;
          default: g = snapshot_grad.opacity_logits[i]; break;
        }
        ddelta[i * dim + a] = g;
      }
    }
    auto head_bw = mlp_backward(net.heads[b], cache.branches.head_caches[b], ddelta);
    out.nets[5 + b] = std::move(head_bw.param_grad);
    for (std::size_t i = 0; i < dh_g[b].size(); ++i) dh_g[b][i] += head_bw.input_grad[i];
    auto ex_bw = mlp_backward(net.extractors[b], cache.branches.extractor_caches[b], dh_g[b]);
    out.nets[1 + b] = std::move(ex_bw.param_grad);
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += ex_bw.input_grad[i];
  }
  auto hidden_bw = mlp_backward(net.f_out, cache.hidden_cache, dh);
  out.nets[0] = std::move(hidden_bw.param_grad);

  if (net.config.enable_hexplane) {
    out.grid.assign(field.num_values(), 0.0);
    const std::size_t fdim = field.output_dim();
    for (std::size_t i = 0; i < k; ++i) {
      const std::span<const double> df(hidden_bw.input_grad.data() + i * fdim, fdim);
      const Vec3 dmu = hexplane_query_backward(field, cloud.position(i), cache.time, df, out.grid);
      for (int a = 0; a < 3; ++a) out.canonical.positions[3 * i + a] += dmu[a];
    }
  }
  return out;
}

}  // namespace fe4dgs
