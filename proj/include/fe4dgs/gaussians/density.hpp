#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/gaussians/cloud.hpp"
#include "fe4dgs/gaussians/covariance.hpp"
#include "fe4dgs/numerics/adam.hpp"
#include "fe4dgs/numerics/rng.hpp"

namespace fe4dgs {

/// Accumulated view-space positional gradient magnitudes since the last
/// densification.
struct GradStats {
  std::vector<double> accum;
  std::vector<double> count;

  void resize(std::size_t k) {
    accum.assign(k, 0.0);
    count.assign(k, 0.0);
  }

  void add(const std::vector<double>& norms, const std::vector<std::uint8_t>& visible) {
    if (norms.size() != accum.size() || visible.size() != accum.size()) {
      throw ContractError("GradStats::add: size mismatch with tracked cloud");
    }
    for (std::size_t i = 0; i < accum.size(); ++i) {
      if (visible[i]) {
        accum[i] += norms[i];
        count[i] += 1.0;
      }
    }
  }

  double average(std::size_t i) const { return count[i] > 0.0 ? accum[i] / count[i] : 0.0; }

  bool operator==(const GradStats&) const = default;
};

/// Adam moments for the per-Gaussian parameter groups, row-aligned with the
/// cloud so that densification can keep them consistent.
struct GaussianMoments {
  AdamState position;
  AdamState rotation;
  AdamState scaling;
  AdamState opacity;
  AdamState color;
  AdamState feature;

  static GaussianMoments for_cloud(const GaussianCloud& c, double eps = 1e-15) {
    return {AdamState::for_size(c.positions.size(), eps), AdamState::for_size(c.rotations.size(), eps),
            AdamState::for_size(c.log_scales.size(), eps), AdamState::for_size(c.opacity_logits.size(), eps),
            AdamState::for_size(c.colors.size(), eps),     AdamState::for_size(c.features.size(), eps)};
  }

  bool operator==(const GaussianMoments&) const = default;
};

struct DensityConfig {
  double grad_threshold = 2e-4;
  double percent_dense = 0.01;
  double split_factor = 1.6;
  double prune_opacity = 0.005;
  std::size_t split_children = 2;
  std::int64_t densify_from = 500;
  std::int64_t densify_until = 15000;
  std::int64_t densify_interval = 100;
  std::int64_t prune_interval = 6000;
  std::int64_t opacity_reset_interval = 6000;
  double opacity_reset_cap = 0.01;
  bool enabled = true;

  bool densify_due(std::int64_t it) const {
    return enabled && densify_interval > 0 && it >= densify_from && it < densify_until && it > 0 &&
           it % densify_interval == 0;
  }
  bool prune_due(std::int64_t it) const { return enabled && prune_interval > 0 && it > 0 && it % prune_interval == 0; }
  bool opacity_reset_due(std::int64_t it) const {
    return enabled && opacity_reset_interval > 0 && it > 0 && it % opacity_reset_interval == 0;
  }
};

struct DensifyReport {
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::size_t pruned = 0;
};

namespace detail {
// One output row: copy of `source`; fresh rows start with zero moments.
struct RowPlan {
  std::size_t source;
  bool fresh;
};

inline void gather_rows(std::vector<double>& v, std::size_t width, const std::vector<RowPlan>& plan, bool zero_fresh) {
  std::vector<double> out(plan.size() * width);
  for (std::size_t r = 0; r < plan.size(); ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      out[r * width + c] = (zero_fresh && plan[r].fresh) ? 0.0 : v[plan[r].source * width + c];
    }
  }
  v = std::move(out);
}

inline void gather_moments(AdamState& s, std::size_t width, const std::vector<RowPlan>& plan) {
  gather_rows(s.m, width, plan, true);
  gather_rows(s.v, width, plan, true);
}
}  // namespace detail

/// Clones small high-gradient Gaussians, splits large ones, and prunes those
/// whose opacity fell below `prune_opacity`. Cloning/splitting happens only
/// inside the densification window; pruning always. Surviving rows keep
/// their values; moments of new rows start at zero and `stats` is reset.
inline DensifyReport densify_and_prune(GaussianCloud& cloud, GradStats& stats, std::int64_t iteration,
                                       const DensityConfig& cfg, double scene_extent, Pcg32& rng,
                                       GaussianMoments* moments = nullptr) {
  const std::size_t k = cloud.size();
  if (stats.accum.size() != k) throw ContractError("densify_and_prune: grad stats not aligned with cloud");
  const bool grow = iteration >= cfg.densify_from && iteration < cfg.densify_until;

  DensifyReport report;
  std::vector<detail::RowPlan> plan;
  std::vector<std::size_t> clone_src, split_src;
  plan.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (cloud.opacity(i) < cfg.prune_opacity) {
      ++report.pruned;
      continue;
    }
    const bool hot = grow && stats.average(i) >= cfg.grad_threshold;
    const bool large = cloud.scale(i).maxCoeff() > cfg.percent_dense * scene_extent;
    if (hot && large) {
      split_src.push_back(i);
      continue;
    }
    plan.push_back({i, false});
    if (hot) clone_src.push_back(i);
  }
  for (std::size_t i : clone_src) plan.push_back({i, true});
  const std::size_t first_split_row = plan.size();
  for (std::size_t i : split_src) {
    for (std::size_t c = 0; c < cfg.split_children; ++c) plan.push_back({i, true});
  }
  report.cloned = clone_src.size();
  report.split = split_src.size();
  if (report.pruned == 0 && report.cloned == 0 && report.split == 0) {
    stats.resize(k);
    return report;
  }

  GaussianCloud next = cloud;
  detail::gather_rows(next.positions, 3, plan, false);
  detail::gather_rows(next.rotations, 4, plan, false);
  detail::gather_rows(next.log_scales, 3, plan, false);
  detail::gather_rows(next.opacity_logits, 1, plan, false);
  detail::gather_rows(next.colors, 3, plan, false);
  detail::gather_rows(next.features, cloud.feature_dim, plan, false);

  const double shrink = std::log(cfg.split_factor);
  for (std::size_t r = first_split_row; r < plan.size(); ++r) {
    const std::size_t src = plan[r].source;
    const Vec3 s = cloud.scale(src);
    const Mat3 rot = rotation_from_unit_quaternion(normalize_quaternion(cloud.rotation(src)));
    const Vec3 offset = rot * Vec3(rng.normal() * s[0], rng.normal() * s[1], rng.normal() * s[2]);
    next.set_position(r, cloud.position(src) + offset);
    for (int a = 0; a < 3; ++a) next.log_scales[3 * r + a] = cloud.log_scales[3 * src + a] - shrink;
  }

  if (moments) {
    detail::gather_moments(moments->position, 3, plan);
    detail::gather_moments(moments->rotation, 4, plan);
    detail::gather_moments(moments->scaling, 3, plan);
    detail::gather_moments(moments->opacity, 1, plan);
    detail::gather_moments(moments->color, 3, plan);
    detail::gather_moments(moments->feature, cloud.feature_dim, plan);
  }
  cloud = std::move(next);
  stats.resize(cloud.size());
  return report;
}

/// Caps every opacity at `cap` (in activated space).
inline void reset_opacity(GaussianCloud& cloud, double cap) {
  if (!(cap > 0.0 && cap < 1.0)) throw ConfigError("reset_opacity: cap must lie in (0, 1)");
  const double cap_logit = logit(cap);
  for (double& l : cloud.opacity_logits) {
    if (sigmoid(l) > cap) l = cap_logit;
  }
}

}  // namespace fe4dgs
