#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/gaussians/cloud.hpp"
#include "fe4dgs/numerics/rng.hpp"
#include "fe4dgs/numerics/tensor.hpp"

namespace fe4dgs {

struct Aabb {
  Vec3 min = Vec3::Constant(-1.0);
  Vec3 max = Vec3::Constant(1.0);

  bool operator==(const Aabb&) const = default;
};

struct HexPlaneConfig {
  std::vector<int> multipliers{1, 2, 4, 8};
  std::array<int, 4> base_resolution{64, 64, 64, 100};  // x, y, z, t
  int feat_dim = 16;                                     // channels per level

  /// Channels per level from the total output width: width / levels when it
  /// divides evenly, otherwise `fallback_per_level`.
  static int per_level_dim(int output_dim, std::size_t levels, int fallback_per_level) {
    if (levels > 0 && output_dim > 0 && output_dim % static_cast<int>(levels) == 0) {
      return output_dim / static_cast<int>(levels);
    }
    return fallback_per_level;
  }

  bool operator==(const HexPlaneConfig&) const = default;
};

/// Multi-resolution factorized 4D grid: for each level six planes over the
/// coordinate pairs (x,y), (x,z), (x,t), (y,z), (y,t), (z,t), in that order.
/// Each plane is stored row-major with rows along the second axis of the
/// pair and columns along the first; every cell holds feat_dim channels.
/// All grid values of all planes live in one flat buffer, levels outermost.
class HexPlaneField {
 public:
  static constexpr std::array<std::array<int, 2>, 6> kPlaneAxes{
      {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

  struct Plane {
    int axis_a = 0;    // columns
    int axis_b = 0;    // rows
    int res_a = 0;
    int res_b = 0;
    std::size_t offset = 0;
  };

  HexPlaneField() = default;

  HexPlaneField(HexPlaneConfig config, Aabb aabb) : config_(std::move(config)), aabb_(aabb) {
    if (config_.multipliers.empty()) throw ConfigError("HexPlaneField: need at least one level");
    if (config_.feat_dim <= 0) throw ConfigError("HexPlaneField: feat_dim must be positive");
    for (int r : config_.base_resolution) {
      if (r < 2) throw ConfigError("HexPlaneField: every base resolution must be >= 2");
    }
    for (int a = 0; a < 3; ++a) {
      if (!(aabb_.max[a] > aabb_.min[a])) throw ConfigError("HexPlaneField: empty bounding box");
    }
    std::size_t offset = 0;
    for (int m : config_.multipliers) {
      if (m <= 0) throw ConfigError("HexPlaneField: multipliers must be positive");
      for (const auto& axes : kPlaneAxes) {
        Plane p;
        p.axis_a = axes[0];
        p.axis_b = axes[1];
        p.res_a = axis_resolution(axes[0], m);
        p.res_b = axis_resolution(axes[1], m);
        p.offset = offset;
        offset += static_cast<std::size_t>(p.res_a) * static_cast<std::size_t>(p.res_b) *
                  static_cast<std::size_t>(config_.feat_dim);
        planes_.push_back(p);
      }
    }
    values_.assign(offset, 0.0);
  }

  /// Spatial planes uniform in [lo, hi], time-bearing planes set to one.
  void initialize(Pcg32& rng, double lo = 0.1, double hi = 0.5) {
    for (const Plane& p : planes_) {
      const std::size_t n = plane_size(p);
      const bool temporal = p.axis_b == 3;
      for (std::size_t i = 0; i < n; ++i) values_[p.offset + i] = temporal ? 1.0 : rng.uniform(lo, hi);
    }
  }

  const HexPlaneConfig& config() const noexcept { return config_; }
  const Aabb& aabb() const noexcept { return aabb_; }
  std::size_t num_levels() const noexcept { return config_.multipliers.size(); }
  int feat_dim() const noexcept { return config_.feat_dim; }
  std::size_t output_dim() const noexcept { return num_levels() * static_cast<std::size_t>(config_.feat_dim); }
  const std::vector<Plane>& planes() const noexcept { return planes_; }
  const Plane& plane(std::size_t level, std::size_t p) const { return planes_.at(level * 6 + p); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> mutable_values() noexcept { return values_; }
  std::size_t num_values() const noexcept { return values_.size(); }

  std::size_t plane_size(const Plane& p) const {
    return static_cast<std::size_t>(p.res_a) * static_cast<std::size_t>(p.res_b) *
           static_cast<std::size_t>(config_.feat_dim);
  }
  std::size_t cell_index(const Plane& p, int row, int col) const {
    return p.offset + (static_cast<std::size_t>(row) * static_cast<std::size_t>(p.res_a) +
                       static_cast<std::size_t>(col)) *
                          static_cast<std::size_t>(config_.feat_dim);
  }

  int axis_resolution(int axis, int multiplier) const {
    return axis < 3 ? multiplier * config_.base_resolution[static_cast<std::size_t>(axis)]
                    : config_.base_resolution[3];
  }

  /// Normalized coordinates in [0,1]^4 and whether each was clamped.
  std::array<double, 4> normalize(const Vec3& mu, double t, std::array<bool, 4>* clamped = nullptr) const {
    std::array<double, 4> u{};
    for (int a = 0; a < 3; ++a) {
      const double raw = (mu[a] - aabb_.min[a]) / (aabb_.max[a] - aabb_.min[a]);
      u[static_cast<std::size_t>(a)] = std::clamp(raw, 0.0, 1.0);
      if (clamped) (*clamped)[static_cast<std::size_t>(a)] = raw < 0.0 || raw > 1.0;
    }
    u[3] = std::clamp(t, 0.0, 1.0);
    if (clamped) (*clamped)[3] = t < 0.0 || t > 1.0;
    return u;
  }

  bool operator==(const HexPlaneField& o) const {
    return config_ == o.config_ && aabb_ == o.aabb_ && values_ == o.values_;
  }

 private:
  HexPlaneConfig config_;
  Aabb aabb_;
  std::vector<Plane> planes_;
  std::vector<double> values_;
};

namespace detail {
struct BilinearTap {
  int i0 = 0;
  double frac = 0.0;
  double scale = 0.0;  // d(position)/d(u) = res - 1
};

inline BilinearTap bilinear_tap(double u, int res) {
  const double pos = u * static_cast<double>(res - 1);
  int i0 = static_cast<int>(std::floor(pos));
  i0 = std::clamp(i0, 0, res - 2);
  return {i0, pos - static_cast<double>(i0), static_cast<double>(res - 1)};
}
}  // namespace detail

/// Latent f for one point: per level, the six bilinearly interpolated plane
/// vectors multiplied elementwise; levels concatenated in order.
inline std::vector<double> hexplane_query(const HexPlaneField& field, const Vec3& mu, double t) {
  const auto u = field.normalize(mu, t);
  const auto c = static_cast<std::size_t>(field.feat_dim());
  std::vector<double> f(field.output_dim(), 1.0);
  const auto vals = field.values();
  for (std::size_t level = 0; level < field.num_levels(); ++level) {
    double* out = f.data() + level * c;
    for (std::size_t p = 0; p < 6; ++p) {
      const auto& pl = field.plane(level, p);
      const auto ta = detail::bilinear_tap(u[static_cast<std::size_t>(pl.axis_a)], pl.res_a);
      const auto tb = detail::bilinear_tap(u[static_cast<std::size_t>(pl.axis_b)], pl.res_b);
      const double* v00 = vals.data() + field.cell_index(pl, tb.i0, ta.i0);
      const double* v10 = vals.data() + field.cell_index(pl, tb.i0, ta.i0 + 1);
      const double* v01 = vals.data() + field.cell_index(pl, tb.i0 + 1, ta.i0);
      const double* v11 = vals.data() + field.cell_index(pl, tb.i0 + 1, ta.i0 + 1);
      const double w00 = (1 - ta.frac) * (1 - tb.frac), w10 = ta.frac * (1 - tb.frac);
      const double w01 = (1 - ta.frac) * tb.frac, w11 = ta.frac * tb.frac;
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[ch] *= w00 * v00[ch] + w10 * v10[ch] + w01 * v01[ch] + w11 * v11[ch];
      }
    }
  }
  return f;
}

/// Accumulates dL/dgrid into `grid_grad` (same layout as the field's values)
/// and returns dL/dmu. Clamped coordinates receive no position gradient.
inline Vec3 hexplane_query_backward(const HexPlaneField& field, const Vec3& mu, double t,
                                    std::span<const double> dL_df, std::span<double> grid_grad) {
  if (dL_df.size() != field.output_dim()) throw ConfigError("hexplane_query_backward: dL_df has wrong length");
  if (grid_grad.size() != field.num_values()) throw ConfigError("hexplane_query_backward: grid_grad has wrong length");
  std::array<bool, 4> clamped{};
  const auto u = field.normalize(mu, t, &clamped);
  const auto c = static_cast<std::size_t>(field.feat_dim());
  const auto vals = field.values();
  std::array<double, 4> du{0, 0, 0, 0};

  std::vector<double> interp(6 * c), prefix(6 * c), suffix(6 * c);
  for (std::size_t level = 0; level < field.num_levels(); ++level) {
    std::array<detail::BilinearTap, 6> ta{}, tb{};
    for (std::size_t p = 0; p < 6; ++p) {
      const auto& pl = field.plane(level, p);
      ta[p] = detail::bilinear_tap(u[static_cast<std::size_t>(pl.axis_a)], pl.res_a);
      tb[p] = detail::bilinear_tap(u[static_cast<std::size_t>(pl.axis_b)], pl.res_b);
      const double* v00 = vals.data() + field.cell_index(pl, tb[p].i0, ta[p].i0);
      const double* v10 = vals.data() + field.cell_index(pl, tb[p].i0, ta[p].i0 + 1);
      const double* v01 = vals.data() + field.cell_index(pl, tb[p].i0 + 1, ta[p].i0);
      const double* v11 = vals.data() + field.cell_index(pl, tb[p].i0 + 1, ta[p].i0 + 1);
      const double fa = ta[p].frac, fb = tb[p].frac;
      for (std::size_t ch = 0; ch < c; ++ch) {
        interp[p * c + ch] = (1 - fa) * (1 - fb) * v00[ch] + fa * (1 - fb) * v10[ch] + (1 - fa) * fb * v01[ch] +
                             fa * fb * v11[ch];
      }
    }
    // Product of the other five planes without dividing.
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 1.0;
      for (std::size_t p = 0; p < 6; ++p) {
        prefix[p * c + ch] = acc;
        acc *= interp[p * c + ch];
      }
      acc = 1.0;
      for (std::size_t p = 6; p-- > 0;) {
        suffix[p * c + ch] = acc;
        acc *= interp[p * c + ch];
      }
    }
    const double* g = dL_df.data() + level * c;
    for (std::size_t p = 0; p < 6; ++p) {
      const auto& pl = field.plane(level, p);
      const double fa = ta[p].frac, fb = tb[p].frac;
      const std::size_t i00 = field.cell_index(pl, tb[p].i0, ta[p].i0);
      const std::size_t i10 = field.cell_index(pl, tb[p].i0, ta[p].i0 + 1);
      const std::size_t i01 = field.cell_index(pl, tb[p].i0 + 1, ta[p].i0);
      const std::size_t i11 = field.cell_index(pl, tb[p].i0 + 1, ta[p].i0 + 1);
      double d_fa = 0.0, d_fb = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double gp = g[ch] * prefix[p * c + ch] * suffix[p * c + ch];
        if (gp == 0.0) continue;
        grid_grad[i00 + ch] += gp * (1 - fa) * (1 - fb);
        grid_grad[i10 + ch] += gp * fa * (1 - fb);
        grid_grad[i01 + ch] += gp * (1 - fa) * fb;
        grid_grad[i11 + ch] += gp * fa * fb;
        d_fa += gp * ((1 - fb) * (vals[i10 + ch] - vals[i00 + ch]) + fb * (vals[i11 + ch] - vals[i01 + ch]));
        d_fb += gp * ((1 - fa) * (vals[i01 + ch] - vals[i00 + ch]) + fa * (vals[i11 + ch] - vals[i10 + ch]));
      }
      du[static_cast<std::size_t>(pl.axis_a)] += d_fa * ta[p].scale;
      du[static_cast<std::size_t>(pl.axis_b)] += d_fb * tb[p].scale;
    }
  }
  Vec3 dmu;
  for (int a = 0; a < 3; ++a) {
    dmu[a] = clamped[static_cast<std::size_t>(a)] ? 0.0 : du[static_cast<std::size_t>(a)] / (field.aabb().max[a] - field.aabb().min[a]);
  }
  return dmu;
}

/// Batched query: row i of the result is hexplane_query(positions row i, t).
inline Tensor hexplane_query_batch(const HexPlaneField& field, std::span<const double> positions, double t) {
  const std::size_t k = positions.size() / 3;
  Tensor out({k, field.output_dim()});
  for (std::size_t i = 0; i < k; ++i) {
    const auto f = hexplane_query(field, Vec3(positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]), t);
    std::copy(f.begin(), f.end(), out.data() + i * field.output_dim());
  }
  return out;
}

/// Total variation: for every plane of every level and every channel, the
/// mean squared difference over axis-adjacent cell pairs (horizontal and
/// vertical pairs pooled), summed. When `grad` is non-empty, `scale` times
/// the gradient is added into it.
inline double tv_loss(const HexPlaneField& field, std::span<double> grad = {}, double scale = 1.0) {
  const auto c = static_cast<std::size_t>(field.feat_dim());
  const auto vals = field.values();
  if (!grad.empty() && grad.size() != vals.size()) throw ConfigError("tv_loss: gradient buffer has wrong length");
  double total = 0.0;
  for (const auto& pl : field.planes()) {
    const auto ra = static_cast<std::size_t>(pl.res_a), rb = static_cast<std::size_t>(pl.res_b);
    const double pairs = static_cast<double>(rb * (ra - 1) + (rb - 1) * ra);
    const double inv = 1.0 / pairs;
    double sum = 0.0;
    for (std::size_t row = 0; row < rb; ++row) {
      for (std::size_t col = 0; col < ra; ++col) {
        const std::size_t here = pl.offset + (row * ra + col) * c;
        if (col + 1 < ra) {
          const std::size_t right = here + c;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double d = vals[right + ch] - vals[here + ch];
            sum += d * d;
            if (!grad.empty()) {
              grad[right + ch] += scale * 2.0 * d * inv;
              grad[here + ch] -= scale * 2.0 * d * inv;
            }
          }
        }
        if (row + 1 < rb) {
          const std::size_t below = here + ra * c;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double d = vals[below + ch] - vals[here + ch];
            sum += d * d;
            if (!grad.empty()) {
              grad[below + ch] += scale * 2.0 * d * inv;
              grad[here + ch] -= scale * 2.0 * d * inv;
            }
          }
        }
      }
    }
    total += sum * inv;
  }
  return total;
}

}  // namespace fe4dgs
