#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fe4dgs/errors.hpp"

namespace fe4dgs {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_size(std::size_t n, double eps = 1e-8) {
    AdamState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.eps = eps;
    return s;
  }

  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update, in place. A non-finite gradient aborts
/// the step before anything is modified.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ConfigError("adam_step: params (" + std::to_string(params.size()) + "), grads (" +
                      std::to_string(grads.size()) + ") and moments (" +
                      std::to_string(state.m.size()) + ") must have equal length");
  }
  if (!(lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
  std::size_t bad = 0;
  std::size_t first_bad = grads.size();
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      if (bad == 0) first_bad = i;
      ++bad;
    }
  }
  if (bad > 0) {
    throw NumericalError("adam_step: " + std::to_string(bad) + " non-finite gradient entries (first at index " +
                         std::to_string(first_bad) + ", value " + std::to_string(grads[first_bad]) +
                         "); step aborted");
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2_sqrt = std::sqrt(1.0 - std::pow(state.beta2, t));
  const double step_size = lr / bc1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double denom = std::sqrt(state.v[i]) / bc2_sqrt + state.eps;
    params[i] -= step_size * state.m[i] / denom;
  }
}

}  // namespace fe4dgs
