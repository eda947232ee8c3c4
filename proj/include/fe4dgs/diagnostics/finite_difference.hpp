#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fe4dgs {

/// Outcome of comparing analytic gradients against central differences.
struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passed(double tol) const { return checked > 0 && max_rel_error < tol; }
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
/// gradient is zero from dividing roundoff by roundoff.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Perturbs params[i] for each i in `indices` (all entries if empty) by +-h,
/// evaluates `loss()` and compares (L+ - L-) / 2h with analytic[i].
template <typename Loss>
GradCheckResult check_gradient(std::string name, std::span<double> params, std::span<const double> analytic,
                               Loss&& loss, double h = 1e-5, std::vector<std::size_t> indices = {},
                               double floor = 1e-6) {
  if (indices.empty()) {
    indices.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) indices[i] = i;
  }
  GradCheckResult r;
  r.name = std::move(name);
  for (std::size_t i : indices) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    params[i] = saved - h;
    const double down = loss();
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = relative_error(analytic[i], numeric, floor);
    ++r.checked;
    if (r.checked == 1 || err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_index = i;
      r.worst_analytic = analytic[i];
      r.worst_numeric = numeric;
    }
  }
  return r;
}

}  // namespace fe4dgs
