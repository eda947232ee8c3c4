#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "fe4dgs/errors.hpp"

namespace fe4dgs {

/// Log-linear decay from lr_init to lr_final over max_steps, optionally
/// scaled by a sine warm-up ramp that starts at delay_mult and reaches 1
/// after delay_steps (delay_steps == 0 disables the ramp).
struct LrSchedule {
  double lr_init = 1e-3;
  double lr_final = 1e-3;
  std::int64_t max_steps = 1;
  double delay_mult = 1.0;
  std::int64_t delay_steps = 0;

  void validate() const {
    if (!(lr_init > 0.0) || !(lr_final > 0.0)) {
      throw ConfigError("LrSchedule: lr_init and lr_final must be positive");
    }
    if (max_steps <= 0) throw ConfigError("LrSchedule: max_steps must be positive");
    if (!(delay_mult > 0.0 && delay_mult <= 1.0)) throw ConfigError("LrSchedule: delay_mult must lie in (0, 1]");
    if (delay_steps < 0) throw ConfigError("LrSchedule: delay_steps must be >= 0");
  }

  bool operator==(const LrSchedule&) const = default;
};

inline double lr_at_step(const LrSchedule& s, std::int64_t t) {
  s.validate();
  if (t < 0) throw ConfigError("lr_at_step: step must be >= 0");
  double ramp = 1.0;
  if (s.delay_steps > 0) {
    const double x = std::clamp(static_cast<double>(t) / static_cast<double>(s.delay_steps), 0.0, 1.0);
    ramp = s.delay_mult + (1.0 - s.delay_mult) * std::sin(0.5 * std::numbers::pi * x);
  }
  if (t == 0) return s.lr_init * ramp;
  if (t >= s.max_steps) return s.lr_final * ramp;
  const double p = static_cast<double>(t) / static_cast<double>(s.max_steps);
  const double log_lr = std::log(s.lr_init) * (1.0 - p) + std::log(s.lr_final) * p;
  return std::exp(log_lr) * ramp;
}

}  // namespace fe4dgs
