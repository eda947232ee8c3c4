#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace fe4dgs {

/// PCG32 (XSH-RR) generator. Output depends only on (state, stream), so
/// runs are reproducible across platforms and the state is trivially
/// serializable into checkpoints.
class Pcg32 {
 public:
  Pcg32() : Pcg32(0x853c49e6748fea9bULL) {}

  explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0xda3e39cb94b95bdbULL) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound) without modulo bias.
  std::uint32_t below(std::uint32_t bound) {
    std::uint32_t threshold = (-bound) % bound;
    for (;;) {
      std::uint32_t r = next_u32();
      if (r >= threshold) return r % bound;
    }
  }

  /// Standard normal via Box-Muller (one value per call; no cached spare so
  /// the state fully describes the stream).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const noexcept { return state_; }
  std::uint64_t increment() const noexcept { return inc_; }
  void restore(std::uint64_t state, std::uint64_t inc) noexcept {
    state_ = state;
    inc_ = inc;
  }

  bool operator==(const Pcg32&) const = default;

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

}  // namespace fe4dgs
