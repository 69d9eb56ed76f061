#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace localsym {

/// Deterministic counter-free random stream (splitmix64 core).
///
/// Standard-library distributions are implementation-defined, which breaks
/// reproducibility of stored datasets across compilers; this keeps every
/// sampled value a pure function of the seed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed + 0x9e3779b97f4a7c15ULL) {}

  /// Independent child stream labelled by an integer (chart id, sample
  /// index, step, ...). Children of distinct labels do not collide.
  RngStream child(std::uint64_t label) const {
    RngStream s(mix(state_ ^ mix(label + 0x6a09e667f3bcc909ULL)));
    return s;
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform in [0, 1).
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

  /// Standard normal via Box-Muller (one value per call, no cached spare).
  double next_normal() {
    double u1 = next_uniform();
    while (u1 <= 0.0) u1 = next_uniform();
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
};

}  // namespace localsym
