#ifndef STORMUQ_RNG_HPP
#define STORMUQ_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string_view>

#include "stormuq/common.hpp"

namespace stormuq {

/// 64-bit FNV-1a. Used for input manifests and to key per-storm RNG
/// substreams by storm id, so results do not depend on storm ordering.
inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

/// Counter-based generator built on SplitMix64. Substreams are derived by
/// folding an arbitrary list of 64-bit key words into the seed, so a stream
/// keyed by (seed, stage, iteration, storm) is independent of the order in
/// which other streams are consumed. Every distribution below is fully
/// specified here (no std::*_distribution), which keeps draws bit-stable.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed + kGolden)) {}

  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) : Rng(seed) {
    for (std::uint64_t w : stream) state_ = mix(state_ ^ (w + kGolden));
  }

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via the Marsaglia polar method (no trig, one cached
  /// spare per accepted pair).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  /// Gamma(shape, 1) via Marsaglia-Tsang squeeze; shape < 1 uses the
  /// standard boosting identity.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw numeric_error("gamma: shape must be > 0");
    if (shape < 1.0) {
      double u = uniform();
      if (u <= 0.0) u = 0x1.0p-53;
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double chi_square(double df) { return 2.0 * gamma(0.5 * df); }

private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

} // namespace stormuq

#endif
