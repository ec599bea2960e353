#pragma once

#include <varpro/linalg.hpp>

#include <cstdint>
#include <limits>

namespace varpro {

/// SplitMix64: a 64-bit counter-based generator. Output i is a fixed bijective
/// mix of (seed + i * golden_gamma), so a stream is fully determined by its seed.
/// Satisfies UniformRandomBitGenerator.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Independent child stream, e.g. one per data group.
  SplitMix64 split() { return SplitMix64((*this)()); }

 private:
  std::uint64_t state_;
};

// Samplers below are written out (rather than using <random> distributions)
// so that a seed produces the same numbers with every standard library.

/// Box-Muller standard normal.
double normal_draw(SplitMix64& rng);
/// Gamma(shape, 1) by Marsaglia-Tsang.
double gamma_draw(SplitMix64& rng, double shape);

Vector random_normal(Index n, std::uint64_t seed);
/// scale * T with T ~ Student's t(dof).
Vector random_student_t(Index n, double dof, double scale, std::uint64_t seed);

}  // namespace varpro
