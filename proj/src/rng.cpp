#include <varpro/rng.hpp>

#include <cmath>
#include <numbers>

namespace varpro {

double normal_draw(SplitMix64& rng) {
  const double u1 = 1.0 - rng.uniform();  // (0, 1]
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double gamma_draw(SplitMix64& rng, double shape) {
  require(shape > 0.0, "gamma_draw: shape must be positive");
  if (shape < 1.0) {
    const double u = 1.0 - rng.uniform();
    return gamma_draw(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double z = 0.0;
    double v = 0.0;
    do {
      z = normal_draw(rng);
      v = 1.0 + c * z;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - rng.uniform();
    if (std::log(u) < 0.5 * z * z + d - d * v + d * std::log(v)) return d * v;
  }
}

Vector random_normal(Index n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal_draw(rng);
  return v;
}

Vector random_student_t(Index n, double dof, double scale, std::uint64_t seed) {
  require(dof > 0.0 && scale > 0.0, "random_student_t: dof and scale must be positive");
  SplitMix64 rng(seed);
  Vector v(n);
  for (Index i = 0; i < n; ++i) {
    const double z = normal_draw(rng);
    const double chi2 = 2.0 * gamma_draw(rng, 0.5 * dof);
    v[i] = scale * z / std::sqrt(chi2 / dof);
  }
  return v;
}

}  // namespace varpro
