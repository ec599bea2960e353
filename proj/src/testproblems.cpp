#include <varpro/testproblems.hpp>

#include <cmath>

namespace varpro {

NuisanceObjective quartic_envelope_objective() {
  NuisanceObjective obj;
  obj.n = 1;
  obj.k = 1;
  obj.eval = [](const Vector& x, const Vector& t) {
    const double x2 = x[0] * x[0];
    return 0.5 * x2 * x2 + t[0] * t[0] - std::abs(t[0]) * x2;
  };
  // Holds t fixed; at t = x^2/2 > 0 this is 2x^3 - 2|t|x = x^3.
  obj.grad_x = [](const Vector& x, const Vector& t) {
    Vector g(1);
    g[0] = 2.0 * x[0] * x[0] * x[0] - 2.0 * std::abs(t[0]) * x[0];
    return g;
  };
  obj.project = [](const Vector& x, const Vector*) {
    Vector t(1);
    t[0] = 0.5 * x[0] * x[0];
    return t;
  };
  // Subgradient choice sign(0) = 0 at t = 0.
  obj.grad_theta = [](const Vector& x, const Vector& t) {
    Vector g(1);
    const double s = t[0] > 0.0 ? 1.0 : (t[0] < 0.0 ? -1.0 : 0.0);
    g[0] = 2.0 * t[0] - s * x[0] * x[0];
    return g;
  };
  return obj;
}

}  // namespace varpro
