#include <varpro/penalties.hpp>

#include <cmath>
#include <numbers>

namespace varpro {

double student_log_normalizer(double dof) {
  require(dof > 0.0, "student_log_normalizer: degrees of freedom must be positive");
  return std::lgamma(0.5 * dof) - std::lgamma(0.5 * (dof + 1.0)) + 0.5 * std::log(std::numbers::pi * dof);
}

Penalty Penalty::student_t(double dof) {
  require(dof > 0.0 && std::isfinite(dof), "Penalty::student_t: k must be positive");
  return Penalty(Kind::student_t, 1.0, dof);
}

Penalty Penalty::scaled_student_t(double scale2, double dof) {
  require(scale2 > 0.0 && std::isfinite(scale2), "Penalty::scaled_student_t: sigma^2 must be positive");
  require(dof > 0.0 && std::isfinite(dof), "Penalty::scaled_student_t: k must be positive");
  return Penalty(Kind::scaled_student_t, scale2, dof);
}

double Penalty::weight(double abs2) const {
  switch (kind_) {
    case Kind::least_squares: return 1.0;
    case Kind::student_t: return 1.0 / (dof_ + abs2);
    case Kind::scaled_student_t: return (dof_ + 1.0) / (scale2_ * dof_ + abs2);
  }
  return 1.0;
}

double Penalty::phi_sum(const Vector& abs2) const {
  const auto m = static_cast<double>(abs2.size());
  double sum = 0.0;
  switch (kind_) {
    case Kind::least_squares:
      for (Index i = 0; i < abs2.size(); ++i) sum += 0.5 * abs2[i];
      return sum;
    case Kind::student_t:
      // log(k + r^2) = log k + log1p(r^2 / k) keeps precision for small residuals.
      for (Index i = 0; i < abs2.size(); ++i) sum += std::log1p(abs2[i] / dof_);
      return 0.5 * sum + 0.5 * m * std::log(dof_);
    case Kind::scaled_student_t: {
      const double denom = scale2_ * dof_;
      for (Index i = 0; i < abs2.size(); ++i) sum += std::log1p(abs2[i] / denom);
      return 0.5 * (dof_ + 1.0) * sum + 0.5 * m * std::log(scale2_) + m * student_log_normalizer(dof_);
    }
  }
  return sum;
}

double Penalty::rho(const Vector& r) const { return phi_sum(r.array().square().matrix()); }
double Penalty::rho(const ComplexVector& r) const { return phi_sum(r.cwiseAbs2()); }

Vector Penalty::grad(const Vector& r) const {
  Vector g(r.size());
  for (Index i = 0; i < r.size(); ++i) g[i] = weight(r[i] * r[i]) * r[i];
  return g;
}

ComplexVector Penalty::grad(const ComplexVector& r) const {
  ComplexVector g(r.size());
  for (Index i = 0; i < r.size(); ++i) g[i] = weight(std::norm(r[i])) * r[i];
  return g;
}

Vector Penalty::gn_weights(const Vector& r) const {
  Vector w(r.size());
  for (Index i = 0; i < r.size(); ++i) w[i] = weight(r[i] * r[i]);
  return w;
}

Vector Penalty::second_derivative(const Vector& r) const {
  Vector h(r.size());
  for (Index i = 0; i < r.size(); ++i) {
    const double a = r[i] * r[i];
    switch (kind_) {
      case Kind::least_squares: h[i] = 1.0; break;
      case Kind::student_t: h[i] = (dof_ - a) / ((dof_ + a) * (dof_ + a)); break;
      case Kind::scaled_student_t: {
        const double c = scale2_ * dof_;
        h[i] = (dof_ + 1.0) * (c - a) / ((c + a) * (c + a));
        break;
      }
    }
  }
  return h;
}

Vector Penalty::gn_weights(const ComplexVector& r) const {
  Vector w(r.size());
  for (Index i = 0; i < r.size(); ++i) w[i] = weight(std::norm(r[i]));
  return w;
}

}  // namespace varpro
