#pragma once

#include <varpro/linalg.hpp>

namespace varpro {

/// Misfit rho(r) = sum_i phi(|r_i|^2) + const with gradient w_i r_i and
/// Gauss-Newton weight w_i > 0, where w_i = 2 phi'(|r_i|^2).
///
///   least squares        rho = 1/2 sum r^2,                  w = 1
///   Student's t (k)      rho = 1/2 sum log(k + r^2),          w = 1/(k + r^2)
///   Student's t (s2, k)  rho = (k+1)/2 sum log(1 + r^2/(s2 k)) + m/2 log s2 + m c(k),
///                        w = (k+1)/(s2 k + r^2)
///
/// The scaled Student's t value is the exact negative log-likelihood of i.i.d.
/// residuals, c(k) = log Gamma(k/2) - log Gamma((k+1)/2) + 1/2 log(pi k).
class Penalty {
 public:
  enum class Kind { least_squares, student_t, scaled_student_t };

  static Penalty least_squares() { return Penalty(Kind::least_squares, 1.0, 0.0); }
  static Penalty student_t(double dof);
  static Penalty scaled_student_t(double scale2, double dof);

  Kind kind() const { return kind_; }
  double dof() const { return dof_; }
  double scale2() const { return scale2_; }

  double rho(const Vector& r) const;
  double rho(const ComplexVector& r) const;
  Vector grad(const Vector& r) const;
  ComplexVector grad(const ComplexVector& r) const;
  Vector gn_weights(const Vector& r) const;
  Vector gn_weights(const ComplexVector& r) const;
  /// rho''(r_i), which unlike the Gauss-Newton weight can be negative for Student's t.
  Vector second_derivative(const Vector& r) const;

  /// rho'(t) on a 1-D grid of residual values.
  Vector influence(const Vector& grid) const { return grad(grid); }

 private:
  Penalty(Kind kind, double scale2, double dof) : kind_(kind), scale2_(scale2), dof_(dof) {}

  double weight(double abs2) const;
  double phi_sum(const Vector& abs2) const;

  Kind kind_;
  double scale2_;
  double dof_;
};

inline Vector grad_rho(const Penalty& p, const Vector& r) { return p.grad(r); }
inline double rho(const Penalty& p, const Vector& r) { return p.rho(r); }
inline Vector gn_weights(const Penalty& p, const Vector& r) { return p.gn_weights(r); }
inline Vector influence(const Penalty& p, const Vector& grid) { return p.influence(grid); }

/// -log( Gamma((k+1)/2) / (Gamma(k/2) sqrt(pi k)) ), the per-sample normalizer of the
/// Student's t density.
double student_log_normalizer(double dof);

}  // namespace varpro
