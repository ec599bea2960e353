#pragma once

#include <varpro/linalg.hpp>

#include <memory>
#include <variant>

namespace varpro {

struct NoConstraint {};

/// {x : lower <= x <= upper}
struct BoxSet {
  Vector lower;
  Vector upper;
};

/// {x : |x|_1 <= radius}
struct L1Ball {
  double radius = 1.0;
};

/// {x : sqrt(x^T M x) <= radius} for symmetric positive definite M.
///
/// A diagonal M is handled directly. A general M is diagonalized once at
/// construction (n <= 2000).
class EllipsoidSet {
 public:
  EllipsoidSet(Vector diagonal, double radius);
  EllipsoidSet(const Matrix& metric, double radius);

  double radius() const { return radius_; }
  Index dim() const { return eigenvalues_.size(); }
  bool is_diagonal() const { return !basis_; }

  double norm(const Vector& v) const;
  Vector project(const Vector& v) const;

 private:
  Vector eigenvalues_;
  std::shared_ptr<const Matrix> basis_;  // null when M is diagonal
  double radius_;
};

Vector project_box(const Vector& v, const BoxSet& box);
Vector project_l1(const Vector& v, double radius);
inline Vector project_ellipsoid(const Vector& v, const EllipsoidSet& set) { return set.project(v); }

class ConstraintSet {
 public:
  using Kind = std::variant<NoConstraint, BoxSet, L1Ball, EllipsoidSet>;

  ConstraintSet() = default;
  ConstraintSet(BoxSet box);
  ConstraintSet(L1Ball ball);
  ConstraintSet(EllipsoidSet ellipsoid);

  bool is_unconstrained() const { return std::holds_alternative<NoConstraint>(kind_); }
  const Kind& kind() const { return kind_; }

  Vector project(const Vector& v) const;
  /// Feasibility with an absolute slack `tol` on the defining inequality.
  bool contains(const Vector& v, double tol = 1e-9) const;

 private:
  Kind kind_{NoConstraint{}};
};

}  // namespace varpro
