#pragma once

#include <varpro/constraints.hpp>
#include <varpro/linalg.hpp>

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace varpro {

/// Raised by a projector that could not find a stationary nuisance value.
/// Carries the best value found so callers can report it.
class ProjectionError : public std::runtime_error {
 public:
  ProjectionError(const std::string& what, Vector best_theta)
      : std::runtime_error(what), best_theta_(std::move(best_theta)) {}
  const Vector& best_theta() const { return best_theta_; }

 private:
  Vector best_theta_;
};

/// A joint objective g(x, theta) bundled with its nuisance projector theta(x).
///
/// `project` receives the previous projection (or nullptr) for warm starts.
/// `grad_theta` is optional and only used for stationarity diagnostics.
struct NuisanceObjective {
  using Value = std::function<double(const Vector& x, const Vector& theta)>;
  using Gradient = std::function<Vector(const Vector& x, const Vector& theta)>;
  using Projector = std::function<Vector(const Vector& x, const Vector* warm_start)>;

  Value eval;
  Gradient grad_x;
  Projector project;
  Gradient grad_theta;
  Index n = 0;
  Index k = 0;

  /// Wraps a plain objective f(x) as a nuisance objective with k = 0.
  static NuisanceObjective plain(Index n, std::function<double(const Vector&)> value,
                                 std::function<Vector(const Vector&)> gradient);
};

/// g~(x) = g(x, theta(x)) with gradient grad_x g(x, theta(x)).
///
/// The projector runs once per distinct x: value and gradient calls at the
/// same point (bitwise equal) reuse the cached theta. The previous theta is
/// handed to the projector as a warm start. Not thread safe.
class ReducedObjective {
 public:
  explicit ReducedObjective(NuisanceObjective inner);

  Index dim() const { return inner_.n; }
  Index nuisance_dim() const { return inner_.k; }
  const NuisanceObjective& inner() const { return inner_; }

  double value(const Vector& x);
  Vector gradient(const Vector& x);
  /// theta(x), projecting if x differs from the cached point.
  const Vector& theta(const Vector& x);
  /// theta at the most recent projection (empty before the first call).
  const Vector& last_theta() const { return theta_; }

  std::size_t eval_count() const { return eval_count_; }
  std::size_t grad_count() const { return grad_count_; }
  std::size_t projection_count() const { return projection_count_; }

  /// Drops the cached point; the next call re-projects (still warm-started).
  void invalidate() { cached_x_.reset(); }

 private:
  void ensure_projected(const Vector& x);

  NuisanceObjective inner_;
  std::optional<Vector> cached_x_;
  Vector theta_;
  std::size_t eval_count_ = 0;
  std::size_t grad_count_ = 0;
  std::size_t projection_count_ = 0;
};

inline ReducedObjective reduce(NuisanceObjective obj) { return ReducedObjective(std::move(obj)); }

inline Vector grad_reduced(ReducedObjective& r, const Vector& x) { return r.gradient(x); }

struct GradientCheckReport {
  Vector analytic;
  Vector finite_difference;
  /// max_j |a_j - fd_j| / max(|a|_inf, |fd|_inf)
  double max_rel_err = 0.0;
  /// Components whose perturbed values were not finite.
  std::vector<Index> nonfinite;
};

/// Central differences with step h_j = h * (1 + |x_j|).
GradientCheckReport check_gradient_fd(ReducedObjective& r, const Vector& x, double h = 1e-5);

/// |x - P_c(x - grad g~(x))|_2, the projected-gradient stationarity measure.
/// Zero exactly when -grad g~(x) lies in the normal cone of c at x.
double kkt_residual(ReducedObjective& r, const Vector& x, const ConstraintSet& c = {});

}  // namespace varpro
