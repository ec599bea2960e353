#include <varpro/core.hpp>

#include <algorithm>
#include <cmath>

namespace varpro {

NuisanceObjective NuisanceObjective::plain(Index n, std::function<double(const Vector&)> value,
                                           std::function<Vector(const Vector&)> gradient) {
  NuisanceObjective obj;
  obj.n = n;
  obj.k = 0;
  obj.eval = [value = std::move(value)](const Vector& x, const Vector&) { return value(x); };
  obj.grad_x = [gradient = std::move(gradient)](const Vector& x, const Vector&) { return gradient(x); };
  obj.project = [](const Vector&, const Vector*) { return Vector(); };
  obj.grad_theta = [](const Vector&, const Vector&) { return Vector(); };
  return obj;
}

ReducedObjective::ReducedObjective(NuisanceObjective inner) : inner_(std::move(inner)) {
  require(static_cast<bool>(inner_.eval) && static_cast<bool>(inner_.grad_x) && static_cast<bool>(inner_.project),
          "ReducedObjective: eval, grad_x and project are required");
}

void ReducedObjective::ensure_projected(const Vector& x) {
  require_same_size(x.size(), inner_.n, "ReducedObjective");
  if (cached_x_ && cached_x_->size() == x.size() && *cached_x_ == x) return;
  const Vector* warm = theta_.size() == inner_.k && inner_.k > 0 ? &theta_ : nullptr;
  Vector theta = inner_.project(x, warm);
  require_same_size(theta.size(), inner_.k, "ReducedObjective projector");
  theta_ = std::move(theta);
  cached_x_ = x;
  ++projection_count_;
}

double ReducedObjective::value(const Vector& x) {
  ensure_projected(x);
  ++eval_count_;
  return inner_.eval(x, theta_);
}

Vector ReducedObjective::gradient(const Vector& x) {
  ensure_projected(x);
  ++grad_count_;
  return inner_.grad_x(x, theta_);
}

const Vector& ReducedObjective::theta(const Vector& x) {
  ensure_projected(x);
  return theta_;
}

GradientCheckReport check_gradient_fd(ReducedObjective& r, const Vector& x, double h) {
  require(h > 0.0, "check_gradient_fd: step must be positive");
  GradientCheckReport report;
  report.analytic = r.gradient(x);
  report.finite_difference = Vector::Zero(x.size());
  Vector probe = x;
  for (Index j = 0; j < x.size(); ++j) {
    const double step = h * (1.0 + std::abs(x[j]));
    probe[j] = x[j] + step;
    const double fp = r.value(probe);
    probe[j] = x[j] - step;
    const double fm = r.value(probe);
    probe[j] = x[j];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      report.nonfinite.push_back(j);
      report.finite_difference[j] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    report.finite_difference[j] = (fp - fm) / (2.0 * step);
  }
  // Restore the cache to x so callers see theta(x) afterwards.
  r.theta(x);

  double scale = report.analytic.lpNorm<Eigen::Infinity>();
  double max_diff = 0.0;
  for (Index j = 0; j < x.size(); ++j) {
    const double fd = report.finite_difference[j];
    if (!std::isfinite(fd)) continue;
    scale = std::max(scale, std::abs(fd));
    max_diff = std::max(max_diff, std::abs(report.analytic[j] - fd));
  }
  report.max_rel_err = scale > 0.0 ? max_diff / scale : max_diff;
  if (!report.nonfinite.empty()) report.max_rel_err = std::numeric_limits<double>::infinity();
  return report;
}

double kkt_residual(ReducedObjective& r, const Vector& x, const ConstraintSet& c) {
  require(c.contains(x, 1e-9 * (1.0 + x.lpNorm<Eigen::Infinity>())), "kkt_residual: x is infeasible");
  const Vector g = r.gradient(x);
  return (x - c.project(x - g)).norm();
}

}  // namespace varpro
