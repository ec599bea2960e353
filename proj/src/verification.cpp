#include <varpro/verification.hpp>

#include <varpro/constraints.hpp>
#include <varpro/core.hpp>
#include <varpro/nuisance.hpp>
#include <varpro/operators.hpp>
#include <varpro/rng.hpp>
#include <varpro/testproblems.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace varpro::verification {

namespace {

class Suite {
 public:
  void add(std::string name, double value, double threshold) {
    results.push_back({std::move(name), value, threshold, std::isfinite(value) && value <= threshold});
  }
  std::vector<CheckResult> results;
};

LinearGroups random_groups(std::uint64_t seed, Index groups, Index rows, Index n, bool offsets) {
  SplitMix64 rng(seed);
  LinearGroups g;
  g.ops = multigroup_linear_surrogate(rng(), groups, rows, n);
  const Vector x = random_normal(n, rng());
  for (Index i = 0; i < groups; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (offsets) g.offsets.push_back(random_normal(rows, rng()));
    Vector d = g.ops[k].apply(x) + (1.0 + static_cast<double>(i)) * random_normal(rows, rng());
    if (offsets) d += g.offsets.back();
    g.data.push_back(std::move(d));
  }
  return g;
}

double fd_error(NuisanceObjective obj, const Vector& x) {
  ReducedObjective r(std::move(obj));
  return check_gradient_fd(r, x).max_rel_err;
}

// Grid search over s = log sigma^2, then bisection on dg/ds inside the best
// cell: the oracle for one group, independent of the closed form.
double grid_variance(double sumsq, double count) {
  const auto g = [&](double s) { return count * s + sumsq * std::exp(-s); };  // constants dropped
  const auto dg = [&](double s) { return count - sumsq * std::exp(-s); };
  const double lo = -40.0, step = 0.01;
  double best = lo;
  for (int i = 1; i <= 8000; ++i)
    if (g(lo + i * step) < g(best)) best = lo + i * step;
  double a = best - step, b = best + step;
  for (int it = 0; it < 200 && b - a > 0.0; ++it) {
    const double m = 0.5 * (a + b);
    if (m == a || m == b) break;
    (dg(m) < 0.0 ? a : b) = m;
  }
  return std::exp(0.5 * (a + b));
}

double projection_defects(const ConstraintSet& c, Index n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const Vector u = 3.0 * random_normal(n, rng());
    const Vector v = 3.0 * random_normal(n, rng());
    const Vector pu = c.project(u), pv = c.project(v);
    const double scale = 1.0 + u.norm() + v.norm();
    worst = std::max(worst, (c.project(pu) - pu).norm() / scale);                             // idempotent
    worst = std::max(worst, std::max(0.0, (pu - pv).norm() - (u - v).norm()) / scale);        // nonexpansive
    worst = std::max(worst, std::max(0.0, (u - pu).dot(pv - pu)) / (scale * scale));          // variational inequality
  }
  return worst;
}

}  // namespace

std::vector<CheckResult> run_checks(std::uint64_t seed) {
  Suite s;
  SplitMix64 rng(seed);

  // Operators at the default experiment sizes.
  const Grid2D fine{51, 51, 10.0};
  const Grid2D coarse{26, 26, 20.0};
  const LinearOperator ray = straight_ray_operator(fine, crosswell_geometry(fine, 51, 51));
  const LinearOperator interp = cubic_interp_operator(coarse, fine);
  s.add("adjoint straight-ray 2601x2601", adjoint_test(ray, 10, rng()).max_defect, 1e-10);
  s.add("adjoint cubic interpolation 2601x676", adjoint_test(interp, 10, rng()).max_defect, 1e-10);
  s.add("adjoint composed tomography 2601x676", adjoint_test(compose(ray, interp), 10, rng()).max_defect, 1e-10);
  const auto sur = multigroup_linear_surrogate(rng(), 3, 800, 100);
  double sur_defect = 0.0;
  for (const auto& op : sur) sur_defect = std::max(sur_defect, adjoint_test(op, 10, rng()).max_defect);
  s.add("adjoint multigroup surrogate 800x100", sur_defect, 1e-10);

  // Reduced gradients against central differences.
  {
    const LinearGroups g = random_groups(rng(), 3, 30, 8, false);
    s.add("fd gradient group variances", fd_error(group_variance_objective(g), random_normal(8, rng())), 1e-6);
    const LinearGroups c = random_groups(rng(), 6, 3, 2, false);
    s.add("fd gradient full covariance", fd_error(full_covariance_objective(c), random_normal(2, rng())), 1e-6);
    const LinearGroups cal = random_groups(rng(), 3, 20, 6, true);
    s.add("fd gradient calibration (ls)",
          fd_error(calibration_objective(cal, Penalty::least_squares()), random_normal(6, rng())), 1e-6);
    s.add("fd gradient calibration (student k=1)",
          fd_error(calibration_objective(cal, Penalty::student_t(1.0)), random_normal(6, rng())), 1e-4);
    const auto op = multigroup_linear_surrogate(rng(), 1, 60, 5).front();
    const Vector d = op.apply(random_normal(5, rng())) + random_student_t(60, 3.0, 0.5, rng());
    s.add("fd gradient student's t re-fit", fd_error(student_objective(op, d), random_normal(5, rng())), 1e-4);
    s.add("fd gradient quartic envelope", fd_error(quartic_envelope_objective(), Vector::Constant(1, 1.3)), 1e-6);
  }

  // Projector oracles.
  {
    const LinearGroups g = random_groups(rng(), 4, 50, 5, false);
    const GroupedResiduals res = g.evaluate(random_normal(5, rng()));
    const Vector proj = project_group_variances(res);
    double worst = 0.0;
    for (Index i = 0; i < res.groups(); ++i) {
      const Vector r = res.residual(i);
      const double ref = grid_variance(r.squaredNorm(), static_cast<double>(r.size()));
      worst = std::max(worst, std::abs(proj[i] - ref) / ref);
    }
    s.add("group variance projector vs grid search", worst, 1e-8);

    std::vector<Vector> rs;
    for (int i = 0; i < 5; ++i) rs.push_back(random_normal(2, rng()));
    const Matrix sigma = project_full_covariance(rs).sigma;
    s.add("full covariance stationarity", full_covariance_sigma_grad(rs, sigma).norm(), 1e-8);

    const Vector t = random_student_t(2000, 3.0, 1.5, rng());
    const StudentFit fit = fit_student_t(t);
    double drop = 0.0;
    for (double ds : {-1e-3, 1e-3})
      for (double dk : {-1e-3, 1e-3}) {
        const StudentParams q{fit.params.scale2 * std::exp(ds), fit.params.dof * std::exp(dk)};
        drop = std::max(drop, fit.nll - student_nll(t, q));
      }
    s.add("student's t fit is a local minimum", drop, 1e-9 * (1.0 + std::abs(fit.nll)));

    const Vector fv = random_normal(40, rng());
    const Vector dv = 1.7 * fv + 0.1 * random_normal(40, rng());
    const double closed = dv.dot(fv) / fv.squaredNorm();
    const double newton = project_calibration(dv, fv, Penalty::least_squares(), 0.0).alpha;
    s.add("ls calibration newton vs closed form", std::abs(newton - closed), 1e-10);
  }

  // Constraint projections.
  {
    const Index n = 12;
    const Vector lo = -Vector::Ones(n), hi = Vector::LinSpaced(n, 0.1, 2.0);
    s.add("box projection properties", projection_defects(ConstraintSet(BoxSet{lo, hi}), n, rng()), 1e-12);
    s.add("l1 projection properties", projection_defects(ConstraintSet(L1Ball{2.0}), n, rng()), 1e-12);
    const Vector diag = Vector::LinSpaced(n, 0.5, 4.0);
    s.add("ellipsoid projection properties", projection_defects(ConstraintSet(EllipsoidSet(diag, 1.5)), n, rng()),
          1e-9);
  }
  return s.results;
}

void print_table(std::ostream& out, const std::vector<CheckResult>& results) {
  std::size_t width = 5;
  for (const auto& r : results) width = std::max(width, r.name.size());
  char buf[64];
  int failed = 0;
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%12.3e  <= %9.1e", r.value, r.threshold);
    out << (r.passed ? "PASS  " : "FAIL  ") << r.name << std::string(width - r.name.size() + 2, ' ') << buf << '\n';
    failed += r.passed ? 0 : 1;
  }
  out << results.size() - static_cast<std::size_t>(failed) << '/' << results.size() << " checks passed\n";
}

}  // namespace varpro::verification
