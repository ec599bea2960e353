#include <varpro/nuisance.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace varpro {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double median_abs(const Vector& r) {
  std::vector<double> a(static_cast<std::size_t>(r.size()));
  for (Index i = 0; i < r.size(); ++i) a[static_cast<std::size_t>(i)] = std::abs(r[i]);
  const auto mid = a.begin() + static_cast<std::ptrdiff_t>(a.size() / 2);
  std::nth_element(a.begin(), mid, a.end());
  if (a.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(a.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace

Vector GroupedResiduals::residual(Index i) const {
  return data[static_cast<std::size_t>(i)] - model[static_cast<std::size_t>(i)];
}

void GroupedResiduals::validate() const {
  require(!data.empty(), "GroupedResiduals: at least one group required");
  require(data.size() == model.size(), "GroupedResiduals: data and model group counts differ");
  for (std::size_t i = 0; i < data.size(); ++i) {
    require(data[i].size() >= 1, "GroupedResiduals: empty group");
    require_same_size(data[i].size(), model[i].size(), "GroupedResiduals");
  }
}

Vector LinearGroups::forward(Index i, const Vector& x) const {
  const auto k = static_cast<std::size_t>(i);
  Vector f = ops[k].apply(x);
  if (!offsets.empty()) f += offsets[k];
  return f;
}

GroupedResiduals LinearGroups::evaluate(const Vector& x) const {
  GroupedResiduals g;
  g.data = data;
  g.model.reserve(ops.size());
  for (Index i = 0; i < groups(); ++i) g.model.push_back(forward(i, x));
  return g;
}

void LinearGroups::validate() const {
  require(!ops.empty(), "LinearGroups: at least one group required");
  require(ops.size() == data.size(), "LinearGroups: operator and data counts differ");
  require(offsets.empty() || offsets.size() == ops.size(), "LinearGroups: offset count must match groups");
  for (std::size_t i = 0; i < ops.size(); ++i) {
    require_same_size(ops[i].cols(), ops.front().cols(), "LinearGroups unknowns");
    require_same_size(ops[i].rows(), data[i].size(), "LinearGroups data");
    if (!offsets.empty()) require_same_size(offsets[i].size(), data[i].size(), "LinearGroups offsets");
  }
}

double variance_floor(const Vector& data) {
  const double scale2 = data.size() > 0 ? data.squaredNorm() / static_cast<double>(data.size()) : 0.0;
  return 1e-12 * (1.0 + scale2);
}

// ---------------------------------------------------------------------------

Vector project_group_variances(const GroupedResiduals& g) {
  g.validate();
  Vector v(g.groups());
  for (Index i = 0; i < g.groups(); ++i) {
    const Vector r = g.residual(i);
    const double estimate = r.squaredNorm() / static_cast<double>(r.size());
    v[i] = std::max(variance_floor(g.data[static_cast<std::size_t>(i)]), estimate);
  }
  return v;
}

double group_variance_nll(const GroupedResiduals& g, const Vector& variances) {
  g.validate();
  require_same_size(variances.size(), g.groups(), "group_variance_nll");
  require((variances.array() > 0.0).all(), "group_variance_nll: variances must be positive");
  double total = 0.0;
  for (Index i = 0; i < g.groups(); ++i) {
    const Vector r = g.residual(i);
    const auto n = static_cast<double>(r.size());
    total += n * std::log(kTwoPi * variances[i]) + r.squaredNorm() / variances[i];
  }
  return total;
}

double group_variance_reduced(const GroupedResiduals& g) {
  return group_variance_nll(g, project_group_variances(g));
}

Vector group_variance_theta_grad(const GroupedResiduals& g, const Vector& variances) {
  g.validate();
  require_same_size(variances.size(), g.groups(), "group_variance_theta_grad");
  Vector out(g.groups());
  for (Index i = 0; i < g.groups(); ++i) {
    const Vector r = g.residual(i);
    const double s = variances[i];
    out[i] = static_cast<double>(r.size()) / s - r.squaredNorm() / (s * s);
  }
  return out;
}

Vector group_variance_grad(const GroupedResiduals& g, const Vector& variances,
                           std::span<const LinearOperator> jacobians) {
  g.validate();
  require_same_size(variances.size(), g.groups(), "group_variance_grad");
  require_same_size(static_cast<Index>(jacobians.size()), g.groups(), "group_variance_grad jacobians");
  require((variances.array() > 0.0).all(), "group_variance_grad: variances must be positive");
  Vector grad = Vector::Zero(jacobians.front().cols());
  for (Index i = 0; i < g.groups(); ++i) {
    const auto& j = jacobians[static_cast<std::size_t>(i)];
    require_same_size(j.cols(), grad.size(), "group_variance_grad jacobian columns");
    grad -= (2.0 / variances[i]) * j.adjoint(g.residual(i));
  }
  return grad;
}

LinearOperator gn_normal_operator_groups(const Vector& variances, std::span<const LinearOperator> jacobians,
                                         double scale) {
  require_same_size(variances.size(), static_cast<Index>(jacobians.size()), "gn_normal_operator_groups");
  require(!jacobians.empty(), "gn_normal_operator_groups: no groups");
  require((variances.array() > 0.0).all(), "gn_normal_operator_groups: variances must be positive");
  const Index n = jacobians.front().cols();
  for (const auto& j : jacobians) require_same_size(j.cols(), n, "gn_normal_operator_groups");
  std::vector<LinearOperator> ops(jacobians.begin(), jacobians.end());
  Vector weights = scale * variances.cwiseInverse();
  auto kernel = [ops = std::move(ops), weights = std::move(weights)](const Vector& in, Vector& out) {
    out.setZero(in.size());
    for (std::size_t i = 0; i < ops.size(); ++i)
      out += weights[static_cast<Index>(i)] * ops[i].adjoint(ops[i].apply(in));
  };
  return {n, n, kernel, kernel};
}

NuisanceObjective group_variance_objective(LinearGroups problem) {
  problem.validate();
  auto shared = std::make_shared<const LinearGroups>(std::move(problem));
  NuisanceObjective obj;
  obj.n = shared->unknowns();
  obj.k = shared->groups();
  obj.eval = [shared](const Vector& x, const Vector& theta) { return group_variance_nll(shared->evaluate(x), theta); };
  obj.grad_x = [shared](const Vector& x, const Vector& theta) {
    return group_variance_grad(shared->evaluate(x), theta, shared->ops);
  };
  obj.project = [shared](const Vector& x, const Vector*) { return project_group_variances(shared->evaluate(x)); };
  obj.grad_theta = [shared](const Vector& x, const Vector& theta) {
    return group_variance_theta_grad(shared->evaluate(x), theta);
  };
  return obj;
}

NuisanceObjective fixed_variance_objective(LinearGroups problem, Vector variances) {
  problem.validate();
  require_same_size(variances.size(), problem.groups(), "fixed_variance_objective");
  require((variances.array() > 0.0).all(), "fixed_variance_objective: variances must be positive");
  NuisanceObjective obj = group_variance_objective(std::move(problem));
  obj.project = [variances = std::move(variances)](const Vector&, const Vector*) { return variances; };
  return obj;
}

NormalOperatorFactory group_variance_gn(const LinearGroups& problem) {
  auto ops = problem.ops;
  return [ops = std::move(ops)](const Vector&, const Vector& theta) {
    // Factor 2 matches group_variance_grad.
    return gn_normal_operator_groups(theta, ops, 2.0);
  };
}

// ---------------------------------------------------------------------------

CovarianceEstimate project_full_covariance(const std::vector<Vector>& residuals) {
  require(!residuals.empty(), "project_full_covariance: at least one residual required");
  const Index p = residuals.front().size();
  require(p > 0, "project_full_covariance: empty residual");
  Matrix s = Matrix::Zero(p, p);
  for (const auto& r : residuals) {
    require_same_size(r.size(), p, "project_full_covariance");
    s.noalias() += r * r.transpose();
  }
  s /= static_cast<double>(residuals.size());

  CovarianceEstimate out;
  const double trace = s.trace();
  out.floor = trace > 0.0 ? 1e-10 * trace / static_cast<double>(p) : 1e-12;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
  if (eig.eigenvalues().minCoeff() >= out.floor) {
    out.sigma = 0.5 * (s + s.transpose());
    return out;
  }
  const Vector lam = eig.eigenvalues().cwiseMax(out.floor);
  const Matrix& q = eig.eigenvectors();
  Matrix sigma = q * lam.asDiagonal() * q.transpose();
  out.sigma = 0.5 * (sigma + sigma.transpose());
  return out;
}

double full_covariance_nll(const std::vector<Vector>& residuals, const Matrix& sigma) {
  require(!residuals.empty(), "full_covariance_nll: at least one residual required");
  require(sigma.rows() == sigma.cols(), "full_covariance_nll: Sigma must be square");
  Eigen::LLT<Matrix> llt(sigma);
  require(llt.info() == Eigen::Success, "full_covariance_nll: Sigma is not positive definite");
  const Matrix& l = llt.matrixLLT();
  double logdet = 0.0;
  for (Index i = 0; i < l.rows(); ++i) logdet += 2.0 * std::log(l(i, i));
  const auto m = static_cast<double>(residuals.size());
  double quad = 0.0;
  for (const auto& r : residuals) {
    require_same_size(r.size(), sigma.rows(), "full_covariance_nll");
    const Vector z = llt.matrixL().solve(r);
    quad += z.squaredNorm();
  }
  return m * (std::log(kTwoPi) + logdet) + quad;
}

Matrix full_covariance_sigma_grad(const std::vector<Vector>& residuals, const Matrix& sigma) {
  Eigen::LLT<Matrix> llt(sigma);
  require(llt.info() == Eigen::Success, "full_covariance_sigma_grad: Sigma is not positive definite");
  const Index p = sigma.rows();
  const Matrix inv = llt.solve(Matrix::Identity(p, p));
  Matrix scatter = Matrix::Zero(p, p);
  for (const auto& r : residuals) scatter.noalias() += r * r.transpose();
  return static_cast<double>(residuals.size()) * inv - inv * scatter * inv;
}

Vector pack_symmetric(const Matrix& m) {
  const Index p = m.rows();
  Vector out(p * (p + 1) / 2);
  Index k = 0;
  for (Index j = 0; j < p; ++j)
    for (Index i = j; i < p; ++i) out[k++] = m(i, j);
  return out;
}

Matrix unpack_symmetric(const Vector& packed, Index p) {
  require_same_size(packed.size(), p * (p + 1) / 2, "unpack_symmetric");
  Matrix m(p, p);
  Index k = 0;
  for (Index j = 0; j < p; ++j)
    for (Index i = j; i < p; ++i) {
      m(i, j) = packed[k];
      m(j, i) = packed[k];
      ++k;
    }
  return m;
}

NuisanceObjective full_covariance_objective(LinearGroups problem) {
  problem.validate();
  const Index p = problem.data.front().size();
  for (const auto& d : problem.data) require_same_size(d.size(), p, "full_covariance_objective");
  auto shared = std::make_shared<const LinearGroups>(std::move(problem));
  const auto residuals = [shared](const Vector& x) {
    std::vector<Vector> out;
    for (Index i = 0; i < shared->groups(); ++i) out.push_back(shared->data[static_cast<std::size_t>(i)] - shared->forward(i, x));
    return out;
  };
  NuisanceObjective obj;
  obj.n = shared->unknowns();
  obj.k = p * (p + 1) / 2;
  obj.eval = [residuals, p](const Vector& x, const Vector& theta) {
    return full_covariance_nll(residuals(x), unpack_symmetric(theta, p));
  };
  obj.grad_x = [shared, residuals, p](const Vector& x, const Vector& theta) {
    const Eigen::LLT<Matrix> llt(unpack_symmetric(theta, p));
    const auto rs = residuals(x);
    Vector grad = Vector::Zero(shared->unknowns());
    for (std::size_t i = 0; i < rs.size(); ++i) grad -= 2.0 * shared->ops[i].adjoint(llt.solve(rs[i]));
    return grad;
  };
  obj.project = [residuals](const Vector& x, const Vector*) {
    return pack_symmetric(project_full_covariance(residuals(x)).sigma);
  };
  obj.grad_theta = [residuals, p](const Vector& x, const Vector& theta) {
    return pack_symmetric(full_covariance_sigma_grad(residuals(x), unpack_symmetric(theta, p)));
  };
  return obj;
}

// ---------------------------------------------------------------------------

double student_nll(const Vector& residuals, const StudentParams& params) {
  require(params.scale2 > 0.0 && std::isfinite(params.scale2), "student_nll: sigma^2 must be positive");
  require(params.dof > 0.0 && std::isfinite(params.dof), "student_nll: k must be positive");
  return Penalty::scaled_student_t(params.scale2, params.dof).rho(residuals);
}

StudentBox student_box(const Vector& residuals, const StudentFitOptions& options) {
  require(0.0 < options.dof_min && options.dof_min <= options.dof_max, "student_box: invalid dof bounds");
  const double scale2 = residuals.size() > 0 ? residuals.squaredNorm() / static_cast<double>(residuals.size()) : 0.0;
  const double floor = 1e-12 * (1.0 + scale2);
  return {floor, 1e6 * (scale2 + floor), options.dof_min, options.dof_max};
}

StudentFit fit_student_t(const Vector& residuals, const StudentFitOptions& options) {
  require(residuals.size() >= 3, "fit_student_t: at least 3 residuals required");
  require(residuals.allFinite(), "fit_student_t: residuals must be finite");
  const StudentBox box = student_box(residuals, options);

  StudentParams start;
  double step = 0.1;
  if (options.warm_start) {
    start = *options.warm_start;
  } else {
    const double mad = 1.4826 * median_abs(residuals);
    start.scale2 = mad > 0.0 ? mad * mad : residuals.squaredNorm() / static_cast<double>(residuals.size());
    start.dof = 4.0;
    step = 0.5;
  }
  start.scale2 = std::clamp(start.scale2, box.scale2_min, box.scale2_max);
  start.dof = std::clamp(start.dof, box.dof_min, box.dof_max);

  NelderMeadOptions nm;
  nm.tol = options.tol;
  nm.max_iters = options.max_iters;
  nm.initial_step = step;
  nm.lower = Vector(Eigen::Vector2d(std::log(box.scale2_min), std::log(box.dof_min)));
  nm.upper = Vector(Eigen::Vector2d(std::log(box.scale2_max), std::log(box.dof_max)));
  const auto objective = [&](const Vector& u) {
    return student_nll(residuals, {std::exp(u[0]), std::exp(u[1])});
  };
  const Vector u0 = Eigen::Vector2d(std::log(start.scale2), std::log(start.dof));
  NelderMeadResult res = nelder_mead(objective, u0, nm);
  // A simplex squeezed against the box can report convergence short of the
  // minimum; restart from the best vertex until a restart stops improving.
  nm.initial_step = 0.1;
  for (int restart = 0; restart < 20 && res.converged; ++restart) {
    NelderMeadResult again = nelder_mead(objective, res.x, nm);
    const bool improved = again.value < res.value;
    res.iterations += again.iterations;
    res.best_history.insert(res.best_history.end(), again.best_history.begin(), again.best_history.end());
    res.converged = again.converged;
    if (!improved) break;
    res.x = again.x;
    res.value = again.value;
  }

  StudentFit fit;
  fit.params = {std::clamp(std::exp(res.x[0]), box.scale2_min, box.scale2_max),
                std::clamp(std::exp(res.x[1]), box.dof_min, box.dof_max)};
  fit.nll = res.value;
  fit.iterations = res.iterations;
  fit.converged = res.converged;
  fit.gaussian_limit = res.x[1] >= (*nm.upper)[1] - 1e-6;
  fit.nll_history = res.best_history;
  return fit;
}

NuisanceObjective least_squares_objective(LinearOperator op, Vector data) {
  require_same_size(op.rows(), data.size(), "least_squares_objective");
  const Index n = op.cols();
  auto shared = std::make_shared<const std::pair<LinearOperator, Vector>>(std::move(op), std::move(data));
  return NuisanceObjective::plain(
      n,
      [shared](const Vector& x) { return 0.5 * (shared->second - shared->first.apply(x)).squaredNorm(); },
      [shared](const Vector& x) { return Vector(-shared->first.adjoint(shared->second - shared->first.apply(x))); });
}

namespace {

NuisanceObjective student_family(LinearOperator op, Vector data, NuisanceObjective::Projector project) {
  require_same_size(op.rows(), data.size(), "student_objective");
  auto shared = std::make_shared<const std::pair<LinearOperator, Vector>>(std::move(op), std::move(data));
  NuisanceObjective obj;
  obj.n = shared->first.cols();
  obj.k = 2;
  obj.eval = [shared](const Vector& x, const Vector& theta) {
    return student_nll(shared->second - shared->first.apply(x), {theta[0], theta[1]});
  };
  obj.grad_x = [shared](const Vector& x, const Vector& theta) {
    const Vector r = shared->second - shared->first.apply(x);
    return Vector(-shared->first.adjoint(Penalty::scaled_student_t(theta[0], theta[1]).grad(r)));
  };
  obj.project = [shared, project = std::move(project)](const Vector& x, const Vector* warm) {
    return project(shared->second - shared->first.apply(x), warm);
  };
  return obj;
}

}  // namespace

NuisanceObjective student_objective(LinearOperator op, Vector data, StudentFitOptions options) {
  // The projector receives the residual, not x (see student_family).
  return student_family(std::move(op), std::move(data), [options](const Vector& r, const Vector* warm) {
    StudentFitOptions opts = options;
    if (warm) opts.warm_start = StudentParams{(*warm)[0], (*warm)[1]};
    const StudentFit fit = fit_student_t(r, opts);
    Vector theta(2);
    theta << fit.params.scale2, fit.params.dof;
    if (!fit.converged)
      throw ProjectionError("Student's t fit did not converge in " + std::to_string(opts.max_iters) + " iterations",
                            theta);
    return theta;
  });
}

NuisanceObjective fixed_student_objective(LinearOperator op, Vector data, StudentParams params) {
  require(params.scale2 > 0.0 && params.dof > 0.0, "fixed_student_objective: parameters must be positive");
  Vector theta(2);
  theta << params.scale2, params.dof;
  return student_family(std::move(op), std::move(data), [theta](const Vector&, const Vector*) { return theta; });
}

NormalOperatorFactory robust_gn(LinearOperator op, Vector data) {
  auto shared = std::make_shared<const std::pair<LinearOperator, Vector>>(std::move(op), std::move(data));
  return [shared](const Vector& x, const Vector& theta) {
    const auto& a = shared->first;
    Vector w;
    if (theta.size() == 2) {
      const Vector r = shared->second - a.apply(x);
      w = Penalty::scaled_student_t(theta[0], theta[1]).gn_weights(r);
    } else {
      w = Vector::Ones(a.rows());
    }
    auto kernel = [a, w = std::move(w)](const Vector& in, Vector& out) { out = a.adjoint(w.cwiseProduct(a.apply(in))); };
    return LinearOperator(a.cols(), a.cols(), kernel, kernel);
  };
}

// ---------------------------------------------------------------------------

CalibrationFit project_calibration(const Vector& d, const Vector& F, const Penalty& penalty,
                                   std::optional<double> alpha0, const CalibrationOptions& options) {
  require_same_size(d.size(), F.size(), "project_calibration");
  const double ff = F.squaredNorm();
  require(ff > 0.0, "project_calibration: F must be nonzero");
  const double start = alpha0.value_or(d.dot(F) / ff);
  // rho(d - a F): derivative -<grad rho(r), F>. The exact second derivative is
  // used where positive, else the proxy <F, H F>.
  const auto value = [&](double a) { return penalty.rho(Vector(d - a * F)); };
  const auto slope = [&](double a) { return -penalty.grad(Vector(d - a * F)).dot(F); };
  const auto curvature = [&](double a) {
    const Vector r = d - a * F;
    const double exact = penalty.second_derivative(r).dot(F.cwiseAbs2());
    return exact > 0.0 ? exact : penalty.gn_weights(r).dot(F.cwiseAbs2());
  };
  const ScalarNewtonResult res = scalar_newton(value, slope, curvature, start, options.tol, options.max_iters);
  return {res.x, res.iterations, res.converged};
}

ComplexCalibrationFit project_calibration(const ComplexVector& d, const ComplexVector& F, const Penalty& penalty,
                                          std::optional<std::complex<double>> alpha0,
                                          const CalibrationOptions& options) {
  require_same_size(d.size(), F.size(), "project_calibration");
  const double ff = F.squaredNorm();
  require(ff > 0.0, "project_calibration: F must be nonzero");
  ComplexCalibrationFit out;
  std::complex<double> a = alpha0.value_or(F.dot(d) / ff);  // Eigen's dot conjugates the first argument
  double fa = penalty.rho(ComplexVector(d - a * F));
  for (int it = 0; it < options.max_iters; ++it) {
    const ComplexVector r = d - a * F;
    const Vector w = penalty.gn_weights(r);
    const std::complex<double> num = F.dot(w.cast<std::complex<double>>().cwiseProduct(r));
    const double den = w.dot(F.cwiseAbs2());
    std::complex<double> step = num / den;
    if (std::abs(step) <= options.tol) {
      out.converged = true;
      break;
    }
    double ft = penalty.rho(ComplexVector(d - (a + step) * F));
    while (!(ft <= fa) && std::abs(step) > options.tol) {
      step *= 0.5;
      ft = penalty.rho(ComplexVector(d - (a + step) * F));
    }
    if (!(ft <= fa)) {
      out.converged = true;
      break;
    }
    a += step;
    fa = ft;
    out.iterations = it + 1;
  }
  out.alpha = a;
  return out;
}

NuisanceObjective calibration_objective(LinearGroups problem, Penalty penalty, CalibrationOptions options) {
  problem.validate();
  auto shared = std::make_shared<const LinearGroups>(std::move(problem));
  NuisanceObjective obj;
  obj.n = shared->unknowns();
  obj.k = shared->groups();
  obj.eval = [shared, penalty](const Vector& x, const Vector& alpha) {
    double total = 0.0;
    for (Index i = 0; i < shared->groups(); ++i)
      total += penalty.rho(Vector(shared->data[static_cast<std::size_t>(i)] - alpha[i] * shared->forward(i, x)));
    return total;
  };
  obj.grad_x = [shared, penalty](const Vector& x, const Vector& alpha) {
    Vector grad = Vector::Zero(shared->unknowns());
    for (Index i = 0; i < shared->groups(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      const Vector r = shared->data[k] - alpha[i] * shared->forward(i, x);
      grad -= alpha[i] * shared->ops[k].adjoint(penalty.grad(r));
    }
    return grad;
  };
  obj.project = [shared, penalty, options](const Vector& x, const Vector* warm) {
    Vector alpha(shared->groups());
    for (Index i = 0; i < shared->groups(); ++i) {
      const std::optional<double> start = warm ? std::optional<double>((*warm)[i]) : std::nullopt;
      const CalibrationFit fit =
          project_calibration(shared->data[static_cast<std::size_t>(i)], shared->forward(i, x), penalty, start, options);
      alpha[i] = fit.alpha;
      if (!fit.converged) {
        throw ProjectionError("calibration Newton did not converge for group " + std::to_string(i), alpha);
      }
    }
    return alpha;
  };
  obj.grad_theta = [shared, penalty](const Vector& x, const Vector& alpha) {
    Vector out(shared->groups());
    for (Index i = 0; i < shared->groups(); ++i) {
      const Vector f = shared->forward(i, x);
      out[i] = -penalty.grad(Vector(shared->data[static_cast<std::size_t>(i)] - alpha[i] * f)).dot(f);
    }
    return out;
  };
  return obj;
}

}  // namespace varpro
