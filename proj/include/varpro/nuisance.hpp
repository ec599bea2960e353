#pragma once

#include <varpro/core.hpp>
#include <varpro/linalg.hpp>
#include <varpro/operators.hpp>
#include <varpro/penalties.hpp>
#include <varpro/solvers.hpp>

#include <complex>
#include <optional>
#include <span>
#include <vector>

namespace varpro {

// ---------------------------------------------------------------------------
// Grouped data

/// Data d_i and model predictions F_i(x) for M groups.
struct GroupedResiduals {
  std::vector<Vector> data;
  std::vector<Vector> model;

  Index groups() const { return static_cast<Index>(data.size()); }
  Vector residual(Index i) const;
  void validate() const;
};

/// Groups with affine forward maps F_i(x) = A_i x + b_i sharing one x.
/// `offsets` may be empty (all b_i = 0).
struct LinearGroups {
  std::vector<LinearOperator> ops;
  std::vector<Vector> data;
  std::vector<Vector> offsets;

  Index groups() const { return static_cast<Index>(ops.size()); }
  Index unknowns() const { return ops.empty() ? 0 : ops.front().cols(); }
  Vector forward(Index i, const Vector& x) const;
  GroupedResiduals evaluate(const Vector& x) const;
  void validate() const;
};

/// 1e-12 * (1 + mean(d^2)): keeps log sigma^2 finite at a perfect fit.
double variance_floor(const Vector& data);

// ---------------------------------------------------------------------------
// Per-group variances

/// sigma_i^2 = max(floor_i, |d_i - F_i|^2 / N_i).
Vector project_group_variances(const GroupedResiduals& g);

/// sum_i N_i log(2 pi sigma_i^2) + |d_i - F_i|^2 / sigma_i^2
double group_variance_nll(const GroupedResiduals& g, const Vector& variances);

/// The joint objective evaluated at project_group_variances(g); equals
/// sum_i N_i log(2 pi sigma_i^2) + N_i whenever no floor is active.
double group_variance_reduced(const GroupedResiduals& g);

/// d/d sigma_i^2 of the joint objective: N_i / sigma_i^2 - |r_i|^2 / sigma_i^4.
Vector group_variance_theta_grad(const GroupedResiduals& g, const Vector& variances);

/// Gradient in x with sigma held fixed: -2 sum_i (1/sigma_i^2) J_i^T (d_i - F_i).
Vector group_variance_grad(const GroupedResiduals& g, const Vector& variances,
                           std::span<const LinearOperator> jacobians);

/// v -> scale * sum_i (1/sigma_i^2) J_i^T J_i v.
LinearOperator gn_normal_operator_groups(const Vector& variances, std::span<const LinearOperator> jacobians,
                                         double scale = 1.0);

/// Joint objective with theta = per-group variances projected in closed form.
NuisanceObjective group_variance_objective(LinearGroups problem);
/// The same joint objective with the variances frozen at `variances`.
NuisanceObjective fixed_variance_objective(LinearGroups problem, Vector variances);
/// Gauss-Newton normal operator consistent with group_variance_grad.
NormalOperatorFactory group_variance_gn(const LinearGroups& problem);

// ---------------------------------------------------------------------------
// Full covariance

struct CovarianceEstimate {
  Matrix sigma;
  double floor = 0.0;
};

/// (1/M) sum_i r_i r_i^T with eigenvalues floored at 1e-10 trace / p.
CovarianceEstimate project_full_covariance(const std::vector<Vector>& residuals);

/// M log(2 pi det Sigma) + sum_i r_i^T Sigma^{-1} r_i. Throws for non-PD Sigma.
double full_covariance_nll(const std::vector<Vector>& residuals, const Matrix& sigma);

/// dg/dSigma = M Sigma^{-1} - Sigma^{-1} (sum_i r_i r_i^T) Sigma^{-1}.
Matrix full_covariance_sigma_grad(const std::vector<Vector>& residuals, const Matrix& sigma);

/// theta packs the lower triangle of Sigma column by column.
Vector pack_symmetric(const Matrix& m);
Matrix unpack_symmetric(const Vector& packed, Index p);

/// Groups are the M observations of one p-dimensional residual.
NuisanceObjective full_covariance_objective(LinearGroups problem);

// ---------------------------------------------------------------------------
// Student's t scale and degrees of freedom

struct StudentParams {
  double scale2 = 1.0;
  double dof = 4.0;
};

struct StudentFitOptions {
  double dof_min = 0.1;
  double dof_max = 1000.0;
  double tol = 1e-8;
  int max_iters = 500;
  std::optional<StudentParams> warm_start;
};

struct StudentFit {
  StudentParams params;
  double nll = 0.0;
  int iterations = 0;
  bool converged = false;
  /// k sits on its upper bound: the residuals look Gaussian.
  bool gaussian_limit = false;
  std::vector<double> nll_history;
};

/// Negative log-likelihood of i.i.d. Student's t residuals:
/// m c(k) + (m/2) log sigma^2 + (k+1)/2 sum log(1 + r^2 / (sigma^2 k)).
double student_nll(const Vector& residuals, const StudentParams& params);

/// Box [scale2_min, scale2_max] x [dof_min, dof_max] used by fit_student_t.
struct StudentBox {
  double scale2_min;
  double scale2_max;
  double dof_min;
  double dof_max;
};
StudentBox student_box(const Vector& residuals, const StudentFitOptions& options);

/// Minimizes student_nll over the box by Nelder-Mead in (log sigma^2, log k),
/// restarting from the best vertex until a restart no longer improves.
/// Never throws on non-convergence; check `converged`.
StudentFit fit_student_t(const Vector& residuals, const StudentFitOptions& options = {});

/// 1/2 |d - A x|^2 (no nuisance parameters).
NuisanceObjective least_squares_objective(LinearOperator op, Vector data);
/// Student's t negative log-likelihood of d - A x with (sigma^2, k) re-fitted at every x.
NuisanceObjective student_objective(LinearOperator op, Vector data, StudentFitOptions options = {});
/// The same objective with (sigma^2, k) frozen.
NuisanceObjective fixed_student_objective(LinearOperator op, Vector data, StudentParams params);
/// GN operator A^T H_theta(d - A x) A for the three objectives above.
NormalOperatorFactory robust_gn(LinearOperator op, Vector data);

// ---------------------------------------------------------------------------
// Calibration scalars

struct CalibrationOptions {
  double tol = 1e-12;
  int max_iters = 200;
};

struct CalibrationFit {
  double alpha = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct ComplexCalibrationFit {
  std::complex<double> alpha;
  int iterations = 0;
  bool converged = false;
};

/// argmin_a rho(d - a F) by scalar Newton. The curvature is the exact second
/// derivative when positive, otherwise <F, H F> with the penalty's GN weights.
/// Starts from `alpha0`, or from <d,F>/<F,F> when absent.
CalibrationFit project_calibration(const Vector& d, const Vector& F, const Penalty& penalty,
                                   std::optional<double> alpha0 = std::nullopt, const CalibrationOptions& options = {});

/// Complex data: Wirtinger Newton step a += <F, W r> / <F, W F> with conjugate inner products.
ComplexCalibrationFit project_calibration(const ComplexVector& d, const ComplexVector& F, const Penalty& penalty,
                                          std::optional<std::complex<double>> alpha0 = std::nullopt,
                                          const CalibrationOptions& options = {});

/// sum_i rho(d_i - a_i F_i(x)) with theta = (a_1..a_M) projected per group.
NuisanceObjective calibration_objective(LinearGroups problem, Penalty penalty, CalibrationOptions options = {});

}  // namespace varpro
