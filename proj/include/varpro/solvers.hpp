#pragma once

#include <varpro/constraints.hpp>
#include <varpro/core.hpp>
#include <varpro/linalg.hpp>
#include <varpro/operators.hpp>

#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace varpro {

struct SolverConfig {
  int max_iters = 50;
  /// Stop when the stationarity measure (|grad|, or the KKT residual under
  /// constraints) drops to grad_tol ...
  double grad_tol = 1e-8;
  /// ... or to rel_grad_tol times its initial value (0 disables).
  double rel_grad_tol = 0.0;
  int lbfgs_memory = 10;
  double cg_tol = 1e-6;
  /// 0 means "problem dimension".
  int cg_max = 0;
  double armijo_c1 = 1e-4;
  double armijo_shrink = 0.5;
  int max_backtracks = 50;
  double nm_tol = 1e-8;
  int nm_max_iters = 500;

  void validate() const;
};

/// A line search that fails only because the predicted decrease is below
/// 1e-12 (|f| + |f0|), or whose first trial leaves f bitwise unchanged, ends
/// the run as `converged` with a message saying so.
enum class SolveStatus { converged, max_iterations, line_search_failed, cg_breakdown, projection_failed };

const char* to_string(SolveStatus status);

struct TraceRow {
  int iter = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double kkt = 0.0;
  double model_rel_err = std::numeric_limits<double>::quiet_NaN();
  Vector theta;
  Vector x;  // empty unless Monitor::store_iterates
  int inner_iterations = 0;  // CG iterations for Gauss-Newton steps
};

struct SolveTrace {
  std::vector<TraceRow> rows;

  /// Columns: iter, objective, grad_norm, kkt, model_rel_err, theta_0, theta_1, ...
  void write_csv(std::ostream& out) const;
};

struct SolveResult {
  Vector x;
  SolveTrace trace;
  SolveStatus status = SolveStatus::max_iterations;
  std::string message;
  int iterations = 0;

  /// True unless the run ended on a failure (line search, CG breakdown, projector).
  bool ok() const { return status == SolveStatus::converged || status == SolveStatus::max_iterations; }
};

struct Monitor {
  /// Relative model error of an iterate, recorded per trace row when set.
  std::function<double(const Vector&)> model_error;
  bool store_iterates = false;
};

/// L-BFGS with Armijo backtracking. Under a constraint set the trial points are
/// projected, x+ = P(x + a p), with sufficient decrease measured along that path.
SolveResult lbfgs(ReducedObjective& f, Vector x0, const SolverConfig& cfg, const ConstraintSet& c = {},
                  const Monitor& monitor = {});

/// x+ = P(x - g grad) with backtracking on g; stops once kkt_residual <= grad_tol.
SolveResult projected_gradient(ReducedObjective& f, Vector x0, const ConstraintSet& c, const SolverConfig& cfg,
                               const Monitor& monitor = {});

/// Builds the Gauss-Newton normal operator J^T H J at (x, theta(x)).
using NormalOperatorFactory = std::function<LinearOperator(const Vector& x, const Vector& theta)>;

/// Gauss-Newton: solve (J^T H J) dx = -grad g~(x) by CG, then Armijo on g~.
SolveResult gauss_newton_cg(ReducedObjective& f, const NormalOperatorFactory& normal, Vector x0,
                            const SolverConfig& cfg, const Monitor& monitor = {});

struct CgResult {
  Vector x;
  int iterations = 0;
  double rel_residual = 0.0;
  bool converged = false;
  /// Non-positive curvature p^T A p <= 0 was met.
  bool breakdown = false;
};

/// Conjugate gradients for symmetric positive semi-definite operators, started at 0.
/// Converged means |b - A x| <= tol |b| for the true (not recursive) residual.
CgResult cg(const LinearOperator& op, const Vector& b, double tol, int max_iters);

struct NelderMeadOptions {
  double tol = 1e-8;
  int max_iters = 500;
  double initial_step = 0.1;
  /// Optional box; vertices are clamped into it.
  std::optional<Vector> lower;
  std::optional<Vector> upper;
};

struct NelderMeadResult {
  Vector x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Best vertex value after each iteration.
  std::vector<double> best_history;
};

/// Reflect / expand / contract / shrink simplex search. Terminates when the
/// simplex diameter (largest pairwise vertex distance) is <= tol.
NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                             const NelderMeadOptions& options = {});

struct ScalarNewtonResult {
  double x = 0.0;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Newton iteration x <- x - f'(x)/c(x) with a positive curvature proxy c.
/// The step is halved while it increases f, and doubled while a longer step
/// keeps decreasing f. Converges when the Newton step |f'/c| <= tol.
ScalarNewtonResult scalar_newton(const std::function<double(double)>& f, const std::function<double(double)>& fprime,
                                 const std::function<double(double)>& curvature, double x0, double tol = 1e-12,
                                 int max_iters = 100);

}  // namespace varpro
