#include <varpro/solvers.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <numeric>
#include <ostream>

namespace varpro {

void SolverConfig::validate() const {
  require(max_iters >= 0, "SolverConfig: max_iters must be non-negative");
  require(grad_tol >= 0.0 && rel_grad_tol >= 0.0, "SolverConfig: tolerances must be non-negative");
  require(lbfgs_memory > 0, "SolverConfig: lbfgs_memory must be positive");
  require(cg_tol > 0.0 && cg_max >= 0, "SolverConfig: invalid CG settings");
  require(armijo_c1 > 0.0 && armijo_c1 < 1.0, "SolverConfig: armijo c1 must be in (0, 1)");
  require(armijo_shrink > 0.0 && armijo_shrink < 1.0, "SolverConfig: armijo shrink must be in (0, 1)");
  require(max_backtracks > 0, "SolverConfig: max_backtracks must be positive");
  require(nm_tol > 0.0 && nm_max_iters > 0, "SolverConfig: invalid Nelder-Mead settings");
}

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iterations: return "max_iterations";
    case SolveStatus::line_search_failed: return "line_search_failed";
    case SolveStatus::cg_breakdown: return "cg_breakdown";
    case SolveStatus::projection_failed: return "projection_failed";
  }
  return "unknown";
}

void SolveTrace::write_csv(std::ostream& out) const {
  out << "iter,objective,grad_norm,kkt,model_rel_err";
  const Index k = rows.empty() ? 0 : rows.front().theta.size();
  for (Index j = 0; j < k; ++j) out << ",theta_" << j;
  out << '\n';
  out.precision(17);
  for (const auto& row : rows) {
    out << row.iter << ',' << row.objective << ',' << row.grad_norm << ',' << row.kkt << ',' << row.model_rel_err;
    for (Index j = 0; j < row.theta.size(); ++j) out << ',' << row.theta[j];
    out << '\n';
  }
}

namespace {

class Recorder {
 public:
  Recorder(ReducedObjective& f, const ConstraintSet& c, const Monitor& monitor, SolveTrace& trace)
      : f_(f), c_(c), monitor_(monitor), trace_(trace) {}

  // Returns the stationarity measure used for termination.
  double record(int iter, const Vector& x, double value, const Vector& grad, int inner = 0) {
    TraceRow row;
    row.iter = iter;
    row.objective = value;
    row.grad_norm = grad.norm();
    row.kkt = c_.is_unconstrained() ? row.grad_norm : (x - c_.project(x - grad)).norm();
    if (monitor_.model_error) row.model_rel_err = monitor_.model_error(x);
    row.theta = f_.theta(x);
    if (monitor_.store_iterates) row.x = x;
    row.inner_iterations = inner;
    trace_.rows.push_back(std::move(row));
    return trace_.rows.back().kkt;
  }

 private:
  ReducedObjective& f_;
  const ConstraintSet& c_;
  const Monitor& monitor_;
  SolveTrace& trace_;
};

bool stationary(double measure, double initial, const SolverConfig& cfg) {
  return measure <= cfg.grad_tol || (cfg.rel_grad_tol > 0.0 && measure <= cfg.rel_grad_tol * initial);
}

// A failed search whose predicted decrease is this small relative to the
// objective scale has hit the rounding floor of f.
constexpr double kRoundingFloor = 1e-12;

// Also true when the first trial point leaves f bitwise unchanged.
bool at_rounding_floor(double first_decrease, double first_value, double fx, double f0) {
  return first_value == fx || std::abs(first_decrease) <= kRoundingFloor * (std::abs(fx) + std::abs(f0));
}

std::string decrease_note(double first_decrease, double fx) {
  char buf[96];
  std::snprintf(buf, sizeof buf, " (predicted decrease %.3e at f = %.6e)", first_decrease, fx);
  return buf;
}

struct LineSearchOutcome {
  bool accepted = false;
  Vector x;
  double value = 0.0;
  double step = 0.0;
  /// Predicted decrease <g, x(a) - x> at the first trial step.
  double first_decrease = 0.0;
  double first_value = std::numeric_limits<double>::quiet_NaN();
};

// Backtracking along x(a) = P(x + a d); sufficient decrease on <g, x(a) - x>.
LineSearchOutcome armijo(ReducedObjective& f, const ConstraintSet& c, const Vector& x, double fx, const Vector& g,
                         const Vector& d, double step, const SolverConfig& cfg) {
  LineSearchOutcome out;
  for (int bt = 0; bt < cfg.max_backtracks; ++bt, step *= cfg.armijo_shrink) {
    Vector trial = c.project(x + step * d);
    const double decrease = g.dot(trial - x);
    if (bt == 0) out.first_decrease = decrease;
    if (!(decrease < 0.0)) {
      if (trial == x) break;
      continue;
    }
    const double ft = f.value(trial);
    if (bt == 0) out.first_value = ft;
    if (std::isfinite(ft) && ft <= fx + cfg.armijo_c1 * decrease) {
      out.accepted = true;
      out.x = std::move(trial);
      out.value = ft;
      out.step = step;
      return out;
    }
  }
  return out;
}

}  // namespace

SolveResult lbfgs(ReducedObjective& f, Vector x0, const SolverConfig& cfg, const ConstraintSet& c,
                  const Monitor& monitor) {
  cfg.validate();
  require(c.contains(x0, 1e-9 * (1.0 + x0.lpNorm<Eigen::Infinity>())), "lbfgs: x0 is infeasible");
  SolveResult result;
  Recorder recorder(f, c, monitor, result.trace);
  Vector x = std::move(x0);
  try {
    double fx = f.value(x);
    Vector g = f.gradient(x);
    const double initial = recorder.record(0, x, fx, g);
    const double f0 = fx;
    double measure = initial;

    std::deque<std::pair<Vector, Vector>> pairs;  // (s, y)
    int iter = 0;
    for (; iter < cfg.max_iters; ++iter) {
      if (stationary(measure, initial, cfg)) {
        result.status = SolveStatus::converged;
        break;
      }
      // Two-loop recursion.
      Vector q = -g;
      std::vector<double> alphas(pairs.size());
      for (std::size_t i = pairs.size(); i-- > 0;) {
        const auto& [s, y] = pairs[i];
        alphas[i] = s.dot(q) / y.dot(s);
        q -= alphas[i] * y;
      }
      if (!pairs.empty()) {
        const auto& [s, y] = pairs.back();
        q *= s.dot(y) / y.squaredNorm();
      }
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& [s, y] = pairs[i];
        const double beta = y.dot(q) / y.dot(s);
        q += (alphas[i] - beta) * s;
      }
      Vector d = std::move(q);
      double step = 1.0;
      if (pairs.empty() || !(g.dot(d) < 0.0)) {
        pairs.clear();
        d = -g;
        step = std::min(1.0, 1.0 / g.norm());
      }

      auto ls = armijo(f, c, x, fx, g, d, step, cfg);
      if (!ls.accepted && !pairs.empty()) {
        pairs.clear();
        d = -g;
        ls = armijo(f, c, x, fx, g, d, std::min(1.0, 1.0 / g.norm()), cfg);
      }
      if (!ls.accepted && at_rounding_floor(ls.first_decrease, ls.first_value, fx, f0)) {
        result.status = SolveStatus::converged;
        result.message = "stopped at the rounding floor of the objective";
        break;
      }
      if (!ls.accepted) {
        result.status = SolveStatus::line_search_failed;
        result.message = "no sufficient decrease after " + std::to_string(cfg.max_backtracks) + " backtracks" + decrease_note(ls.first_decrease, fx);
        break;
      }
      Vector g_new = f.gradient(ls.x);
      Vector s = ls.x - x;
      Vector y = g_new - g;
      if (s.dot(y) > 1e-10 * s.norm() * y.norm()) {
        pairs.emplace_back(std::move(s), std::move(y));
        if (static_cast<int>(pairs.size()) > cfg.lbfgs_memory) pairs.pop_front();
      }
      x = std::move(ls.x);
      fx = ls.value;
      g = std::move(g_new);
      measure = recorder.record(iter + 1, x, fx, g);
    }
    result.iterations = iter;
    if (iter == cfg.max_iters && result.status == SolveStatus::max_iterations && stationary(measure, initial, cfg))
      result.status = SolveStatus::converged;
  } catch (const ProjectionError& e) {
    result.status = SolveStatus::projection_failed;
    result.message = e.what();
  }
  result.x = std::move(x);
  return result;
}

SolveResult projected_gradient(ReducedObjective& f, Vector x0, const ConstraintSet& c, const SolverConfig& cfg,
                               const Monitor& monitor) {
  cfg.validate();
  require(c.contains(x0, 1e-9 * (1.0 + x0.lpNorm<Eigen::Infinity>())), "projected_gradient: x0 is infeasible");
  SolveResult result;
  Recorder recorder(f, c, monitor, result.trace);
  Vector x = std::move(x0);
  try {
    double fx = f.value(x);
    Vector g = f.gradient(x);
    const double initial = recorder.record(0, x, fx, g);
    const double f0 = fx;
    double measure = initial;
    double step = 1.0;
    int iter = 0;
    for (; iter < cfg.max_iters; ++iter) {
      if (stationary(measure, initial, cfg)) {
        result.status = SolveStatus::converged;
        break;
      }
      const auto ls = armijo(f, c, x, fx, g, -g, step, cfg);
      // |x - P(x - g)|^2 is the first-order decrease of a unit projected step.
      if (!ls.accepted && at_rounding_floor(measure * measure, ls.first_value, fx, f0)) {
        result.status = SolveStatus::converged;
        result.message = "stopped at the rounding floor of the objective";
        break;
      }
      if (!ls.accepted) {
        result.status = SolveStatus::line_search_failed;
        result.message = "no sufficient decrease along the projection arc" + decrease_note(measure * measure, fx);
        break;
      }
      // Start the next search from twice the accepted step.
      step = std::min(2.0 * ls.step, 1e12);
      x = ls.x;
      fx = ls.value;
      g = f.gradient(x);
      measure = recorder.record(iter + 1, x, fx, g);
    }
    result.iterations = iter;
    if (iter == cfg.max_iters && result.status == SolveStatus::max_iterations && stationary(measure, initial, cfg))
      result.status = SolveStatus::converged;
  } catch (const ProjectionError& e) {
    result.status = SolveStatus::projection_failed;
    result.message = e.what();
  }
  result.x = std::move(x);
  return result;
}

SolveResult gauss_newton_cg(ReducedObjective& f, const NormalOperatorFactory& normal, Vector x0,
                            const SolverConfig& cfg, const Monitor& monitor) {
  cfg.validate();
  const ConstraintSet none;
  SolveResult result;
  Recorder recorder(f, none, monitor, result.trace);
  Vector x = std::move(x0);
  const int cg_max = cfg.cg_max > 0 ? cfg.cg_max : static_cast<int>(x.size());
  try {
    double fx = f.value(x);
    Vector g = f.gradient(x);
    const double initial = recorder.record(0, x, fx, g);
    const double f0 = fx;
    double measure = initial;
    int iter = 0;
    for (; iter < cfg.max_iters; ++iter) {
      if (stationary(measure, initial, cfg)) {
        result.status = SolveStatus::converged;
        break;
      }
      const LinearOperator h = normal(x, f.theta(x));
      const CgResult sub = cg(h, -g, cfg.cg_tol, cg_max);
      if (sub.breakdown) {
        result.status = SolveStatus::cg_breakdown;
        result.message = "non-positive curvature in the Gauss-Newton normal operator";
        break;
      }
      const auto ls = armijo(f, none, x, fx, g, sub.x, 1.0, cfg);
      if (!ls.accepted && at_rounding_floor(ls.first_decrease, ls.first_value, fx, f0)) {
        result.status = SolveStatus::converged;
        result.message = "stopped at the rounding floor of the objective";
        break;
      }
      if (!ls.accepted) {
        result.status = SolveStatus::line_search_failed;
        result.message = "no sufficient decrease along the Gauss-Newton direction" + decrease_note(ls.first_decrease, fx);
        break;
      }
      x = ls.x;
      fx = ls.value;
      g = f.gradient(x);
      measure = recorder.record(iter + 1, x, fx, g, sub.iterations);
    }
    result.iterations = iter;
    if (iter == cfg.max_iters && result.status == SolveStatus::max_iterations && stationary(measure, initial, cfg))
      result.status = SolveStatus::converged;
  } catch (const ProjectionError& e) {
    result.status = SolveStatus::projection_failed;
    result.message = e.what();
  }
  result.x = std::move(x);
  return result;
}

CgResult cg(const LinearOperator& op, const Vector& b, double tol, int max_iters) {
  require(op.rows() == op.cols(), "cg: operator must be square");
  require_same_size(b.size(), op.rows(), "cg");
  require(tol > 0.0 && max_iters >= 0, "cg: invalid tolerance or iteration budget");
  CgResult out;
  out.x = Vector::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    out.converged = true;
    return out;
  }
  Vector r = b;
  Vector p = r;
  double rr = r.squaredNorm();
  for (int it = 0; it < max_iters; ++it) {
    const Vector ap = op.apply(p);
    const double curvature = p.dot(ap);
    if (!(curvature > 0.0)) {
      out.breakdown = true;
      break;
    }
    const double alpha = rr / curvature;
    out.x += alpha * p;
    r -= alpha * ap;
    out.iterations = it + 1;
    double rr_new = r.squaredNorm();
    if (std::sqrt(rr_new) <= tol * bnorm) {
      // Confirm with the true residual; restart the recursion from it if they disagree.
      r = b - op.apply(out.x);
      rr_new = r.squaredNorm();
      if (std::sqrt(rr_new) <= tol * bnorm) {
        out.converged = true;
        break;
      }
      p = r;
      rr = rr_new;
      continue;
    }
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  out.rel_residual = (b - op.apply(out.x)).norm() / bnorm;
  if (!out.converged && !out.breakdown) out.converged = out.rel_residual <= tol;
  return out;
}

NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                             const NelderMeadOptions& options) {
  require(options.tol > 0.0 && options.max_iters > 0 && options.initial_step > 0.0,
          "nelder_mead: invalid options");
  const Index n = x0.size();
  require(n > 0, "nelder_mead: empty starting point");
  const auto clamp = [&](Vector v) {
    if (options.lower) v = v.cwiseMax(*options.lower);
    if (options.upper) v = v.cwiseMin(*options.upper);
    return v;
  };

  struct Vertex {
    Vector x;
    double f;
  };
  std::vector<Vertex> simplex;
  simplex.reserve(static_cast<std::size_t>(n + 1));
  const Vector start = clamp(x0);
  simplex.push_back({start, f(start)});
  require(std::isfinite(simplex[0].f), "nelder_mead: objective not finite at the starting point");
  for (Index i = 0; i < n; ++i) {
    Vector v = start;
    v[i] += options.initial_step;
    if (options.upper && v[i] > (*options.upper)[i]) v[i] = start[i] - options.initial_step;
    v = clamp(v);
    simplex.push_back({v, f(v)});
  }
  const auto order = [&] {
    std::stable_sort(simplex.begin(), simplex.end(), [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
  };
  const auto diameter = [&] {
    double d = 0.0;
    for (std::size_t i = 0; i < simplex.size(); ++i)
      for (std::size_t j = i + 1; j < simplex.size(); ++j) d = std::max(d, (simplex[i].x - simplex[j].x).norm());
    return d;
  };
  const auto eval = [&](const Vector& v) {
    const double value = f(v);
    return std::isfinite(value) ? value : std::numeric_limits<double>::infinity();
  };

  NelderMeadResult result;
  order();
  int iter = 0;
  for (; iter < options.max_iters; ++iter) {
    if (diameter() <= options.tol) {
      result.converged = true;
      break;
    }
    Vector centroid = Vector::Zero(n);
    for (Index i = 0; i < n; ++i) centroid += simplex[static_cast<std::size_t>(i)].x;
    centroid /= static_cast<double>(n);
    Vertex& worst = simplex.back();
    const double f_best = simplex.front().f;
    const double f_second = simplex[static_cast<std::size_t>(n - 1)].f;

    const Vector xr = clamp(centroid + (centroid - worst.x));
    const double fr = eval(xr);
    if (fr < f_best) {
      const Vector xe = clamp(centroid + 2.0 * (centroid - worst.x));
      const double fe = eval(xe);
      worst = fe < fr ? Vertex{xe, fe} : Vertex{xr, fr};
    } else if (fr < f_second) {
      worst = {xr, fr};
    } else {
      bool accepted = false;
      if (fr < worst.f) {
        const Vector xc = clamp(centroid + 0.5 * (xr - centroid));
        const double fc = eval(xc);
        if (fc <= fr) {
          worst = {xc, fc};
          accepted = true;
        }
      } else {
        const Vector xc = clamp(centroid + 0.5 * (worst.x - centroid));
        const double fc = eval(xc);
        if (fc < worst.f) {
          worst = {xc, fc};
          accepted = true;
        }
      }
      if (!accepted) {
        const Vector best = simplex.front().x;
        for (std::size_t i = 1; i < simplex.size(); ++i) {
          simplex[i].x = clamp(best + 0.5 * (simplex[i].x - best));
          simplex[i].f = eval(simplex[i].x);
        }
      }
    }
    order();
    result.best_history.push_back(simplex.front().f);
  }
  if (!result.converged && diameter() <= options.tol) result.converged = true;
  result.iterations = iter;
  result.x = simplex.front().x;
  result.value = simplex.front().f;
  return result;
}

ScalarNewtonResult scalar_newton(const std::function<double(double)>& f, const std::function<double(double)>& fprime,
                                 const std::function<double(double)>& curvature, double x0, double tol,
                                 int max_iters) {
  require(tol > 0.0 && max_iters > 0, "scalar_newton: invalid tolerance or budget");
  ScalarNewtonResult out;
  double x = x0;
  double fx = f(x);
  for (int it = 0; it < max_iters; ++it) {
    const double c = curvature(x);
    require(c > 0.0 && std::isfinite(c), "scalar_newton: curvature proxy must be positive");
    double step = -fprime(x) / c;
    if (std::abs(step) <= tol) {
      out.converged = true;
      break;
    }
    double trial = x + step;
    double ft = f(trial);
    if (ft < fx) {
      // The proxy overstates curvature in concave stretches; keep doubling while f drops.
      for (int k = 0; k < 60; ++k) {
        const double longer = f(x + 2.0 * step);
        if (!(longer < ft)) break;
        step *= 2.0;
        trial = x + step;
        ft = longer;
      }
    }
    while (!(ft <= fx) && std::abs(step) > tol) {
      step *= 0.5;
      trial = x + step;
      ft = f(trial);
    }
    if (!(ft <= fx)) {
      // Every step longer than tol increases f: x is a minimizer to within tol.
      out.converged = true;
      break;
    }
    x = trial;
    fx = ft;
    out.iterations = it + 1;
    if (std::abs(step) <= tol) {
      out.converged = true;
      break;
    }
  }
  out.x = x;
  out.value = fx;
  return out;
}

}  // namespace varpro
