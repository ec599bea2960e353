#include <varpro/constraints.hpp>
#include <varpro/core.hpp>
#include <varpro/experiments.hpp>
#include <varpro/nuisance.hpp>
#include <varpro/penalties.hpp>
#include <varpro/solvers.hpp>
#include <varpro/verification.hpp>

#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

namespace py = pybind11;
using namespace varpro;
namespace ex = varpro::experiments;

namespace {

LinearGroups make_groups(const std::vector<Matrix>& mats, const std::vector<Vector>& data) {
  LinearGroups g;
  for (const Matrix& m : mats) g.ops.push_back(LinearOperator::from_dense(m));
  g.data = data;
  g.validate();
  return g;
}

py::dict solve_dict(const SolveResult& res) {
  std::vector<double> objective;
  std::vector<double> kkt;
  for (const TraceRow& row : res.trace.rows) {
    objective.push_back(row.objective);
    kkt.push_back(row.kkt);
  }
  py::dict out;
  out["x"] = res.x;
  out["status"] = std::string(to_string(res.status));
  out["message"] = res.message;
  out["iterations"] = res.iterations;
  out["objective"] = objective;
  out["kkt"] = kkt;
  out["ok"] = res.ok();
  return out;
}

ConstraintSet make_set(const std::optional<Vector>& lower, const std::optional<Vector>& upper,
                       std::optional<double> l1_radius) {
  if (l1_radius) {
    if (lower || upper) throw std::invalid_argument("give either a box or an l1 radius, not both");
    return L1Ball{*l1_radius};
  }
  if (lower || upper) {
    if (!lower || !upper) throw std::invalid_argument("a box needs both lower and upper");
    return BoxSet{*lower, *upper};
  }
  return {};
}

SolverConfig make_config(int max_iters, double grad_tol) {
  SolverConfig cfg;
  cfg.max_iters = max_iters;
  cfg.grad_tol = grad_tol;
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Variable projection: nuisance projectors, reduced objectives and solvers.";
  py::register_exception<ex::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ProjectionError>(m, "ProjectionError", PyExc_RuntimeError);

  py::class_<Penalty>(m, "Penalty")
      .def_static("least_squares", &Penalty::least_squares)
      .def_static("student_t", &Penalty::student_t, py::arg("dof"))
      .def_static("scaled_student_t", &Penalty::scaled_student_t, py::arg("scale2"), py::arg("dof"))
      .def_property_readonly("dof", &Penalty::dof)
      .def_property_readonly("scale2", &Penalty::scale2)
      .def("rho", py::overload_cast<const Vector&>(&Penalty::rho, py::const_), py::arg("r"))
      .def("grad", py::overload_cast<const Vector&>(&Penalty::grad, py::const_), py::arg("r"))
      .def("gn_weights", py::overload_cast<const Vector&>(&Penalty::gn_weights, py::const_), py::arg("r"))
      .def("second_derivative", &Penalty::second_derivative, py::arg("r"))
      .def("influence", &Penalty::influence, py::arg("grid"));

  m.def(
      "project_group_variances",
      [](const std::vector<Vector>& residuals) {
        GroupedResiduals g{residuals, {}};
        for (const Vector& r : residuals) g.model.push_back(Vector::Zero(r.size()));
        return project_group_variances(g);
      },
      py::arg("residuals"), "Per-group variance mean(r_i^2), floored.");
  m.def(
      "group_variance_nll",
      [](const std::vector<Vector>& residuals, const Vector& variances) {
        GroupedResiduals g{residuals, {}};
        for (const Vector& r : residuals) g.model.push_back(Vector::Zero(r.size()));
        return group_variance_nll(g, variances);
      },
      py::arg("residuals"), py::arg("variances"));
  m.def(
      "project_full_covariance",
      [](const std::vector<Vector>& residuals) { return project_full_covariance(residuals).sigma; },
      py::arg("residuals"));
  m.def("full_covariance_nll", &full_covariance_nll, py::arg("residuals"), py::arg("sigma"));

  m.def(
      "student_nll", [](const Vector& r, double scale2, double dof) { return student_nll(r, {scale2, dof}); },
      py::arg("residuals"), py::arg("scale2"), py::arg("dof"));
  m.def(
      "fit_student_t",
      [](const Vector& r, double dof_min, double dof_max) {
        StudentFitOptions opts;
        opts.dof_min = dof_min;
        opts.dof_max = dof_max;
        const StudentFit fit = fit_student_t(r, opts);
        py::dict out;
        out["scale2"] = fit.params.scale2;
        out["dof"] = fit.params.dof;
        out["nll"] = fit.nll;
        out["iterations"] = fit.iterations;
        out["converged"] = fit.converged;
        out["gaussian_limit"] = fit.gaussian_limit;
        return out;
      },
      py::arg("residuals"), py::arg("dof_min") = 0.1, py::arg("dof_max") = 1000.0);

  m.def(
      "project_calibration",
      [](const Vector& d, const Vector& f, const Penalty& p, std::optional<double> alpha0) {
        const CalibrationFit fit = project_calibration(d, f, p, alpha0);
        return py::make_tuple(fit.alpha, fit.iterations, fit.converged);
      },
      py::arg("d"), py::arg("F"), py::arg("penalty"), py::arg("alpha0") = py::none(),
      "Returns (alpha, iterations, converged).");
  m.def(
      "project_calibration_complex",
      [](const ComplexVector& d, const ComplexVector& f, const Penalty& p) {
        const ComplexCalibrationFit fit = project_calibration(d, f, p);
        return py::make_tuple(fit.alpha, fit.iterations, fit.converged);
      },
      py::arg("d"), py::arg("F"), py::arg("penalty"));

  m.def(
      "project_box", [](const Vector& v, const Vector& lo, const Vector& hi) { return project_box(v, {lo, hi}); },
      py::arg("v"), py::arg("lower"), py::arg("upper"));
  m.def("project_l1", &project_l1, py::arg("v"), py::arg("radius"));
  m.def(
      "project_ellipsoid",
      [](const Vector& v, const Matrix& metric, double radius) {
        if (metric.cols() == 1 && metric.rows() == v.size() && v.size() != 1)
          return EllipsoidSet(Vector(metric.col(0)), radius).project(v);
        return EllipsoidSet(metric, radius).project(v);
      },
      py::arg("v"), py::arg("metric"), py::arg("radius"),
      "metric is a symmetric positive definite matrix or its diagonal as a vector.");

  py::class_<ReducedObjective>(m, "ReducedObjective")
      .def_property_readonly("dim", &ReducedObjective::dim)
      .def_property_readonly("nuisance_dim", &ReducedObjective::nuisance_dim)
      .def("value", &ReducedObjective::value, py::arg("x"))
      .def("gradient", &ReducedObjective::gradient, py::arg("x"))
      .def("theta", [](ReducedObjective& r, const Vector& x) { return Vector(r.theta(x)); }, py::arg("x"))
      .def("projection_count", &ReducedObjective::projection_count)
      .def(
          "check_gradient",
          [](ReducedObjective& r, const Vector& x, double h) { return check_gradient_fd(r, x, h).max_rel_err; },
          py::arg("x"), py::arg("h") = 1e-5, "Largest relative error against central differences.")
      .def(
          "kkt_residual",
          [](ReducedObjective& r, const Vector& x, std::optional<Vector> lower, std::optional<Vector> upper,
             std::optional<double> l1_radius) { return kkt_residual(r, x, make_set(lower, upper, l1_radius)); },
          py::arg("x"), py::arg("lower") = py::none(), py::arg("upper") = py::none(),
          py::arg("l1_radius") = py::none());

  m.def(
      "least_squares_problem",
      [](const Matrix& a, const Vector& d) { return reduce(least_squares_objective(LinearOperator::from_dense(a), d)); },
      py::arg("A"), py::arg("d"));
  m.def(
      "student_problem",
      [](const Matrix& a, const Vector& d, double dof_min, double dof_max) {
        StudentFitOptions opts;
        opts.dof_min = dof_min;
        opts.dof_max = dof_max;
        return reduce(student_objective(LinearOperator::from_dense(a), d, opts));
      },
      py::arg("A"), py::arg("d"), py::arg("dof_min") = 0.1, py::arg("dof_max") = 1000.0,
      "Student's t likelihood of d - A x with (sigma^2, k) re-fitted at every x.");
  m.def(
      "group_variance_problem",
      [](const std::vector<Matrix>& mats, const std::vector<Vector>& data) {
        return reduce(group_variance_objective(make_groups(mats, data)));
      },
      py::arg("A"), py::arg("d"));
  m.def(
      "calibration_problem",
      [](const std::vector<Matrix>& mats, const std::vector<Vector>& data, const Penalty& p) {
        return reduce(calibration_objective(make_groups(mats, data), p));
      },
      py::arg("A"), py::arg("d"), py::arg("penalty"));

  m.def(
      "lbfgs",
      [](ReducedObjective& r, const Vector& x0, int max_iters, double grad_tol, std::optional<Vector> lower,
         std::optional<Vector> upper, std::optional<double> l1_radius) {
        return solve_dict(lbfgs(r, x0, make_config(max_iters, grad_tol), make_set(lower, upper, l1_radius)));
      },
      py::arg("objective"), py::arg("x0"), py::arg("max_iters") = 50, py::arg("grad_tol") = 1e-8,
      py::arg("lower") = py::none(), py::arg("upper") = py::none(), py::arg("l1_radius") = py::none());
  m.def(
      "projected_gradient",
      [](ReducedObjective& r, const Vector& x0, int max_iters, double grad_tol, std::optional<Vector> lower,
         std::optional<Vector> upper, std::optional<double> l1_radius) {
        return solve_dict(
            projected_gradient(r, x0, make_set(lower, upper, l1_radius), make_config(max_iters, grad_tol)));
      },
      py::arg("objective"), py::arg("x0"), py::arg("max_iters") = 50, py::arg("grad_tol") = 1e-8,
      py::arg("lower") = py::none(), py::arg("upper") = py::none(), py::arg("l1_radius") = py::none());

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::string& out_dir) {
        const ex::ExperimentConfig cfg = [&] {
          nlohmann::json doc;
          try {
            doc = nlohmann::json::parse(config_json);
          } catch (const nlohmann::json::exception& e) {
            throw ex::ConfigError(e.what());
          }
          return ex::parse_config(doc);
        }();
        const ex::RunReport rep = ex::run_experiment(cfg, out_dir);
        return py::make_tuple(rep.metrics.dump(), rep.failures, rep.outputs);
      },
      py::arg("config_json"), py::arg("out_dir"), "Returns (metrics JSON text, failures, outputs).");
  m.def(
      "run_checks",
      [](std::uint64_t seed) {
        std::vector<py::tuple> rows;
        for (const auto& c : verification::run_checks(seed))
          rows.push_back(py::make_tuple(c.name, c.value, c.threshold, c.passed));
        return rows;
      },
      py::arg("seed") = 1, "(name, value, threshold, passed) per check.");
  m.attr("__version__") = ex::version();
}
