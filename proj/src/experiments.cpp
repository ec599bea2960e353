#include <varpro/experiments.hpp>

#include <varpro/io.hpp>
#include <varpro/nuisance.hpp>
#include <varpro/operators.hpp>
#include <varpro/penalties.hpp>
#include <varpro/rng.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#ifndef VARPRO_VERSION
#define VARPRO_VERSION "unknown"
#endif

namespace varpro::experiments {

using nlohmann::json;
namespace fs = std::filesystem;

const char* version() { return VARPRO_VERSION; }

namespace {

// Independent sub-seeds for the random pieces of one experiment.
struct Seeds {
  explicit Seeds(std::uint64_t seed) : rng(seed) {}
  std::uint64_t next() { return rng(); }
  SplitMix64 rng;
};

double rel_err(const Vector& x, const Vector& ref) {
  const double n = ref.norm();
  return n > 0.0 ? (x - ref).norm() / n : (x - ref).norm();
}

double stddev(const Vector& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size()));
}

// Value that json can hold; NaN and infinities become null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// trace.csv and theta_trace.csv collect all runs of an experiment, keyed by a run label.
class TraceWriter {
 public:
  explicit TraceWriter(const fs::path& dir) : trace_(dir / "trace.csv"), theta_(dir / "theta_trace.csv") {
    if (!trace_ || !theta_) throw std::runtime_error("cannot write traces in " + dir.string());
    trace_.precision(17);
    theta_.precision(17);
    trace_ << "run,iter,objective,grad_norm,kkt,model_rel_err,inner_iterations\n";
    theta_ << "run,iter,index,value\n";
  }

  void add(const std::string& run, const SolveTrace& trace, int iter_offset = 0) {
    for (const auto& row : trace.rows) {
      trace_ << run << ',' << row.iter + iter_offset << ',' << row.objective << ',' << row.grad_norm << ',' << row.kkt
             << ',' << row.model_rel_err << ',' << row.inner_iterations << '\n';
      for (Index j = 0; j < row.theta.size(); ++j)
        theta_ << run << ',' << row.iter + iter_offset << ',' << j << ',' << row.theta[j] << '\n';
    }
  }

  void add_theta(const std::string& run, int iter, const Vector& theta) {
    for (Index j = 0; j < theta.size(); ++j) theta_ << run << ',' << iter << ',' << j << ',' << theta[j] << '\n';
  }

  void add_objective(const std::string& run, int iter, double value) {
    trace_ << run << ',' << iter << ',' << value << ",nan,nan,nan,0\n";
  }

 private:
  std::ofstream trace_;
  std::ofstream theta_;
};

json solve_summary(const SolveResult& r) {
  return {{"status", to_string(r.status)},
          {"iterations", r.iterations},
          {"message", r.message},
          {"final_objective", r.trace.rows.empty() ? json(nullptr) : num(r.trace.rows.back().objective)}};
}

void note_failure(RunReport& report, const std::string& run, const SolveResult& r) {
  if (!r.ok()) report.failures.push_back(run + ": " + to_string(r.status) + (r.message.empty() ? "" : " (" + r.message + ")"));
}

// Square vectors are also written as images.
void write_model(RunReport& report, const fs::path& dir, const std::string& name, const Vector& x) {
  io::write_vector_csv(dir / ("model_" + name + ".csv"), x);
  report.outputs.push_back("model_" + name + ".csv");
  const auto side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(x.size()))));
  if (side * side == x.size() && side > 1) {
    io::write_pgm(dir / ("model_" + name + ".pgm"), x, Grid2D{side, side, 1.0});
    report.outputs.push_back("model_" + name + ".pgm");
  }
}

void write_grid_model(RunReport& report, const fs::path& dir, const std::string& name, const Vector& field,
                      const Grid2D& grid) {
  io::write_grid_csv(dir / ("model_" + name + ".csv"), field, grid);
  io::write_pgm(dir / ("model_" + name + ".pgm"), field, grid);
  report.outputs.push_back("model_" + name + ".csv");
  report.outputs.push_back("model_" + name + ".pgm");
}

// ---------------------------------------------------------------------------

std::string variance_label(const std::string& mode) { return mode == "re-estimated" ? "estimated" : "fixed"; }

}  // namespace

RunReport run_variance_experiment(const ExperimentConfig& cfg, const fs::path& out) {
  const auto& p = std::get<VarianceParams>(cfg.params);
  RunReport report;
  Seeds seeds(cfg.seed);
  const auto ops = multigroup_linear_surrogate(seeds.next(), p.groups, p.rows_per_group, p.unknowns);
  const Vector x_true = random_normal(p.unknowns, seeds.next());
  Vector true_var(p.groups);
  for (Index i = 0; i < p.groups; ++i) {
    const double c = static_cast<double>(i + 1) - p.variance_center;
    true_var[i] = p.noise_scale * (c * c + p.variance_offset);
  }
  NoiseModel noise;
  noise.variances.assign(true_var.data(), true_var.data() + true_var.size());
  const SyntheticData data = synthesize_data(ops, x_true, noise, seeds.next());
  LinearGroups problem{ops, data.observed, {}};

  TraceWriter traces(out);
  Monitor monitor;
  monitor.model_error = [&](const Vector& x) { return rel_err(x, x_true); };
  write_model(report, out, "true", x_true);

  std::vector<std::string> names{"group", "true_variance"};
  std::vector<Vector> columns{Vector::LinSpaced(p.groups, 1.0, static_cast<double>(p.groups)), true_var};
  json runs = json::object();
  for (const auto& mode : p.modes) {
    const std::string label = variance_label(mode);
    ReducedObjective f = mode == "re-estimated"
                             ? reduce(group_variance_objective(problem))
                             : reduce(fixed_variance_objective(problem, Vector::Ones(p.groups)));
    const SolveResult res = lbfgs(f, Vector::Zero(p.unknowns), cfg.solver, {}, monitor);
    note_failure(report, label, res);
    traces.add(label, res.trace);
    write_model(report, out, label, res.x);
    report.models[label] = res.x;

    // Variances implied by the final model (the estimate itself for the re-estimated run).
    const Vector est = project_group_variances(problem.evaluate(res.x));
    names.push_back(label + "_variance");
    columns.push_back(est);
    const Vector ratio = est.cwiseQuotient(true_var);
    json run = solve_summary(res);
    run["model_rel_err"] = num(rel_err(res.x, x_true));
    run["variance_ratio_min"] = num(ratio.minCoeff());
    run["variance_ratio_max"] = num(ratio.maxCoeff());
    run["variance_max_rel_err"] = num((ratio.array() - 1.0).abs().maxCoeff());
    runs[label] = run;
  }
  io::write_columns_csv(out / "sigma.csv", names, columns);
  report.outputs.insert(report.outputs.end(), {"trace.csv", "theta_trace.csv", "sigma.csv"});
  report.metrics["runs"] = runs;
  return report;
}

// ---------------------------------------------------------------------------

namespace {

// Smooth slowness perturbation (microseconds per metre): a high-velocity blob
// above a low-velocity layer.
double tomography_truth(double z, double x, double depth, double width) {
  const double bz = 0.4 * depth, bx = 0.5 * width, br = 0.12 * width;
  const double blob = 20.0 * std::exp(-((z - bz) * (z - bz) + (x - bx) * (x - bx)) / (2.0 * br * br));
  const double lz = 0.72 * depth, lw = 0.05 * depth;
  const double layer = 10.0 * std::exp(-(z - lz) * (z - lz) / (2.0 * lw * lw));
  return layer - blob;
}

Vector truth_on_fine(const Grid2D& g) {
  Vector s(g.size());
  for (Index iz = 0; iz < g.nz; ++iz)
    for (Index ix = 0; ix < g.nx; ++ix)
      s[g.index(iz, ix)] = tomography_truth((iz + 0.5) * g.spacing, (ix + 0.5) * g.spacing, g.depth(), g.width());
  return s;
}

// Coarse sample j sits on fine sample j (nf - 1) / (nc - 1).
Vector truth_on_coarse(const Grid2D& coarse, const Grid2D& fine) {
  Vector s(coarse.size());
  const double fz = static_cast<double>(fine.nz - 1) / static_cast<double>(coarse.nz - 1);
  const double fx = static_cast<double>(fine.nx - 1) / static_cast<double>(coarse.nx - 1);
  for (Index iz = 0; iz < coarse.nz; ++iz)
    for (Index ix = 0; ix < coarse.nx; ++ix)
      s[coarse.index(iz, ix)] = tomography_truth((iz * fz + 0.5) * fine.spacing, (ix * fx + 0.5) * fine.spacing,
                                                 fine.depth(), fine.width());
  return s;
}

std::string tomography_label(const std::string& mode) {
  if (mode == "ls") return "ls";
  if (mode == "fixed-at-init") return "t_fixed";
  return "t_refit";
}

Penalty penalty_for(const Vector& theta) {
  return theta.size() == 2 ? Penalty::scaled_student_t(theta[0], theta[1]) : Penalty::least_squares();
}

}  // namespace

RunReport run_tomography_experiment(const ExperimentConfig& cfg, const fs::path& out) {
  const auto& p = std::get<TomographyParams>(cfg.params);
  RunReport report;
  Seeds seeds(cfg.seed);

  const Grid2D fine{p.nz, p.nx, p.spacing};
  const double coarse_h = p.spacing * static_cast<double>(p.nz - 1) / static_cast<double>(p.coarse_nz - 1);
  const Grid2D coarse{p.coarse_nz, p.coarse_nx, coarse_h};
  const LinearOperator ray = straight_ray_operator(fine, crosswell_geometry(fine, p.sources, p.receivers));
  const LinearOperator interp = cubic_interp_operator(coarse, fine);
  const LinearOperator a = compose(ray, interp);

  Vector truth_coarse;
  Vector truth_fine;
  Vector clean;
  if (p.truth == "coarse") {
    truth_coarse = truth_on_coarse(coarse, fine);
    truth_fine = interp.apply(truth_coarse);
    clean = a.apply(truth_coarse);
  } else {
    truth_fine = truth_on_fine(fine);
    clean = ray.apply(truth_fine);
  }
  const double sd = stddev(clean);
  NoiseModel noise;
  noise.variances = {std::pow(p.noise_relative * sd, 2)};
  noise.outlier_fraction = p.outlier_fraction;
  noise.outlier_min = p.outlier_min;
  noise.outlier_max = p.outlier_max;
  const SyntheticData data = corrupt_data({clean}, noise, seeds.next());
  const Vector& d = data.observed.front();

  write_grid_model(report, out, "true", truth_fine, fine);
  if (truth_coarse.size()) write_grid_model(report, out, "true_coarse", truth_coarse, coarse);

  StudentFitOptions fit_opts;
  fit_opts.dof_min = p.dof_min;
  fit_opts.dof_max = p.dof_max;
  fit_opts.tol = cfg.solver.nm_tol;
  fit_opts.max_iters = cfg.solver.nm_max_iters;

  Monitor monitor;
  monitor.model_error = [&](const Vector& x) { return rel_err(interp.apply(x), truth_fine); };
  TraceWriter traces(out);
  const Vector x0 = Vector::Zero(a.cols());
  const Vector r0 = d - a.apply(x0);
  const double reach = r0.cwiseAbs().maxCoeff();
  const Vector grid = Vector::LinSpaced(p.influence_points, -reach, reach);
  const io::Histogram h0 = io::histogram(r0, p.histogram_bins);

  json runs = json::object();
  for (const auto& mode : p.modes) {
    const std::string label = tomography_label(mode);
    json run;
    std::optional<ReducedObjective> f;
    if (mode == "ls") {
      f.emplace(reduce(least_squares_objective(a, d)));
    } else if (mode == "fixed-at-init") {
      const StudentFit fit0 = fit_student_t(r0, fit_opts);
      if (!fit0.converged) report.failures.push_back(label + ": initial Student's t fit did not converge");
      run["initial_fit"] = {{"scale2", num(fit0.params.scale2)}, {"dof", num(fit0.params.dof)},
                            {"gaussian_limit", fit0.gaussian_limit}};
      f.emplace(reduce(fixed_student_objective(a, d, fit0.params)));
    } else {
      f.emplace(reduce(student_objective(a, d, fit_opts)));
    }
    const Vector theta0 = f->theta(x0);
    const SolveResult res = gauss_newton_cg(*f, robust_gn(a, d), x0, cfg.solver, monitor);
    note_failure(report, label, res);
    traces.add(label, res.trace);

    const Vector model = interp.apply(res.x);
    write_grid_model(report, out, label, model, fine);
    write_grid_model(report, out, label + "_coarse", res.x, coarse);
    report.models[label] = res.x;

    const Vector r = d - a.apply(res.x);
    io::write_histogram_csv(out / ("hist_" + label + "_initial.csv"), h0);
    io::write_histogram_csv(out / ("hist_" + label + "_final.csv"), io::histogram(r, p.histogram_bins));
    const Vector theta = f->theta(res.x);
    io::write_columns_csv(out / ("influence_" + label + ".csv"), {"residual", "initial", "final"},
                          {grid, penalty_for(theta0).influence(grid), penalty_for(theta).influence(grid)});
    report.outputs.insert(report.outputs.end(), {"hist_" + label + "_initial.csv", "hist_" + label + "_final.csv",
                                                 "influence_" + label + ".csv"});

    run.update(solve_summary(res));
    run["model_rel_err"] = num(rel_err(model, truth_fine));
    if (truth_coarse.size()) run["coarse_rel_err"] = num(rel_err(res.x, truth_coarse));
    if (theta.size() == 2) run["theta"] = {{"scale2", num(theta[0])}, {"dof", num(theta[1])}};
    const auto& rows = res.trace.rows;
    if (rows.size() >= 2 && rows[0].grad_norm > 0.0) run["first_step_grad_ratio"] = num(rows[1].grad_norm / rows[0].grad_norm);
    runs[label] = run;
  }
  report.outputs.insert(report.outputs.end(), {"trace.csv", "theta_trace.csv"});
  report.metrics["rays"] = a.rows();
  report.metrics["unknowns"] = a.cols();
  report.metrics["outliers"] = static_cast<Index>(data.outlier_indices.front().size());
  report.metrics["runs"] = runs;
  return report;
}

// ---------------------------------------------------------------------------

RunReport run_calibration_experiment(const ExperimentConfig& cfg, const fs::path& out) {
  const auto& p = std::get<CalibrationParams>(cfg.params);
  RunReport report;
  Seeds seeds(cfg.seed);
  const auto ops = multigroup_linear_surrogate(seeds.next(), p.groups, p.rows_per_group, p.unknowns);
  const Vector x_true = random_normal(p.unknowns, seeds.next());
  std::vector<Vector> offsets;
  for (Index i = 0; i < p.groups; ++i) offsets.push_back(p.offset_scale * random_normal(p.rows_per_group, seeds.next()));
  Vector alpha_true(p.groups);
  {
    SplitMix64 rng(seeds.next());
    for (Index i = 0; i < p.groups; ++i) alpha_true[i] = p.alpha_min + (p.alpha_max - p.alpha_min) * rng.uniform();
  }
  std::vector<Vector> clean;
  Vector variances(p.groups);
  for (Index i = 0; i < p.groups; ++i) {
    const auto k = static_cast<std::size_t>(i);
    clean.push_back(alpha_true[i] * (ops[k].apply(x_true) + offsets[k]));
    variances[i] = std::pow(p.noise_relative * stddev(clean.back()), 2);
  }
  NoiseModel noise;
  noise.variances.assign(variances.data(), variances.data() + variances.size());
  noise.outlier_fraction = p.outlier_fraction;
  noise.outlier_min = p.outlier_min;
  noise.outlier_max = p.outlier_max;
  const SyntheticData data = corrupt_data(clean, noise, seeds.next());
  const LinearGroups full{ops, data.observed, offsets};

  TraceWriter traces(out);
  Monitor monitor;
  monitor.model_error = [&](const Vector& x) { return rel_err(x, x_true); };
  write_model(report, out, "true", x_true);

  CalibrationOptions copts;
  copts.tol = p.calibration_tol;
  std::vector<std::string> names{"group", "stage", "true_alpha"};
  Vector stage_of(p.groups);
  for (Index i = 0; i < p.groups; ++i) stage_of[i] = static_cast<double>((i * p.stages) / p.groups);
  std::vector<Vector> columns{Vector::LinSpaced(p.groups, 0.0, static_cast<double>(p.groups - 1)), stage_of,
                              alpha_true};

  json runs = json::object();
  for (const auto& name : p.penalties) {
    const Penalty penalty = name == "ls" ? Penalty::least_squares() : Penalty::student_t(p.student_dof);
    Vector x = Vector::Zero(p.unknowns);
    json stages = json::array();
    int offset = 0;
    bool failed = false;
    for (Index s = 0; s < p.stages && !failed; ++s) {
      // Contiguous batch of groups; its solution warm-starts the next batch.
      LinearGroups batch;
      for (Index i = 0; i < p.groups; ++i) {
        if (static_cast<Index>(stage_of[i]) != s) continue;
        const auto k = static_cast<std::size_t>(i);
        batch.ops.push_back(ops[k]);
        batch.data.push_back(full.data[k]);
        batch.offsets.push_back(offsets[k]);
      }
      ReducedObjective f = reduce(calibration_objective(batch, penalty, copts));
      const SolveResult res = lbfgs(f, x, cfg.solver, {}, monitor);
      const std::string label = name + "_stage" + std::to_string(s);
      note_failure(report, label, res);
      failed = !res.ok();
      traces.add(name, res.trace, offset);
      offset += res.iterations + 1;
      json st = solve_summary(res);
      st["model_rel_err"] = num(rel_err(res.x, x_true));
      stages.push_back(st);
      x = res.x;
    }
    write_model(report, out, name, x);
    report.models[name] = x;

    Vector alpha(p.groups);
    double data_err = 0.0;
    bool projected = true;
    for (Index i = 0; i < p.groups; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const Vector fx = full.forward(i, x);
      const CalibrationFit fit = project_calibration(full.data[k], fx, penalty, std::nullopt, copts);
      projected = projected && fit.converged;
      alpha[i] = fit.alpha;
      data_err = std::max(data_err, rel_err(alpha[i] * fx, clean[k]));
    }
    if (!projected) report.failures.push_back(name + ": final calibration projection did not converge");
    names.push_back(name + "_alpha");
    columns.push_back(alpha);

    json run;
    run["stages"] = stages;
    run["model_rel_err"] = num(rel_err(x, x_true));
    run["alpha_max_rel_err"] = num((alpha - alpha_true).cwiseQuotient(alpha_true).cwiseAbs().maxCoeff());
    run["data_max_rel_err"] = num(data_err);
    if (name == "ls") {
      // Closed form against Newton started away from it.
      double gap = 0.0;
      for (Index i = 0; i < p.groups; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const Vector fx = full.forward(i, x);
        const double closed = full.data[k].dot(fx) / fx.squaredNorm();
        const CalibrationFit newton = project_calibration(full.data[k], fx, penalty, 1.0, copts);
        gap = std::max(gap, std::abs(newton.alpha - closed) / std::max(1.0, std::abs(closed)));
      }
      run["closed_form_gap"] = num(gap);
    }
    runs[name] = run;
  }
  io::write_columns_csv(out / "alpha.csv", names, columns);
  report.outputs.insert(report.outputs.end(), {"trace.csv", "theta_trace.csv", "alpha.csv"});
  report.metrics["runs"] = runs;
  return report;
}

// ---------------------------------------------------------------------------

RunReport run_student_fit(const ExperimentConfig& cfg, const fs::path& out) {
  const auto& p = std::get<StudentFitParams>(cfg.params);
  RunReport report;
  Seeds seeds(cfg.seed);
  const Vector r = p.distribution == "gaussian" ? Vector(p.scale * random_normal(p.samples, seeds.next()))
                                                 : random_student_t(p.samples, p.dof, p.scale, seeds.next());
  StudentFitOptions opts;
  opts.dof_min = p.dof_min;
  opts.dof_max = p.dof_max;
  opts.tol = cfg.solver.nm_tol;
  opts.max_iters = cfg.solver.nm_max_iters;
  const StudentFit fit = fit_student_t(r, opts);
  if (!fit.converged) report.failures.push_back("fit: Nelder-Mead did not converge");

  TraceWriter traces(out);
  for (std::size_t i = 0; i < fit.nll_history.size(); ++i) traces.add_objective("fit", static_cast<int>(i), fit.nll_history[i]);
  Vector theta(2);
  theta << fit.params.scale2, fit.params.dof;
  traces.add_theta("fit", static_cast<int>(fit.iterations), theta);

  // Slices through the optimum along each coordinate, log-spaced.
  const Vector offsets = Vector::LinSpaced(p.slice_points, -p.slice_halfwidth, p.slice_halfwidth);
  Vector which(2 * p.slice_points), value(2 * p.slice_points), nll(2 * p.slice_points);
  for (int j = 0; j < p.slice_points; ++j) {
    StudentParams a = fit.params, b = fit.params;
    a.scale2 *= std::exp(offsets[j]);
    b.dof *= std::exp(offsets[j]);
    which[j] = 0.0;
    value[j] = a.scale2;
    nll[j] = student_nll(r, a);
    which[p.slice_points + j] = 1.0;
    value[p.slice_points + j] = b.dof;
    nll[p.slice_points + j] = student_nll(r, b);
  }
  io::write_columns_csv(out / "nll_slice.csv", {"parameter", "value", "nll"}, {which, value, nll});
  report.outputs.insert(report.outputs.end(), {"trace.csv", "theta_trace.csv", "nll_slice.csv"});
  report.models["theta"] = theta;

  const double scale = std::sqrt(fit.params.scale2);
  report.metrics["scale2"] = num(fit.params.scale2);
  report.metrics["scale"] = num(scale);
  report.metrics["dof"] = num(fit.params.dof);
  report.metrics["nll"] = num(fit.nll);
  report.metrics["iterations"] = fit.iterations;
  report.metrics["converged"] = fit.converged;
  report.metrics["gaussian_limit"] = fit.gaussian_limit;
  report.metrics["scale_rel_err"] = num(std::abs(scale - p.scale) / p.scale);
  if (p.distribution == "student") report.metrics["dof_rel_err"] = num(std::abs(fit.params.dof - p.dof) / p.dof);
  return report;
}

// ---------------------------------------------------------------------------

RunReport run_experiment(const ExperimentConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  const auto start = std::chrono::steady_clock::now();
  RunReport report;
  if (cfg.experiment == "variance") report = run_variance_experiment(cfg, out);
  else if (cfg.experiment == "tomography") report = run_tomography_experiment(cfg, out);
  else if (cfg.experiment == "calibration") report = run_calibration_experiment(cfg, out);
  else if (cfg.experiment == "student-fit") report = run_student_fit(cfg, out);
  else throw ConfigError("unknown experiment \"" + cfg.experiment + "\"");
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json manifest{{"tool", "varpro"},
                {"version", version()},
                {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                      "." + std::to_string(EIGEN_MINOR_VERSION)},
                {"config", to_json(cfg)},
                {"wall_time_s", wall},
                {"status", report.ok() ? "ok" : "solver_failure"},
                {"failures", report.failures},
                {"metrics", report.metrics},
                {"outputs", report.outputs}};
  std::ofstream(out / "manifest.json") << std::setw(2) << manifest << '\n';
  return report;
}

}  // namespace varpro::experiments
