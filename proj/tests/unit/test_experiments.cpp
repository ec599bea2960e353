#include "helpers.hpp"

#include <varpro/experiments.hpp>
#include <varpro/operators.hpp>
#include <varpro/penalties.hpp>

#include <Eigen/QR>
#include <doctest.h>

#include <cmath>

using namespace varpro;
using namespace varpro::experiments;
using nlohmann::json;

namespace {

ExperimentConfig small_tomography(json section, json solver = json::object()) {
  json base{{"nz", 21}, {"nx", 21}, {"coarse_nz", 11}, {"coarse_nx", 11}, {"sources", 21}, {"receivers", 21}};
  base.update(section);
  return parse_config({{"experiment", "tomography"}, {"solver", solver}, {"tomography", base}});
}

double rel(const Vector& a, const Vector& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("config parsing fills defaults") {
  const ExperimentConfig cfg = parse_config({{"experiment", "variance"}});
  CHECK(cfg.seed == 1);
  CHECK(cfg.solver.max_iters == 50);
  const auto& p = std::get<VarianceParams>(cfg.params);
  CHECK(p.groups == 12);
  CHECK(p.rows_per_group == 800);
  CHECK(p.modes.size() == 2);

  for (const char* e : {"variance", "tomography", "calibration", "student-fit"}) {
    const ExperimentConfig c = parse_config({{"experiment", e}, {"seed", 7}});
    CHECK(to_json(parse_config(to_json(c))) == to_json(c));
  }
}

TEST_CASE("config parsing is strict") {
  CHECK_THROWS_AS(parse_config(json::object()), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "fwi"}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "variance"}, {"sed", 1}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "variance"}, {"variance", {{"group", 3}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "variance"}, {"solver", {{"maxiter", 3}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "variance"}, {"tomography", json::object()}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "variance"}, {"seed", -1}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "variance"}, {"seed", "1"}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "variance"}, {"variance", {{"groups", 2.5}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "variance"}, {"variance", {{"modes", {"bogus"}}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "tomography"}, {"tomography", {{"outlier_fraction", 1.5}}}}),
                  ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "calibration"}, {"solver", {{"armijo_c1", 2.0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "student-fit"}, {"student_fit", {{"distribution", "cauchy"}}}}),
                  ConfigError);

  testing::TempDir dir("config");
  std::ofstream(dir.path() / "bad.json") << "{\"experiment\": \"variance\", // comment\n}";
  CHECK_THROWS_AS(load_config(dir.path() / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir.path() / "missing.json"), ConfigError);
}

TEST_CASE("shipped configs parse") {
  for (const std::string name : {"variance.json", "tomography.json", "calibration.json", "student_fit.json"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_config(std::filesystem::path(VARPRO_CONFIG_DIR) / name));
  }
}

TEST_CASE("variance experiment with zero noise") {
  ExperimentConfig cfg = parse_config({{"experiment", "variance"},
                                       {"solver", {{"max_iters", 300}}},
                                       {"variance", {{"groups", 4}, {"rows_per_group", 60}, {"unknowns", 16},
                                                     {"noise_scale", 0.0}}}});
  testing::TempDir dir("variance_zero");
  const RunReport rep = run_experiment(cfg, dir.path());
  CHECK(rep.ok());
  for (const std::string run : {"estimated", "fixed"}) {
    CAPTURE(run);
    CHECK(rep.metrics["runs"][run]["model_rel_err"].get<double>() <= 1e-4);
  }
}

TEST_CASE("runs are reproducible") {
  const ExperimentConfig cfg = parse_config({{"experiment", "variance"},
                                             {"seed", 11},
                                             {"variance", {{"groups", 5}, {"rows_per_group", 40}, {"unknowns", 9}}}});
  testing::TempDir a("repro_a"), b("repro_b");
  const RunReport ra = run_experiment(cfg, a.path());
  run_experiment(cfg, b.path());
  int compared = 0;
  for (const auto& name : ra.outputs) {
    CAPTURE(name);
    CHECK(testing::slurp(a.path() / name) == testing::slurp(b.path() / name));
    ++compared;
  }
  CHECK(compared >= 8);

  const json manifest = json::parse(testing::slurp(a.path() / "manifest.json"));
  for (const char* key : {"tool", "version", "eigen_version", "config", "wall_time_s", "status", "metrics", "outputs"})
    CHECK(manifest.contains(key));
  CHECK(manifest["status"] == "ok");
  CHECK(manifest["config"] == to_json(cfg));

  const testing::Csv sigma = testing::read_csv(a.path() / "sigma.csv");
  CHECK(sigma.column("true_variance")[0] == doctest::Approx(25.25));
}

TEST_CASE("tomography artifacts") {
  const ExperimentConfig cfg = small_tomography({{"outlier_fraction", 0.1}}, {{"max_iters", 10}, {"cg_max", 10}});
  testing::TempDir dir("tomo");
  const RunReport rep = run_experiment(cfg, dir.path());
  CHECK(rep.ok());
  const Index rays = rep.metrics["rays"].get<Index>();
  CHECK(rays == 21 * 21);
  CHECK(rep.metrics["unknowns"].get<Index>() == 121);
  CHECK(rep.metrics["outliers"].get<Index>() == 44);

  for (const std::string label : {"ls", "t_fixed", "t_refit"}) {
    CAPTURE(label);
    const std::string l = label;
    for (const char* stage : {"_initial.csv", "_final.csv"})
      CHECK(testing::read_csv(dir.path() / ("hist_" + l + stage)).column("count").sum() == rays);
    const testing::Csv inf = testing::read_csv(dir.path() / ("influence_" + l + ".csv"));
    const Vector grid = inf.column("residual");
    CHECK(grid.size() == 201);
    const json& run = rep.metrics["runs"][l];
    Penalty final_p = Penalty::least_squares();
    if (run.contains("theta"))
      final_p = Penalty::scaled_student_t(run["theta"]["scale2"].get<double>(), run["theta"]["dof"].get<double>());
    CHECK(testing::rel_diff(inf.column("final"), final_p.influence(grid)) <= 1e-15);
    if (l == "t_fixed") {
      const json& f0 = run["initial_fit"];
      const Penalty p0 = Penalty::scaled_student_t(f0["scale2"].get<double>(), f0["dof"].get<double>());
      CHECK(testing::rel_diff(inf.column("initial"), p0.influence(grid)) <= 1e-15);
      CHECK(inf.column("initial") == inf.column("final"));
    }
    const testing::Csv model = testing::read_csv(dir.path() / ("model_" + l + ".csv"), false);
    CHECK(model.rows.size() == 21);
    CHECK(model.rows.front().size() == 21);
  }
  std::ifstream trace(dir.path() / "trace.csv");
  std::string header;
  std::getline(trace, header);
  CHECK(header == "run,iter,objective,grad_norm,kkt,model_rel_err,inner_iterations");
}

TEST_CASE("tomography with consistent data recovers the least-norm solution") {
  const ExperimentConfig cfg = small_tomography({{"truth", "coarse"}, {"noise_relative", 0.0}, {"outlier_fraction", 0.0}},
                                                {{"max_iters", 500}, {"cg_tol", 1e-14}, {"cg_max", 5000}, {"grad_tol", 1e-12}});
  testing::TempDir dir("tomo_clean");
  const RunReport rep = run_experiment(cfg, dir.path());
  CHECK(rep.ok());

  // Independent reconstruction of the data and its minimum-norm preimage.
  const Grid2D fine{21, 21, 10.0};
  const Grid2D coarse{11, 11, 20.0};
  const SparseMatrix ray = straight_ray_matrix(fine, crosswell_geometry(fine, 21, 21));
  const Matrix a = Matrix(ray) * Matrix(cubic_interp_matrix(coarse, fine));
  const testing::Csv c = testing::read_csv(dir.path() / "model_true_coarse.csv", false);
  Vector truth(121);
  for (std::size_t i = 0; i < c.rows.size(); ++i)
    for (std::size_t j = 0; j < c.rows[i].size(); ++j) truth[static_cast<Index>(i * 11 + j)] = c.rows[i][j];
  REQUIRE(truth.size() == 121);
  const Vector least_norm = a.completeOrthogonalDecomposition().solve(Vector(a * truth));
  for (const std::string label : {"ls", "t_fixed", "t_refit"}) {
    CAPTURE(label);
    CHECK(rel(rep.models.at(label), least_norm) <= 1e-4);
  }
}

TEST_CASE("calibration experiment with clean data") {
  const ExperimentConfig cfg = parse_config(
      {{"experiment", "calibration"},
       {"solver", {{"max_iters", 200}, {"grad_tol", 1e-10}}},
       {"calibration", {{"groups", 6}, {"rows_per_group", 40}, {"unknowns", 10}, {"stages", 2},
                        {"noise_relative", 0.0}, {"outlier_fraction", 0.0}}}});
  testing::TempDir dir("calib");
  const RunReport rep = run_experiment(cfg, dir.path());
  CHECK(rep.ok());
  const testing::Csv alpha = testing::read_csv(dir.path() / "alpha.csv");
  CHECK(alpha.column("stage") == (Vector(6) << 0, 0, 0, 1, 1, 1).finished());
  for (const std::string name : {"ls", "student"}) {
    CAPTURE(name);
    const json& run = rep.metrics["runs"][name];
    CHECK(run["alpha_max_rel_err"].get<double>() <= 1e-6);
    CHECK(run["data_max_rel_err"].get<double>() <= 1e-4);
    CHECK(run["model_rel_err"].get<double>() <= 1e-6);
    const Vector est = alpha.column(std::string(name) + "_alpha");
    const Vector truth = alpha.column("true_alpha");
    CHECK((est - truth).cwiseQuotient(truth).cwiseAbs().maxCoeff() <= 1e-6);
  }
  CHECK(rep.metrics["runs"]["ls"]["closed_form_gap"].get<double>() <= 1e-10);
}

TEST_CASE("Student's t fit experiment") {
  const ExperimentConfig cfg =
      parse_config({{"experiment", "student-fit"}, {"student_fit", {{"samples", 20000}, {"distribution", "gaussian"}}}});
  testing::TempDir dir("fit");
  const RunReport rep = run_experiment(cfg, dir.path());
  CHECK(rep.ok());
  CHECK(rep.metrics["gaussian_limit"].get<bool>());
  CHECK(rep.metrics["scale_rel_err"].get<double>() <= 0.05);
  const testing::Csv slice = testing::read_csv(dir.path() / "nll_slice.csv");
  CHECK(slice.rows.size() == 82);
  // The fitted point is the minimum of its own slices (the middle sample of each).
  const Vector nll = slice.column("nll");
  CHECK(nll.head(41).minCoeff() == nll[20]);
  CHECK(nll.tail(41).minCoeff() >= nll[61] - 1e-9 * std::abs(nll[61]));
}
