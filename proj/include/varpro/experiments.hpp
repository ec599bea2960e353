#pragma once

#include <varpro/linalg.hpp>
#include <varpro/solvers.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace varpro::experiments {

/// Malformed, incomplete or out-of-range configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VarianceParams {
  Index groups = 12;
  Index rows_per_group = 800;
  Index unknowns = 100;
  /// sigma_i^2 = noise_scale * ((i - variance_center)^2 + variance_offset), i = 1..groups
  double variance_center = 6.0;
  double variance_offset = 0.25;
  double noise_scale = 1.0;
  /// Any of "re-estimated", "fixed-unit".
  std::vector<std::string> modes{"re-estimated", "fixed-unit"};
};

struct TomographyParams {
  Index nz = 51;
  Index nx = 51;
  double spacing = 10.0;
  Index coarse_nz = 26;
  Index coarse_nx = 26;
  Index sources = 51;
  Index receivers = 51;
  /// Gaussian noise standard deviation relative to the clean-data standard deviation.
  double noise_relative = 0.01;
  double outlier_fraction = 0.1;
  double outlier_min = 5.0;
  double outlier_max = 20.0;
  /// "fine": the true model lives on the fine grid; "coarse": on the coarse grid (data in range of A).
  std::string truth = "fine";
  /// Any of "ls", "fixed-at-init", "re-estimated".
  std::vector<std::string> modes{"ls", "fixed-at-init", "re-estimated"};
  double dof_min = 0.1;
  double dof_max = 1000.0;
  int histogram_bins = 50;
  int influence_points = 201;
};

struct CalibrationParams {
  Index groups = 12;
  Index rows_per_group = 200;
  Index unknowns = 64;
  double alpha_min = 0.5;
  double alpha_max = 2.0;
  /// Standard deviation of the model-independent term b_i in F_i(x) = A_i x + b_i.
  double offset_scale = 1.0;
  double noise_relative = 0.01;
  double outlier_fraction = 0.1;
  double outlier_min = 5.0;
  double outlier_max = 20.0;
  /// Groups are split into this many contiguous batches, solved in order.
  Index stages = 3;
  /// Any of "ls", "student".
  std::vector<std::string> penalties{"ls", "student"};
  double student_dof = 1.0;
  double calibration_tol = 1e-12;
};

struct StudentFitParams {
  Index samples = 100000;
  double dof = 4.0;
  double scale = 2.0;
  /// "student" or "gaussian" (normal with standard deviation `scale`).
  std::string distribution = "student";
  double dof_min = 0.1;
  double dof_max = 1000.0;
  int slice_points = 41;
  /// Half-width of the NLL slices in natural-log units of each parameter.
  double slice_halfwidth = 1.0;
};

using ExperimentParams = std::variant<VarianceParams, TomographyParams, CalibrationParams, StudentFitParams>;

struct ExperimentConfig {
  std::string experiment;  // variance | tomography | calibration | student-fit
  std::uint64_t seed = 1;
  std::string output_dir = "varpro_out";
  SolverConfig solver;
  ExperimentParams params;
};

/// Parses a config document. Unknown keys, wrong types and invalid values raise ConfigError.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
/// The fully populated config (all defaults filled in).
nlohmann::json to_json(const ExperimentConfig& cfg);

struct RunReport {
  nlohmann::json metrics = nlohmann::json::object();
  /// One entry per solver run that ended on a failure status.
  std::vector<std::string> failures;
  /// Final primary unknowns per run label.
  std::map<std::string, Vector> models;
  std::vector<std::string> outputs;

  bool ok() const { return failures.empty(); }
};

RunReport run_variance_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out);
RunReport run_tomography_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out);
RunReport run_calibration_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out);
RunReport run_student_fit(const ExperimentConfig& cfg, const std::filesystem::path& out);

/// Dispatches on cfg.experiment, creates `out` and writes manifest.json there.
RunReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out);

const char* version();

}  // namespace varpro::experiments
