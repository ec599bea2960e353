#include <varpro/experiments.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace varpro::experiments {

using nlohmann::json;

namespace {

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) fail("must be a JSON object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  void read(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "must be a number");
      out = v->get<double>();
      if (!std::isfinite(out)) fail(key, "must be finite");
    }
  }

  void read(const std::string& key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "must be an integer");
      const auto i = v->get<std::int64_t>();
      if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max()) fail(key, "out of range");
      out = static_cast<int>(i);
    }
  }

  void read(const std::string& key, Index& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "must be an integer");
      out = static_cast<Index>(v->get<std::int64_t>());
    }
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0))
        fail(key, "must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "must be a string");
      out = v->get<std::string>();
    }
  }

  void read(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "must be an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) fail(key, "must be an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  const json* object(const std::string& key) { return take(key); }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) fail("unknown key \"" + it.key() + "\"");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const { fail("\"" + key + "\" " + msg); }
  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(where_ + ": " + msg); }

 private:
  const json* take(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& where, const std::string& msg) {
  if (!ok) throw ConfigError(where + ": " + msg);
}

void check_choices(const std::vector<std::string>& values, const std::vector<std::string>& allowed,
                   const std::string& where) {
  check(!values.empty(), where, "must not be empty");
  std::set<std::string> unique;
  for (const auto& v : values) {
    check(std::find(allowed.begin(), allowed.end(), v) != allowed.end(), where, "unsupported value \"" + v + "\"");
    check(unique.insert(v).second, where, "duplicate value \"" + v + "\"");
  }
}

SolverConfig parse_solver(const json* doc) {
  SolverConfig s;
  if (!doc) return s;
  Fields f(*doc, "solver");
  f.read("max_iters", s.max_iters);
  f.read("grad_tol", s.grad_tol);
  f.read("rel_grad_tol", s.rel_grad_tol);
  f.read("lbfgs_memory", s.lbfgs_memory);
  f.read("cg_tol", s.cg_tol);
  f.read("cg_max", s.cg_max);
  f.read("armijo_c1", s.armijo_c1);
  f.read("armijo_shrink", s.armijo_shrink);
  f.read("max_backtracks", s.max_backtracks);
  f.read("nm_tol", s.nm_tol);
  f.read("nm_max_iters", s.nm_max_iters);
  f.finish();
  try {
    s.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("solver: ") + e.what());
  }
  return s;
}

void check_outliers(double fraction, double lo, double hi, const std::string& w) {
  check(fraction >= 0.0 && fraction <= 1.0, w, "outlier_fraction must lie in [0, 1]");
  check(lo >= 0.0 && hi >= lo, w, "need 0 <= outlier_min <= outlier_max");
}

VarianceParams parse_variance(const json* doc) {
  VarianceParams p;
  if (doc) {
    Fields f(*doc, "variance");
    f.read("groups", p.groups);
    f.read("rows_per_group", p.rows_per_group);
    f.read("unknowns", p.unknowns);
    f.read("variance_center", p.variance_center);
    f.read("variance_offset", p.variance_offset);
    f.read("noise_scale", p.noise_scale);
    f.read("modes", p.modes);
    f.finish();
  }
  const std::string w = "variance";
  check(p.groups > 0 && p.unknowns > 0, w, "groups and unknowns must be positive");
  check(p.rows_per_group >= p.unknowns, w, "rows_per_group must be >= unknowns");
  check(p.variance_offset >= 0.0 && p.noise_scale >= 0.0, w, "variance_offset and noise_scale must be >= 0");
  check_choices(p.modes, {"re-estimated", "fixed-unit"}, w + ".modes");
  return p;
}

TomographyParams parse_tomography(const json* doc) {
  TomographyParams p;
  if (doc) {
    Fields f(*doc, "tomography");
    f.read("nz", p.nz);
    f.read("nx", p.nx);
    f.read("spacing", p.spacing);
    f.read("coarse_nz", p.coarse_nz);
    f.read("coarse_nx", p.coarse_nx);
    f.read("sources", p.sources);
    f.read("receivers", p.receivers);
    f.read("noise_relative", p.noise_relative);
    f.read("outlier_fraction", p.outlier_fraction);
    f.read("outlier_min", p.outlier_min);
    f.read("outlier_max", p.outlier_max);
    f.read("truth", p.truth);
    f.read("modes", p.modes);
    f.read("dof_min", p.dof_min);
    f.read("dof_max", p.dof_max);
    f.read("histogram_bins", p.histogram_bins);
    f.read("influence_points", p.influence_points);
    f.finish();
  }
  const std::string w = "tomography";
  check(p.nz > 1 && p.nx > 1 && p.spacing > 0.0, w, "need nz, nx > 1 and spacing > 0");
  check(p.coarse_nz > 1 && p.coarse_nx > 1 && p.coarse_nz <= p.nz && p.coarse_nx <= p.nx, w,
        "coarse grid must have 2..nz by 2..nx samples");
  check(p.sources > 0 && p.receivers > 0, w, "sources and receivers must be positive");
  check(p.noise_relative >= 0.0, w, "noise_relative must be >= 0");
  check_outliers(p.outlier_fraction, p.outlier_min, p.outlier_max, w);
  check(p.truth == "fine" || p.truth == "coarse", w, "truth must be \"fine\" or \"coarse\"");
  check_choices(p.modes, {"ls", "fixed-at-init", "re-estimated"}, w + ".modes");
  check(p.dof_min > 0.0 && p.dof_max > p.dof_min, w, "need 0 < dof_min < dof_max");
  check(p.histogram_bins > 0 && p.influence_points > 1, w, "histogram_bins > 0 and influence_points > 1 required");
  return p;
}

CalibrationParams parse_calibration(const json* doc) {
  CalibrationParams p;
  if (doc) {
    Fields f(*doc, "calibration");
    f.read("groups", p.groups);
    f.read("rows_per_group", p.rows_per_group);
    f.read("unknowns", p.unknowns);
    f.read("alpha_min", p.alpha_min);
    f.read("alpha_max", p.alpha_max);
    f.read("offset_scale", p.offset_scale);
    f.read("noise_relative", p.noise_relative);
    f.read("outlier_fraction", p.outlier_fraction);
    f.read("outlier_min", p.outlier_min);
    f.read("outlier_max", p.outlier_max);
    f.read("stages", p.stages);
    f.read("penalties", p.penalties);
    f.read("student_dof", p.student_dof);
    f.read("calibration_tol", p.calibration_tol);
    f.finish();
  }
  const std::string w = "calibration";
  check(p.groups > 0 && p.unknowns > 0, w, "groups and unknowns must be positive");
  check(p.rows_per_group >= p.unknowns, w, "rows_per_group must be >= unknowns");
  check(p.alpha_min > 0.0 && p.alpha_max >= p.alpha_min, w, "need 0 < alpha_min <= alpha_max");
  check(p.offset_scale > 0.0, w, "offset_scale must be positive");
  check(p.noise_relative >= 0.0, w, "noise_relative must be >= 0");
  check_outliers(p.outlier_fraction, p.outlier_min, p.outlier_max, w);
  check(p.stages >= 1 && p.stages <= p.groups, w, "stages must lie in [1, groups]");
  check_choices(p.penalties, {"ls", "student"}, w + ".penalties");
  check(p.student_dof > 0.0 && p.calibration_tol > 0.0, w, "student_dof and calibration_tol must be positive");
  return p;
}

StudentFitParams parse_student_fit(const json* doc) {
  StudentFitParams p;
  if (doc) {
    Fields f(*doc, "student_fit");
    f.read("samples", p.samples);
    f.read("dof", p.dof);
    f.read("scale", p.scale);
    f.read("distribution", p.distribution);
    f.read("dof_min", p.dof_min);
    f.read("dof_max", p.dof_max);
    f.read("slice_points", p.slice_points);
    f.read("slice_halfwidth", p.slice_halfwidth);
    f.finish();
  }
  const std::string w = "student_fit";
  check(p.samples >= 2, w, "samples must be >= 2");
  check(p.dof > 0.0 && p.scale > 0.0, w, "dof and scale must be positive");
  check(p.distribution == "student" || p.distribution == "gaussian", w,
        "distribution must be \"student\" or \"gaussian\"");
  check(p.dof_min > 0.0 && p.dof_max > p.dof_min, w, "need 0 < dof_min < dof_max");
  check(p.slice_points >= 2 && p.slice_halfwidth > 0.0, w, "need slice_points >= 2 and slice_halfwidth > 0");
  return p;
}

// Section key holding the experiment-specific block.
const char* section_key(const std::string& experiment) {
  if (experiment == "variance") return "variance";
  if (experiment == "tomography") return "tomography";
  if (experiment == "calibration") return "calibration";
  return "student_fit";
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  Fields f(doc, "config");
  ExperimentConfig cfg;
  if (!f.has("experiment")) f.fail("missing required key \"experiment\"");
  f.read("experiment", cfg.experiment);
  f.read("seed", cfg.seed);
  f.read("output_dir", cfg.output_dir);
  cfg.solver = parse_solver(f.object("solver"));

  const auto& e = cfg.experiment;
  if (e != "variance" && e != "tomography" && e != "calibration" && e != "student-fit")
    f.fail("\"experiment\" must be one of variance, tomography, calibration, student-fit");
  const json* section = f.object(section_key(e));
  if (e == "variance") cfg.params = parse_variance(section);
  else if (e == "tomography") cfg.params = parse_tomography(section);
  else if (e == "calibration") cfg.params = parse_calibration(section);
  else cfg.params = parse_student_fit(section);
  f.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, false);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config(doc);
}

json to_json(const ExperimentConfig& cfg) {
  const SolverConfig& s = cfg.solver;
  json out{{"experiment", cfg.experiment},
           {"seed", cfg.seed},
           {"output_dir", cfg.output_dir},
           {"solver",
            {{"max_iters", s.max_iters},
             {"grad_tol", s.grad_tol},
             {"rel_grad_tol", s.rel_grad_tol},
             {"lbfgs_memory", s.lbfgs_memory},
             {"cg_tol", s.cg_tol},
             {"cg_max", s.cg_max},
             {"armijo_c1", s.armijo_c1},
             {"armijo_shrink", s.armijo_shrink},
             {"max_backtracks", s.max_backtracks},
             {"nm_tol", s.nm_tol},
             {"nm_max_iters", s.nm_max_iters}}}};
  json section;
  if (const auto* p = std::get_if<VarianceParams>(&cfg.params)) {
    section = {{"groups", p->groups},
               {"rows_per_group", p->rows_per_group},
               {"unknowns", p->unknowns},
               {"variance_center", p->variance_center},
               {"variance_offset", p->variance_offset},
               {"noise_scale", p->noise_scale},
               {"modes", p->modes}};
  } else if (const auto* p = std::get_if<TomographyParams>(&cfg.params)) {
    section = {{"nz", p->nz},
               {"nx", p->nx},
               {"spacing", p->spacing},
               {"coarse_nz", p->coarse_nz},
               {"coarse_nx", p->coarse_nx},
               {"sources", p->sources},
               {"receivers", p->receivers},
               {"noise_relative", p->noise_relative},
               {"outlier_fraction", p->outlier_fraction},
               {"outlier_min", p->outlier_min},
               {"outlier_max", p->outlier_max},
               {"truth", p->truth},
               {"modes", p->modes},
               {"dof_min", p->dof_min},
               {"dof_max", p->dof_max},
               {"histogram_bins", p->histogram_bins},
               {"influence_points", p->influence_points}};
  } else if (const auto* p = std::get_if<CalibrationParams>(&cfg.params)) {
    section = {{"groups", p->groups},
               {"rows_per_group", p->rows_per_group},
               {"unknowns", p->unknowns},
               {"alpha_min", p->alpha_min},
               {"alpha_max", p->alpha_max},
               {"offset_scale", p->offset_scale},
               {"noise_relative", p->noise_relative},
               {"outlier_fraction", p->outlier_fraction},
               {"outlier_min", p->outlier_min},
               {"outlier_max", p->outlier_max},
               {"stages", p->stages},
               {"penalties", p->penalties},
               {"student_dof", p->student_dof},
               {"calibration_tol", p->calibration_tol}};
  } else if (const auto* p = std::get_if<StudentFitParams>(&cfg.params)) {
    section = {{"samples", p->samples},
               {"dof", p->dof},
               {"scale", p->scale},
               {"distribution", p->distribution},
               {"dof_min", p->dof_min},
               {"dof_max", p->dof_max},
               {"slice_points", p->slice_points},
               {"slice_halfwidth", p->slice_halfwidth}};
  }
  out[section_key(cfg.experiment)] = section;
  return out;
}

}  // namespace varpro::experiments
