#pragma once

#include <varpro/linalg.hpp>

#include <functional>
#include <initializer_list>

namespace testing {

inline varpro::Vector vec(std::initializer_list<double> v) {
  varpro::Vector out(static_cast<varpro::Index>(v.size()));
  varpro::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Central differences of a scalar function, independent of the library's checker.
inline varpro::Vector fd_gradient(const std::function<double(const varpro::Vector&)>& f, const varpro::Vector& x,
                                  double h = 1e-6) {
  varpro::Vector g(x.size());
  for (varpro::Index j = 0; j < x.size(); ++j) {
    varpro::Vector a = x, b = x;
    a[j] += h;
    b[j] -= h;
    g[j] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

inline double rel_diff(const varpro::Vector& a, const varpro::Vector& b) {
  const double scale = std::max(a.lpNorm<Eigen::Infinity>(), b.lpNorm<Eigen::Infinity>());
  return scale > 0.0 ? (a - b).lpNorm<Eigen::Infinity>() / scale : 0.0;
}

}  // namespace testing

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace testing {

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  varpro::Vector column(const std::string& name) const {
    std::size_t j = 0;
    while (j < header.size() && header[j] != name) ++j;
    if (j == header.size()) throw std::runtime_error("no column " + name);
    varpro::Vector out(static_cast<varpro::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<varpro::Index>(i)] = rows[i][j];
    return out;
  }
};

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

inline Csv read_csv(const std::filesystem::path& path, bool has_header = true) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Csv csv;
  std::string line;
  if (has_header && std::getline(in, line)) csv.header = split(line);
  while (std::getline(in, line)) {
    std::vector<double> row;
    for (const auto& c : split(line)) row.push_back(std::stod(c));
    csv.rows.push_back(row);
  }
  return csv;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("varpro_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
