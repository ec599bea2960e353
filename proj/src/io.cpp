#include <varpro/io.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace varpro::io {

namespace {

std::ofstream open(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.precision(17);
  return out;
}

void check_grid(const Vector& field, const Grid2D& grid, const char* what) {
  require(field.size() == grid.size(), std::string(what) + ": field size does not match grid");
}

}  // namespace

void write_grid_csv(const std::filesystem::path& path, const Vector& field, const Grid2D& grid) {
  check_grid(field, grid, "write_grid_csv");
  auto out = open(path);
  for (Index iz = 0; iz < grid.nz; ++iz) {
    for (Index ix = 0; ix < grid.nx; ++ix) {
      if (ix) out << ',';
      out << field[grid.index(iz, ix)];
    }
    out << '\n';
  }
}

void write_vector_csv(const std::filesystem::path& path, const Vector& v, const std::string& header) {
  auto out = open(path);
  out << header << '\n';
  for (Index i = 0; i < v.size(); ++i) out << v[i] << '\n';
}

void write_pgm(const std::filesystem::path& path, const Vector& field, const Grid2D& grid) {
  check_grid(field, grid, "write_pgm");
  auto out = open(path, std::ios::out | std::ios::binary);
  out << "P5\n" << grid.nx << ' ' << grid.nz << "\n255\n";
  const double lo = field.size() ? field.minCoeff() : 0.0;
  const double hi = field.size() ? field.maxCoeff() : 0.0;
  const double span = hi - lo;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(field.size()));
  for (Index i = 0; i < field.size(); ++i) {
    const double t = span > 0.0 ? (field[i] - lo) / span : 0.0;
    bytes[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_columns_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const std::vector<Vector>& columns) {
  require(names.size() == columns.size(), "write_columns_csv: one name per column");
  const Index rows = columns.empty() ? 0 : columns.front().size();
  for (const auto& c : columns) require(c.size() == rows, "write_columns_csv: ragged columns");
  auto out = open(path);
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n';
  for (Index i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) out << (j ? "," : "") << columns[j][i];
    out << '\n';
  }
}

void write_triplets_csv(const std::filesystem::path& path, const SparseMatrix& m) {
  auto out = open(path);
  out << "row,col,value\n";
  for (Index r = 0; r < m.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) out << it.row() << ',' << it.col() << ',' << it.value() << '\n';
}

Index Histogram::total() const {
  Index s = 0;
  for (Index c : counts) s += c;
  return s;
}

Histogram histogram(const Vector& v, int bins) {
  require(bins > 0, "histogram: bins must be positive");
  Histogram h;
  double lo = v.size() ? v.minCoeff() : 0.0;
  double hi = v.size() ? v.maxCoeff() : 1.0;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) h.edges[static_cast<std::size_t>(b)] = lo + b * width;
  h.edges.back() = hi;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (Index i = 0; i < v.size(); ++i) {
    require(std::isfinite(v[i]), "histogram: non-finite value");
    const auto b = std::clamp(static_cast<int>(std::floor((v[i] - lo) / width)), 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& h) {
  auto out = open(path);
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    out << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
}

}  // namespace varpro::io
