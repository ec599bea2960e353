#pragma once

#include <varpro/linalg.hpp>
#include <varpro/operators.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace varpro::io {

/// Writes a field as nz rows of nx comma-separated values (17 significant digits).
void write_grid_csv(const std::filesystem::path& path, const Vector& field, const Grid2D& grid);

/// One value per line, with a header line.
void write_vector_csv(const std::filesystem::path& path, const Vector& v, const std::string& header = "value");

/// Binary 8-bit PGM (P5), min-max normalized; a constant field maps to 0.
void write_pgm(const std::filesystem::path& path, const Vector& field, const Grid2D& grid);

/// Header row followed by equal-length numeric columns.
void write_columns_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const std::vector<Vector>& columns);

/// row,col,value triplets (0-based) of the stored nonzeros.
void write_triplets_csv(const std::filesystem::path& path, const SparseMatrix& m);

struct Histogram {
  std::vector<double> edges;  // bins + 1 entries
  std::vector<Index> counts;

  Index total() const;
};

/// Equal-width bins over [min(v), max(v)]; the last bin is closed, so every
/// value lands in exactly one bin.
Histogram histogram(const Vector& v, int bins);

/// Columns: bin_lo, bin_hi, count.
void write_histogram_csv(const std::filesystem::path& path, const Histogram& h);

}  // namespace varpro::io
