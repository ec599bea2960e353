#pragma once

#include <varpro/linalg.hpp>
#include <varpro/rng.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace varpro {

/// Matrix-free linear map y = A x with its adjoint x = A^T y.
///
/// Copies share the underlying storage (explicit matrices are held by
/// shared_ptr), so operators are cheap to pass around by value.
class LinearOperator {
 public:
  using Kernel = std::function<void(const Vector& in, Vector& out)>;

  LinearOperator(Index rows, Index cols, Kernel apply, Kernel adjoint);

  static LinearOperator identity(Index n);
  static LinearOperator diagonal(Vector d);
  static LinearOperator from_dense(Matrix m);
  static LinearOperator from_sparse(SparseMatrix m);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }

  Vector apply(const Vector& x) const;
  Vector adjoint(const Vector& y) const;

  /// Backing sparse matrix when the operator was built from one, else nullptr.
  const SparseMatrix* sparse() const { return sparse_.get(); }
  /// Backing dense matrix when the operator was built from one, else nullptr.
  const Matrix* dense() const { return dense_.get(); }

  /// Materializes the operator column by column. Intended for small operators and tests.
  Matrix to_dense() const;

 private:
  Index rows_;
  Index cols_;
  Kernel apply_;
  Kernel adjoint_;
  std::shared_ptr<const SparseMatrix> sparse_;
  std::shared_ptr<const Matrix> dense_;
};

/// outer ∘ inner: apply = outer(inner(x)), adjoint = inner^T(outer^T(y)).
LinearOperator compose(const LinearOperator& outer, const LinearOperator& inner);

struct AdjointTestResult {
  /// Largest |<Ax,y> - <x,A^T y>| / (|Ax||y| + |x||A^T y|) over all probes.
  double max_defect = 0.0;
  bool passed = false;
};

AdjointTestResult adjoint_test(const LinearOperator& op, int probes = 10, std::uint64_t seed = 1,
                               double tol = 1e-10);

/// Cell-centred 2-D grid. Cell (iz, ix) covers [ix*h, (ix+1)*h] x [iz*h, (iz+1)*h];
/// fields are stored row-major in depth (index = iz * nx + ix).
struct Grid2D {
  Index nz = 0;
  Index nx = 0;
  double spacing = 1.0;

  Index size() const { return nz * nx; }
  Index index(Index iz, Index ix) const { return iz * nx + ix; }
  double width() const { return static_cast<double>(nx) * spacing; }
  double depth() const { return static_cast<double>(nz) * spacing; }
};

/// Cross-well acquisition: sources in a vertical well at x = source_x,
/// receivers in a vertical well at x = receiver_x.
struct Geometry {
  double source_x = 0.0;
  double receiver_x = 0.0;
  std::vector<double> source_depths;
  std::vector<double> receiver_depths;

  Index ray_count() const {
    return static_cast<Index>(source_depths.size() * receiver_depths.size());
  }
};

/// Sources on the left edge, receivers on the right edge, both equispaced at
/// cell-centre depths when the counts equal nz.
Geometry crosswell_geometry(const Grid2D& grid, Index sources, Index receivers);

/// One row per (source, receiver) pair, source-major. Entries are the lengths
/// of the straight segment inside each cell.
SparseMatrix straight_ray_matrix(const Grid2D& grid, const Geometry& geometry);
LinearOperator straight_ray_operator(const Grid2D& grid, const Geometry& geometry);

/// Separable Catmull-Rom interpolation from coarse to fine cell values. The two
/// grids span the same extent with their first and last samples aligned; ghost
/// samples beyond the edges are linear extrapolations, so linear fields are
/// reproduced exactly up to the boundary.
SparseMatrix cubic_interp_matrix(const Grid2D& coarse, const Grid2D& fine);
LinearOperator cubic_interp_operator(const Grid2D& coarse, const Grid2D& fine);

/// M dense rows x n operators A_i = U_i diag(s_i) V_i^T with orthonormal U_i, V_i and
/// s_i drawn uniformly from [smin, smax]. Deterministic in the seed.
std::vector<LinearOperator> multigroup_linear_surrogate(std::uint64_t seed, Index groups,
                                                        Index rows_per_group, Index unknowns,
                                                        double smin = 1.0, double smax = 10.0);

/// Largest singular value estimate by power iteration on A^T A.
double power_iteration_norm(const LinearOperator& op, int iterations = 200, std::uint64_t seed = 7);

struct NoiseModel {
  /// Per-group Gaussian variances; a single entry applies to every group.
  std::vector<double> variances{0.0};
  /// Fraction of entries per group replaced by outliers.
  double outlier_fraction = 0.0;
  /// Outlier offsets are uniform in [min, max] times the clean-data standard
  /// deviation, with a random sign.
  double outlier_min = 5.0;
  double outlier_max = 20.0;
};

struct SyntheticData {
  std::vector<Vector> clean;
  std::vector<Vector> observed;
  std::vector<std::vector<Index>> outlier_indices;
};

/// observed_i = clean_i + N(0, variance_i I), then round(p * N_i) entries are
/// replaced by clean value + outlier offset.
SyntheticData corrupt_data(std::vector<Vector> clean, const NoiseModel& noise, std::uint64_t seed);

SyntheticData synthesize_data(const std::vector<LinearOperator>& ops, const Vector& x_true,
                              const NoiseModel& noise, std::uint64_t seed);

}  // namespace varpro
