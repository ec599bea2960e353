#include <varpro/operators.hpp>

#include <varpro/rng.hpp>

#include <Eigen/QR>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <utility>

namespace varpro {

namespace {

Matrix random_normal_matrix(Index rows, Index cols, SplitMix64& rng) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = normal_draw(rng);
  return m;
}

}  // namespace

LinearOperator::LinearOperator(Index rows, Index cols, Kernel apply, Kernel adjoint)
    : rows_(rows), cols_(cols), apply_(std::move(apply)), adjoint_(std::move(adjoint)) {
  require(rows >= 0 && cols >= 0, "LinearOperator: negative dimensions");
}

LinearOperator LinearOperator::identity(Index n) {
  auto copy = [](const Vector& in, Vector& out) { out = in; };
  return {n, n, copy, copy};
}

LinearOperator LinearOperator::diagonal(Vector d) {
  auto diag = std::make_shared<const Vector>(std::move(d));
  auto kernel = [diag](const Vector& in, Vector& out) { out = diag->cwiseProduct(in); };
  return {diag->size(), diag->size(), kernel, kernel};
}

LinearOperator LinearOperator::from_dense(Matrix m) {
  auto mat = std::make_shared<const Matrix>(std::move(m));
  LinearOperator op(
      mat->rows(), mat->cols(), [mat](const Vector& in, Vector& out) { out.noalias() = *mat * in; },
      [mat](const Vector& in, Vector& out) { out.noalias() = mat->transpose() * in; });
  op.dense_ = mat;
  return op;
}

LinearOperator LinearOperator::from_sparse(SparseMatrix m) {
  m.makeCompressed();
  auto mat = std::make_shared<const SparseMatrix>(std::move(m));
  LinearOperator op(
      mat->rows(), mat->cols(), [mat](const Vector& in, Vector& out) { out = *mat * in; },
      [mat](const Vector& in, Vector& out) { out = mat->transpose() * in; });
  op.sparse_ = mat;
  return op;
}

Vector LinearOperator::apply(const Vector& x) const {
  require_same_size(x.size(), cols_, "LinearOperator::apply");
  Vector y(rows_);
  apply_(x, y);
  return y;
}

Vector LinearOperator::adjoint(const Vector& y) const {
  require_same_size(y.size(), rows_, "LinearOperator::adjoint");
  Vector x(cols_);
  adjoint_(y, x);
  return x;
}

Matrix LinearOperator::to_dense() const {
  Matrix m(rows_, cols_);
  Vector e = Vector::Zero(cols_);
  for (Index j = 0; j < cols_; ++j) {
    e[j] = 1.0;
    m.col(j) = apply(e);
    e[j] = 0.0;
  }
  return m;
}

LinearOperator compose(const LinearOperator& outer, const LinearOperator& inner) {
  require_same_size(outer.cols(), inner.rows(), "compose");
  return {outer.rows(), inner.cols(),
          [outer, inner](const Vector& in, Vector& out) { out = outer.apply(inner.apply(in)); },
          [outer, inner](const Vector& in, Vector& out) { out = inner.adjoint(outer.adjoint(in)); }};
}

AdjointTestResult adjoint_test(const LinearOperator& op, int probes, std::uint64_t seed, double tol) {
  SplitMix64 rng(seed);
  AdjointTestResult result;
  for (int p = 0; p < probes; ++p) {
    const Vector x = random_normal(op.cols(), rng());
    const Vector y = random_normal(op.rows(), rng());
    const Vector ax = op.apply(x);
    const Vector aty = op.adjoint(y);
    const double defect = std::abs(ax.dot(y) - x.dot(aty));
    const double scale = ax.norm() * y.norm() + x.norm() * aty.norm();
    const double rel = scale > 0.0 ? defect / scale : defect;
    result.max_defect = std::max(result.max_defect, rel);
  }
  result.passed = result.max_defect <= tol;
  return result;
}

Geometry crosswell_geometry(const Grid2D& grid, Index sources, Index receivers) {
  require(sources > 0 && receivers > 0, "crosswell_geometry: need at least one source and receiver");
  Geometry g;
  g.source_x = 0.0;
  g.receiver_x = grid.width();
  const auto place = [&](Index count) {
    std::vector<double> depths(static_cast<std::size_t>(count));
    const double step = grid.depth() / static_cast<double>(count);
    for (Index i = 0; i < count; ++i) depths[static_cast<std::size_t>(i)] = (static_cast<double>(i) + 0.5) * step;
    return depths;
  };
  g.source_depths = place(sources);
  g.receiver_depths = place(receivers);
  return g;
}

SparseMatrix straight_ray_matrix(const Grid2D& grid, const Geometry& geometry) {
  require(grid.nz > 0 && grid.nx > 0 && grid.spacing > 0.0, "straight_ray_matrix: invalid grid");
  const double h = grid.spacing;
  const auto inside = [&](double x, double z) {
    const double eps = 1e-9 * h;
    return x >= -eps && x <= grid.width() + eps && z >= -eps && z <= grid.depth() + eps;
  };

  std::vector<Eigen::Triplet<double>> triplets;
  std::vector<double> ts;
  Index row = 0;
  for (double zs : geometry.source_depths) {
    for (double zr : geometry.receiver_depths) {
      const double x0 = geometry.source_x, x1 = geometry.receiver_x;
      require(inside(x0, zs) && inside(x1, zr), "straight_ray_matrix: endpoint outside grid");
      const double dx = x1 - x0, dz = zr - zs;
      const double length = std::hypot(dx, dz);
      require(length > 1e-12 * h, "straight_ray_matrix: zero-length ray");

      // Parametric crossings with every grid line, Siddon style.
      ts.assign({0.0, 1.0});
      if (dx != 0.0) {
        for (Index i = 0; i <= grid.nx; ++i) {
          const double t = (static_cast<double>(i) * h - x0) / dx;
          if (t > 0.0 && t < 1.0) ts.push_back(t);
        }
      }
      if (dz != 0.0) {
        for (Index i = 0; i <= grid.nz; ++i) {
          const double t = (static_cast<double>(i) * h - zs) / dz;
          if (t > 0.0 && t < 1.0) ts.push_back(t);
        }
      }
      std::sort(ts.begin(), ts.end());
      for (std::size_t s = 0; s + 1 < ts.size(); ++s) {
        const double ta = ts[s], tb = ts[s + 1];
        if (tb - ta <= 0.0) continue;
        const double tm = 0.5 * (ta + tb);
        const Index ix = std::clamp<Index>(static_cast<Index>(std::floor((x0 + tm * dx) / h)), 0, grid.nx - 1);
        const Index iz = std::clamp<Index>(static_cast<Index>(std::floor((zs + tm * dz) / h)), 0, grid.nz - 1);
        triplets.emplace_back(row, grid.index(iz, ix), (tb - ta) * length);
      }
      ++row;
    }
  }
  SparseMatrix m(geometry.ray_count(), grid.size());
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

LinearOperator straight_ray_operator(const Grid2D& grid, const Geometry& geometry) {
  return LinearOperator::from_sparse(straight_ray_matrix(grid, geometry));
}

namespace {

// Catmull-Rom weights of fine sample i on a coarse axis of length nc.
std::vector<std::pair<Index, double>> cubic_weights_1d(Index i, Index nf, Index nc) {
  std::vector<std::pair<Index, double>> out;
  if (nc == 1) {
    out.emplace_back(0, 1.0);
    return out;
  }
  const double u = nf == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(nc - 1) / static_cast<double>(nf - 1);
  Index j = std::min<Index>(static_cast<Index>(std::floor(u)), nc - 2);
  const double t = u - static_cast<double>(j);
  const double t2 = t * t, t3 = t2 * t;
  const std::array<double, 4> w{0.5 * (-t3 + 2.0 * t2 - t), 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
                                0.5 * (-3.0 * t3 + 4.0 * t2 + t), 0.5 * (t3 - t2)};
  const auto add = [&](Index idx, double weight) {
    if (weight == 0.0) return;
    // Ghost samples: p[-1] = 2 p[0] - p[1], p[nc] = 2 p[nc-1] - p[nc-2].
    if (idx < 0) {
      out.emplace_back(0, 2.0 * weight);
      out.emplace_back(1, -weight);
    } else if (idx >= nc) {
      out.emplace_back(nc - 1, 2.0 * weight);
      out.emplace_back(nc - 2, -weight);
    } else {
      out.emplace_back(idx, weight);
    }
  };
  for (Index k = 0; k < 4; ++k) add(j - 1 + k, w[static_cast<std::size_t>(k)]);
  return out;
}

}  // namespace

SparseMatrix cubic_interp_matrix(const Grid2D& coarse, const Grid2D& fine) {
  require(coarse.nz > 0 && coarse.nx > 0 && fine.nz > 0 && fine.nx > 0, "cubic_interp_matrix: empty grid");
  require(coarse.nz <= fine.nz && coarse.nx <= fine.nx, "cubic_interp_matrix: coarse grid larger than fine grid");
  std::vector<Eigen::Triplet<double>> triplets;
  for (Index iz = 0; iz < fine.nz; ++iz) {
    const auto wz = cubic_weights_1d(iz, fine.nz, coarse.nz);
    for (Index ix = 0; ix < fine.nx; ++ix) {
      const auto wx = cubic_weights_1d(ix, fine.nx, coarse.nx);
      for (const auto& [cz, az] : wz)
        for (const auto& [cx, ax] : wx) triplets.emplace_back(fine.index(iz, ix), coarse.index(cz, cx), az * ax);
    }
  }
  SparseMatrix m(fine.size(), coarse.size());
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.prune(0.0);
  m.makeCompressed();
  return m;
}

LinearOperator cubic_interp_operator(const Grid2D& coarse, const Grid2D& fine) {
  return LinearOperator::from_sparse(cubic_interp_matrix(coarse, fine));
}

std::vector<LinearOperator> multigroup_linear_surrogate(std::uint64_t seed, Index groups, Index rows_per_group,
                                                        Index unknowns, double smin, double smax) {
  require(groups > 0 && rows_per_group > 0 && unknowns > 0, "multigroup_linear_surrogate: sizes must be positive");
  require(rows_per_group >= unknowns, "multigroup_linear_surrogate: rows per group must be >= unknowns");
  require(0.0 < smin && smin <= smax, "multigroup_linear_surrogate: invalid spectrum bounds");
  SplitMix64 root(seed);
  std::vector<LinearOperator> ops;
  ops.reserve(static_cast<std::size_t>(groups));
  for (Index g = 0; g < groups; ++g) {
    SplitMix64 rng = root.split();
    const Eigen::HouseholderQR<Matrix> qu(random_normal_matrix(rows_per_group, unknowns, rng));
    const Matrix u = qu.householderQ() * Matrix::Identity(rows_per_group, unknowns);
    const Eigen::HouseholderQR<Matrix> qv(random_normal_matrix(unknowns, unknowns, rng));
    const Matrix v = qv.householderQ();
    Vector s(unknowns);
    for (Index i = 0; i < unknowns; ++i) s[i] = smin + (smax - smin) * rng.uniform();
    ops.push_back(LinearOperator::from_dense(u * s.asDiagonal() * v.transpose()));
  }
  return ops;
}

double power_iteration_norm(const LinearOperator& op, int iterations, std::uint64_t seed) {
  Vector v = random_normal(op.cols(), seed);
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const double nv = v.norm();
    if (nv == 0.0) return 0.0;
    v /= nv;
    Vector w = op.adjoint(op.apply(v));
    lambda = v.dot(w);
    v = std::move(w);
  }
  return std::sqrt(std::max(lambda, 0.0));
}

SyntheticData corrupt_data(std::vector<Vector> clean, const NoiseModel& noise, std::uint64_t seed) {
  require(!noise.variances.empty(), "corrupt_data: at least one variance required");
  require(noise.variances.size() == 1 || noise.variances.size() == clean.size(),
          "corrupt_data: variance count must be 1 or the number of groups");
  require(noise.outlier_fraction >= 0.0 && noise.outlier_fraction <= 1.0,
          "corrupt_data: outlier fraction must be in [0, 1]");
  require(0.0 <= noise.outlier_min && noise.outlier_min <= noise.outlier_max, "corrupt_data: invalid outlier range");

  SplitMix64 root(seed);
  SyntheticData out;
  out.observed.reserve(clean.size());
  for (std::size_t g = 0; g < clean.size(); ++g) {
    SplitMix64 rng = root.split();
    const Vector& c = clean[g];
    const double variance = noise.variances.size() == 1 ? noise.variances[0] : noise.variances[g];
    require(variance >= 0.0, "corrupt_data: negative variance");
    const double sd = std::sqrt(variance);
    Vector d = c;
    if (sd > 0.0)
      for (Index i = 0; i < d.size(); ++i) d[i] += sd * normal_draw(rng);

    std::vector<Index> picked;
    const auto count = static_cast<Index>(std::lround(noise.outlier_fraction * static_cast<double>(c.size())));
    if (count > 0) {
      const double mean = c.mean();
      double scale = std::sqrt((c.array() - mean).square().mean());
      if (scale == 0.0) scale = std::sqrt(c.squaredNorm() / static_cast<double>(c.size()));
      if (scale == 0.0) scale = 1.0;
      std::vector<Index> perm(static_cast<std::size_t>(c.size()));
      for (Index i = 0; i < c.size(); ++i) perm[static_cast<std::size_t>(i)] = i;
      for (Index i = 0; i < count; ++i) {
        const Index remaining = c.size() - i;
        const Index j = i + std::min<Index>(static_cast<Index>(rng.uniform() * static_cast<double>(remaining)), remaining - 1);
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
        const Index idx = perm[static_cast<std::size_t>(i)];
        const double magnitude = scale * (noise.outlier_min + (noise.outlier_max - noise.outlier_min) * rng.uniform());
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        d[idx] = c[idx] + sign * magnitude;
        picked.push_back(idx);
      }
      std::sort(picked.begin(), picked.end());
    }
    out.observed.push_back(std::move(d));
    out.outlier_indices.push_back(std::move(picked));
  }
  out.clean = std::move(clean);
  return out;
}

SyntheticData synthesize_data(const std::vector<LinearOperator>& ops, const Vector& x_true, const NoiseModel& noise,
                              std::uint64_t seed) {
  std::vector<Vector> clean;
  clean.reserve(ops.size());
  for (const auto& op : ops) clean.push_back(op.apply(x_true));
  return corrupt_data(std::move(clean), noise, seed);
}

}  // namespace varpro
