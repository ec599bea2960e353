#include <varpro/constraints.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace varpro {

Vector project_box(const Vector& v, const BoxSet& box) {
  require_same_size(v.size(), box.lower.size(), "project_box");
  require_same_size(v.size(), box.upper.size(), "project_box");
  return v.cwiseMax(box.lower).cwiseMin(box.upper);
}

Vector project_l1(const Vector& v, double radius) {
  require(radius > 0.0, "project_l1: radius must be positive");
  if (v.lpNorm<1>() <= radius) return v;
  std::vector<double> mags(static_cast<std::size_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) mags[static_cast<std::size_t>(i)] = std::abs(v[i]);
  std::sort(mags.begin(), mags.end(), std::greater<>());
  double cumulative = 0.0;
  double threshold = 0.0;
  for (std::size_t j = 0; j < mags.size(); ++j) {
    cumulative += mags[j];
    const double candidate = (cumulative - radius) / static_cast<double>(j + 1);
    if (mags[j] > candidate) threshold = candidate;
  }
  Vector w(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    const double shrunk = std::max(std::abs(v[i]) - threshold, 0.0);
    w[i] = std::copysign(shrunk, v[i]);
  }
  return w;
}

EllipsoidSet::EllipsoidSet(Vector diagonal, double radius) : eigenvalues_(std::move(diagonal)), radius_(radius) {
  require(radius > 0.0, "EllipsoidSet: radius must be positive");
  require((eigenvalues_.array() > 0.0).all(), "EllipsoidSet: metric must be positive definite");
}

EllipsoidSet::EllipsoidSet(const Matrix& metric, double radius) : radius_(radius) {
  require(radius > 0.0, "EllipsoidSet: radius must be positive");
  require(metric.rows() == metric.cols(), "EllipsoidSet: metric must be square");
  require(metric.rows() <= 2000, "EllipsoidSet: general metrics are limited to n <= 2000; pass the diagonal instead");
  require((metric - metric.transpose()).norm() <= 1e-12 * std::max(1.0, metric.norm()),
          "EllipsoidSet: metric must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(metric);
  require(eig.info() == Eigen::Success, "EllipsoidSet: eigendecomposition failed");
  eigenvalues_ = eig.eigenvalues();
  require((eigenvalues_.array() > 0.0).all(), "EllipsoidSet: metric must be positive definite");
  basis_ = std::make_shared<const Matrix>(eig.eigenvectors());
}

double EllipsoidSet::norm(const Vector& v) const {
  require_same_size(v.size(), dim(), "EllipsoidSet::norm");
  const Vector y = basis_ ? Vector(basis_->transpose() * v) : v;
  return std::sqrt((eigenvalues_.array() * y.array().square()).sum());
}

Vector EllipsoidSet::project(const Vector& v) const {
  require_same_size(v.size(), dim(), "EllipsoidSet::project");
  const Vector y = basis_ ? Vector(basis_->transpose() * v) : v;
  const Eigen::ArrayXd lam = eigenvalues_.array();
  const Eigen::ArrayXd ly2 = lam * y.array().square();
  const double r2 = radius_ * radius_;
  if (ly2.sum() <= r2) return v;

  // w(mu) = y / (1 + mu*lambda); phi(mu) = |w(mu)|_M^2 - r^2 is convex and decreasing.
  const auto phi = [&](double mu) { return (ly2 / (1.0 + mu * lam).square()).sum() - r2; };
  const auto dphi = [&](double mu) { return (-2.0 * lam * ly2 / (1.0 + mu * lam).cube()).sum(); };
  double lo = 0.0;
  double hi = 1.0 / lam.maxCoeff();
  while (phi(hi) > 0.0) {
    lo = hi;
    hi *= 2.0;
    require(std::isfinite(hi), "EllipsoidSet::project: multiplier bracket failed");
  }
  double mu = lo;
  for (int it = 0; it < 200 && hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * hi; ++it) {
    const double f = phi(mu);
    if (f > 0.0) lo = std::max(lo, mu);
    else hi = std::min(hi, mu);
    double next = mu - f / dphi(mu);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == mu) break;
    mu = next;
  }
  if (phi(mu) > 0.0) mu = hi;
  const Vector w = (y.array() / (1.0 + mu * lam)).matrix();
  return basis_ ? Vector(*basis_ * w) : w;
}

ConstraintSet::ConstraintSet(BoxSet box) : kind_(std::move(box)) {
  const auto& b = std::get<BoxSet>(kind_);
  require_same_size(b.lower.size(), b.upper.size(), "BoxSet");
  require((b.lower.array() <= b.upper.array()).all(), "BoxSet: lower must not exceed upper");
}

ConstraintSet::ConstraintSet(L1Ball ball) : kind_(ball) {
  require(ball.radius > 0.0, "L1Ball: radius must be positive");
}

ConstraintSet::ConstraintSet(EllipsoidSet ellipsoid) : kind_(std::move(ellipsoid)) {}

Vector ConstraintSet::project(const Vector& v) const {
  return std::visit(
      [&](const auto& set) -> Vector {
        using T = std::decay_t<decltype(set)>;
        if constexpr (std::is_same_v<T, NoConstraint>) return v;
        else if constexpr (std::is_same_v<T, BoxSet>) return project_box(v, set);
        else if constexpr (std::is_same_v<T, L1Ball>) return project_l1(v, set.radius);
        else return set.project(v);
      },
      kind_);
}

bool ConstraintSet::contains(const Vector& v, double tol) const {
  return std::visit(
      [&](const auto& set) -> bool {
        using T = std::decay_t<decltype(set)>;
        if constexpr (std::is_same_v<T, NoConstraint>) return true;
        else if constexpr (std::is_same_v<T, BoxSet>)
          return ((v - set.lower).array() >= -tol).all() && ((set.upper - v).array() >= -tol).all();
        else if constexpr (std::is_same_v<T, L1Ball>) return v.lpNorm<1>() <= set.radius + tol;
        else return set.norm(v) <= set.radius() + tol;
      },
      kind_);
}

}  // namespace varpro
