#include "helpers.hpp"

#include <varpro/core.hpp>
#include <varpro/nuisance.hpp>
#include <varpro/rng.hpp>
#include <varpro/testproblems.hpp>

#include <doctest.h>

#include <cmath>

using namespace varpro;
using testing::vec;

namespace {

LinearGroups small_groups(std::uint64_t seed, Index groups, Index rows, Index n) {
  LinearGroups p;
  p.ops = multigroup_linear_surrogate(seed, groups, rows, n);
  SplitMix64 rng(seed + 1);
  for (Index i = 0; i < groups; ++i) p.data.push_back(random_normal(rows, rng()) * static_cast<double>(i + 1));
  return p;
}

}  // namespace

TEST_CASE("quartic envelope") {
  ReducedObjective r = reduce(quartic_envelope_objective());
  CHECK(r.value(vec({2})) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(r.gradient(vec({2}))[0] == doctest::Approx(8.0).epsilon(1e-15));
  CHECK(r.gradient(vec({0}))[0] == 0.0);
  CHECK(check_gradient_fd(r, vec({1})).max_rel_err <= 1e-6);
  double worst = 0.0;
  for (int i = 0; i <= 600; ++i) {
    const double x = -3.0 + 0.01 * i;
    worst = std::max(worst, std::abs(r.value(vec({x})) - std::pow(x, 4) / 4.0));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("projection cache") {
  int projections = 0;
  NuisanceObjective inner = quartic_envelope_objective();
  const auto project = inner.project;
  inner.project = [&](const Vector& x, const Vector* warm) {
    ++projections;
    return project(x, warm);
  };
  ReducedObjective r(inner);
  const Vector x = vec({1.5});
  r.value(x);
  r.gradient(x);
  r.theta(x);
  CHECK(projections == 1);
  CHECK(r.projection_count() == 1);
  CHECK(r.eval_count() == 1);
  CHECK(r.grad_count() == 1);
  CHECK(r.last_theta()[0] == doctest::Approx(1.125));
  r.value(vec({1.5 + 1e-15}));
  CHECK(projections == 2);
  r.invalidate();
  r.value(x);
  CHECK(projections == 3);
}

TEST_CASE("warm start receives the previous theta") {
  std::vector<bool> had_warm;
  NuisanceObjective inner = quartic_envelope_objective();
  const auto project = inner.project;
  inner.project = [&](const Vector& x, const Vector* warm) {
    had_warm.push_back(warm != nullptr);
    return project(x, warm);
  };
  ReducedObjective r(inner);
  r.value(vec({1}));
  r.value(vec({2}));
  REQUIRE(had_warm.size() == 2);
  CHECK(!had_warm[0]);
  CHECK(had_warm[1]);
}

TEST_CASE("value equals eval at the projected theta") {
  LinearGroups p = small_groups(5, 4, 30, 6);
  NuisanceObjective inner = group_variance_objective(p);
  ReducedObjective r(inner);
  SplitMix64 rng(9);
  for (int t = 0; t < 20; ++t) {
    const Vector x = random_normal(6, rng());
    const double v = r.value(x);
    CHECK(v == inner.eval(x, inner.project(x, nullptr)));
  }
}

TEST_CASE("plain objectives with no nuisance block") {
  const Vector b = vec({1, -2, 3});
  auto f = [&](const Vector& x) { return 0.5 * x.squaredNorm() - b.dot(x); };
  auto g = [&](const Vector& x) -> Vector { return x - b; };
  ReducedObjective r(NuisanceObjective::plain(3, f, g));
  const Vector x = vec({0.5, 0.1, -1});
  CHECK(r.nuisance_dim() == 0);
  CHECK(r.value(x) == f(x));
  CHECK(r.gradient(x) == g(x));
  CHECK(check_gradient_fd(r, x).max_rel_err <= 1e-7);
}

TEST_CASE("group variance reduced gradient matches finite differences") {
  LinearGroups p = small_groups(21, 3, 12, 5);
  ReducedObjective r = reduce(group_variance_objective(p));
  const Vector x = random_normal(5, 22);
  const Vector fd = testing::fd_gradient([&](const Vector& v) { return r.value(v); }, x, 1e-5);
  CHECK(testing::rel_diff(r.gradient(x), fd) <= 1e-6);
  CHECK(check_gradient_fd(r, x).max_rel_err <= 1e-6);
}

TEST_CASE("zero residual hits the variance floor") {
  LinearGroups p = small_groups(3, 3, 10, 4);
  const Vector x_true = random_normal(4, 4);
  for (Index i = 0; i < p.groups(); ++i) p.data[i] = p.ops[i].apply(x_true);
  ReducedObjective r = reduce(group_variance_objective(p));
  const Vector& theta = r.theta(x_true);
  for (Index i = 0; i < p.groups(); ++i) CHECK(theta[i] == variance_floor(p.data[i]));
  CHECK(r.gradient(x_true).norm() == 0.0);
}

TEST_CASE("Student's t reduced gradient") {
  const LinearOperator a = LinearOperator::from_dense(Matrix::Random(100, 4));
  Vector d = random_student_t(100, 3.0, 0.5, 8);
  ReducedObjective r = reduce(student_objective(a, d));
  CHECK(check_gradient_fd(r, random_normal(4, 2) * 0.1).max_rel_err <= 1e-4);
}

TEST_CASE("gradient check reports non-finite values") {
  auto f = [](const Vector& x) { return x[0] > 0.0 ? std::log(x[0]) : std::numeric_limits<double>::quiet_NaN(); };
  auto g = [](const Vector& x) -> Vector { return vec({1.0 / x[0]}); };
  ReducedObjective r(NuisanceObjective::plain(1, f, g));
  const GradientCheckReport rep = check_gradient_fd(r, vec({1e-7}));
  REQUIRE(rep.nonfinite.size() == 1);
  CHECK(rep.nonfinite[0] == 0);
  CHECK_THROWS_AS(check_gradient_fd(r, vec({1}), 0.0), InvalidArgument);
}

TEST_CASE("KKT residual") {
  ReducedObjective q = reduce(quartic_envelope_objective());
  CHECK(kkt_residual(q, vec({0})) == 0.0);
  CHECK(kkt_residual(q, vec({1})) == doctest::Approx(1.0));

  // g = x + 0.5: the gradient points out of [0, 1] at the vertex 0.
  auto f = [](const Vector& x) { return x.sum() + 0.5 * x.size(); };
  auto g = [](const Vector& x) -> Vector { return Vector::Ones(x.size()); };
  ReducedObjective lin(NuisanceObjective::plain(2, f, g));
  const ConstraintSet box(BoxSet{Vector::Zero(2), Vector::Ones(2)});
  CHECK(kkt_residual(lin, Vector::Zero(2), box) == 0.0);
  CHECK(kkt_residual(lin, Vector::Constant(2, 0.5), box) == doctest::Approx(std::sqrt(0.5)));
  CHECK_THROWS_AS(kkt_residual(lin, Vector::Constant(2, 2.0), box), InvalidArgument);
}
