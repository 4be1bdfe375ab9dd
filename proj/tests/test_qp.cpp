#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "aimpc/qp.hpp"
#include "qp_oracles.hpp"

using namespace aimpc;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void expect_kkt(const QpSolution& s, double tol = 1e-7) {
  EXPECT_LE(s.kkt.primal, tol);
  EXPECT_LE(s.kkt.stationarity, tol);
  EXPECT_LE(s.kkt.complementarity, tol);
  EXPECT_LE(s.kkt.dual_sign, 1e-9);
}

} // namespace

TEST(Qp, UnconstrainedSquare) {
  QuadraticProgram p(1);
  p.Q(0, 0) = 2.0;
  const auto s = solve_qp(p);
  ASSERT_EQ(s.status, QpStatus::optimal);
  EXPECT_NEAR(s.x(0), 0.0, 1e-10);
  EXPECT_NEAR(s.objective, 0.0, 1e-12);
}

TEST(Qp, EqualityConstrainedProjection) {
  // (x-1)^2 + (y-2)^2 = 1/2 x'(2I)x - [2 4]x + 5
  QuadraticProgram p(2);
  p.Q = 2.0 * Eigen::Matrix2d::Identity();
  p.q << -2.0, -4.0;
  p.constant = 5.0;
  p.add_equality(Eigen::RowVector2d(1, 1), 1.0);
  const auto s = solve_qp(p);
  ASSERT_EQ(s.status, QpStatus::optimal);
  EXPECT_NEAR(s.x(0), 0.0, 1e-9);
  EXPECT_NEAR(s.x(1), 1.0, 1e-9);
  EXPECT_NEAR(s.objective, 2.0, 1e-9);
  EXPECT_NEAR(s.nu(0), 2.0, 1e-9);
  expect_kkt(s);
}

TEST(Qp, SingleInequality) {
  QuadraticProgram p(1);
  p.Q(0, 0) = 2.0;
  p.add_inequality(Eigen::RowVectorXd::Constant(1, -1.0), -1.0);
  const auto s = solve_qp(p);
  ASSERT_EQ(s.status, QpStatus::optimal);
  EXPECT_NEAR(s.x(0), 1.0, 1e-9);
  EXPECT_NEAR(s.lambda(0), 2.0, 1e-9);
  expect_kkt(s);
}

TEST(Qp, SameProblemAsBound) {
  QuadraticProgram p(1);
  p.Q(0, 0) = 2.0;
  p.lb(0) = 1.0;
  const auto s = solve_qp(p);
  ASSERT_EQ(s.status, QpStatus::optimal);
  EXPECT_NEAR(s.x(0), 1.0, 1e-9);
  EXPECT_NEAR(s.z_lower(0), 2.0, 1e-9);
}

TEST(Qp, FixedVariablesAreEliminated) {
  QuadraticProgram p(2);
  p.Q = Eigen::Matrix2d::Identity();
  p.q << 1.0, -1.0;
  p.lb(0) = p.ub(0) = 3.0;
  p.add_inequality(Eigen::RowVector2d(1, 1), 3.5);
  const auto s = solve_qp(p);
  ASSERT_EQ(s.status, QpStatus::optimal);
  EXPECT_DOUBLE_EQ(s.x(0), 3.0);
  EXPECT_NEAR(s.x(1), 0.5, 1e-9);
  expect_kkt(s);
}

TEST(Qp, DetectsInfeasible) {
  QuadraticProgram p(2);
  p.Q = Eigen::Matrix2d::Identity();
  p.add_inequality(Eigen::RowVector2d(1, 1), -1.0);
  p.lb.setZero();
  const auto s = solve_qp(p);
  EXPECT_EQ(s.status, QpStatus::infeasible);
  EXPECT_GT(s.kkt.primal, 1e-3);
}

TEST(Qp, DetectsInfeasibleAfterFixing) {
  QuadraticProgram p(2);
  p.Q = Eigen::Matrix2d::Identity();
  p.lb << 1.0, 0.0;
  p.ub << 1.0, 1.0;
  p.add_inequality(Eigen::RowVector2d(1, 0), 0.0);
  EXPECT_EQ(solve_qp(p).status, QpStatus::infeasible);
}

TEST(Qp, DetectsUnbounded) {
  QuadraticProgram p(2);
  p.Q(0, 0) = 1.0;
  p.q << 0.0, -1.0;
  p.lb.setZero();
  const auto s = solve_qp(p);
  EXPECT_EQ(s.status, QpStatus::unbounded);
}

TEST(Qp, DegenerateLinearProgram) {
  // min -x - y  s.t. x + y <= 1, x, y in [0, 1]: a face of optima.
  QuadraticProgram p(2);
  p.q << -1.0, -1.0;
  p.lb.setZero();
  p.ub.setOnes();
  p.add_inequality(Eigen::RowVector2d(1, 1), 1.0);
  const auto s = solve_qp(p);
  ASSERT_EQ(s.status, QpStatus::optimal);
  EXPECT_NEAR(s.objective, -1.0, 1e-8);
  expect_kkt(s);
}

TEST(Qp, RejectsInvalidProblems) {
  QuadraticProgram p(2);
  p.Q(0, 0) = -1.0;
  EXPECT_THROW(solve_qp(p), std::invalid_argument);
  QuadraticProgram a(2);
  a.Q(0, 1) = 1.0;
  EXPECT_THROW(solve_qp(a), std::invalid_argument);
  QuadraticProgram b(1);
  b.lb(0) = 1.0;
  b.ub(0) = 0.0;
  EXPECT_THROW(solve_qp(b), std::invalid_argument);
  QuadraticProgram c(2);
  EXPECT_THROW(c.add_inequality(Eigen::RowVectorXd::Ones(3), 0.0), std::invalid_argument);
}

TEST(Qp, MaxIterationsReturnsIterate) {
  std::mt19937 rng(3);
  const auto p = oracle::random_feasible_qp(rng, 8, true);
  QpSettings set;
  set.max_iter = 1;
  const auto s = solve_qp(p, set);
  EXPECT_EQ(s.status, QpStatus::max_iterations);
  EXPECT_EQ(s.x.size(), 8);
}

TEST(Qp, RandomAgainstDualProjectedGradient) {
  std::mt19937 rng(20240611);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 10)(rng);
    const auto p = oracle::random_feasible_qp(rng, n, true);
    const auto s = solve_qp(p);
    ASSERT_EQ(s.status, QpStatus::optimal) << "trial " << trial;
    expect_kkt(s);
    EXPECT_NEAR(s.objective, oracle::dual_projected_gradient(p), 1e-6) << "trial " << trial;
  }
}

TEST(Qp, RandomSemidefiniteKkt) {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 10)(rng);
    auto p = oracle::random_feasible_qp(rng, n, false);
    // Box every variable so the semidefinite problem stays bounded.
    for (int j = 0; j < n; ++j) {
      if (!std::isfinite(p.lb(j))) p.lb(j) = -5.0;
      if (!std::isfinite(p.ub(j))) p.ub(j) = 5.0;
    }
    const auto s = solve_qp(p);
    ASSERT_EQ(s.status, QpStatus::optimal) << "trial " << trial;
    expect_kkt(s);
  }
}

TEST(Qp, ObjectiveScalingScalesDuals) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = oracle::random_feasible_qp(rng, 6, true);
    auto scaled = p;
    scaled.Q *= 7.5;
    scaled.q *= 7.5;
    const auto a = solve_qp(p);
    const auto b = solve_qp(scaled);
    ASSERT_EQ(a.status, QpStatus::optimal);
    ASSERT_EQ(b.status, QpStatus::optimal);
    EXPECT_LT((a.x - b.x).lpNorm<Eigen::Infinity>(), 1e-8);
    EXPECT_NEAR(b.objective, 7.5 * a.objective, 1e-8 * (1 + std::abs(b.objective)));
    EXPECT_LT((7.5 * a.lambda - b.lambda).lpNorm<Eigen::Infinity>(), 1e-6);
  }
}

TEST(Qp, DeterministicForIdenticalInput) {
  std::mt19937 rng(11);
  const auto p = oracle::random_feasible_qp(rng, 9, true);
  const auto a = solve_qp(p);
  const auto b = solve_qp(p);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.lambda, b.lambda);
}

TEST(Qp, JsonRoundTrip) {
  std::mt19937 rng(5);
  const auto p = oracle::random_feasible_qp(rng, 4, true);
  std::stringstream ss;
  write_qp_json(ss, p);
  const auto back = read_qp_json(ss);
  EXPECT_TRUE(back.Q.isApprox(p.Q, 1e-14));
  EXPECT_EQ(back.lb.size(), 4);
  for (int j = 0; j < 4; ++j) {
    EXPECT_EQ(std::isinf(back.ub(j)), std::isinf(p.ub(j)));
  }
  EXPECT_NEAR(solve_qp(back).objective, solve_qp(p).objective, 1e-9);
}
