#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "aimpc/miqp.hpp"
#include "miqp_oracles.hpp"

using namespace aimpc;

namespace {

MiqpConfig exact_config() {
  MiqpConfig c;
  c.gap_tol = 1e-10;
  return c;
}

void expect_integral(const MixedIntegerQP& m, const MiqpSolution& s) {
  for (auto j : m.discrete_indices()) EXPECT_NEAR(s.x(j), std::round(s.x(j)), 1e-6);
}

} // namespace

TEST(Miqp, NoDiscreteVariablesMatchesQp) {
  std::mt19937 rng(1);
  auto m = oracle::random_miqp(rng, 0, 0, 6);
  const auto a = solve_miqp(m);
  const auto b = solve_qp(m.base);
  ASSERT_EQ(a.status, MiqpStatus::optimal);
  EXPECT_NEAR(a.objective, b.objective, 1e-9);
  EXPECT_LT((a.x - b.x).lpNorm<Eigen::Infinity>(), 1e-7);
}

TEST(Miqp, ThreeBinariesMatchEnumeration) {
  std::mt19937 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = oracle::random_miqp(rng, 3, 0, 5);
    const double ref = oracle::enumerate_miqp(m);
    const auto s = solve_miqp(m, exact_config());
    ASSERT_EQ(s.status, MiqpStatus::optimal) << "trial " << trial;
    EXPECT_NEAR(s.objective, ref, 1e-6) << "trial " << trial;
    expect_integral(m, s);
  }
}

TEST(Miqp, MixedIntegersMatchEnumeration) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = oracle::random_miqp(rng, 4, 2, 8);
    const double ref = oracle::enumerate_miqp(m);
    const auto s = solve_miqp(m, exact_config());
    if (!std::isfinite(ref)) {
      EXPECT_EQ(s.status, MiqpStatus::infeasible);
      continue;
    }
    ASSERT_EQ(s.status, MiqpStatus::optimal) << "trial " << trial;
    EXPECT_NEAR(s.objective, ref, 1e-6) << "trial " << trial;
    expect_integral(m, s);
  }
}

TEST(Miqp, InfeasibleProblem) {
  MixedIntegerQP m;
  m.base = QuadraticProgram(2);
  m.base.Q = Eigen::Matrix2d::Identity();
  m.base.lb << 0, 0;
  m.base.ub << 1, 1;
  m.binary_indices = {0, 1};
  // x0 + x1 = 1.5 has no binary solution.
  m.base.add_equality(Eigen::RowVector2d(1, 1), 1.5);
  EXPECT_EQ(solve_miqp(m).status, MiqpStatus::infeasible);
}

TEST(Miqp, WarmStartSeedsIncumbent) {
  std::mt19937 rng(3);
  auto m = oracle::random_miqp(rng, 6, 0, 6);
  const auto full = solve_miqp(m, exact_config());
  ASSERT_EQ(full.status, MiqpStatus::optimal);
  IntegerAssignment ws;
  for (auto j : m.discrete_indices()) ws[j] = std::lround(full.x(j));
  MiqpConfig c = exact_config();
  c.node_limit = 0;
  const auto s = solve_miqp(m, c, {ws});
  EXPECT_EQ(s.incumbent_from_warm_start, 0);
  EXPECT_NEAR(s.objective, full.objective, 1e-9);
  EXPECT_NE(s.status, MiqpStatus::timeout_no_incumbent);
}

TEST(Miqp, NodeLimitWithoutIncumbent) {
  std::mt19937 rng(9);
  auto m = oracle::random_miqp(rng, 6, 0, 4);
  MiqpConfig c;
  c.node_limit = 0;
  EXPECT_EQ(solve_miqp(m, c).status, MiqpStatus::timeout_no_incumbent);
}

TEST(Miqp, ZeroTimeLimit) {
  std::mt19937 rng(9);
  auto m = oracle::random_miqp(rng, 6, 0, 4);
  MiqpConfig c;
  c.time_limit = 0.0;
  EXPECT_EQ(solve_miqp(m, c).status, MiqpStatus::timeout_no_incumbent);
}

TEST(Miqp, DeterministicWithoutTimeLimit) {
  std::mt19937 rng(5);
  auto m = oracle::random_miqp(rng, 7, 1, 10);
  const auto a = solve_miqp(m);
  const auto b = solve_miqp(m);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.nodes_explored, b.nodes_explored);
}

TEST(Miqp, SearchLogAndMonotoneBounds) {
  std::mt19937 rng(11);
  auto m = oracle::random_miqp(rng, 8, 0, 6);
  std::ostringstream log;
  MiqpConfig c = exact_config();
  c.log = &log;
  const auto s = solve_miqp(m, c);
  ASSERT_NE(s.status, MiqpStatus::timeout_no_incumbent);
  std::istringstream in(log.str());
  std::string line;
  double last_incumbent = std::numeric_limits<double>::infinity();
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    std::istringstream ls(line);
    std::string w;
    long id;
    int depth;
    double bound, inc;
    ls >> w >> id >> w >> depth >> w >> bound >> w >> inc;
    EXPECT_LE(inc, last_incumbent);
    last_incumbent = inc;
  }
  EXPECT_EQ(lines, s.nodes_explored);
}

TEST(Miqp, ChildBoundsNotBelowParent) {
  std::mt19937 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    auto m = oracle::random_miqp(rng, 4, 0, 4);
    const auto root = solve_qp(fix_and_relax(m, {}));
    if (root.status != QpStatus::optimal) continue;
    for (auto j : m.binary_indices) {
      for (long v : {0L, 1L}) {
        const auto child = solve_qp(fix_and_relax(m, {{j, v}}));
        if (child.status == QpStatus::optimal) {
          EXPECT_GE(child.objective, root.objective - 1e-8);
        }
      }
    }
  }
}

TEST(FixAndRelax, FoldsColumns) {
  MixedIntegerQP m;
  m.base = QuadraticProgram(3);
  m.base.Q = Eigen::Matrix3d::Identity();
  m.base.Q(0, 2) = m.base.Q(2, 0) = 0.5;
  m.base.q << 1, 2, 3;
  m.base.lb << 0, 0, -5;
  m.base.ub << 1, 1, 5;
  m.binary_indices = {0, 1};
  m.base.add_inequality(Eigen::RowVector3d(-100, 0, 1), 2.0);
  const auto relaxed = fix_and_relax(m, {});
  EXPECT_EQ(relaxed.A_in, m.base.A_in);
  const auto fixed = fix_and_relax(m, {{0, 1}});
  EXPECT_EQ(fixed.A_in(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(fixed.b_in(0), 102.0);
  EXPECT_EQ(fixed.lb(0), 1.0);
  EXPECT_EQ(fixed.ub(0), 1.0);
  // Objective of any point agrees with the original.
  Eigen::Vector3d x(1.0, 0.3, -0.7);
  EXPECT_NEAR(fixed.objective(x), m.base.objective(x), 1e-12);
  const auto full = fix_and_relax(m, {{0, 0}, {1, 1}});
  EXPECT_EQ(full.lb(1), full.ub(1));
}

TEST(FixAndRelax, RejectsBadAssignments) {
  MixedIntegerQP m;
  m.base = QuadraticProgram(2);
  m.base.lb << 0, 0;
  m.base.ub << 1, 1;
  m.binary_indices = {0};
  EXPECT_THROW(fix_and_relax(m, {{0, 2}}), std::invalid_argument);
  EXPECT_THROW(fix_and_relax(m, {{1, 0}}), std::invalid_argument);
}

TEST(Miqp, RejectsMalformedProblem) {
  MixedIntegerQP m;
  m.base = QuadraticProgram(2);
  m.binary_indices = {0};
  EXPECT_THROW(solve_miqp(m), std::invalid_argument);  // infinite bounds
  m.base.lb << 0, 0;
  m.base.ub << 1, 1;
  m.integer_indices = {0};
  EXPECT_THROW(solve_miqp(m), std::invalid_argument);  // overlap
}
