#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "aimpc/vehicle_models.hpp"

using namespace aimpc;

namespace {

// Classical RK4 on x' = Ax + Bu with u held constant.
Eigen::VectorXd rk4(const ContinuousModel& m, Eigen::VectorXd x, const Eigen::VectorXd& u,
                    double T, int steps) {
  const double h = T / steps;
  auto f = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd { return m.A * y + m.B * u; };
  for (int i = 0; i < steps; ++i) {
    const Eigen::VectorXd k1 = f(x);
    const Eigen::VectorXd k2 = f(x + 0.5 * h * k1);
    const Eigen::VectorXd k3 = f(x + 0.5 * h * k2);
    const Eigen::VectorXd k4 = f(x + h * k3);
    x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return x;
}

} // namespace

TEST(VehicleModels, EgoStructure) {
  const auto m = ego_continuous_model({});
  EXPECT_EQ(m.A.rows(), 5);
  EXPECT_EQ(m.B.cols(), 2);
  EXPECT_DOUBLE_EQ(m.A(2, 2), -1.0 / 0.275);
  EXPECT_DOUBLE_EQ(m.B(2, 0), 1.0 / 0.275);
  EXPECT_DOUBLE_EQ(m.A(4, 3), -1.091 * 1.091);
  EXPECT_DOUBLE_EQ(m.A(4, 4), -2.0 * 1.091);
  EXPECT_DOUBLE_EQ(m.B(4, 1), 1.091 * 1.091);
}

TEST(VehicleModels, DiscretizationMatchesFineRk4) {
  const auto m = ego_continuous_model({});
  const auto d = discretize(m, 0.2);
  Eigen::VectorXd x(5);
  x << 3.0, 8.0, -0.5, 1.2, 0.1;
  Eigen::VectorXd u(2);
  u << 1.5, 2.0;
  const Eigen::VectorXd ref = rk4(m, x, u, 0.2, 2000);
  EXPECT_LT((d.step(x, u) - ref).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(VehicleModels, NvDiscretizationMatchesRk4) {
  const auto m = nv_continuous_model(0.275);
  const auto d = discretize(m, 0.05);
  Eigen::VectorXd x(3);
  x << 0.0, 10.0, 1.0;
  Eigen::VectorXd u(1);
  u << -3.0;
  EXPECT_LT((d.step(x, u) - rk4(m, x, u, 0.05, 500)).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(VehicleModels, TinyStepIsNearIdentity) {
  const auto d = discretize(ego_continuous_model({}), 1e-9);
  EXPECT_LT((d.A - Eigen::MatrixXd::Identity(5, 5)).lpNorm<Eigen::Infinity>(), 1e-8);
  EXPECT_LT(d.B.lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(VehicleModels, AccelerationLagClosedForm) {
  // a(t) = u (1 - exp(-t / tau)) from rest.
  const double tau = 0.275, dt = 0.2;
  const auto d = discretize(nv_continuous_model(tau), dt);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd u(1);
  u << 2.0;
  for (int k = 1; k <= 10; ++k) {
    x = d.step(x, u);
    EXPECT_NEAR(x(2), 2.0 * (1.0 - std::exp(-k * dt / tau)), 1e-12);
  }
}

TEST(VehicleModels, CriticallyDampedLaneStepIsMonotone) {
  const auto d = discretize(ego_continuous_model({}), 0.05);
  Eigen::VectorXd x(5);
  x << 0, 0, 0, 1, 0;
  Eigen::VectorXd u(2);
  u << 0, 2;
  double prev = 1.0;
  for (int k = 0; k < 400; ++k) {
    x = d.step(x, u);
    EXPECT_GE(x(3), prev - 1e-14);
    EXPECT_LE(x(3), 2.0 + 1e-12);
    prev = x(3);
  }
  EXPECT_NEAR(x(3), 2.0, 1e-3);
}

TEST(VehicleModels, RejectsBadInputs) {
  EXPECT_THROW(discretize(ego_continuous_model({}), 0.0), std::invalid_argument);
  EXPECT_THROW(discretize(ego_continuous_model({}), -0.1), std::invalid_argument);
  EgoModelParams bad;
  bad.tau = 0.0;
  EXPECT_THROW(ego_continuous_model(bad), std::invalid_argument);
  EXPECT_THROW(nv_continuous_model(std::nan("")), std::invalid_argument);
}

TEST(VehicleModels, AdmissibleBounds) {
  const AdmissibleControlSet set;
  EXPECT_NEAR(admissible_ua_bounds(10.0, set).upper, 3.622, 1e-12);
  EXPECT_NEAR(admissible_ua_bounds(0.0, set).upper, 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(admissible_ua_bounds(5.0, set).lower, -4.0);
  // Peak where both lines meet.
  const double vc = (4.83 - 2.0) / (0.285 + 0.1208);
  EXPECT_NEAR(set.peak_upper(), 0.285 * vc + 2.0, 1e-12);
  for (double v = 0.0; v <= 40.0; v += 0.25) {
    EXPECT_LE(admissible_ua_bounds(v, set).upper, set.peak_upper() + 1e-12);
  }
}
