#include "aimpc/vehicle_models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

namespace aimpc {

namespace {

void require_positive_finite(double value, const char* name) {
  if (!std::isfinite(value) || value <= 0.0) {
    throw std::invalid_argument(std::string("model parameter '") + name +
                                "' must be positive and finite");
  }
}

} // namespace

ContinuousModel ego_continuous_model(const EgoModelParams& p) {
  require_positive_finite(p.tau, "tau");
  require_positive_finite(p.omega_n, "omega_n");
  require_positive_finite(p.zeta, "zeta");
  require_positive_finite(p.K, "K");

  ContinuousModel m;
  m.A = Eigen::MatrixXd::Zero(5, 5);
  m.B = Eigen::MatrixXd::Zero(5, 2);
  m.A(0, 1) = 1.0;
  m.A(1, 2) = 1.0;
  m.A(2, 2) = -1.0 / p.tau;
  m.A(3, 4) = 1.0;
  m.A(4, 3) = -p.omega_n * p.omega_n;
  m.A(4, 4) = -2.0 * p.zeta * p.omega_n;
  m.B(2, 0) = 1.0 / p.tau;
  m.B(4, 1) = p.K * p.omega_n * p.omega_n;
  return m;
}

ContinuousModel nv_continuous_model(double tau) {
  require_positive_finite(tau, "tau");
  ContinuousModel m;
  m.A = Eigen::MatrixXd::Zero(3, 3);
  m.B = Eigen::MatrixXd::Zero(3, 1);
  m.A(0, 1) = 1.0;
  m.A(1, 2) = 1.0;
  m.A(2, 2) = -1.0 / tau;
  m.B(2, 0) = 1.0 / tau;
  return m;
}

DiscreteModel discretize(const ContinuousModel& model, double dt) {
  if (!std::isfinite(dt) || dt <= 0.0) {
    throw std::invalid_argument("discretize: dt must be positive and finite");
  }
  const auto n = model.A.rows();
  const auto m = model.B.cols();
  if (model.A.cols() != n || model.B.rows() != n) {
    throw std::invalid_argument("discretize: inconsistent model dimensions");
  }
  if (!model.A.allFinite() || !model.B.allFinite()) {
    throw std::invalid_argument("discretize: non-finite model entries");
  }

  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = model.A * dt;
  aug.topRightCorner(n, m) = model.B * dt;
  const Eigen::MatrixXd e = aug.exp();

  DiscreteModel d;
  d.A = e.topLeftCorner(n, n);
  d.B = e.topRightCorner(n, m);
  d.dt = dt;
  return d;
}

double AdmissibleControlSet::peak_upper() const {
  // m1 > 0 > m2: the two lines cross at a single velocity.
  const double v_cross = (b2 - b1) / (m1 - m2);
  return m1 * v_cross + b1;
}

AccelBounds admissible_ua_bounds(double v, const AdmissibleControlSet& set) {
  return {set.u_a_min, std::min(set.m1 * v + set.b1, set.m2 * v + set.b2)};
}

} // namespace aimpc
