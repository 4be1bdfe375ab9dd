#pragma once

#include <Eigen/Dense>

namespace aimpc {

/// Longitudinal lag and lateral second-order lane model parameters.
struct EgoModelParams {
  double tau = 0.275;     // s
  double omega_n = 1.091; // rad/s
  double zeta = 1.0;
  double K = 1.0;
};

/// [s, v_s, a, l, r_l]. l is a continuous lane index (lane 1 centre = 1.0).
struct EgoState {
  double s = 0.0;
  double v = 0.0;
  double a = 0.0;
  double l = 1.0;
  double r_l = 0.0;

  Eigen::Matrix<double, 5, 1> vec() const { return {s, v, a, l, r_l}; }
  static EgoState from(const Eigen::Ref<const Eigen::VectorXd>& x) {
    return {x(0), x(1), x(2), x(3), x(4)};
  }
};

struct EgoControl {
  double u_a = 0.0; // m/s^2
  int u_l = 1;      // commanded lane
};

/// Neighbour vehicle, longitudinal only; it keeps its own lane.
struct NVState {
  double s = 0.0;
  double v = 0.0;
  double a = 0.0;

  Eigen::Vector3d vec() const { return {s, v, a}; }
  static NVState from(const Eigen::Ref<const Eigen::VectorXd>& x) { return {x(0), x(1), x(2)}; }
};

struct ContinuousModel {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
};

struct DiscreteModel {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  double dt = 0.0;

  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    return A * x + B * u;
  }
};

ContinuousModel ego_continuous_model(const EgoModelParams& p);
ContinuousModel nv_continuous_model(double tau);

/// Exact zero-order-hold discretization via the matrix exponential of the
/// augmented system [[A, B], [0, 0]] * dt. Throws std::invalid_argument for
/// dt <= 0 or non-finite model entries.
DiscreteModel discretize(const ContinuousModel& model, double dt);

/// Velocity-dependent acceleration limits:
///   u_a >= u_a_min,  u_a <= m1 v + b1,  u_a <= m2 v + b2.
struct AdmissibleControlSet {
  double u_a_min = -4.0;
  double m1 = 0.285;
  double m2 = -0.1208;
  double b1 = 2.0;
  double b2 = 4.83;

  /// Largest upper bound over all velocities (where the two lines cross).
  double peak_upper() const;
};

struct AccelBounds {
  double lower;
  double upper;
};

AccelBounds admissible_ua_bounds(double v, const AdmissibleControlSet& set);

} // namespace aimpc
