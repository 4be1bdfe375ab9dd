#pragma once

#include <chrono>
#include <iosfwd>
#include <optional>
#include <string>

#include <Eigen/Dense>

namespace aimpc {

/// Dense convex QP:
///
///   minimize    1/2 x'Qx + q'x + constant
///   subject to  A_eq x  = b_eq
///               A_in x <= b_in
///               lb <= x <= ub          (entries may be +-infinity)
struct QuadraticProgram {
  Eigen::MatrixXd Q;
  Eigen::VectorXd q;
  double constant = 0.0;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;

  QuadraticProgram() = default;
  /// n variables, zero cost, no constraints, unbounded variables.
  explicit QuadraticProgram(Eigen::Index n);

  Eigen::Index num_vars() const { return q.size(); }

  void add_equality(const Eigen::Ref<const Eigen::RowVectorXd>& row, double rhs);
  void add_inequality(const Eigen::Ref<const Eigen::RowVectorXd>& row, double rhs);

  double objective(const Eigen::VectorXd& x) const;

  /// Throws std::invalid_argument on inconsistent dimensions, lb > ub,
  /// non-finite data, an asymmetric Q, or (when check_psd) an eigenvalue of Q
  /// below -1e-9.
  void validate(bool check_psd = true) const;
};

enum class QpStatus { optimal, infeasible, unbounded, max_iterations };

std::string to_string(QpStatus status);

struct QpSettings {
  double tol_feas = 1e-7;
  double tol_stat = 1e-7;
  double tol_comp = 1e-7;
  int max_iter = 100;
  /// Refine the interior-point answer by solving the KKT system of the
  /// identified active set; kept only if it does not worsen the residuals.
  bool polish = true;
  /// Run the eigenvalue check of QuadraticProgram::validate.
  bool check_convexity = true;
  /// Optional wall-clock cutoff; the solver returns max_iterations when hit.
  std::optional<std::chrono::steady_clock::time_point> deadline;
};

struct KktResiduals {
  double primal = 0.0;          // worst constraint or bound violation
  double stationarity = 0.0;    // |Qx + q + A_eq'nu + A_in'lambda - z_lower + z_upper|_inf
  double complementarity = 0.0; // worst |dual * slack|
  double dual_sign = 0.0;       // most negative inequality/bound dual, as a positive number
};

struct QpSolution {
  QpStatus status = QpStatus::max_iterations;
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;  // inequality duals (>= 0)
  Eigen::VectorXd nu;      // equality duals
  Eigen::VectorXd z_lower; // lower-bound duals (>= 0)
  Eigen::VectorXd z_upper; // upper-bound duals (>= 0)
  double objective = 0.0;
  int iterations = 0;
  bool timed_out = false;
  KktResiduals kkt;
};

KktResiduals kkt_residuals(const QuadraticProgram& problem, const QpSolution& solution);

/// Holds reusable workspace; one instance per thread.
class QpSolver {
public:
  explicit QpSolver(QpSettings settings = {}) : settings_(std::move(settings)) {}

  const QpSettings& settings() const { return settings_; }
  QpSettings& settings() { return settings_; }

  QpSolution solve(const QuadraticProgram& problem,
                   const Eigen::VectorXd* initial_guess = nullptr) const;

private:
  QpSettings settings_;
};

QpSolution solve_qp(const QuadraticProgram& problem, const QpSettings& settings = {});

/// Debug dump as JSON: dense matrices row-major, decimal.
void write_qp_json(std::ostream& os, const QuadraticProgram& problem);
QuadraticProgram read_qp_json(std::istream& is);

} // namespace aimpc
