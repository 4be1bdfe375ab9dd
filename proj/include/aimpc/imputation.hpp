#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aimpc/planner.hpp"
#include "aimpc/qp.hpp"

namespace aimpc {

struct VehicleGeometry {
  double L_d = 4.5; // m
  double W_d = 2.0; // m

  void validate() const;
};

/// One observation at planner rate. a_nv may be NaN when not measured.
struct ObservationRecord {
  double s_nv = 0.0, v_nv = 0.0, a_nv = 0.0, l_nv = 2.0;
  double s_ego = 0.0, l_ego = 1.0;
};

struct ObservationWindow {
  std::vector<ObservationRecord> records;
  double dt = 0.2;

  int r() const { return static_cast<int>(records.size()); }
  /// Fills NaN accelerations from velocities and checks the window.
  void complete();
  std::uint64_t hash() const;
};

enum class ImputationMode { literal, coupled };

std::string to_string(ImputationMode mode);
ImputationMode imputation_mode_from_string(const std::string& name);

struct ImputationConfig {
  double c = 1.0;
  VehicleGeometry geometry;
  double tau = 0.275; // s
  ImputationMode mode = ImputationMode::coupled;
  int r = 6;
  int interval = 6;
  AlphaWeights tie_break_alpha;

  void validate() const;
};

struct DualEstimates {
  std::vector<double> lambda1, nu1, nu2, nu3;
};

/// Residual rows R z with z = [alpha_p, alpha_a, lambda1(r), nu1(r), nu2(r), nu3(r)].
/// The emitted QP minimises |R z|^2 subject to the sign and sum constraints.
struct ImputationProblem {
  Eigen::MatrixXd residual;
  std::vector<int> row_step;        // window step of each row
  std::vector<std::string> row_tag; // "s", "v", "a", "u", "comp"
  QuadraticProgram qp{0};
  int r = 0;

  static constexpr Eigen::Index alpha_p = 0, alpha_a = 1;
  Eigen::Index lambda(int i) const { return 2 + i; }
  Eigen::Index nu1(int i) const { return 2 + r + i; }
  Eigen::Index nu2(int i) const { return 2 + 2 * r + i; }
  Eigen::Index nu3(int i) const { return 2 + 3 * r + i; }
};

struct ImputationResult {
  AlphaWeights alpha;
  DualEstimates duals;
  double objective = 0.0;
  bool tie_broken = false;
};

/// Central differences inside, second-order one-sided at the ends (first
/// order with two samples). Throws std::invalid_argument with fewer than 2.
std::vector<double> reconstruct_accel(const std::vector<double>& v, double dt);

ImputationProblem build_imputation_qp(const ObservationWindow& window, const ImputationConfig& cfg);

/// Throws std::runtime_error (window hash in the message) if the QP fails.
ImputationResult impute_alpha(const ObservationWindow& window, const ImputationConfig& cfg);

struct ImputationUpdate {
  int step = 0;
  std::uint64_t window_hash = 0;
  ImputationMode mode = ImputationMode::coupled;
  AlphaWeights alpha;
  double objective = 0.0;
};

/// Buffers observations at planner rate and re-imputes every `interval`
/// steps once r observations exist.
class ImputationScheduler {
public:
  ImputationScheduler(ImputationConfig cfg, double dt);

  /// Records one observation; returns the new estimate when an update runs.
  std::optional<ImputationUpdate> observe(const ObservationRecord& record);

  const AlphaWeights& current() const { return alpha_; }
  int steps() const { return steps_; }
  const ImputationConfig& config() const { return cfg_; }

private:
  ImputationConfig cfg_;
  double dt_;
  std::deque<ObservationRecord> history_;
  AlphaWeights alpha_;
  int steps_ = 0;
};

} // namespace aimpc
