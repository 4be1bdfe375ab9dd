#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aimpc/miqp.hpp"
#include "aimpc/problem_builder.hpp"
#include "aimpc/vehicle_models.hpp"

namespace aimpc {

struct EgoCostWeights {
  double q_v = 10.0;
  double q_a = 30.0; // state and control acceleration
  double q_da = 100.0;
  double q_dl = 1000.0; // lane position and lane command changes
  double q_slack = 1.0e4;
  double v_ref = 10.0; // m/s

  void validate() const;
};

struct AlphaWeights {
  double alpha_p = 0.5; // proximity
  double alpha_a = 0.5; // acceleration

  static AlphaWeights equal(double c) { return {0.5 * c, 0.5 * c}; }
  /// Throws std::invalid_argument unless both are >= 0 and sum to c (1e-9).
  void validate(double c) const;
};

struct PlannerConfig {
  int N = 20;
  double dt = 0.2;   // s
  double M = 1.0e4;  // m
  double d_gap = 10.0; // m
  double delta = 0.5;  // lane units
  int L_max = 2;
  AdmissibleControlSet admissible;
  double c = 1.0; // alpha normalisation
  /// Adds gap rows at the sample before entering (and after leaving) a lane,
  /// and exact rows at the plant ticks of the first interval, so the
  /// executed motion keeps the gap between samples as well.
  bool guard_intersample = true;
  int ticks_per_step = 4;

  void validate() const;
};

struct Obstacle {
  double s = 70.0; // m, stationary
  int lane = 1;
};

struct PlannerModels {
  DiscreteModel ego, nv;           // at dt
  DiscreteModel ego_tick, nv_tick; // at dt / ticks_per_step

  static PlannerModels make(const PlannerConfig& cfg, const EgoModelParams& params = {});
};

enum class PlannerKind { aimpc, joint_fixed, baseline_cv };

std::string to_string(PlannerKind kind);
/// Accepts "aimpc", "joint_fixed", "baseline_cv"; throws std::invalid_argument.
PlannerKind planner_kind_from_string(const std::string& name);

struct PlannerInputs {
  EgoState ego;
  NVState nv;
  Obstacle obstacle;
  int u_l_prev = 1; // lane command applied at the previous step
};

/// First index of each variable block; u_nv is -1 for the baseline.
struct PlannerLayout {
  int N = 0;
  Eigen::Index u_a = 0, u_l = 0, u_nv = -1, eps = 0, beta_nv = 0, beta_obs = 0, mu1 = 0, mu2 = 0;
  Eigen::Index n = 0;
};

/// Per horizon step k = 1..N, stored at index k-1.
struct BinaryAssignment {
  std::vector<int> beta_nv, beta_obs, mu1, mu2;
};

struct PlannerProblem {
  PlannerKind kind = PlannerKind::aimpc;
  PlannerConfig cfg;
  PlannerInputs inputs;
  AlphaWeights alpha;
  PlannerLayout layout;
  ProblemBuilder builder;
  MixedIntegerQP miqp;
  /// Predicted lane position l(k), k = 0..N, as affine functions of the
  /// decision vector (depends on u_l only).
  std::vector<Affine> lane;
  /// Lane position at the plant ticks inside the first interval.
  std::vector<Affine> lane_ticks;
};

struct Plan {
  std::vector<EgoState> ego_states;   // 0..N
  std::vector<EgoControl> ego_controls; // 0..N-1
  std::vector<NVState> nv_states;     // 0..N
  std::vector<double> nv_controls;    // 0..N-1; empty for the baseline
  std::vector<double> slack;          // 0..N; slack[0] = 0
  BinaryAssignment binaries;
  double objective = 0.0;
  MiqpStatus status = MiqpStatus::timeout_no_incumbent;
  double solve_time = 0.0; // s
  long nodes = 0;
  bool fail_safe = false;
};

PlannerProblem build_aimpc(const PlannerInputs& in, const AlphaWeights& alpha,
                           const EgoCostWeights& w, const PlannerConfig& cfg,
                           const PlannerModels& models);
PlannerProblem build_joint_fixed_alpha(const PlannerInputs& in, const EgoCostWeights& w,
                                       const PlannerConfig& cfg, const PlannerModels& models);
PlannerProblem build_baseline_cv(const PlannerInputs& in, const EgoCostWeights& w,
                                 const PlannerConfig& cfg, const PlannerModels& models);
PlannerProblem build_planner(PlannerKind kind, const PlannerInputs& in, const AlphaWeights& alpha,
                             const EgoCostWeights& w, const PlannerConfig& cfg,
                             const PlannerModels& models);

/// Constant-velocity NV positions s(k) = s0 + k dt v0, k = 0..N.
std::vector<double> constant_velocity_positions(const NVState& nv, int N, double dt);

Plan decode_plan(const PlannerProblem& problem, const Eigen::VectorXd& z,
                 const PlannerModels& models);

/// The integer assignment of `previous` moved one step earlier, last step
/// repeated.
IntegerAssignment shifted_assignment(const PlannerProblem& problem, const Plan& previous);

/// Lane-switch-time enumeration: for every switch step (and no switch) and
/// both NV orderings, the lane indicators implied by the lane response.
std::vector<IntegerAssignment> candidate_assignments(const PlannerProblem& problem);

struct MpcStepResult {
  EgoControl control;
  Plan plan;
};

/// Builds the chosen problem, probes the shifted previous assignment and the
/// candidates, solves, and returns the first control. When the solver has no
/// incumbent the fail-safe control (hold lane, comfort braking) is returned
/// with plan.fail_safe set.
MpcStepResult mpc_step(const Plan* previous, const PlannerInputs& in, const AlphaWeights& alpha,
                       PlannerKind kind, const EgoCostWeights& w, const PlannerConfig& cfg,
                       const PlannerModels& models, const MiqpConfig& solver);

EgoControl fail_safe_control(const PlannerInputs& in, const PlannerConfig& cfg);

/// Receding-horizon wrapper that remembers the previous plan and lane command.
class MpcPlanner {
public:
  MpcPlanner(PlannerKind kind, EgoCostWeights w, PlannerConfig cfg, MiqpConfig solver,
             EgoModelParams params = {});

  MpcStepResult step(const EgoState& ego, const NVState& nv, const Obstacle& obstacle,
                     const AlphaWeights& alpha);

  PlannerKind kind() const { return kind_; }
  const PlannerConfig& config() const { return cfg_; }
  const EgoCostWeights& weights() const { return w_; }
  const std::optional<Plan>& previous_plan() const { return previous_; }
  int lane_command() const { return u_l_prev_; }
  void reset(int lane_command = 1);

private:
  PlannerKind kind_;
  EgoCostWeights w_;
  PlannerConfig cfg_;
  MiqpConfig solver_;
  PlannerModels models_;
  std::optional<Plan> previous_;
  int u_l_prev_ = 1;
};

} // namespace aimpc
