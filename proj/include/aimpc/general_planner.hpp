#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aimpc/planner.hpp"

namespace aimpc {

/// Speed and acceleration weights of the neighbour vehicles.
struct GeneralCostWeights {
  double w_v = 10.0;
  double w_a = 30.0;
  /// Optional per-NV (w_v, w_a), index v - 1.
  std::vector<std::pair<double, double>> per_vehicle;

  std::pair<double, double> for_vehicle(int v) const;
  void validate() const;
};

struct GeneralVehicle {
  EgoState x;
  int u_l_prev = 1;
};

struct GeneralInputs {
  std::vector<GeneralVehicle> vehicles; // [0] is the ego
  std::vector<Obstacle> obstacles;
};

struct GeneralLayout {
  int N = 0, V = 0, L = 0, O = 0;
  std::vector<Eigen::Index> u_a, u_l;         // first index per vehicle
  std::vector<std::pair<int, int>> pairs;     // v < w
  std::vector<Eigen::Index> beta;             // first index per pair
  std::vector<Eigen::Index> beta_obs, eps;    // first index per (v, o), v * O + o
  std::vector<std::vector<Eigen::Index>> mu;  // mu[v][L - 1], first index
  Eigen::Index n = 0;
};

struct GeneralProblem {
  PlannerConfig cfg;
  GeneralInputs inputs;
  GeneralLayout layout;
  ProblemBuilder builder;
  MixedIntegerQP miqp;
  /// states[v][k][component], k = 0..N.
  std::vector<std::vector<std::vector<Affine>>> states;
};

struct GeneralPlan {
  std::vector<std::vector<EgoState>> states;     // [v][0..N]
  std::vector<std::vector<EgoControl>> controls; // [v][0..N-1]
  std::vector<std::vector<std::vector<int>>> mu; // [v][L-1][k-1]
  std::vector<std::vector<int>> beta;            // [pair][k-1]
  double slack_max = 0.0;
  double objective = 0.0;
  MiqpStatus status = MiqpStatus::timeout_no_incumbent;
  double solve_time = 0.0;
  long nodes = 0;
};

/// Multi-lane, multi-vehicle joint problem with pairwise front-back
/// indicators and per-lane membership indicators for every vehicle.
/// `alphas` is empty or holds one AlphaWeights per NV; when given, the
/// NV proximity/acceleration cost toward the ego is added. Lane bands must
/// tile the road, so cfg.delta must be 0.5. Throws std::invalid_argument.
GeneralProblem build_general(const GeneralInputs& in, const EgoCostWeights& ego_w,
                             const GeneralCostWeights& nv_w, const std::vector<AlphaWeights>& alphas,
                             const PlannerConfig& cfg, const DiscreteModel& model);

GeneralPlan decode_general(const GeneralProblem& P, const Eigen::VectorXd& z,
                           const DiscreteModel& model);

/// Lane-hold / single-switch assignments for the ego with both orderings
/// against vehicles in the target lanes.
std::vector<IntegerAssignment> general_candidates(const GeneralProblem& P);
IntegerAssignment shifted_general_assignment(const GeneralProblem& P, const GeneralPlan& prev);

struct GeneralScenario {
  std::string id = "fig3";
  GeneralInputs initial;
  int lanes = 3;
  double v_ref = 10.0;
  double duration = 12.0;
  PlannerConfig cfg;
  long node_budget = 40;
};

/// Three lanes, three vehicles, the ego's lane blocked ahead.
GeneralScenario fig3_scenario();

struct GeneralStep {
  double t = 0.0;
  std::vector<EgoState> states;
  std::vector<EgoControl> controls;
  std::vector<std::vector<int>> mu_now; // [v][L-1] at the first planned step
  MiqpStatus status = MiqpStatus::timeout_no_incumbent;
  long nodes = 0;
};

struct GeneralRun {
  std::vector<GeneralStep> steps;
  std::vector<EgoState> final_states;
  std::vector<GeneralPlan> plans;
  bool all_feasible = true;
};

/// Central receding-horizon solve; every vehicle applies its first control.
GeneralRun run_general(const GeneralScenario& s, const EgoCostWeights& ego_w = {},
                       const GeneralCostWeights& nv_w = {});

/// Smallest same-lane gap over the run, where two vehicles share lane L when
/// both positions lie strictly inside its band. nullopt if never co-lane.
std::optional<double> min_same_lane_gap(const GeneralRun& run, int lanes, double delta);

} // namespace aimpc
