#pragma once

#include <atomic>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aimpc/imputation.hpp"
#include "aimpc/planner.hpp"

namespace aimpc {

struct ActuationLagParams {
  double tau_t = 0.3;  // s, ego throttle
  double tau_s = 0.2;  // s, NV steering
  double tau_a = 0.25; // s, NV throttle

  void validate() const;
};

enum class PlantMode { ideal, lagged };

std::string to_string(PlantMode mode);

struct Scenario {
  std::string id = "custom";
  double obstacle_s = 60.0; // m
  int lanes = 2;
  EgoState ego_init{0.0, 8.0, 0.0, 1.0, 0.0};
  NVState nv_init{0.0, 8.0, 0.0};
  double v_ref = 10.0;      // m/s
  double sim_dt = 0.05;     // s
  double planner_dt = 0.2;  // s
  double duration = 30.0;   // s
  std::string nv_policy = "yielder";
  PlannerKind planner_kind = PlannerKind::aimpc;

  PlantMode plant = PlantMode::ideal;
  ActuationLagParams lag;
  bool deterministic = true;
  long node_budget = 60;    // per planner step in deterministic mode
  ImputationMode imputation_mode = ImputationMode::coupled;
  std::vector<double> replay_u_nv; // per plant tick, for the replay policy

  /// Throws std::invalid_argument.
  void validate() const;
  int ticks_per_plan() const;
  int total_ticks() const;
};

/// Subscenarios 1..3 put the obstacle at 70, 60 and 50 m.
Scenario builtin_scenario(const std::string& id);
/// Keys as in Scenario; unknown keys rejected. Throws std::invalid_argument.
Scenario read_scenario_json(std::istream& is);
void write_scenario_json(std::ostream& os, const Scenario& s);

/// Ego throttle lag with command-derivative feed-forward, one plant tick at a
/// time. The filter gain uses the exact lag factor so it stays stable for
/// tau_t < dt.
class ThrottleLag {
public:
  ThrottleLag(double tau_t, double dt);
  void reset(double command);
  double step(double command);
  double output() const { return y_; }

private:
  double gain_, dt_;
  double y_ = 0.0, prev_ = 0.0;
};

/// Pedal in [-1, 1] to acceleration: full throttle +3, full brake u_a_min.
double pedal_to_accel(double pedal, double u_a_min = -4.0);
/// Inverse of pedal_to_accel, saturating at full pedal.
double accel_to_pedal(double accel, double u_a_min = -4.0);

/// Human NV input dynamics: first-order throttle lag and the steering path
/// with command-derivative term (lateral wiggle only, bounded by delta / 2).
class NvInputDynamics {
public:
  NvInputDynamics(const ActuationLagParams& p, double dt, double delta = 0.5);
  /// Returns the realised NV acceleration command.
  double step(double pedal, double steer);
  double accel() const { return throttle_; }
  double lateral_offset() const;

private:
  double rho_a_, rho_s_, dt_, delta_;
  double throttle_ = 0.0, steer_state_ = 0.0, prev_steer_ = 0.0;
};

struct PolicyContext {
  NVState nv;
  EgoState ego;
  double v_ref = 10.0;
  double dt = 0.05;
  double d_gap = 10.0;
  double t = 0.0;
  double obstacle_s = std::numeric_limits<double>::infinity();
};

class NvPolicy {
public:
  virtual ~NvPolicy() = default;
  virtual std::string name() const = 0;
  virtual double step(const PolicyContext& ctx) = 0;
};

/// Latest-value mailbox used by the external policy.
struct ExternalControl {
  std::atomic<double> pedal{0.0};
  std::atomic<double> steer{0.0};
};

/// pacer, yielder, aggressor, bait, replay, external.
/// Throws std::invalid_argument for an unknown name.
std::unique_ptr<NvPolicy> make_policy(const std::string& name, const Scenario& s,
                                      std::shared_ptr<ExternalControl> external = nullptr);

/// Speed tracking toward v_ref, clipped to comfortable limits.
double tracking_accel(const PolicyContext& ctx);
/// Car-following response when the ego has moved into the NV lane ahead of it.
std::optional<double> following_accel(const PolicyContext& ctx);

struct PlanSnapshot {
  std::vector<double> ego_s, ego_l, nv_s;
};

struct TraceRecord {
  int tick = 0;
  double t = 0.0;
  EgoState ego;
  NVState nv;
  double nv_lateral = 0.0;
  double u_a = 0.0;     // applied (after lag in lagged mode)
  double u_a_cmd = 0.0; // planner command
  int u_l = 1;
  double u_nv = 0.0;
  AlphaWeights alpha;
  bool planner_tick = false;
  std::string planner_status;
  double solve_time = 0.0;
  long nodes = 0;
  bool fail_safe = false;
  double slack_max = 0.0; // largest slack in the applied plan
  std::optional<PlanSnapshot> plan;
};

struct Trace {
  Scenario scenario;
  std::vector<TraceRecord> records;
  std::vector<ImputationUpdate> imputations;
  std::string status = "ok";
};

struct Metrics {
  double v_ego_avg = 0.0, v_nv_avg = 0.0;
  std::optional<double> min_same_lane_gap;
  std::optional<double> min_obstacle_gap;
  bool lane_change_completed = false;
  std::optional<double> lane_change_time;
  bool merged_ahead = false;
  int nudge_count = 0;
  double max_solve_time = 0.0, mean_solve_time = 0.0, median_solve_time = 0.0;
  int planner_ticks = 0, fail_safe_ticks = 0;
  double max_slack = 0.0;
  std::string status = "ok";
};

struct NudgeEvent {
  double t_start = 0.0, t_end = 0.0, peak_l = 1.0;
};

constexpr double kNudgeThreshold = 0.15;

/// Excursions above 1 + threshold that return without reaching 2 - delta.
std::vector<NudgeEvent> detect_nudge(const std::vector<double>& t, const std::vector<double>& l,
                                     double threshold = kNudgeThreshold, double delta = 0.5);

/// Throws std::invalid_argument on an empty trace.
Metrics compute_metrics(const Trace& trace, double d_gap = 10.0, double delta = 0.5);

/// One plant tick of the ego. Ideal: exact discrete update. Lagged: u_a is
/// passed through `lag` first.
EgoState step_plant(const EgoState& x, const EgoControl& u, const DiscreteModel& model,
                    ThrottleLag* lag = nullptr);

struct RunOptions {
  EgoCostWeights weights;
  PlannerConfig planner;
  ImputationConfig imputation;
  std::shared_ptr<ExternalControl> external;
  /// Plan snapshot every n planner ticks; 0 disables.
  int snapshot_every = 1;
};

struct RunResult {
  Trace trace;
  Metrics metrics;
};

/// Deterministic closed loop. Planner failures end the run with status
/// "planner_failure" and a partial trace.
RunResult run_closed_loop(const Scenario& scenario, const RunOptions& opts = {});

struct PlanRequest {
  int tick = 0;
  EgoState ego;
  NVState nv;
  Obstacle obstacle;
  AlphaWeights alpha;
};

/// Tick-by-tick stepping for the live session.
class ClosedLoop {
public:
  ClosedLoop(const Scenario& scenario, const RunOptions& opts);

  bool done() const;
  /// Advances one plant tick and returns its record.
  const TraceRecord& tick();

  /// Split form of tick() for callers that run the planner elsewhere:
  /// begin_tick(), then at most one of apply_plan / apply_miss / fail_plan,
  /// then finish_tick(). A plan may be applied on a later tick than the one
  /// that requested it.
  std::optional<PlanRequest> begin_tick();
  /// Touches only the planner, so it may run on another thread while the
  /// plant keeps ticking.
  MpcStepResult plan(const PlanRequest& req);
  void apply_plan(const MpcStepResult& r);
  /// Missed planner deadline: fail-safe control, flagged tick.
  void apply_miss(double waited);
  void fail_plan(const std::string& what);
  const TraceRecord& finish_tick();

  const Trace& trace() const { return trace_; }
  const EgoState& ego() const { return ego_; }
  const NVState& nv() const { return nv_; }
  const AlphaWeights& alpha() const { return alpha_; }
  const std::optional<Plan>& last_plan() const { return last_plan_; }
  double time() const { return tick_ * scenario_.sim_dt; }

private:
  Scenario scenario_;
  RunOptions opts_;
  PlannerModels models_;
  DiscreteModel ego_tick_, nv_tick_;
  MpcPlanner planner_;
  std::optional<ImputationScheduler> scheduler_;
  std::unique_ptr<NvPolicy> policy_;
  std::optional<ThrottleLag> lag_;
  std::optional<NvInputDynamics> nv_input_;
  EgoState ego_;
  NVState nv_;
  AlphaWeights alpha_;
  EgoControl command_;
  std::optional<Plan> last_plan_;
  double slack_max_ = 0.0;
  int tick_ = 0;
  int plans_ = 0;
  std::optional<TraceRecord> pending_;
  Trace trace_;
};

struct AlphaSample {
  double t = 0.0;
  AlphaWeights alpha;
};

/// Offline re-imputation over a recorded trace at planner rate. Throws
/// std::invalid_argument when cfg.r exceeds the planner-rate samples.
std::vector<AlphaSample> reimpute_trace(const Trace& trace, const ImputationConfig& cfg);

/// NDJSON: a header line, one line per tick, one per imputation update.
void write_trace(std::ostream& os, const Trace& trace);
/// Throws std::runtime_error naming the offending line.
Trace read_trace(std::istream& is);
void write_metrics_json(std::ostream& os, const Metrics& m);

} // namespace aimpc
