#include "aimpc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace aimpc {

using nlohmann::json;

void ActuationLagParams::validate() const {
  if (!(tau_t > 0) || !(tau_s > 0) || !(tau_a > 0)) {
    throw std::invalid_argument("ActuationLagParams: all lags must be > 0");
  }
}

std::string to_string(PlantMode mode) { return mode == PlantMode::ideal ? "ideal" : "lagged"; }

void Scenario::validate() const {
  if (!(sim_dt > 0) || !(planner_dt > 0)) throw std::invalid_argument("Scenario: dt must be > 0");
  const double ratio = planner_dt / sim_dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || std::round(ratio) < 1) {
    throw std::invalid_argument("Scenario: planner_dt must be an integer multiple of sim_dt");
  }
  if (!(duration > 0)) throw std::invalid_argument("Scenario: duration must be > 0");
  if (lanes != 2) throw std::invalid_argument("Scenario: batch runs use two lanes");
  if (!std::isfinite(obstacle_s) || !std::isfinite(v_ref)) {
    throw std::invalid_argument("Scenario: obstacle_s and v_ref must be finite");
  }
  if (deterministic && node_budget < 1) {
    throw std::invalid_argument("Scenario: node_budget must be >= 1 in deterministic mode");
  }
  lag.validate();
}

int Scenario::ticks_per_plan() const { return static_cast<int>(std::lround(planner_dt / sim_dt)); }

int Scenario::total_ticks() const { return static_cast<int>(std::lround(duration / sim_dt)); }

Scenario builtin_scenario(const std::string& id) {
  Scenario s;
  s.id = id;
  if (id == "sub1") {
    s.obstacle_s = 70.0;
  } else if (id == "sub2") {
    s.obstacle_s = 60.0;
  } else if (id == "sub3") {
    s.obstacle_s = 50.0;
  } else {
    throw std::invalid_argument("unknown scenario '" + id + "'");
  }
  return s;
}

namespace {

json ego_json(const EgoState& e) {
  return {{"s", e.s}, {"v", e.v}, {"a", e.a}, {"l", e.l}, {"r_l", e.r_l}};
}
json nv_json(const NVState& n) { return {{"s", n.s}, {"v", n.v}, {"a", n.a}}; }

EgoState ego_from(const json& j) {
  return {j.at("s").get<double>(), j.at("v").get<double>(), j.at("a").get<double>(),
          j.at("l").get<double>(), j.at("r_l").get<double>()};
}
NVState nv_from(const json& j) {
  return {j.at("s").get<double>(), j.at("v").get<double>(), j.at("a").get<double>()};
}

json scenario_json(const Scenario& s) {
  return {{"id", s.id},
          {"obstacle_s", s.obstacle_s},
          {"lanes", s.lanes},
          {"ego_init", ego_json(s.ego_init)},
          {"nv_init", nv_json(s.nv_init)},
          {"v_ref", s.v_ref},
          {"sim_dt", s.sim_dt},
          {"planner_dt", s.planner_dt},
          {"duration", s.duration},
          {"nv_policy", s.nv_policy},
          {"planner_kind", to_string(s.planner_kind)},
          {"plant", to_string(s.plant)},
          {"lag", {{"tau_t", s.lag.tau_t}, {"tau_s", s.lag.tau_s}, {"tau_a", s.lag.tau_a}}},
          {"deterministic", s.deterministic},
          {"node_budget", s.node_budget},
          {"imputation_mode", to_string(s.imputation_mode)},
          {"replay_u_nv", s.replay_u_nv}};
}

Scenario scenario_from(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("scenario: expected an object");
  Scenario s;
  for (const auto& [key, v] : j.items()) {
    if (key == "id") s.id = v.get<std::string>();
    else if (key == "obstacle_s") s.obstacle_s = v.get<double>();
    else if (key == "lanes") s.lanes = v.get<int>();
    else if (key == "ego_init") s.ego_init = ego_from(v);
    else if (key == "nv_init") s.nv_init = nv_from(v);
    else if (key == "v_ref") s.v_ref = v.get<double>();
    else if (key == "sim_dt") s.sim_dt = v.get<double>();
    else if (key == "planner_dt") s.planner_dt = v.get<double>();
    else if (key == "duration") s.duration = v.get<double>();
    else if (key == "nv_policy") s.nv_policy = v.get<std::string>();
    else if (key == "planner_kind") s.planner_kind = planner_kind_from_string(v.get<std::string>());
    else if (key == "plant") {
      const auto p = v.get<std::string>();
      if (p != "ideal" && p != "lagged") throw std::invalid_argument("scenario: bad plant '" + p + "'");
      s.plant = p == "ideal" ? PlantMode::ideal : PlantMode::lagged;
    } else if (key == "lag") {
      s.lag.tau_t = v.value("tau_t", s.lag.tau_t);
      s.lag.tau_s = v.value("tau_s", s.lag.tau_s);
      s.lag.tau_a = v.value("tau_a", s.lag.tau_a);
    } else if (key == "deterministic") s.deterministic = v.get<bool>();
    else if (key == "node_budget") s.node_budget = v.get<long>();
    else if (key == "imputation_mode") s.imputation_mode = imputation_mode_from_string(v.get<std::string>());
    else if (key == "replay_u_nv") s.replay_u_nv = v.get<std::vector<double>>();
    else throw std::invalid_argument("scenario: unknown key '" + key + "'");
  }
  s.validate();
  return s;
}

} // namespace

Scenario read_scenario_json(std::istream& is) {
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scenario: ") + e.what());
  }
  try {
    return scenario_from(j);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scenario: ") + e.what());
  }
}

void write_scenario_json(std::ostream& os, const Scenario& s) { os << scenario_json(s).dump(2) << '\n'; }

// ---------------------------------------------------------------- actuation

ThrottleLag::ThrottleLag(double tau_t, double dt) : gain_(1.0 - std::exp(-dt / tau_t)), dt_(dt) {
  if (!(tau_t > 0) || !(dt > 0)) throw std::invalid_argument("ThrottleLag: tau_t, dt must be > 0");
}

void ThrottleLag::reset(double command) { y_ = prev_ = command; }

double ThrottleLag::step(double command) {
  const double drive = command + (command - prev_) / dt_;
  y_ += gain_ * (drive - y_);
  prev_ = command;
  return y_;
}

double pedal_to_accel(double pedal, double u_a_min) {
  pedal = std::clamp(pedal, -1.0, 1.0);
  return pedal >= 0 ? 3.0 * pedal : -u_a_min * pedal;
}

double accel_to_pedal(double accel, double u_a_min) {
  return std::clamp(accel >= 0 ? accel / 3.0 : accel / -u_a_min, -1.0, 1.0);
}

NvInputDynamics::NvInputDynamics(const ActuationLagParams& p, double dt, double delta)
    : rho_a_(std::exp(-dt / p.tau_a)), rho_s_(std::exp(-dt / p.tau_s)), dt_(dt), delta_(delta) {
  p.validate();
}

double NvInputDynamics::step(double pedal, double steer) {
  throttle_ = rho_a_ * throttle_ + (1 - rho_a_) * pedal_to_accel(pedal);
  steer = std::clamp(steer, -1.0, 1.0);
  const double drive = steer + (steer - prev_steer_) / dt_;
  steer_state_ = rho_s_ * steer_state_ + (1 - rho_s_) * drive;
  prev_steer_ = steer;
  return throttle_;
}

double NvInputDynamics::lateral_offset() const {
  return 0.5 * delta_ * std::tanh(steer_state_);
}

std::vector<AlphaSample> reimpute_trace(const Trace& trace, const ImputationConfig& config) {
  ImputationConfig cfg = config;
  cfg.tie_break_alpha = AlphaWeights::equal(cfg.c);
  cfg.validate();
  const int every = trace.scenario.ticks_per_plan();
  std::vector<ObservationRecord> obs;
  std::vector<double> t;
  for (const auto& r : trace.records) {
    if (r.tick % every != 0) continue;
    obs.push_back({r.nv.s, r.nv.v, std::nan(""), 2.0, r.ego.s, r.ego.l});
    t.push_back(r.t);
  }
  if (static_cast<size_t>(cfg.r) > obs.size()) {
    throw std::invalid_argument("window length r = " + std::to_string(cfg.r) + " exceeds the trace's " +
                                std::to_string(obs.size()) + " planner-rate samples");
  }
  ImputationScheduler sched(cfg, trace.scenario.planner_dt);
  std::vector<AlphaSample> out;
  for (size_t i = 0; i < obs.size(); ++i) {
    try {
      if (auto u = sched.observe(obs[i])) out.push_back({t[i], u->alpha});
    } catch (const std::runtime_error&) {
      // Same policy as the online loop: keep the previous estimate.
    }
  }
  return out;
}

// ---------------------------------------------------------------- policies

double tracking_accel(const PolicyContext& ctx) {
  return std::clamp(1.0 * (ctx.v_ref - ctx.nv.v), -2.0, 1.5);
}

namespace {

constexpr double kYieldLookahead = 4.0; // s

std::optional<double> follow_when(const PolicyContext& ctx, double l_threshold) {
  const double rel = ctx.ego.s - ctx.nv.s;
  if (ctx.ego.l < l_threshold || rel <= 0 || rel > ctx.d_gap + 25.0) return std::nullopt;
  const double u = 0.8 * (rel - (ctx.d_gap + 3.0)) + 1.6 * (ctx.ego.v - ctx.nv.v) - 0.6 * ctx.nv.a;
  return std::clamp(u, -4.0, 1.5);
}

double with_following(const PolicyContext& ctx, double u, double l_threshold = 1.3) {
  if (auto f = follow_when(ctx, l_threshold)) return std::min(u, *f);
  return u;
}

class Pacer : public NvPolicy {
public:
  std::string name() const override { return "pacer"; }
  double step(const PolicyContext& ctx) override { return with_following(ctx, tracking_accel(ctx)); }
};

bool yield_window(const PolicyContext& ctx) {
  const double rel = ctx.ego.s - ctx.nv.s;
  const bool alongside = rel >= -ctx.d_gap && rel <= ctx.d_gap;
  const bool moving_over = ctx.ego.l > 1.05 && ctx.ego.r_l > 0.0;
  const bool boxed_in =
      ctx.obstacle_s - ctx.ego.s < std::max(kYieldLookahead * ctx.ego.v, ctx.d_gap + 15.0);
  return alongside && (moving_over || boxed_in);
}

double yield_accel(const PolicyContext& ctx) {
  const double rel = ctx.ego.s - ctx.nv.s;
  const double depth = std::clamp((ctx.d_gap - std::abs(rel)) / ctx.d_gap, 0.0, 1.0);
  return std::min(tracking_accel(ctx), -1.0 - depth);
}

// Keeps station just behind the ego while it is alongside, and backs off once
// the ego starts moving over.
double hover_accel(const PolicyContext& ctx) {
  const double rel = ctx.ego.s - ctx.nv.s;
  if (rel < -ctx.d_gap || rel > ctx.d_gap + 5.0) return tracking_accel(ctx);
  const double u = 0.8 * (ctx.ego.v - ctx.nv.v) + 0.25 * (rel - 2.0);
  return std::clamp(u, -2.0, 1.5);
}

class Yielder : public NvPolicy {
public:
  std::string name() const override { return "yielder"; }
  double step(const PolicyContext& ctx) override {
    const double u = yield_window(ctx) ? yield_accel(ctx) : hover_accel(ctx);
    return with_following(ctx, u);
  }
};

class Aggressor : public NvPolicy {
public:
  std::string name() const override { return "aggressor"; }
  double step(const PolicyContext& ctx) override {
    const double rel = ctx.ego.s - ctx.nv.s;
    double u = tracking_accel(ctx);
    if (rel >= -(ctx.d_gap + 10.0) && rel <= ctx.d_gap) u = std::min(u + 1.5, 3.0);
    return with_following(ctx, u);
  }
};

// Yields until the ego starts moving over, then contests the gap.
class Bait : public NvPolicy {
public:
  std::string name() const override { return "bait"; }
  double step(const PolicyContext& ctx) override {
    if (!triggered_ && ctx.ego.l > 1.05 && ctx.ego.r_l > 0.0) triggered_ = true;
    double u;
    if (!triggered_) {
      u = yield_window(ctx) ? yield_accel(ctx) : hover_accel(ctx);
    } else {
      u = std::clamp(1.0 * (ctx.v_ref + 4.0 - ctx.nv.v), -2.0, 3.0);
    }
    return with_following(ctx, u, 1.0 + 0.5);
  }

private:
  bool triggered_ = false;
};

class Replay : public NvPolicy {
public:
  explicit Replay(std::vector<double> u) : u_(std::move(u)) {}
  std::string name() const override { return "replay"; }
  double step(const PolicyContext&) override {
    if (u_.empty()) return 0.0;
    const double u = u_[std::min(i_, u_.size() - 1)];
    ++i_;
    return u;
  }

private:
  std::vector<double> u_;
  size_t i_ = 0;
};

class External : public NvPolicy {
public:
  External(std::shared_ptr<ExternalControl> ctl, const ActuationLagParams& lag, double dt)
      : ctl_(std::move(ctl)), dyn_(lag, dt) {}
  std::string name() const override { return "external"; }
  double step(const PolicyContext&) override {
    return dyn_.step(ctl_->pedal.load(), ctl_->steer.load());
  }
  double lateral() const { return dyn_.lateral_offset(); }

private:
  std::shared_ptr<ExternalControl> ctl_;
  NvInputDynamics dyn_;
};

} // namespace

std::optional<double> following_accel(const PolicyContext& ctx) { return follow_when(ctx, 1.3); }

std::unique_ptr<NvPolicy> make_policy(const std::string& name, const Scenario& s,
                                      std::shared_ptr<ExternalControl> external) {
  if (name == "pacer") return std::make_unique<Pacer>();
  if (name == "yielder") return std::make_unique<Yielder>();
  if (name == "aggressor") return std::make_unique<Aggressor>();
  if (name == "bait") return std::make_unique<Bait>();
  if (name == "replay") return std::make_unique<Replay>(s.replay_u_nv);
  if (name == "external") {
    if (!external) external = std::make_shared<ExternalControl>();
    return std::make_unique<External>(external, s.lag, s.sim_dt);
  }
  throw std::invalid_argument("unknown nv policy '" + name + "'");
}

// ---------------------------------------------------------------- metrics

std::vector<NudgeEvent> detect_nudge(const std::vector<double>& t, const std::vector<double>& l,
                                     double threshold, double delta) {
  if (t.size() != l.size()) throw std::invalid_argument("detect_nudge: size mismatch");
  std::vector<NudgeEvent> out;
  bool inside = false, reached = false;
  NudgeEvent ev;
  for (size_t i = 0; i < l.size(); ++i) {
    if (!inside) {
      if (l[i] > 1.0 + threshold) {
        inside = true;
        reached = false;
        ev = {t[i], t[i], l[i]};
      }
    }
    if (inside) {
      ev.peak_l = std::max(ev.peak_l, l[i]);
      if (l[i] >= 2.0 - delta) reached = true;
      if (l[i] <= 1.0 + threshold) {
        ev.t_end = t[i];
        if (!reached) out.push_back(ev);
        inside = false;
      }
    }
  }
  return out;
}

Metrics compute_metrics(const Trace& trace, double d_gap, double delta) {
  (void)d_gap;
  if (trace.records.empty()) throw std::invalid_argument("compute_metrics: empty trace");
  Metrics m;
  m.status = trace.status;
  const double n = static_cast<double>(trace.records.size());
  std::vector<double> t, l, solve;
  const double s_obs = trace.scenario.obstacle_s;
  for (const auto& r : trace.records) {
    m.v_ego_avg += r.ego.v;
    m.v_nv_avg += r.nv.v;
    t.push_back(r.t);
    l.push_back(r.ego.l);
    if (r.ego.l >= 2.0 - delta) {
      const double gap = std::abs(r.ego.s - r.nv.s);
      m.min_same_lane_gap = std::min(m.min_same_lane_gap.value_or(gap), gap);
      if (!m.lane_change_completed) {
        m.lane_change_completed = true;
        m.lane_change_time = r.t;
        m.merged_ahead = r.ego.s > r.nv.s;
      }
    }
    if (r.ego.l <= 1.0 + delta) {
      const double gap = std::abs(r.ego.s - s_obs);
      m.min_obstacle_gap = std::min(m.min_obstacle_gap.value_or(gap), gap);
    }
    m.max_slack = std::max(m.max_slack, r.slack_max);
    if (r.planner_tick) {
      ++m.planner_ticks;
      if (r.fail_safe) ++m.fail_safe_ticks;
      solve.push_back(r.solve_time);
    }
  }
  m.v_ego_avg /= n;
  m.v_nv_avg /= n;
  m.nudge_count = static_cast<int>(detect_nudge(t, l, kNudgeThreshold, delta).size());
  if (!solve.empty()) {
    m.max_solve_time = *std::max_element(solve.begin(), solve.end());
    m.mean_solve_time = std::accumulate(solve.begin(), solve.end(), 0.0) / solve.size();
    std::vector<double> sorted = solve;
    std::sort(sorted.begin(), sorted.end());
    const size_t k = sorted.size();
    m.median_solve_time = k % 2 ? sorted[k / 2] : 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]);
  }
  return m;
}

// ---------------------------------------------------------------- plant

EgoState step_plant(const EgoState& x, const EgoControl& u, const DiscreteModel& model,
                    ThrottleLag* lag) {
  const double ua = lag ? lag->step(u.u_a) : u.u_a;
  return EgoState::from(model.step(x.vec(), Eigen::Vector2d(ua, u.u_l)));
}

// ---------------------------------------------------------------- closed loop

namespace {

PlannerConfig planner_config(const Scenario& s, const RunOptions& o) {
  PlannerConfig c = o.planner;
  c.dt = s.planner_dt;
  c.ticks_per_step = s.ticks_per_plan();
  return c;
}

MiqpConfig solver_config(const Scenario& s) {
  MiqpConfig m;
  if (s.deterministic) {
    m.node_limit = s.node_budget;
  } else {
    m.time_limit = s.planner_dt;
  }
  return m;
}

EgoCostWeights weights_for(const Scenario& s, EgoCostWeights w) {
  w.v_ref = s.v_ref;
  return w;
}

} // namespace

ClosedLoop::ClosedLoop(const Scenario& scenario, const RunOptions& opts)
    : scenario_((scenario.validate(), scenario)),
      opts_(opts),
      models_(PlannerModels::make(planner_config(scenario, opts))),
      ego_tick_(discretize(ego_continuous_model({}), scenario.sim_dt)),
      nv_tick_(discretize(nv_continuous_model(EgoModelParams{}.tau), scenario.sim_dt)),
      planner_(scenario.planner_kind, weights_for(scenario, opts.weights),
               planner_config(scenario, opts), solver_config(scenario)),
      policy_(make_policy(scenario.nv_policy, scenario, opts.external)),
      ego_(scenario.ego_init),
      nv_(scenario.nv_init),
      alpha_(AlphaWeights::equal(opts.planner.c)) {
  if (scenario_.planner_kind == PlannerKind::aimpc) {
    ImputationConfig ic = opts_.imputation;
    ic.mode = scenario_.imputation_mode;
    ic.c = opts_.planner.c;
    ic.tie_break_alpha = AlphaWeights::equal(ic.c);
    scheduler_.emplace(ic, scenario_.planner_dt);
  }
  if (scenario_.plant == PlantMode::lagged) {
    lag_.emplace(scenario_.lag.tau_t, scenario_.sim_dt);
    lag_->reset(0.0);
  }
  command_ = {0.0, static_cast<int>(std::lround(ego_.l))};
  planner_.reset(command_.u_l);
  trace_.scenario = scenario_;
}

bool ClosedLoop::done() const { return tick_ >= scenario_.total_ticks() || trace_.status != "ok"; }

std::optional<PlanRequest> ClosedLoop::begin_tick() {
  if (done()) throw std::logic_error("ClosedLoop: run is finished");
  if (pending_) throw std::logic_error("ClosedLoop: tick already open");
  TraceRecord& rec = pending_.emplace();
  rec.tick = tick_;
  rec.t = time();
  rec.ego = ego_;
  rec.nv = nv_;
  if (tick_ % scenario_.ticks_per_plan() != 0) return std::nullopt;

  ++plans_;
  if (scheduler_) {
    ObservationRecord obs{nv_.s, nv_.v, std::nan(""), 2.0, ego_.s, ego_.l};
    try {
      if (auto upd = scheduler_->observe(obs)) {
        alpha_ = upd->alpha;
        trace_.imputations.push_back(*upd);
      }
    } catch (const std::exception&) {
      // Keep the previous estimate when a window cannot be imputed.
    }
  }
  return PlanRequest{tick_, ego_, nv_, {scenario_.obstacle_s, 1}, alpha_};
}

MpcStepResult ClosedLoop::plan(const PlanRequest& req) {
  return planner_.step(req.ego, req.nv, req.obstacle, req.alpha);
}

void ClosedLoop::apply_plan(const MpcStepResult& r) {
  if (!pending_) throw std::logic_error("ClosedLoop: no open tick");
  TraceRecord& rec = *pending_;
  rec.planner_tick = true;
  command_ = r.control;
  last_plan_ = r.plan;
  slack_max_ = 0.0;
  for (double e : r.plan.slack) slack_max_ = std::max(slack_max_, e);
  rec.planner_status = to_string(r.plan.status);
  rec.solve_time = scenario_.deterministic ? 0.0 : r.plan.solve_time;
  rec.nodes = r.plan.nodes;
  rec.fail_safe = r.plan.fail_safe;
  if (opts_.snapshot_every > 0 && (plans_ - 1) % opts_.snapshot_every == 0) {
    PlanSnapshot snap;
    for (const auto& e : r.plan.ego_states) {
      snap.ego_s.push_back(e.s);
      snap.ego_l.push_back(e.l);
    }
    for (const auto& n : r.plan.nv_states) snap.nv_s.push_back(n.s);
    rec.plan = std::move(snap);
  }
}

void ClosedLoop::apply_miss(double waited) {
  if (!pending_) throw std::logic_error("ClosedLoop: no open tick");
  TraceRecord& rec = *pending_;
  rec.planner_tick = true;
  rec.planner_status = "missed";
  rec.fail_safe = true;
  rec.solve_time = waited;
  command_ = fail_safe_control({ego_, nv_, {scenario_.obstacle_s, 1}, command_.u_l},
                               planner_.config());
  last_plan_.reset();
  slack_max_ = 0.0;
}

void ClosedLoop::fail_plan(const std::string& what) {
  if (!pending_) throw std::logic_error("ClosedLoop: no open tick");
  trace_.status = "planner_failure";
  pending_->planner_tick = true;
  pending_->planner_status = "error: " + what;
}

const TraceRecord& ClosedLoop::finish_tick() {
  if (!pending_) throw std::logic_error("ClosedLoop: no open tick");
  TraceRecord rec = std::move(*pending_);
  pending_.reset();
  if (trace_.status != "ok") {
    trace_.records.push_back(std::move(rec));
    return trace_.records.back();
  }
  rec.alpha = alpha_;
  rec.u_a_cmd = command_.u_a;
  rec.u_l = command_.u_l;
  rec.slack_max = slack_max_;

  const EgoState ego_before = ego_;
  ego_ = step_plant(ego_, command_, ego_tick_, lag_ ? &*lag_ : nullptr);
  rec.u_a = lag_ ? lag_->output() : command_.u_a;

  PolicyContext ctx{nv_, ego_before, scenario_.v_ref, scenario_.sim_dt, opts_.planner.d_gap, rec.t,
                    scenario_.obstacle_s};
  rec.u_nv = policy_->step(ctx);
  nv_ = NVState::from(nv_tick_.step(nv_.vec(), Eigen::VectorXd::Constant(1, rec.u_nv)));
  ++tick_;
  trace_.records.push_back(std::move(rec));
  return trace_.records.back();
}

const TraceRecord& ClosedLoop::tick() {
  if (auto req = begin_tick()) {
    try {
      apply_plan(plan(*req));
    } catch (const std::exception& e) {
      fail_plan(e.what());
    }
  }
  return finish_tick();
}

RunResult run_closed_loop(const Scenario& scenario, const RunOptions& opts) {
  ClosedLoop loop(scenario, opts);
  while (!loop.done()) loop.tick();
  RunResult out;
  out.trace = loop.trace();
  out.metrics = compute_metrics(out.trace, opts.planner.d_gap, opts.planner.delta);
  return out;
}

// ---------------------------------------------------------------- trace io

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json record_json(const TraceRecord& r) {
  json j = {{"type", "tick"},
            {"tick", r.tick},
            {"t", r.t},
            {"ego", ego_json(r.ego)},
            {"nv", nv_json(r.nv)},
            {"nv_lateral", r.nv_lateral},
            {"u_a", r.u_a},
            {"u_a_cmd", r.u_a_cmd},
            {"u_l", r.u_l},
            {"u_nv", r.u_nv},
            {"alpha", {{"p", r.alpha.alpha_p}, {"a", r.alpha.alpha_a}}},
            {"planner_tick", r.planner_tick},
            {"planner_status", r.planner_status},
            {"solve_time", r.solve_time},
            {"nodes", r.nodes},
            {"fail_safe", r.fail_safe},
            {"slack_max", r.slack_max}};
  if (r.plan) j["plan"] = {{"ego_s", r.plan->ego_s}, {"ego_l", r.plan->ego_l}, {"nv_s", r.plan->nv_s}};
  return j;
}

TraceRecord record_from(const json& j) {
  TraceRecord r;
  r.tick = j.at("tick").get<int>();
  r.t = j.at("t").get<double>();
  r.ego = ego_from(j.at("ego"));
  r.nv = nv_from(j.at("nv"));
  r.nv_lateral = j.value("nv_lateral", 0.0);
  r.u_a = j.value("u_a", 0.0);
  r.u_a_cmd = j.value("u_a_cmd", 0.0);
  r.u_l = j.value("u_l", 1);
  r.u_nv = j.value("u_nv", 0.0);
  if (j.contains("alpha")) r.alpha = {j["alpha"].at("p").get<double>(), j["alpha"].at("a").get<double>()};
  r.planner_tick = j.value("planner_tick", false);
  r.planner_status = j.value("planner_status", std::string());
  r.solve_time = j.value("solve_time", 0.0);
  r.nodes = j.value("nodes", 0L);
  r.fail_safe = j.value("fail_safe", false);
  r.slack_max = j.value("slack_max", 0.0);
  if (j.contains("plan")) {
    const auto& p = j["plan"];
    r.plan = PlanSnapshot{p.at("ego_s").get<std::vector<double>>(), p.at("ego_l").get<std::vector<double>>(),
                          p.at("nv_s").get<std::vector<double>>()};
  }
  return r;
}

} // namespace

void write_trace(std::ostream& os, const Trace& trace) {
  os << json{{"type", "header"}, {"format", "aimpc-trace"}, {"version", 1},
             {"scenario", scenario_json(trace.scenario)}}
            .dump()
     << '\n';
  size_t next_imp = 0;
  for (const auto& r : trace.records) {
    os << record_json(r).dump() << '\n';
    while (next_imp < trace.imputations.size() &&
           trace.imputations[next_imp].step * trace.scenario.ticks_per_plan() <= r.tick) {
      const auto& u = trace.imputations[next_imp++];
      os << json{{"type", "imputation"}, {"step", u.step}, {"window_hash", u.window_hash},
                 {"mode", to_string(u.mode)}, {"alpha", {{"p", u.alpha.alpha_p}, {"a", u.alpha.alpha_a}}},
                 {"objective", u.objective}}
                .dump()
         << '\n';
    }
  }
  for (; next_imp < trace.imputations.size(); ++next_imp) {
    const auto& u = trace.imputations[next_imp];
    os << json{{"type", "imputation"}, {"step", u.step}, {"window_hash", u.window_hash},
               {"mode", to_string(u.mode)}, {"alpha", {{"p", u.alpha.alpha_p}, {"a", u.alpha.alpha_a}}},
               {"objective", u.objective}}
              .dump()
       << '\n';
  }
  os << json{{"type", "footer"}, {"status", trace.status}}.dump() << '\n';
}

Trace read_trace(std::istream& is) {
  Trace trace;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        trace.scenario = scenario_from(j.at("scenario"));
        header = true;
      } else if (type == "tick") {
        trace.records.push_back(record_from(j));
      } else if (type == "imputation") {
        ImputationUpdate u;
        u.step = j.at("step").get<int>();
        u.window_hash = j.at("window_hash").get<std::uint64_t>();
        u.mode = imputation_mode_from_string(j.at("mode").get<std::string>());
        u.alpha = {j.at("alpha").at("p").get<double>(), j.at("alpha").at("a").get<double>()};
        u.objective = j.at("objective").get<double>();
        trace.imputations.push_back(u);
      } else if (type == "footer") {
        trace.status = j.at("status").get<std::string>();
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw std::runtime_error("trace line " + std::to_string(lineno) + ": missing header");
  return trace;
}

void write_metrics_json(std::ostream& os, const Metrics& m) {
  json j = {{"v_ego_avg", m.v_ego_avg},
            {"v_nv_avg", m.v_nv_avg},
            {"min_same_lane_gap", opt_json(m.min_same_lane_gap)},
            {"min_obstacle_gap", opt_json(m.min_obstacle_gap)},
            {"lane_change_completed", m.lane_change_completed},
            {"lane_change_time", opt_json(m.lane_change_time)},
            {"merged_ahead", m.merged_ahead},
            {"nudge_count", m.nudge_count},
            {"max_solve_time", m.max_solve_time},
            {"mean_solve_time", m.mean_solve_time},
            {"median_solve_time", m.median_solve_time},
            {"planner_ticks", m.planner_ticks},
            {"fail_safe_ticks", m.fail_safe_ticks},
            {"max_slack", m.max_slack},
            {"status", m.status}};
  os << j.dump(2) << '\n';
}

} // namespace aimpc
