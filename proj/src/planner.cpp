#include "aimpc/planner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aimpc {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string idx(const char* name, int k) { return std::string(name) + "[" + std::to_string(k) + "]"; }

void require_finite(const PlannerInputs& in) {
  const bool ok = in.ego.vec().allFinite() && in.nv.vec().allFinite() &&
                  std::isfinite(in.obstacle.s);
  if (!ok) throw std::invalid_argument("planner: non-finite input state");
}

// Lane-membership indicators implied by a lane position.
int in_lane_1(double l, double delta) { return l <= 2.0 - delta + 1e-9 ? 1 : 0; }
int in_lane_2(double l, double delta) { return l >= 1.0 + delta - 1e-9 ? 1 : 0; }

PlannerProblem build_common(PlannerKind kind, const PlannerInputs& in, const AlphaWeights& alpha,
                            const EgoCostWeights& w, const PlannerConfig& cfg,
                            const PlannerModels& models) {
  cfg.validate();
  w.validate();
  if (kind != PlannerKind::baseline_cv) alpha.validate(cfg.c);
  require_finite(in);
  if (cfg.L_max != 2) throw std::invalid_argument("planner: the two-vehicle builders need L_max = 2");
  if (in.obstacle.lane != 1 && in.obstacle.lane != 2) {
    throw std::invalid_argument("planner: obstacle lane must be 1 or 2");
  }

  PlannerProblem P;
  P.kind = kind;
  P.cfg = cfg;
  P.inputs = in;
  P.alpha = alpha;
  const int N = cfg.N;
  const bool interactive = kind != PlannerKind::baseline_cv;
  const double M = cfg.M;
  const double dg = cfg.d_gap;
  const double delta = cfg.delta;
  const auto& adm = cfg.admissible;
  ProblemBuilder& b = P.builder;
  PlannerLayout& L = P.layout;
  L.N = N;

  L.u_a = b.num_vars();
  for (int i = 0; i < N; ++i) b.add_variable(idx("u_a", i), adm.u_a_min, adm.peak_upper());
  L.u_l = b.num_vars();
  for (int i = 0; i < N; ++i)
    b.add_variable(idx("u_l", i), 1.0, cfg.L_max, VarKind::integer, 2 * N + i);
  if (interactive) {
    L.u_nv = b.num_vars();
    for (int i = 0; i < N; ++i) b.add_variable(idx("u_nv", i), adm.u_a_min, adm.peak_upper());
  }
  L.eps = b.num_vars();
  for (int k = 1; k <= N; ++k) b.add_variable(idx("eps", k), 0.0, kInf);
  L.beta_nv = b.num_vars();
  for (int k = 1; k <= N; ++k) b.add_variable(idx("beta_nv", k), 0, 1, VarKind::binary, N + k);
  L.beta_obs = b.num_vars();
  for (int k = 1; k <= N; ++k) b.add_variable(idx("beta_obs", k), 0, 1, VarKind::binary, N + k);
  L.mu1 = b.num_vars();
  for (int k = 1; k <= N; ++k) b.add_variable(idx("mu1", k), 0, 1, VarKind::binary, k);
  L.mu2 = b.num_vars();
  for (int k = 1; k <= N; ++k) b.add_variable(idx("mu2", k), 0, 1, VarKind::binary, k);
  L.n = b.num_vars();

  auto ua = [&](int i) { return b.var(L.u_a + i); };
  auto ul = [&](int i) { return b.var(L.u_l + i); };
  auto unv = [&](int i) { return b.var(L.u_nv + i); };
  auto eps = [&](int k) { return b.var(L.eps + k - 1); };
  auto beta = [&](int k) { return b.var(L.beta_nv + k - 1); };
  auto beta_o = [&](int k) { return b.var(L.beta_obs + k - 1); };
  auto mu1 = [&](int k) { return b.var(L.mu1 + k - 1); };
  auto mu2 = [&](int k) { return b.var(L.mu2 + k - 1); };

  // Condensed predictions.
  std::vector<StateExpr> ego{constant_state(b, in.ego.vec())};
  for (int i = 0; i < N; ++i) ego.push_back(propagate(models.ego, ego.back(), {ua(i), ul(i)}));
  std::vector<StateExpr> nv;
  std::vector<double> s_cv;
  if (interactive) {
    nv.push_back(constant_state(b, in.nv.vec()));
    for (int i = 0; i < N; ++i) nv.push_back(propagate(models.nv, nv.back(), {unv(i)}));
  } else {
    s_cv = constant_velocity_positions(in.nv, N, cfg.dt);
  }
  auto s_ego = [&](int k) { return ego[k][0]; };
  auto s_nv = [&](int k) { return interactive ? nv[k][0] : b.constant(s_cv[k]); };
  for (int k = 0; k <= N; ++k) P.lane.push_back(ego[k][3]);

  // Ego cost.
  for (int i = 1; i <= N; ++i) {
    b.add_square(w.q_v, ego[i][1] - w.v_ref, idx("q_v", i));
    b.add_square(w.q_a, ego[i][2], idx("q_a_state", i));
    b.add_square(w.q_da, ego[i][2] - ego[i - 1][2], idx("q_da", i));
    b.add_square(w.q_dl, ego[i][3] - ego[i - 1][3], idx("q_dl_l", i));
  }
  for (int i = 0; i < N; ++i) {
    b.add_square(w.q_a, ua(i), idx("q_a_control", i));
    const Affine prev = i == 0 ? b.constant(in.u_l_prev) : ul(i - 1);
    b.add_square(w.q_dl, ul(i) - prev, idx("q_dl_ul", i));
  }
  for (int k = 1; k <= N; ++k) b.add_linear(w.q_slack, eps(k), idx("q_slack", k));

  // Neighbour cost.
  if (interactive) {
    for (int i = 1; i <= N; ++i) {
      b.add_square(alpha.alpha_p, nv[i][0] - ego[i][0], idx("alpha_p", i));
      b.add_square(alpha.alpha_a, nv[i][2], idx("alpha_a_state", i));
      b.add_square(alpha.alpha_a, nv[i][2] - nv[i - 1][2], idx("alpha_a_da", i));
    }
    for (int i = 0; i < N; ++i) b.add_square(alpha.alpha_a, unv(i), idx("alpha_a_control", i));
  }

  const double s_obs = in.obstacle.s;
  auto mu_obs = [&](int k) { return in.obstacle.lane == 1 ? mu1(k) : mu2(k); };
  auto mu_nv = [&](int k) { return mu2(k); };

  auto nv_gap_rows = [&](const Affine& se, const Affine& sn, int k, const Affine& gate,
                         const std::string& suffix) {
    b.add_ge(se - sn - M * beta(k) - M * gate, dg - 2 * M, "4a" + suffix);
    b.add_ge(sn - se + M * beta(k) - M * gate, dg - M, "4b" + suffix);
  };
  auto obs_gap_rows = [&](const Affine& se, int k, const Affine& gate, const std::string& suffix) {
    b.add_ge(se - s_obs + eps(k) - M * beta_o(k) - M * gate, dg - 2 * M, "5a" + suffix);
    b.add_ge(s_obs - se + eps(k) + M * beta_o(k) - M * gate, dg - M, "5b" + suffix);
  };

  for (int k = 1; k <= N; ++k) {
    const std::string at = "[" + std::to_string(k) + "]";
    nv_gap_rows(s_ego(k), s_nv(k), k, mu_nv(k), at);
    obs_gap_rows(s_ego(k), k, mu_obs(k), at);
    const Affine& l = ego[k][3];
    b.add_le(l + M * mu1(k), 2 - delta + M, "6a" + at);
    b.add_le(l - M * mu2(k), 1 + delta, "6b" + at);
    b.add_ge(l + M * mu1(k), 2 - delta, "6c" + at);
    b.add_ge(l - M * mu2(k), 1 + delta - M, "6d" + at);
    const int i = k - 1;
    b.add_ge(ua(i), adm.u_a_min, "7a" + at);
    b.add_le(ua(i) - adm.m1 * ego[i][1], adm.b1, "7b" + at);
    b.add_le(ua(i) - adm.m2 * ego[i][1], adm.b2, "7c" + at);
  }

  if (cfg.guard_intersample) {
    const double l0 = in.ego.l;
    const int obs_lane_now =
        in.obstacle.lane == 1 ? in_lane_1(l0, delta) : in_lane_2(l0, delta);
    for (int k = 1; k <= N; ++k) {
      const std::string at = "[" + std::to_string(k) + "]";
      // Entering the NV lane at k: the gap must already hold at k-1.
      nv_gap_rows(s_ego(k - 1), s_nv(k - 1), k, mu_nv(k), "_entry" + at);
      // In the obstacle lane at k-1: the gap must still hold at k.
      const Affine gate = k == 1 ? b.constant(obs_lane_now) : mu_obs(k - 1);
      obs_gap_rows(s_ego(k), k, gate, "_exit" + at);
    }
    // Plant ticks inside the first interval.
    StateExpr xe = constant_state(b, in.ego.vec());
    StateExpr xn = interactive ? constant_state(b, in.nv.vec()) : StateExpr{};
    const double h = cfg.dt / cfg.ticks_per_step;
    for (int j = 1; j < cfg.ticks_per_step; ++j) {
      const std::string at = "[" + std::to_string(j) + "]";
      xe = propagate(models.ego_tick, xe, {ua(0), ul(0)});
      Affine sn;
      if (interactive) {
        xn = propagate(models.nv_tick, xn, {unv(0)});
        sn = xn[0];
      } else {
        sn = b.constant(in.nv.s + j * h * in.nv.v);
      }
      P.lane_ticks.push_back(xe[3]);
      nv_gap_rows(xe[0], sn, 1, mu_nv(1), "_tick" + at);
      if (obs_lane_now) obs_gap_rows(xe[0], 1, b.constant(1.0), "_tick" + at);
      obs_gap_rows(xe[0], 1, mu_obs(1), "_tick_next" + at);
      b.add_le(xe[3] - M * mu2(1), 1 + delta, "6b_tick" + at);
    }
  }

  P.miqp = b.build();
  return P;
}

} // namespace

void EgoCostWeights::validate() const {
  for (double v : {q_v, q_a, q_da, q_dl, q_slack}) {
    if (!std::isfinite(v) || v < 0) throw std::invalid_argument("EgoCostWeights: weights must be >= 0");
  }
  if (!std::isfinite(v_ref)) throw std::invalid_argument("EgoCostWeights: v_ref must be finite");
}

void AlphaWeights::validate(double c) const {
  if (!std::isfinite(alpha_p) || !std::isfinite(alpha_a) || alpha_p < 0 || alpha_a < 0 ||
      std::abs(alpha_p + alpha_a - c) > 1e-9) {
    throw std::invalid_argument("AlphaWeights: need alpha_p, alpha_a >= 0 with alpha_p + alpha_a = c");
  }
}

void PlannerConfig::validate() const {
  if (N < 1) throw std::invalid_argument("PlannerConfig: N must be >= 1");
  if (!(dt > 0)) throw std::invalid_argument("PlannerConfig: dt must be > 0");
  if (!(delta > 0 && delta <= 0.5)) throw std::invalid_argument("PlannerConfig: need 0 < delta <= 0.5");
  if (L_max < 2) throw std::invalid_argument("PlannerConfig: L_max must be >= 2");
  if (!(d_gap > 0)) throw std::invalid_argument("PlannerConfig: d_gap must be > 0");
  if (!(M > d_gap + 40.0 * N * dt)) {
    throw std::invalid_argument("PlannerConfig: M must exceed d_gap plus worst-case horizon travel");
  }
  if (!(c > 0)) throw std::invalid_argument("PlannerConfig: c must be > 0");
  if (ticks_per_step < 1) throw std::invalid_argument("PlannerConfig: ticks_per_step must be >= 1");
}

PlannerModels PlannerModels::make(const PlannerConfig& cfg, const EgoModelParams& params) {
  PlannerModels m;
  m.ego = discretize(ego_continuous_model(params), cfg.dt);
  m.nv = discretize(nv_continuous_model(params.tau), cfg.dt);
  m.ego_tick = discretize(ego_continuous_model(params), cfg.dt / cfg.ticks_per_step);
  m.nv_tick = discretize(nv_continuous_model(params.tau), cfg.dt / cfg.ticks_per_step);
  return m;
}

std::string to_string(PlannerKind kind) {
  switch (kind) {
  case PlannerKind::aimpc: return "aimpc";
  case PlannerKind::joint_fixed: return "joint_fixed";
  case PlannerKind::baseline_cv: return "baseline_cv";
  }
  return "unknown";
}

PlannerKind planner_kind_from_string(const std::string& name) {
  if (name == "aimpc") return PlannerKind::aimpc;
  if (name == "joint_fixed") return PlannerKind::joint_fixed;
  if (name == "baseline_cv") return PlannerKind::baseline_cv;
  throw std::invalid_argument("unknown planner '" + name + "'");
}

std::vector<double> constant_velocity_positions(const NVState& nv, int N, double dt) {
  std::vector<double> s(N + 1);
  for (int k = 0; k <= N; ++k) s[k] = nv.s + k * dt * nv.v;
  return s;
}

PlannerProblem build_aimpc(const PlannerInputs& in, const AlphaWeights& alpha,
                           const EgoCostWeights& w, const PlannerConfig& cfg,
                           const PlannerModels& models) {
  return build_common(PlannerKind::aimpc, in, alpha, w, cfg, models);
}

PlannerProblem build_joint_fixed_alpha(const PlannerInputs& in, const EgoCostWeights& w,
                                       const PlannerConfig& cfg, const PlannerModels& models) {
  return build_common(PlannerKind::joint_fixed, in, AlphaWeights::equal(cfg.c), w, cfg, models);
}

PlannerProblem build_baseline_cv(const PlannerInputs& in, const EgoCostWeights& w,
                                 const PlannerConfig& cfg, const PlannerModels& models) {
  return build_common(PlannerKind::baseline_cv, in, AlphaWeights::equal(cfg.c), w, cfg, models);
}

PlannerProblem build_planner(PlannerKind kind, const PlannerInputs& in, const AlphaWeights& alpha,
                             const EgoCostWeights& w, const PlannerConfig& cfg,
                             const PlannerModels& models) {
  switch (kind) {
  case PlannerKind::aimpc: return build_aimpc(in, alpha, w, cfg, models);
  case PlannerKind::joint_fixed: return build_joint_fixed_alpha(in, w, cfg, models);
  case PlannerKind::baseline_cv: return build_baseline_cv(in, w, cfg, models);
  }
  throw std::invalid_argument("build_planner: unknown kind");
}

Plan decode_plan(const PlannerProblem& P, const VectorXd& z, const PlannerModels& models) {
  const PlannerLayout& L = P.layout;
  const int N = L.N;
  Plan plan;
  plan.ego_states.push_back(P.inputs.ego);
  Eigen::VectorXd x = P.inputs.ego.vec();
  for (int i = 0; i < N; ++i) {
    EgoControl u{z(L.u_a + i), static_cast<int>(std::lround(z(L.u_l + i)))};
    plan.ego_controls.push_back(u);
    x = models.ego.step(x, Eigen::Vector2d(u.u_a, u.u_l));
    plan.ego_states.push_back(EgoState::from(x));
  }
  plan.nv_states.push_back(P.inputs.nv);
  if (L.u_nv >= 0) {
    Eigen::VectorXd y = P.inputs.nv.vec();
    for (int i = 0; i < N; ++i) {
      const double u = z(L.u_nv + i);
      plan.nv_controls.push_back(u);
      y = models.nv.step(y, Eigen::VectorXd::Constant(1, u));
      plan.nv_states.push_back(NVState::from(y));
    }
  } else {
    const auto s = constant_velocity_positions(P.inputs.nv, N, P.cfg.dt);
    for (int k = 1; k <= N; ++k) plan.nv_states.push_back({s[k], P.inputs.nv.v, 0.0});
  }
  plan.slack.push_back(0.0);
  for (int k = 1; k <= N; ++k) plan.slack.push_back(std::max(0.0, z(L.eps + k - 1)));
  auto bin = [&](Index first) {
    std::vector<int> v;
    for (int k = 0; k < N; ++k) v.push_back(static_cast<int>(std::lround(z(first + k))));
    return v;
  };
  plan.binaries = {bin(L.beta_nv), bin(L.beta_obs), bin(L.mu1), bin(L.mu2)};
  return plan;
}

IntegerAssignment shifted_assignment(const PlannerProblem& P, const Plan& prev) {
  const PlannerLayout& L = P.layout;
  const int N = L.N;
  IntegerAssignment a;
  if (static_cast<int>(prev.ego_controls.size()) != N ||
      static_cast<int>(prev.binaries.mu1.size()) != N) {
    return a;
  }
  auto shifted = [&](int k) { return std::min(k + 1, N - 1); };
  for (int k = 0; k < N; ++k) {
    const int s = shifted(k);
    a[L.u_l + k] = prev.ego_controls[s].u_l;
    a[L.beta_nv + k] = prev.binaries.beta_nv[s];
    a[L.beta_obs + k] = prev.binaries.beta_obs[s];
    a[L.mu1 + k] = prev.binaries.mu1[s];
    a[L.mu2 + k] = prev.binaries.mu2[s];
  }
  return a;
}

std::vector<IntegerAssignment> candidate_assignments(const PlannerProblem& P) {
  const PlannerLayout& L = P.layout;
  const int N = L.N;
  const double delta = P.cfg.delta;
  const int current = P.inputs.u_l_prev;
  const int other = current == 1 ? 2 : 1;
  const int beta_obs = P.inputs.ego.s >= P.inputs.obstacle.s ? 1 : 0;

  std::vector<IntegerAssignment> out;
  for (int sw = N; sw >= 0; --sw) {
    VectorXd z = VectorXd::Zero(L.n);
    for (int i = 0; i < N; ++i) z(L.u_l + i) = i < sw ? current : other;
    std::vector<int> m1(N), m2(N);
    for (int k = 1; k <= N; ++k) {
      const double l = P.lane[k].eval(z);
      m1[k - 1] = in_lane_1(l, delta);
      m2[k - 1] = in_lane_2(l, delta);
    }
    for (const Affine& lt : P.lane_ticks) {
      if (in_lane_2(lt.eval(z), delta)) m2[0] = 1;
    }
    for (int beta : {1, 0}) {
      IntegerAssignment a;
      for (int k = 0; k < N; ++k) {
        a[L.u_l + k] = static_cast<long>(z(L.u_l + k));
        a[L.beta_nv + k] = beta;
        a[L.beta_obs + k] = beta_obs;
        a[L.mu1 + k] = m1[k];
        a[L.mu2 + k] = m2[k];
      }
      out.push_back(std::move(a));
    }
  }
  return out;
}

EgoControl fail_safe_control(const PlannerInputs& in, const PlannerConfig& cfg) {
  // Eases off near standstill instead of reversing.
  const double brake = std::max(cfg.admissible.u_a_min, -2.0);
  return {std::clamp(-2.0 * in.ego.v, brake, 0.0), in.u_l_prev};
}

MpcStepResult mpc_step(const Plan* previous, const PlannerInputs& in, const AlphaWeights& alpha,
                       PlannerKind kind, const EgoCostWeights& w, const PlannerConfig& cfg,
                       const PlannerModels& models, const MiqpConfig& solver) {
  const PlannerProblem P = build_planner(kind, in, alpha, w, cfg, models);
  std::vector<IntegerAssignment> warm;
  if (previous) {
    auto s = shifted_assignment(P, *previous);
    if (!s.empty()) warm.push_back(std::move(s));
  }
  for (auto& c : candidate_assignments(P)) warm.push_back(std::move(c));

  const MiqpSolution sol = solve_miqp(P.miqp, solver, warm);
  MpcStepResult r;
  if (sol.status == MiqpStatus::optimal || sol.status == MiqpStatus::feasible_incumbent) {
    r.plan = decode_plan(P, sol.x, models);
    r.control = r.plan.ego_controls.front();
  } else {
    r.control = fail_safe_control(in, cfg);
    VectorXd z = VectorXd::Zero(P.layout.n);
    for (int i = 0; i < cfg.N; ++i) {
      z(P.layout.u_a + i) = r.control.u_a;
      z(P.layout.u_l + i) = r.control.u_l;
    }
    r.plan = decode_plan(P, z, models);
    r.plan.binaries = {};
    r.plan.fail_safe = true;
  }
  r.plan.objective = sol.objective;
  r.plan.status = sol.status;
  r.plan.solve_time = sol.wall_time;
  r.plan.nodes = sol.nodes_explored;
  return r;
}

MpcPlanner::MpcPlanner(PlannerKind kind, EgoCostWeights w, PlannerConfig cfg, MiqpConfig solver,
                       EgoModelParams params)
    : kind_(kind), w_(w), cfg_(cfg), solver_(solver), models_(PlannerModels::make(cfg, params)) {
  cfg_.validate();
  w_.validate();
}

MpcStepResult MpcPlanner::step(const EgoState& ego, const NVState& nv, const Obstacle& obstacle,
                               const AlphaWeights& alpha) {
  PlannerInputs in{ego, nv, obstacle, u_l_prev_};
  MpcStepResult r = mpc_step(previous_ ? &*previous_ : nullptr, in, alpha, kind_, w_, cfg_,
                             models_, solver_);
  u_l_prev_ = r.control.u_l;
  previous_ = r.plan;
  return r;
}

void MpcPlanner::reset(int lane_command) {
  previous_.reset();
  u_l_prev_ = lane_command;
}

} // namespace aimpc
