#include "aimpc/general_planner.hpp"

#include <cmath>
#include <stdexcept>

namespace aimpc {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string tag(const std::string& name, int a, int k) {
  return name + "[" + std::to_string(a) + "][" + std::to_string(k) + "]";
}

int band_of(double l, int lanes) {
  return std::clamp(static_cast<int>(std::lround(l)), 1, lanes);
}

} // namespace

std::pair<double, double> GeneralCostWeights::for_vehicle(int v) const {
  if (v >= 1 && v - 1 < static_cast<int>(per_vehicle.size())) return per_vehicle[v - 1];
  return {w_v, w_a};
}

void GeneralCostWeights::validate() const {
  auto ok = [](double x) { return std::isfinite(x) && x >= 0; };
  bool good = ok(w_v) && ok(w_a);
  for (const auto& [a, b] : per_vehicle) good = good && ok(a) && ok(b);
  if (!good) throw std::invalid_argument("GeneralCostWeights: weights must be >= 0");
}

GeneralProblem build_general(const GeneralInputs& in, const EgoCostWeights& ego_w,
                             const GeneralCostWeights& nv_w, const std::vector<AlphaWeights>& alphas,
                             const PlannerConfig& cfg, const DiscreteModel& model) {
  cfg.validate();
  ego_w.validate();
  nv_w.validate();
  const int V = static_cast<int>(in.vehicles.size());
  if (V < 1) throw std::invalid_argument("build_general: need at least one vehicle");
  if (std::abs(cfg.delta - 0.5) > 1e-12) {
    throw std::invalid_argument("build_general: lane bands need delta = 0.5");
  }
  if (!alphas.empty() && static_cast<int>(alphas.size()) != V - 1) {
    throw std::invalid_argument("build_general: one AlphaWeights per NV");
  }
  for (const auto& a : alphas) a.validate(cfg.c);
  for (const auto& veh : in.vehicles) {
    if (!veh.x.vec().allFinite()) throw std::invalid_argument("build_general: non-finite state");
    if (veh.u_l_prev < 1 || veh.u_l_prev > cfg.L_max) {
      throw std::invalid_argument("build_general: lane command out of range");
    }
  }
  for (const auto& o : in.obstacles) {
    if (!std::isfinite(o.s) || o.lane < 1 || o.lane > cfg.L_max) {
      throw std::invalid_argument("build_general: bad obstacle");
    }
  }

  GeneralProblem P;
  P.cfg = cfg;
  P.inputs = in;
  const int N = cfg.N, Lm = cfg.L_max, O = static_cast<int>(in.obstacles.size());
  const double M = cfg.M, dg = cfg.d_gap, delta = cfg.delta;
  const auto& adm = cfg.admissible;
  ProblemBuilder& b = P.builder;
  GeneralLayout& L = P.layout;
  L.N = N;
  L.V = V;
  L.L = Lm;
  L.O = O;

  for (int v = 0; v < V; ++v) {
    L.u_a.push_back(b.num_vars());
    for (int i = 0; i < N; ++i) b.add_variable(tag("u_a", v, i), adm.u_a_min, adm.peak_upper());
    L.u_l.push_back(b.num_vars());
    for (int i = 0; i < N; ++i)
      b.add_variable(tag("u_l", v, i), 1.0, Lm, VarKind::integer, 2 * N + i);
  }
  for (int v = 0; v < V; ++v)
    for (int o = 0; o < O; ++o) {
      L.eps.push_back(b.num_vars());
      for (int k = 1; k <= N; ++k) b.add_variable(tag("eps", v * O + o, k), 0.0, kInf);
    }
  for (int v = 0; v < V; ++v)
    for (int w = v + 1; w < V; ++w) {
      L.pairs.emplace_back(v, w);
      L.beta.push_back(b.num_vars());
      for (int k = 1; k <= N; ++k)
        b.add_variable(tag("beta", v * V + w, k), 0, 1, VarKind::binary, N + k);
    }
  for (int v = 0; v < V; ++v)
    for (int o = 0; o < O; ++o) {
      L.beta_obs.push_back(b.num_vars());
      for (int k = 1; k <= N; ++k)
        b.add_variable(tag("beta_obs", v * O + o, k), 0, 1, VarKind::binary, N + k);
    }
  L.mu.resize(V);
  for (int v = 0; v < V; ++v)
    for (int lane = 1; lane <= Lm; ++lane) {
      L.mu[v].push_back(b.num_vars());
      for (int k = 1; k <= N; ++k)
        b.add_variable(tag("mu" + std::to_string(lane), v, k), 0, 1, VarKind::binary, k);
    }
  L.n = b.num_vars();

  auto ua = [&](int v, int i) { return b.var(L.u_a[v] + i); };
  auto ul = [&](int v, int i) { return b.var(L.u_l[v] + i); };
  auto mu = [&](int v, int lane, int k) { return b.var(L.mu[v][lane - 1] + k - 1); };

  P.states.resize(V);
  for (int v = 0; v < V; ++v) {
    auto& x = P.states[v];
    x.push_back(constant_state(b, in.vehicles[v].x.vec()));
    for (int i = 0; i < N; ++i) x.push_back(propagate(model, x.back(), {ua(v, i), ul(v, i)}));
  }
  auto s = [&](int v, int k) { return P.states[v][k][0]; };

  // Costs.
  for (int v = 0; v < V; ++v) {
    const auto& x = P.states[v];
    double wv = ego_w.q_v, wa = ego_w.q_a;
    if (v > 0) std::tie(wv, wa) = nv_w.for_vehicle(v);
    for (int i = 1; i <= N; ++i) {
      b.add_square(wv, x[i][1] - ego_w.v_ref, tag("w_v", v, i));
      b.add_square(wa, x[i][2], tag("w_a_state", v, i));
      b.add_square(ego_w.q_dl, x[i][3] - x[i - 1][3], tag("q_dl_l", v, i));
      if (v == 0) b.add_square(ego_w.q_da, x[i][2] - x[i - 1][2], tag("q_da", v, i));
    }
    for (int i = 0; i < N; ++i) {
      b.add_square(wa, ua(v, i), tag("w_a_control", v, i));
      const Affine prev = i == 0 ? b.constant(in.vehicles[v].u_l_prev) : ul(v, i - 1);
      b.add_square(ego_w.q_dl, ul(v, i) - prev, tag("q_dl_ul", v, i));
    }
    if (v > 0 && !alphas.empty()) {
      const AlphaWeights& al = alphas[v - 1];
      for (int i = 1; i <= N; ++i) {
        b.add_square(al.alpha_p, x[i][0] - P.states[0][i][0], tag("alpha_p", v, i));
        b.add_square(al.alpha_a, x[i][2], tag("alpha_a_state", v, i));
        b.add_square(al.alpha_a, x[i][2] - x[i - 1][2], tag("alpha_a_da", v, i));
      }
      for (int i = 0; i < N; ++i) b.add_square(al.alpha_a, ua(v, i), tag("alpha_a_control", v, i));
    }
  }
  for (Index j : L.eps)
    for (int k = 0; k < N; ++k) b.add_linear(ego_w.q_slack, b.var(j + k), "q_slack");

  // Pairwise gaps, gated per lane.
  for (size_t p = 0; p < L.pairs.size(); ++p) {
    const auto [v, w] = L.pairs[p];
    for (int k = 1; k <= N; ++k) {
      const Affine beta = b.var(L.beta[p] + k - 1);
      for (int lane = 1; lane <= Lm; ++lane) {
        const Affine gate = mu(v, lane, k) + mu(w, lane, k);
        const std::string at = tag("", static_cast<int>(p), k) + "L" + std::to_string(lane);
        b.add_ge(s(v, k) - s(w, k) - M * beta - M * gate, dg - 3 * M, "10a" + at);
        b.add_ge(s(w, k) - s(v, k) + M * beta - M * gate, dg - 2 * M, "10b" + at);
      }
    }
  }
  // Static obstacles: always in their lane, slack allowed.
  for (int v = 0; v < V; ++v)
    for (int o = 0; o < O; ++o) {
      const auto& ob = in.obstacles[o];
      for (int k = 1; k <= N; ++k) {
        const Affine beta = b.var(L.beta_obs[v * O + o] + k - 1);
        const Affine eps = b.var(L.eps[v * O + o] + k - 1);
        const Affine gate = mu(v, ob.lane, k);
        const std::string at = tag("", v * O + o, k);
        b.add_ge(s(v, k) - ob.s + eps - M * beta - M * gate, dg - 2 * M, "obs_a" + at);
        b.add_ge(ob.s - s(v, k) + eps + M * beta - M * gate, dg - M, "obs_b" + at);
      }
    }
  // Lane discipline and admissibility.
  for (int v = 0; v < V; ++v) {
    const auto& x = P.states[v];
    for (int k = 1; k <= N; ++k) {
      Affine sum = 0.0 * x[0][0];
      for (int lane = 1; lane <= Lm; ++lane) {
        const std::string at = tag("", v, k) + "L" + std::to_string(lane);
        b.add_le(x[k][3] + M * mu(v, lane, k), lane + delta + M, "11a" + at);
        b.add_ge(x[k][3] - M * mu(v, lane, k), lane - delta - M, "11b" + at);
        sum += mu(v, lane, k);
      }
      b.add_eq(sum, 1.0, "11c" + tag("", v, k));
      const int i = k - 1;
      b.add_ge(ua(v, i), adm.u_a_min, "7a" + tag("", v, k));
      b.add_le(ua(v, i) - adm.m1 * x[i][1], adm.b1, "7b" + tag("", v, k));
      b.add_le(ua(v, i) - adm.m2 * x[i][1], adm.b2, "7c" + tag("", v, k));
    }
  }

  P.miqp = b.build();
  return P;
}

GeneralPlan decode_general(const GeneralProblem& P, const VectorXd& z, const DiscreteModel& model) {
  const GeneralLayout& L = P.layout;
  GeneralPlan plan;
  plan.states.resize(L.V);
  plan.controls.resize(L.V);
  plan.mu.resize(L.V);
  for (int v = 0; v < L.V; ++v) {
    VectorXd x = P.inputs.vehicles[v].x.vec();
    plan.states[v].push_back(P.inputs.vehicles[v].x);
    for (int i = 0; i < L.N; ++i) {
      EgoControl u{z(L.u_a[v] + i), static_cast<int>(std::lround(z(L.u_l[v] + i)))};
      plan.controls[v].push_back(u);
      x = model.step(x, Eigen::Vector2d(u.u_a, u.u_l));
      plan.states[v].push_back(EgoState::from(x));
    }
    for (int lane = 0; lane < L.L; ++lane) {
      std::vector<int> m;
      for (int k = 0; k < L.N; ++k) m.push_back(static_cast<int>(std::lround(z(L.mu[v][lane] + k))));
      plan.mu[v].push_back(std::move(m));
    }
  }
  for (Index first : L.beta) {
    std::vector<int> bk;
    for (int k = 0; k < L.N; ++k) bk.push_back(static_cast<int>(std::lround(z(first + k))));
    plan.beta.push_back(std::move(bk));
  }
  for (Index first : L.eps)
    for (int k = 0; k < L.N; ++k) plan.slack_max = std::max(plan.slack_max, z(first + k));
  return plan;
}

std::vector<IntegerAssignment> general_candidates(const GeneralProblem& P) {
  const GeneralLayout& L = P.layout;
  const int N = L.N, V = L.V;
  const auto& veh = P.inputs.vehicles;
  const int cur = veh[0].u_l_prev;

  std::vector<IntegerAssignment> out;
  auto emit = [&](const std::vector<std::vector<int>>& lane_cmd, int target, bool ego_ahead) {
    VectorXd z = VectorXd::Zero(L.n);
    IntegerAssignment a;
    for (int v = 0; v < V; ++v)
      for (int i = 0; i < N; ++i) {
        z(L.u_l[v] + i) = lane_cmd[v][i];
        a[L.u_l[v] + i] = lane_cmd[v][i];
      }
    for (int v = 0; v < V; ++v)
      for (int k = 1; k <= N; ++k) {
        const int band = band_of(P.states[v][k][3].eval(z), L.L);
        for (int lane = 1; lane <= L.L; ++lane) a[L.mu[v][lane - 1] + k - 1] = lane == band ? 1 : 0;
      }
    for (size_t p = 0; p < L.pairs.size(); ++p) {
      const auto [v, w] = L.pairs[p];
      int beta = veh[v].x.s >= veh[w].x.s ? 1 : 0;
      if (v == 0 && veh[w].u_l_prev == target) beta = ego_ahead ? 1 : 0;
      for (int k = 0; k < N; ++k) a[L.beta[p] + k] = beta;
    }
    for (int v = 0; v < V; ++v)
      for (int o = 0; o < L.O; ++o) {
        const int beta = veh[v].x.s >= P.inputs.obstacles[o].s ? 1 : 0;
        for (int k = 0; k < N; ++k) a[L.beta_obs[v * L.O + o] + k] = beta;
      }
    out.push_back(std::move(a));
  };

  std::vector<std::vector<int>> hold(V);
  for (int v = 0; v < V; ++v) hold[v].assign(N, veh[v].u_l_prev);
  emit(hold, cur, true);
  emit(hold, cur, false);
  for (int target : {cur + 1, cur - 1}) {
    if (target < 1 || target > L.L) continue;
    for (bool move_away : {false, true}) {
      auto cmd = hold;
      if (move_away) {
        bool any = false;
        for (int v = 1; v < V; ++v) {
          const int away = target + (target - cur);
          if (veh[v].u_l_prev == target && away >= 1 && away <= L.L) {
            cmd[v].assign(N, away);
            any = true;
          }
        }
        if (!any) continue;
      }
      for (int sw = N - 1; sw >= 0; --sw) {
        for (int i = 0; i < N; ++i) cmd[0][i] = i < sw ? cur : target;
        emit(cmd, target, true);
        emit(cmd, target, false);
      }
    }
  }
  return out;
}

IntegerAssignment shifted_general_assignment(const GeneralProblem& P, const GeneralPlan& prev) {
  const GeneralLayout& L = P.layout;
  IntegerAssignment a;
  if (static_cast<int>(prev.controls.size()) != L.V || prev.beta.size() != L.beta.size()) return a;
  auto sh = [&](int k) { return std::min(k + 1, L.N - 1); };
  for (int v = 0; v < L.V; ++v) {
    if (static_cast<int>(prev.controls[v].size()) != L.N) return {};
    for (int k = 0; k < L.N; ++k) {
      a[L.u_l[v] + k] = prev.controls[v][sh(k)].u_l;
      for (int lane = 0; lane < L.L; ++lane) a[L.mu[v][lane] + k] = prev.mu[v][lane][sh(k)];
    }
  }
  for (size_t p = 0; p < L.beta.size(); ++p)
    for (int k = 0; k < L.N; ++k) a[L.beta[p] + k] = prev.beta[p][sh(k)];
  // Obstacle orderings do not change while a vehicle stays behind.
  for (int v = 0; v < L.V; ++v)
    for (int o = 0; o < L.O; ++o) {
      const int beta = P.inputs.vehicles[v].x.s >= P.inputs.obstacles[o].s ? 1 : 0;
      for (int k = 0; k < L.N; ++k) a[L.beta_obs[v * L.O + o] + k] = beta;
    }
  return a;
}

GeneralScenario fig3_scenario() {
  GeneralScenario s;
  s.cfg.N = 8;
  s.cfg.dt = 0.25;
  s.cfg.L_max = 3;
  s.cfg.guard_intersample = false;
  s.cfg.ticks_per_step = 1;
  s.initial.vehicles = {
      {{0.0, 8.0, 0.0, 1.0, 0.0}, 1},
      {{-4.0, 9.0, 0.0, 2.0, 0.0}, 2},
      {{6.0, 9.0, 0.0, 3.0, 0.0}, 3},
  };
  s.initial.obstacles = {{45.0, 1}};
  return s;
}

GeneralRun run_general(const GeneralScenario& sc, const EgoCostWeights& ego_w,
                       const GeneralCostWeights& nv_w) {
  PlannerConfig cfg = sc.cfg;
  cfg.L_max = sc.lanes;
  cfg.validate();
  EgoCostWeights w = ego_w;
  w.v_ref = sc.v_ref;
  const DiscreteModel model = discretize(ego_continuous_model({}), cfg.dt);
  MiqpConfig solver;
  solver.node_limit = sc.node_budget;

  GeneralRun run;
  GeneralInputs in = sc.initial;
  const int steps = static_cast<int>(std::lround(sc.duration / cfg.dt));
  std::optional<GeneralPlan> prev;
  for (int step = 0; step < steps; ++step) {
    const GeneralProblem P = build_general(in, w, nv_w, {}, cfg, model);
    std::vector<IntegerAssignment> warm;
    if (prev) {
      auto a = shifted_general_assignment(P, *prev);
      if (!a.empty()) warm.push_back(std::move(a));
    }
    for (auto& c : general_candidates(P)) warm.push_back(std::move(c));
    const MiqpSolution sol = solve_miqp(P.miqp, solver, warm);

    GeneralStep rec;
    rec.t = step * cfg.dt;
    rec.status = sol.status;
    rec.nodes = sol.nodes_explored;
    for (const auto& v : in.vehicles) rec.states.push_back(v.x);
    const bool ok = sol.status == MiqpStatus::optimal || sol.status == MiqpStatus::feasible_incumbent;
    if (ok) {
      GeneralPlan plan = decode_general(P, sol.x, model);
      plan.objective = sol.objective;
      plan.status = sol.status;
      plan.solve_time = sol.wall_time;
      plan.nodes = sol.nodes_explored;
      for (int v = 0; v < P.layout.V; ++v) {
        rec.controls.push_back(plan.controls[v].front());
        std::vector<int> m;
        for (int lane = 0; lane < P.layout.L; ++lane) m.push_back(plan.mu[v][lane].front());
        rec.mu_now.push_back(std::move(m));
      }
      run.plans.push_back(plan);
      prev = std::move(plan);
    } else {
      run.all_feasible = false;
      for (const auto& v : in.vehicles) rec.controls.push_back({std::max(cfg.admissible.u_a_min, -2.0), v.u_l_prev});
      prev.reset();
    }
    for (size_t v = 0; v < in.vehicles.size(); ++v) {
      auto& veh = in.vehicles[v];
      const EgoControl& u = rec.controls[v];
      veh.x = EgoState::from(model.step(veh.x.vec(), Eigen::Vector2d(u.u_a, u.u_l)));
      veh.u_l_prev = u.u_l;
    }
    run.steps.push_back(std::move(rec));
  }
  for (const auto& v : in.vehicles) run.final_states.push_back(v.x);
  return run;
}

std::optional<double> min_same_lane_gap(const GeneralRun& run, int lanes, double delta) {
  std::optional<double> best;
  auto in_band = [&](double l, int lane) { return std::abs(l - lane) < delta - 1e-6; };
  auto scan = [&](const std::vector<EgoState>& x) {
    const int V = static_cast<int>(x.size());
    for (int v = 0; v < V; ++v)
      for (int w = v + 1; w < V; ++w)
        for (int lane = 1; lane <= lanes; ++lane) {
          if (in_band(x[v].l, lane) && in_band(x[w].l, lane)) {
            const double gap = std::abs(x[v].s - x[w].s);
            best = std::min(best.value_or(gap), gap);
          }
        }
  };
  for (const auto& st : run.steps) scan(st.states);
  scan(run.final_states);
  return best;
}

} // namespace aimpc
