#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "aimpc/sim.hpp"

using namespace aimpc;

namespace {

PolicyContext context(double nv_s, double nv_v, double ego_s, double ego_v, double ego_l = 1.0,
                      double ego_rl = 0.0) {
  PolicyContext ctx;
  ctx.nv = {nv_s, nv_v, 0.0};
  ctx.ego = {ego_s, ego_v, 0.0, ego_l, ego_rl};
  return ctx;
}

Trace synthetic_trace(const std::vector<double>& l, double v = 7.0) {
  Trace tr;
  tr.scenario = builtin_scenario("sub2");
  for (size_t i = 0; i < l.size(); ++i) {
    TraceRecord r;
    r.tick = static_cast<int>(i);
    r.t = 0.05 * i;
    r.ego = {v * r.t, v, 0.0, l[i], 0.0};
    r.nv = {v * r.t - 20.0, v, 0.0};
    tr.records.push_back(r);
  }
  return tr;
}

// NV driven open loop by a policy against a fixed ego trajectory.
double nv_end_position(const std::string& policy) {
  Scenario s = builtin_scenario("sub2");
  s.nv_policy = policy;
  auto p = make_policy(policy, s);
  const DiscreteModel nv_model = discretize(nv_continuous_model(0.275), s.sim_dt);
  NVState nv = s.nv_init;
  for (int k = 0; k < 120; ++k) {
    const double t = k * s.sim_dt;
    PolicyContext ctx;
    ctx.nv = nv;
    ctx.ego = {2.0 + 9.0 * t, 9.0, 0.0, std::min(2.0, 1.0 + 0.2 * t), t < 5.0 ? 0.2 : 0.0};
    ctx.t = t;
    ctx.obstacle_s = s.obstacle_s;
    const double u = p->step(ctx);
    nv = NVState::from(nv_model.step(nv.vec(), Eigen::VectorXd::Constant(1, u)));
  }
  return nv.s;
}

Scenario short_run(const std::string& policy) {
  Scenario s = builtin_scenario("sub2");
  s.nv_policy = policy;
  s.duration = 1.6;
  return s;
}

} // namespace

TEST(ThrottleLag, HeldCommandIsFixedPoint) {
  ThrottleLag lag(0.3, 0.05);
  lag.reset(1.2);
  for (int i = 0; i < 50; ++i) EXPECT_DOUBLE_EQ(lag.step(1.2), 1.2);
}

TEST(ThrottleLag, StepResponseClosedForm) {
  const double tau = 0.3, dt = 0.05;
  ThrottleLag lag(tau, dt);
  lag.reset(0.0);
  const double rho = std::exp(-dt / tau);
  // First tick sees the derivative kick, then an exponential settle to 1.
  const double y1 = (1 - rho) * (1.0 + 1.0 / dt);
  EXPECT_NEAR(lag.step(1.0), y1, 1e-12);
  for (int k = 2; k < 40; ++k) {
    const double expect = 1.0 + (y1 - 1.0) * std::pow(rho, k - 1);
    EXPECT_NEAR(lag.step(1.0), expect, 1e-12) << k;
  }
}

TEST(ThrottleLag, SmallTauPassesHeldCommandThrough) {
  ThrottleLag lag(1e-6, 0.05);
  lag.reset(0.0);
  lag.step(0.7);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(lag.step(0.7), 0.7, 1e-12);
}

TEST(ThrottleLag, RejectsBadParameters) {
  EXPECT_THROW(ThrottleLag(0.0, 0.05), std::invalid_argument);
  EXPECT_THROW(ThrottleLag(0.3, -1.0), std::invalid_argument);
}

TEST(PedalMap, EndpointsAndClamp) {
  EXPECT_EQ(pedal_to_accel(1.0), 3.0);
  EXPECT_EQ(pedal_to_accel(-1.0), -4.0);
  EXPECT_EQ(pedal_to_accel(0.0), 0.0);
  EXPECT_EQ(pedal_to_accel(5.0), 3.0);
  EXPECT_EQ(pedal_to_accel(-0.5, -6.0), -3.0);
}

TEST(NvInputDynamics, FirstOrderPedalResponse) {
  ActuationLagParams p;
  const double dt = 0.05, rho = std::exp(-dt / p.tau_a);
  NvInputDynamics d(p, dt);
  for (int k = 1; k <= 30; ++k) {
    EXPECT_NEAR(d.step(0.5, 0.0), 1.5 * (1 - std::pow(rho, k)), 1e-12);
  }
}

TEST(NvInputDynamics, ZeroInputStaysAtRest) {
  NvInputDynamics d(ActuationLagParams{}, 0.05);
  for (int k = 0; k < 20; ++k) {
    EXPECT_EQ(d.step(0.0, 0.0), 0.0);
    EXPECT_EQ(d.lateral_offset(), 0.0);
  }
}

TEST(NvInputDynamics, PedalImpulseArea) {
  // One tick of full throttle: the response integrates to 3 * dt.
  const double dt = 0.05;
  NvInputDynamics d(ActuationLagParams{}, dt);
  double area = d.step(1.0, 0.0) * dt;
  for (int k = 0; k < 400; ++k) area += d.step(0.0, 0.0) * dt;
  EXPECT_NEAR(area, 3.0 * dt, 1e-9);
}

TEST(NvInputDynamics, LateralOffsetBounded) {
  NvInputDynamics d(ActuationLagParams{}, 0.05, 0.5);
  for (int k = 0; k < 100; ++k) {
    d.step(0.0, k % 2 ? 1.0 : -1.0);
    EXPECT_LE(std::abs(d.lateral_offset()), 0.25);
  }
}

TEST(Policies, PacerHoldsReferenceSpeed) {
  auto p = make_policy("pacer", builtin_scenario("sub1"));
  EXPECT_NEAR(p->step(context(0, 10.0, 30, 10.0)), 0.0, 1e-12);
  EXPECT_GT(p->step(context(0, 8.0, 30, 10.0)), 0.0);
}

TEST(Policies, YielderBacksOffWhenEgoMovesOver) {
  auto p = make_policy("yielder", builtin_scenario("sub1"));
  const double u = p->step(context(0.0, 9.0, 2.0, 9.0, 1.2, 0.3));
  EXPECT_LT(u, 0.0);
  EXPECT_GE(u, -2.0);
}

TEST(Policies, AggressorEndsAheadOfYielder) {
  EXPECT_GT(nv_end_position("aggressor"), nv_end_position("yielder"));
}

TEST(Policies, FollowingRuleWhenCutIn) {
  PolicyContext ctx = context(0.0, 10.0, 6.0, 8.0, 2.0);
  ASSERT_TRUE(following_accel(ctx).has_value());
  EXPECT_LT(*following_accel(ctx), 0.0);
  ctx.ego.l = 1.0;
  EXPECT_FALSE(following_accel(ctx).has_value());
}

TEST(Policies, ReplayHoldsLastCommand) {
  Scenario s = builtin_scenario("sub1");
  s.replay_u_nv = {0.5, -1.0};
  auto p = make_policy("replay", s);
  const auto ctx = context(0, 8, 0, 8);
  EXPECT_EQ(p->step(ctx), 0.5);
  EXPECT_EQ(p->step(ctx), -1.0);
  EXPECT_EQ(p->step(ctx), -1.0);
}

TEST(Policies, ExternalReadsMailbox) {
  auto box = std::make_shared<ExternalControl>();
  auto p = make_policy("external", builtin_scenario("sub1"), box);
  EXPECT_EQ(p->step(context(0, 8, 0, 8)), 0.0);
  box->pedal = 1.0;
  double u = 0.0;
  for (int i = 0; i < 200; ++i) u = p->step(context(0, 8, 0, 8));
  EXPECT_NEAR(u, 3.0, 1e-6);
}

TEST(Policies, UnknownName) {
  EXPECT_THROW(make_policy("tailgater", builtin_scenario("sub1")), std::invalid_argument);
}

TEST(Metrics, ConstantSpeedAverage) {
  const auto m = compute_metrics(synthetic_trace(std::vector<double>(50, 1.0), 7.0));
  EXPECT_EQ(m.v_ego_avg, 7.0);
  EXPECT_FALSE(m.min_same_lane_gap.has_value());
  EXPECT_FALSE(m.lane_change_completed);
  EXPECT_EQ(m.nudge_count, 0);
}

TEST(Metrics, LaneChangeAheadDetected) {
  std::vector<double> l;
  for (int i = 0; i < 40; ++i) l.push_back(std::min(2.0, 1.0 + 0.05 * i));
  const auto m = compute_metrics(synthetic_trace(l));
  ASSERT_TRUE(m.lane_change_completed);
  EXPECT_TRUE(m.merged_ahead);
  EXPECT_NEAR(*m.lane_change_time, 0.05 * 10, 1e-12);
  EXPECT_NEAR(*m.min_same_lane_gap, 20.0, 1e-9);
}

TEST(Metrics, EmptyTraceRejected) { EXPECT_THROW(compute_metrics(Trace{}), std::invalid_argument); }

TEST(Nudge, SingleExcursion) {
  const std::vector<double> l{1.0, 1.2, 1.4, 1.2, 1.0, 1.0, 1.4, 1.8, 2.0, 2.0};
  std::vector<double> t;
  for (size_t i = 0; i < l.size(); ++i) t.push_back(0.1 * i);
  const auto ev = detect_nudge(t, l);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].peak_l, 1.4);
  EXPECT_NEAR(ev[0].t_start, 0.1, 1e-12);
  EXPECT_NEAR(ev[0].t_end, 0.4, 1e-12);
}

TEST(Nudge, BelowThresholdIgnored) {
  const std::vector<double> l{1.0, 1.1, 1.14, 1.0};
  EXPECT_TRUE(detect_nudge({0, 1, 2, 3}, l).empty());
}

TEST(Plant, IdealMatchesModel) {
  const DiscreteModel m = discretize(ego_continuous_model({}), 0.05);
  const EgoState x{0.0, 8.0, 0.2, 1.0, 0.0};
  const EgoState y = step_plant(x, {1.0, 2}, m);
  const Eigen::VectorXd ref = m.step(x.vec(), Eigen::Vector2d(1.0, 2.0));
  EXPECT_DOUBLE_EQ(y.v, ref(1));
  EXPECT_DOUBLE_EQ(y.l, ref(3));
}

TEST(Plant, LaggedUsesFilteredCommand) {
  const DiscreteModel m = discretize(ego_continuous_model({}), 0.05);
  ThrottleLag lag(0.3, 0.05);
  lag.reset(0.0);
  const EgoState x{0.0, 8.0, 0.0, 1.0, 0.0};
  const EgoState y = step_plant(x, {1.0, 1}, m, &lag);
  const Eigen::VectorXd ref = m.step(x.vec(), Eigen::Vector2d(lag.output(), 1.0));
  EXPECT_DOUBLE_EQ(y.a, ref(2));
}

TEST(ScenarioIo, RoundTrip) {
  Scenario s = builtin_scenario("sub3");
  s.nv_policy = "pacer";
  s.replay_u_nv = {0.1, 0.2};
  std::stringstream ss;
  write_scenario_json(ss, s);
  const Scenario r = read_scenario_json(ss);
  EXPECT_EQ(r.obstacle_s, 50.0);
  EXPECT_EQ(r.nv_policy, "pacer");
  EXPECT_EQ(r.replay_u_nv, s.replay_u_nv);
}

TEST(ScenarioIo, RejectsUnknownKeyAndBadValues) {
  std::stringstream a(R"({"obstacle_s": 60, "colour": "red"})");
  EXPECT_THROW(read_scenario_json(a), std::invalid_argument);
  std::stringstream b(R"({"sim_dt": 0.05, "planner_dt": 0.12})");
  EXPECT_THROW(read_scenario_json(b), std::invalid_argument);
  std::stringstream c("{not json");
  EXPECT_THROW(read_scenario_json(c), std::invalid_argument);
  EXPECT_THROW(builtin_scenario("sub9"), std::invalid_argument);
}

TEST(ClosedLoop, DeterministicTrace) {
  const auto a = run_closed_loop(short_run("yielder"));
  const auto b = run_closed_loop(short_run("yielder"));
  std::ostringstream sa, sb;
  write_trace(sa, a.trace);
  write_trace(sb, b.trace);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(a.trace.records.size(), 32u);
  for (const auto& r : a.trace.records)
    if (r.planner_tick) EXPECT_EQ(r.solve_time, 0.0);
}

TEST(ClosedLoop, TraceRoundTrip) {
  const auto a = run_closed_loop(short_run("pacer"));
  std::stringstream ss;
  write_trace(ss, a.trace);
  const Trace back = read_trace(ss);
  ASSERT_EQ(back.records.size(), a.trace.records.size());
  for (size_t i = 0; i < back.records.size(); ++i) {
    EXPECT_EQ(back.records[i].ego.s, a.trace.records[i].ego.s);
    EXPECT_EQ(back.records[i].u_nv, a.trace.records[i].u_nv);
    EXPECT_EQ(back.records[i].planner_status, a.trace.records[i].planner_status);
  }
  EXPECT_EQ(back.scenario.nv_policy, "pacer");
}

TEST(ClosedLoop, ReadTraceNamesBadLine) {
  const auto a = run_closed_loop(short_run("pacer"));
  std::ostringstream ss;
  write_trace(ss, a.trace);
  std::string text = ss.str();
  const auto second = text.find('\n') + 1;
  text.insert(second, "{broken\n");
  std::istringstream in(text);
  try {
    read_trace(in);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

namespace {

double mean_imputed_alpha_p(const std::string& policy) {
  Scenario s = builtin_scenario("sub2");
  auto p = make_policy(policy, s);
  const DiscreteModel m = discretize(nv_continuous_model(0.275), s.sim_dt);
  NVState nv = s.nv_init;
  ImputationScheduler sched(ImputationConfig{}, s.planner_dt);
  double sum = 0.0;
  int n = 0;
  for (int k = 0; k < 200; ++k) {
    const double t = k * s.sim_dt;
    const EgoState ego{8.0 * t + 0.05 * t * t, 8.0 + 0.1 * t, 0.1, 1.0, 0.0};
    if (k % s.ticks_per_plan() == 0) {
      if (auto u = sched.observe({nv.s, nv.v, std::nan(""), 2.0, ego.s, ego.l})) {
        sum += u->alpha.alpha_p;
        ++n;
      }
    }
    const PolicyContext ctx{nv, ego, s.v_ref, s.sim_dt, 10.0, t, s.obstacle_s};
    nv = NVState::from(m.step(nv.vec(), Eigen::VectorXd::Constant(1, p->step(ctx))));
  }
  return sum / n;
}

} // namespace

TEST(Policies, PacerImputesLowerProximityWeightThanYielder) {
  EXPECT_LT(mean_imputed_alpha_p("pacer"), mean_imputed_alpha_p("yielder"));
}

TEST(Reimpute, CoupledReplayMatchesOnlineEstimates) {
  auto s = builtin_scenario("sub2");
  s.duration = 6.0;
  const auto run = run_closed_loop(s);
  ASSERT_FALSE(run.trace.imputations.empty());
  ImputationConfig cfg;
  const auto series = reimpute_trace(run.trace, cfg);
  ASSERT_EQ(series.size(), run.trace.imputations.size());
  for (size_t i = 0; i < series.size(); ++i) {
    EXPECT_NEAR(series[i].alpha.alpha_p, run.trace.imputations[i].alpha.alpha_p, 1e-12);
    EXPECT_NEAR(series[i].alpha.alpha_p + series[i].alpha.alpha_a, cfg.c, 1e-9);
  }
  cfg.mode = ImputationMode::literal;
  for (const auto& a : reimpute_trace(run.trace, cfg)) {
    EXPECT_NEAR(a.alpha.alpha_p + a.alpha.alpha_a, cfg.c, 1e-9);
  }
  cfg.r = 1000;
  EXPECT_THROW(reimpute_trace(run.trace, cfg), std::invalid_argument);
}
