#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "aimpc/imputation.hpp"
#include "imputation_oracles.hpp"

using namespace aimpc;

namespace {

ObservationWindow random_window(std::mt19937& rng, int r) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  ObservationWindow w;
  double s = 0.0, se = 3.0 * U(rng), v = 8.0;
  for (int i = 0; i < r; ++i) {
    const double a = U(rng);
    v += a * 0.2;
    s += v * 0.2;
    se += (8.0 + U(rng)) * 0.2;
    w.records.push_back({s, v, a, 2.0, se, 1.0 + 0.5 * (U(rng) + 1.0)});
  }
  return w;
}

ObservationWindow merging_window(double alpha_p, int r = 6) {
  std::vector<double> se, le;
  for (int i = 1; i <= r; ++i) {
    se.push_back(4.0 + 9.0 * i * 0.2);
    le.push_back(std::min(2.0, 1.0 + 0.15 * i));
  }
  return oracle::optimal_nv_window(se, le, 0.0, 8.0, alpha_p, 1.0 - alpha_p, 0.2);
}

ImputationConfig mode(ImputationMode m) {
  ImputationConfig c;
  c.mode = m;
  return c;
}

} // namespace

TEST(ReconstructAccel, ConstantVelocity) {
  for (double a : reconstruct_accel({5, 5, 5, 5}, 0.2)) EXPECT_EQ(a, 0.0);
}

TEST(ReconstructAccel, RampIsExact) {
  std::vector<double> v;
  for (int i = 0; i < 8; ++i) v.push_back(i * 0.2);
  for (double a : reconstruct_accel(v, 0.2)) EXPECT_NEAR(a, 1.0, 1e-9);
  for (double a : reconstruct_accel({0.0, 0.2}, 0.2)) EXPECT_NEAR(a, 1.0, 1e-9);
}

TEST(ReconstructAccel, SineAgainstDerivative) {
  const double dt = 0.2;
  std::vector<double> v;
  for (int i = 0; i < 40; ++i) v.push_back(std::sin(i * dt));
  const auto a = reconstruct_accel(v, dt);
  for (size_t i = 1; i + 1 < v.size(); ++i) EXPECT_NEAR(a[i], std::cos(i * dt), 7e-3);
  // One-sided second-order stencil: error <= dt^2 / 3 max|v'''|.
  EXPECT_NEAR(a.front(), 1.0, dt * dt / 3);
  EXPECT_NEAR(a.back(), std::cos(39 * dt), dt * dt / 3);
}

TEST(ReconstructAccel, TooFewSamples) {
  EXPECT_THROW(reconstruct_accel({1.0}, 0.2), std::invalid_argument);
}

TEST(ObservationWindow, FillsMissingAcceleration) {
  ObservationWindow w;
  for (int i = 0; i < 5; ++i) w.records.push_back({0, 0.2 * i, std::nan(""), 2, 0, 1});
  w.complete();
  for (const auto& r : w.records) EXPECT_NEAR(r.a_nv, 1.0, 1e-9);
}

TEST(Imputation, LiteralProximityCoefficient) {
  std::mt19937 rng(1);
  const auto w = random_window(rng, 6);
  const auto P = build_imputation_qp(w, mode(ImputationMode::literal));
  for (size_t k = 0; k < P.row_tag.size(); ++k) {
    const auto& rec = w.records[P.row_step[k]];
    if (P.row_tag[k] == "s") {
      EXPECT_DOUBLE_EQ(P.residual(k, P.alpha_p), 2 * (rec.s_nv - rec.s_ego));
    } else {
      EXPECT_EQ(P.residual(k, P.alpha_p), 0.0);
    }
  }
}

TEST(Imputation, CriticalPointZeroesProximityCoefficient) {
  std::mt19937 rng(2);
  for (auto m : {ImputationMode::literal, ImputationMode::coupled}) {
    auto w = random_window(rng, 6);
    w.records[2].s_ego = w.records[2].s_nv;
    w.records[4].s_ego = w.records[4].s_nv;
    const auto P = build_imputation_qp(w, mode(m));
    for (size_t k = 0; k < P.row_tag.size(); ++k) {
      if (P.row_step[k] == 2 || P.row_step[k] == 4) EXPECT_EQ(P.residual(k, P.alpha_p), 0.0);
    }
  }
}

TEST(Imputation, EmittedProblemIsConvex) {
  std::mt19937 rng(3);
  for (auto m : {ImputationMode::literal, ImputationMode::coupled}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto P = build_imputation_qp(random_window(rng, 6), mode(m));
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P.qp.Q);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
    }
  }
}

TEST(Imputation, DegenerateWindowUsesTieBreak) {
  ObservationWindow w;
  for (int i = 0; i < 6; ++i) w.records.push_back({10.0 + 2 * i, 10, 0, 2, 10.0 + 2 * i, 1});
  for (auto m : {ImputationMode::literal, ImputationMode::coupled}) {
    const auto res = impute_alpha(w, mode(m));
    EXPECT_TRUE(res.tie_broken);
    EXPECT_EQ(res.alpha.alpha_p, 0.5);
    EXPECT_EQ(res.alpha.alpha_a, 0.5);
    EXPECT_NEAR(res.objective, 0.0, 1e-9);
  }
}

TEST(Imputation, NormalisedAndNonnegative) {
  std::mt19937 rng(4);
  for (auto m : {ImputationMode::literal, ImputationMode::coupled}) {
    for (int trial = 0; trial < 10; ++trial) {
      auto cfg = mode(m);
      cfg.c = 2.0;
      cfg.tie_break_alpha = AlphaWeights::equal(2.0);
      const auto res = impute_alpha(random_window(rng, 6), cfg);
      EXPECT_NEAR(res.alpha.alpha_p + res.alpha.alpha_a, 2.0, 1e-9);
      EXPECT_GE(res.alpha.alpha_p, -1e-9);
      EXPECT_GE(res.alpha.alpha_a, -1e-9);
      for (double l : res.duals.lambda1) EXPECT_GE(l, 0.0);
    }
  }
}

TEST(Imputation, LiteralModeCollapsesToProximity) {
  // Free per-step duals absorb the proximity rows, leaving alpha_a = 0.
  const auto res = impute_alpha(merging_window(0.3), mode(ImputationMode::literal));
  EXPECT_NEAR(res.alpha.alpha_a, 0.0, 1e-6);
}

TEST(Imputation, CoupledRecoversGeneratingWeights) {
  for (double truth : {0.2, 0.5, 0.8}) {
    const auto w = merging_window(truth);
    const auto cfg = mode(ImputationMode::coupled);
    const auto res = impute_alpha(w, cfg);
    EXPECT_NEAR(res.alpha.alpha_p, truth, 0.15) << truth;
    const auto P = build_imputation_qp(w, cfg);
    EXPECT_NEAR(res.alpha.alpha_p, oracle::grid_search_alpha_p(P, 1.0), 0.01 + 1e-9) << truth;
  }
}

TEST(Imputation, QpMatchesGridOracleOnShortWindows) {
  std::mt19937 rng(5);
  for (auto m : {ImputationMode::literal, ImputationMode::coupled}) {
    for (int r : {2, 3, 4}) {
      for (int trial = 0; trial < 4; ++trial) {
        const auto w = random_window(rng, r);
        const auto cfg = mode(m);
        const auto P = build_imputation_qp(w, cfg);
        const auto res = impute_alpha(w, cfg);
        // Dense grid over alpha_p.
        double best = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= 1000; ++k) best = std::min(best, oracle::pinned_residual(P, k / 1000.0, 1.0));
        EXPECT_NEAR(res.objective, best, 1e-5 * std::max(1.0, best)) << r;
      }
    }
  }
}

TEST(Imputation, LiteralInvariantUnderGapSignFlip) {
  std::mt19937 rng(6);
  auto w = random_window(rng, 6);
  auto flipped = w;
  for (auto& r : flipped.records) r.s_ego = 2 * r.s_nv - r.s_ego;
  const auto cfg = mode(ImputationMode::literal);
  const auto a = build_imputation_qp(w, cfg);
  const auto b = build_imputation_qp(flipped, cfg);
  for (size_t k = 0; k < a.row_tag.size(); ++k)
    EXPECT_DOUBLE_EQ(a.residual(k, a.alpha_p), -b.residual(k, b.alpha_p));
  const auto ra = impute_alpha(w, cfg), rb = impute_alpha(flipped, cfg);
  EXPECT_NEAR(ra.alpha.alpha_p, rb.alpha.alpha_p, 1e-6);
  EXPECT_NEAR(ra.objective, rb.objective, 1e-8);
}

TEST(Imputation, ModesDiffer) {
  const auto w = merging_window(0.5);
  const auto a = impute_alpha(w, mode(ImputationMode::literal));
  const auto b = impute_alpha(w, mode(ImputationMode::coupled));
  EXPECT_GT(std::abs(a.alpha.alpha_p - b.alpha.alpha_p), 0.05);
}

TEST(Imputation, RejectsBadConfig) {
  ImputationConfig c;
  c.c = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.interval = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(imputation_mode_from_string("exact"), std::invalid_argument);
}

TEST(ImputationScheduler, UpdatesEveryIntervalAfterWarmUp) {
  ImputationScheduler s(ImputationConfig{}, 0.2);
  const auto w = merging_window(0.8, 18);
  std::vector<int> update_steps;
  for (const auto& rec : w.records) {
    const auto u = s.observe(rec);
    if (s.steps() < 6) {
      EXPECT_FALSE(u.has_value());
      EXPECT_EQ(s.current().alpha_p, 0.5);
    }
    if (u) update_steps.push_back(u->step);
  }
  EXPECT_EQ(update_steps, (std::vector<int>{6, 12, 18}));
}

TEST(ImputationScheduler, Deterministic) {
  const auto w = merging_window(0.5, 12);
  ImputationScheduler a(ImputationConfig{}, 0.2), b(ImputationConfig{}, 0.2);
  for (const auto& rec : w.records) {
    const auto ua = a.observe(rec), ub = b.observe(rec);
    ASSERT_EQ(ua.has_value(), ub.has_value());
    if (ua) {
      EXPECT_EQ(ua->alpha.alpha_p, ub->alpha.alpha_p);
      EXPECT_EQ(ua->window_hash, ub->window_hash);
    }
  }
}
