#include "aimpc/imputation.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace aimpc {

using Eigen::Index;
using Eigen::MatrixXd;

void VehicleGeometry::validate() const {
  if (!(L_d > 0) || !(W_d > 0)) throw std::invalid_argument("VehicleGeometry: L_d, W_d must be > 0");
}

void ImputationConfig::validate() const {
  if (!(c > 0)) throw std::invalid_argument("ImputationConfig: c must be > 0");
  if (!(tau > 0)) throw std::invalid_argument("ImputationConfig: tau must be > 0");
  if (r < 2) throw std::invalid_argument("ImputationConfig: r must be >= 2");
  if (interval < 1) throw std::invalid_argument("ImputationConfig: interval must be >= 1");
  geometry.validate();
  tie_break_alpha.validate(c);
}

std::string to_string(ImputationMode mode) {
  return mode == ImputationMode::literal ? "literal" : "coupled";
}

ImputationMode imputation_mode_from_string(const std::string& name) {
  if (name == "literal") return ImputationMode::literal;
  if (name == "coupled") return ImputationMode::coupled;
  throw std::invalid_argument("unknown imputation mode '" + name + "'");
}

std::vector<double> reconstruct_accel(const std::vector<double>& v, double dt) {
  const size_t n = v.size();
  if (n < 2) throw std::invalid_argument("reconstruct_accel: need at least 2 samples");
  if (!(dt > 0)) throw std::invalid_argument("reconstruct_accel: dt must be > 0");
  std::vector<double> a(n);
  if (n == 2) {
    a[0] = a[1] = (v[1] - v[0]) / dt;
    return a;
  }
  for (size_t i = 1; i + 1 < n; ++i) a[i] = (v[i + 1] - v[i - 1]) / (2 * dt);
  a[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * dt);
  a[n - 1] = (3 * v[n - 1] - 4 * v[n - 2] + v[n - 3]) / (2 * dt);
  return a;
}

void ObservationWindow::complete() {
  if (records.empty()) throw std::invalid_argument("ObservationWindow: empty");
  if (!(dt > 0)) throw std::invalid_argument("ObservationWindow: dt must be > 0");
  bool missing = false;
  for (const auto& rec : records) {
    if (!std::isfinite(rec.s_nv) || !std::isfinite(rec.v_nv) || !std::isfinite(rec.s_ego) ||
        !std::isfinite(rec.l_nv) || !std::isfinite(rec.l_ego)) {
      throw std::invalid_argument("ObservationWindow: non-finite record");
    }
    missing = missing || std::isnan(rec.a_nv);
  }
  if (!missing) return;
  std::vector<double> v;
  for (const auto& rec : records) v.push_back(rec.v_nv);
  const auto a = reconstruct_accel(v, dt);
  for (size_t i = 0; i < records.size(); ++i)
    if (std::isnan(records[i].a_nv)) records[i].a_nv = a[i];
}

std::uint64_t ObservationWindow::hash() const {
  // FNV-1a over the raw doubles.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](double x) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &x, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ull;
    }
  };
  mix(dt);
  for (const auto& rec : records) {
    for (double x : {rec.s_nv, rec.v_nv, rec.a_nv, rec.l_nv, rec.s_ego, rec.l_ego}) mix(x);
  }
  return h;
}

ImputationProblem build_imputation_qp(const ObservationWindow& window_in,
                                      const ImputationConfig& cfg) {
  cfg.validate();
  ObservationWindow window = window_in;
  window.complete();
  const int r = window.r();
  const double dt = window.dt;
  const double half_L = cfg.geometry.L_d / 2, half_W = cfg.geometry.W_d / 2;
  const double k3 = dt / cfg.tau;

  ImputationProblem P;
  P.r = r;
  const Index n = 2 + 4 * r;
  const Index rows = 5 * r;
  P.residual = MatrixXd::Zero(rows, n);
  MatrixXd& R = P.residual;
  Index row = 0;
  auto add_row = [&](int step, const char* tag) {
    P.row_step.push_back(step);
    P.row_tag.emplace_back(tag);
    return row++;
  };

  for (int i = 0; i < r; ++i) {
    const auto& rec = window.records[i];
    const double ds = rec.s_nv - rec.s_ego;
    const double dl = rec.l_nv - rec.l_ego;
    const bool coupled = cfg.mode == ImputationMode::coupled;
    const bool has_next = i + 1 < r;

    Index k = add_row(i, "s");
    R(k, P.alpha_p) = 2 * ds;
    R(k, P.lambda(i)) = -2 * ds / (half_L * half_L);
    R(k, P.nu1(i)) = 1;
    if (coupled && has_next) R(k, P.nu1(i + 1)) = -1;

    k = add_row(i, "v");
    R(k, P.nu2(i)) = 1;
    if (coupled) {
      R(k, P.nu1(i)) = -dt;
      if (has_next) R(k, P.nu2(i + 1)) = -1;
    }

    k = add_row(i, "a");
    R(k, P.alpha_a) = 2 * rec.a_nv;
    R(k, P.nu3(i)) = 1;
    if (coupled) {
      R(k, P.nu2(i)) = -dt;
      if (has_next) R(k, P.nu3(i + 1)) = -(1 - k3);
    }

    k = add_row(i, "u");
    R(k, P.nu3(i)) = -k3;

    k = add_row(i, "comp");
    R(k, P.lambda(i)) = 1 - (ds / half_L) * (ds / half_L) - (dl / half_W) * (dl / half_W);
  }

  QuadraticProgram& qp = P.qp;
  qp = QuadraticProgram(n);
  qp.Q = 2.0 * R.transpose() * R;
  qp.lb(P.alpha_p) = qp.lb(P.alpha_a) = 0.0;
  qp.ub(P.alpha_p) = qp.ub(P.alpha_a) = cfg.c;
  for (int i = 0; i < r; ++i) qp.lb(P.lambda(i)) = 0.0;
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(n);
  sum(P.alpha_p) = sum(P.alpha_a) = 1.0;
  qp.add_equality(sum, cfg.c);
  return P;
}

namespace {

QpSolution solve_pinned(const ImputationProblem& P, std::optional<double> alpha_p, double c) {
  QuadraticProgram qp = P.qp;
  if (alpha_p) {
    qp.lb(P.alpha_p) = qp.ub(P.alpha_p) = *alpha_p;
    qp.lb(P.alpha_a) = qp.ub(P.alpha_a) = c - *alpha_p;
  }
  QpSettings s;
  s.check_convexity = false;
  s.max_iter = 200;
  return solve_qp(qp, s);
}

} // namespace

ImputationResult impute_alpha(const ObservationWindow& window, const ImputationConfig& cfg) {
  const ImputationProblem P = build_imputation_qp(window, cfg);
  const QpSolution sol = solve_pinned(P, std::nullopt, cfg.c);
  if (sol.status != QpStatus::optimal) {
    std::ostringstream msg;
    msg << "impute_alpha: QP " << to_string(sol.status) << " on window " << std::hex
        << window.hash();
    throw std::runtime_error(msg.str());
  }
  ImputationResult out;
  const double f = sol.objective;
  const double tol = 1e-8 + 1e-6 * std::abs(f);
  const QpSolution lo = solve_pinned(P, 0.0, cfg.c);
  const QpSolution hi = solve_pinned(P, cfg.c, cfg.c);
  const bool flat = lo.status == QpStatus::optimal && hi.status == QpStatus::optimal &&
                    lo.objective - f <= tol && hi.objective - f <= tol;

  Eigen::VectorXd z = sol.x;
  if (flat) {
    const QpSolution tb = solve_pinned(P, cfg.tie_break_alpha.alpha_p, cfg.c);
    if (tb.status == QpStatus::optimal) z = tb.x;
    out.alpha = cfg.tie_break_alpha;
    out.tie_broken = true;
  } else {
    // Project onto the simplex exactly.
    const double ap = std::clamp(z(P.alpha_p), 0.0, cfg.c);
    out.alpha = {ap, cfg.c - ap};
  }
  for (int i = 0; i < P.r; ++i) {
    out.duals.lambda1.push_back(std::max(0.0, z(P.lambda(i))));
    out.duals.nu1.push_back(z(P.nu1(i)));
    out.duals.nu2.push_back(z(P.nu2(i)));
    out.duals.nu3.push_back(z(P.nu3(i)));
  }
  out.objective = (P.residual * z).squaredNorm();
  return out;
}

ImputationScheduler::ImputationScheduler(ImputationConfig cfg, double dt)
    : cfg_(std::move(cfg)), dt_(dt), alpha_(cfg_.tie_break_alpha) {
  cfg_.validate();
  if (!(dt > 0)) throw std::invalid_argument("ImputationScheduler: dt must be > 0");
}

std::optional<ImputationUpdate> ImputationScheduler::observe(const ObservationRecord& record) {
  history_.push_back(record);
  while (static_cast<int>(history_.size()) > cfg_.r) history_.pop_front();
  ++steps_;
  if (steps_ < cfg_.r || steps_ % cfg_.interval != 0) return std::nullopt;
  ObservationWindow w{{history_.begin(), history_.end()}, dt_};
  w.complete();
  const ImputationResult res = impute_alpha(w, cfg_);
  alpha_ = res.alpha;
  return ImputationUpdate{steps_, w.hash(), cfg_.mode, res.alpha, res.objective};
}

} // namespace aimpc
