#include "aimpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Sparse>

#include "json.hpp"

namespace aimpc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }
double max_abs(const MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

void append_row(MatrixXd& A, VectorXd& b, const Eigen::Ref<const Eigen::RowVectorXd>& row,
                double rhs, Index n) {
  if (row.size() != n) {
    throw std::invalid_argument("QuadraticProgram: constraint row has wrong length");
  }
  if (A.rows() == 0) A.resize(0, n);
  A.conservativeResize(A.rows() + 1, n);
  A.row(A.rows() - 1) = row;
  b.conservativeResize(b.size() + 1);
  b(b.size() - 1) = rhs;
}

// Problem after eliminating fixed variables and trivially satisfied rows,
// with rows scaled to unit infinity norm and the cost scaled by cost_scale.
struct Reduced {
  std::vector<Index> cols;
  std::vector<char> fixed;
  VectorXd x_full;
  MatrixXd Q;
  VectorXd q;
  MatrixXd A_eq;
  VectorXd b_eq;
  std::vector<Index> eq_rows;
  VectorXd eq_scale;
  MatrixXd A_in;
  VectorXd b_in;
  std::vector<Index> in_rows;
  VectorXd in_scale;
  VectorXd lb;
  VectorXd ub;
  double cost_scale = 1.0;
  bool infeasible = false;
};

Reduced reduce(const QuadraticProgram& p, const QpSettings& set) {
  const Index n = p.num_vars();
  Reduced r;
  r.fixed.assign(n, 0);
  r.x_full = VectorXd::Zero(n);
  for (Index j = 0; j < n; ++j) {
    const double lo = p.lb(j), hi = p.ub(j);
    if (std::isfinite(lo) && std::isfinite(hi) && hi - lo <= 1e-12 * std::max(1.0, std::abs(lo))) {
      r.fixed[j] = 1;
      r.x_full(j) = 0.5 * (lo + hi);
    } else {
      r.cols.push_back(j);
    }
  }
  const Index nr = static_cast<Index>(r.cols.size());
  const VectorXd& xfix = r.x_full;

  r.Q = p.Q(r.cols, r.cols);
  r.q = p.q(r.cols) + (p.Q * xfix)(r.cols);
  r.lb = p.lb(r.cols);
  r.ub = p.ub(r.cols);

  auto keep_rows = [&](const MatrixXd& A, const VectorXd& b, bool equality, MatrixXd& Ar,
                       VectorXd& br, std::vector<Index>& rows, VectorXd& scale) {
    std::vector<double> scales;
    std::vector<double> rhs;
    for (Index i = 0; i < A.rows(); ++i) {
      const Eigen::RowVectorXd row = A.row(i)(r.cols);
      const double b_i = b(i) - A.row(i).dot(xfix);
      const double rmax = row.size() ? row.cwiseAbs().maxCoeff() : 0.0;
      if (rmax <= 1e-14) {
        const bool violated = equality ? std::abs(b_i) > set.tol_feas : b_i < -set.tol_feas;
        if (violated) r.infeasible = true;
        continue;
      }
      if (!equality) {
        double max_activity = 0.0;
        for (Index j = 0; j < nr && std::isfinite(max_activity); ++j) {
          const double a = row(j);
          if (a > 0) max_activity += a * r.ub(j);
          else if (a < 0) max_activity += a * r.lb(j);
        }
        if (std::isfinite(max_activity) && max_activity <= b_i) continue;
      }
      rows.push_back(i);
      scales.push_back(1.0 / rmax);
      rhs.push_back(b_i);
    }
    const Index m = static_cast<Index>(rows.size());
    Ar.resize(m, nr);
    br.resize(m);
    scale.resize(m);
    for (Index k = 0; k < m; ++k) {
      scale(k) = scales[k];
      Ar.row(k) = A.row(rows[k])(r.cols) * scales[k];
      br(k) = rhs[k] * scales[k];
    }
  };
  keep_rows(p.A_eq, p.b_eq, true, r.A_eq, r.b_eq, r.eq_rows, r.eq_scale);
  keep_rows(p.A_in, p.b_in, false, r.A_in, r.b_in, r.in_rows, r.in_scale);

  r.cost_scale = 1.0 / std::max({1.0, max_abs(r.Q), inf_norm(r.q)});
  r.Q *= r.cost_scale;
  r.q *= r.cost_scale;
  return r;
}

struct IpmState {
  VectorXd x, nu, lam, s, zl, wl, zu, wu;
};

struct Masks {
  VectorXd L, U, lbf, ubf;
  double count = 0.0;
};

Masks make_masks(const Reduced& p) {
  const Index n = p.lb.size();
  Masks m;
  m.L = VectorXd::Zero(n);
  m.U = VectorXd::Zero(n);
  m.lbf = VectorXd::Zero(n);
  m.ubf = VectorXd::Zero(n);
  for (Index j = 0; j < n; ++j) {
    if (std::isfinite(p.lb(j))) {
      m.L(j) = 1.0;
      m.lbf(j) = p.lb(j);
    }
    if (std::isfinite(p.ub(j))) {
      m.U(j) = 1.0;
      m.ubf(j) = p.ub(j);
    }
  }
  m.count = static_cast<double>(p.A_in.rows()) + m.L.sum() + m.U.sum();
  return m;
}

// Error measures of a reduced-space iterate, in reduced (scaled) units except
// the primal residual which is measured in original row units.
struct Errors {
  double primal = 0.0;
  double dual = 0.0;
  double comp = 0.0;
};

Errors reduced_errors(const Reduced& p, const Masks& m, const IpmState& st) {
  Errors e;
  const VectorXd rd = p.Q * st.x + p.q + p.A_eq.transpose() * st.nu +
                      p.A_in.transpose() * st.lam - m.L.cwiseProduct(st.zl) +
                      m.U.cwiseProduct(st.zu);
  e.dual = inf_norm(rd);
  if (p.A_eq.rows()) {
    e.primal = std::max(e.primal,
                        inf_norm((p.A_eq * st.x - p.b_eq).cwiseQuotient(p.eq_scale)));
  }
  const VectorXd slack = p.b_in - p.A_in * st.x;
  for (Index i = 0; i < slack.size(); ++i) {
    e.primal = std::max(e.primal, -slack(i) / p.in_scale(i));
    e.comp = std::max(e.comp, std::abs(st.lam(i) * slack(i)));
  }
  for (Index j = 0; j < st.x.size(); ++j) {
    if (m.L(j) > 0) {
      e.primal = std::max(e.primal, p.lb(j) - st.x(j));
      e.comp = std::max(e.comp, std::abs(st.zl(j) * (st.x(j) - p.lb(j))));
    }
    if (m.U(j) > 0) {
      e.primal = std::max(e.primal, st.x(j) - p.ub(j));
      e.comp = std::max(e.comp, std::abs(st.zu(j) * (p.ub(j) - st.x(j))));
    }
  }
  return e;
}

double step_to_boundary(const VectorXd& v, const VectorXd& dv, const VectorXd* mask) {
  double a = 1.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (mask && (*mask)(i) <= 0) continue;
    if (dv(i) < 0) a = std::min(a, -v(i) / dv(i));
  }
  return a;
}

struct IpmOutcome {
  IpmState st;
  QpStatus status = QpStatus::max_iterations;
  int iterations = 0;
  bool timed_out = false;
};

IpmOutcome interior_point(const Reduced& p, const Masks& m, const QpSettings& set,
                          const VectorXd* x0) {
  const Index n = p.Q.rows();
  const Index me = p.A_eq.rows();
  const Index mi = p.A_in.rows();

  Eigen::SparseMatrix<double> Ain = p.A_in.sparseView();
  Eigen::SparseMatrix<double> AinT = Ain.transpose();

  IpmOutcome out;
  IpmState& st = out.st;
  st.x = VectorXd::Zero(n);
  if (x0 && x0->size() == n && x0->allFinite()) st.x = *x0;
  for (Index j = 0; j < n; ++j) {
    const double lo = p.lb(j), hi = p.ub(j);
    if (std::isfinite(lo) && std::isfinite(hi)) {
      const double pad = 0.1 * (hi - lo);
      st.x(j) = std::clamp(st.x(j), lo + pad, hi - pad);
    } else if (std::isfinite(lo)) {
      st.x(j) = std::max(st.x(j), lo + 1.0);
    } else if (std::isfinite(hi)) {
      st.x(j) = std::min(st.x(j), hi - 1.0);
    }
  }
  st.nu = VectorXd::Zero(me);
  st.lam = VectorXd::Ones(mi);
  st.s = (p.b_in - p.A_in * st.x).cwiseMax(1.0);
  st.wl = (st.x - m.lbf).cwiseMax(1.0);
  st.wu = (m.ubf - st.x).cwiseMax(1.0);
  st.zl = m.L;
  st.zu = m.U;

  const double tol_p = 0.1 * set.tol_feas;
  const double tol_d = 0.1 * set.tol_stat * (1.0 + inf_norm(p.q));
  const double tol_c = 0.1 * set.tol_comp;

  double best_primal = kInf;
  int best_primal_iter = 0;

  MatrixXd H(n, n);
  VectorXd dx, dnu, dlam, ds, dzl, dwl, dzu, dwu;
  for (int iter = 0;; ++iter) {
    out.iterations = iter;
    const VectorXd rd = p.Q * st.x + p.q + p.A_eq.transpose() * st.nu + AinT * st.lam -
                        m.L.cwiseProduct(st.zl) + m.U.cwiseProduct(st.zu);
    const VectorXd re = p.A_eq * st.x - p.b_eq;
    const VectorXd ri = Ain * st.x + st.s - p.b_in;
    const VectorXd rl = m.L.cwiseProduct(st.x - st.wl - m.lbf);
    const VectorXd ru = m.U.cwiseProduct(st.x + st.wu - m.ubf);
    const double mu =
        m.count > 0 ? (st.s.dot(st.lam) + m.L.cwiseProduct(st.wl).dot(st.zl) +
                       m.U.cwiseProduct(st.wu).dot(st.zu)) /
                          m.count
                    : 0.0;

    double primal = std::max(inf_norm(rl), inf_norm(ru));
    if (me) primal = std::max(primal, inf_norm(re.cwiseQuotient(p.eq_scale)));
    if (mi) primal = std::max(primal, inf_norm(ri.cwiseQuotient(p.in_scale)));
    const double dual = inf_norm(rd);

    if (primal <= tol_p && dual <= tol_d && mu <= tol_c) {
      out.status = QpStatus::optimal;
      return out;
    }
    if (iter >= set.max_iter) break;
    if (set.deadline && std::chrono::steady_clock::now() > *set.deadline) {
      out.timed_out = true;
      break;
    }

    if (primal < 0.5 * best_primal) {
      best_primal = primal;
      best_primal_iter = iter;
    }
    const double dual_size = std::max({inf_norm(st.lam), inf_norm(st.zl), inf_norm(st.zu),
                                       inf_norm(st.nu)});
    if (primal > tol_p && iter >= 8 &&
        (dual_size > 1e10 || (mu <= tol_c && iter - best_primal_iter >= 8))) {
      out.status = QpStatus::infeasible;
      return out;
    }
    if (inf_norm(st.x) > 1e9 && primal <= std::max(tol_p, 1e-6 * inf_norm(st.x))) {
      out.status = QpStatus::unbounded;
      return out;
    }

    // Reduced Newton matrix.
    const VectorXd D = st.lam.cwiseQuotient(st.s);
    VectorXd diag = m.L.cwiseProduct(st.zl).cwiseQuotient(st.wl) +
                    m.U.cwiseProduct(st.zu).cwiseQuotient(st.wu);
    Eigen::LLT<MatrixXd> llt;
    double reg = 1e-10;
    for (int attempt = 0; attempt < 10; ++attempt) {
      H = p.Q;
      if (mi) {
        Eigen::SparseMatrix<double> DA = D.asDiagonal() * Ain;
        Eigen::SparseMatrix<double> M = AinT * DA;
        H += M;
      }
      H.diagonal() += diag + VectorXd::Constant(n, reg);
      llt.compute(H);
      if (llt.info() == Eigen::Success) break;
      reg *= 100.0;
    }
    if (llt.info() != Eigen::Success) break;

    MatrixXd HinvAt;
    Eigen::LDLT<MatrixXd> schur;
    if (me) {
      HinvAt = llt.solve(p.A_eq.transpose());
      MatrixXd S = p.A_eq * HinvAt;
      S.diagonal().array() += 1e-12;
      schur.compute(S);
    }

    auto newton = [&](const VectorXd& rsl, const VectorXd& rwl, const VectorXd& rwu) {
      const VectorXd t_in = (-rsl + st.lam.cwiseProduct(ri)).cwiseQuotient(st.s);
      const VectorXd t_l = m.L.cwiseProduct(rwl + st.zl.cwiseProduct(rl)).cwiseQuotient(st.wl);
      const VectorXd t_u = m.U.cwiseProduct(rwu - st.zu.cwiseProduct(ru)).cwiseQuotient(st.wu);
      VectorXd rhs = -rd - t_l + t_u;
      if (mi) rhs -= AinT * t_in;
      if (me) {
        const VectorXd Hr = llt.solve(rhs);
        dnu = schur.solve(p.A_eq * Hr + re);
        dx = Hr - HinvAt * dnu;
      } else {
        dnu.resize(0);
        dx = llt.solve(rhs);
      }
      ds = -ri - Ain * dx;
      dlam = (-rsl - st.lam.cwiseProduct(ds)).cwiseQuotient(st.s);
      dwl = m.L.cwiseProduct(dx + rl);
      dzl = m.L.cwiseProduct(-rwl - st.zl.cwiseProduct(dwl)).cwiseQuotient(st.wl);
      dwu = m.U.cwiseProduct(-ru - dx);
      dzu = m.U.cwiseProduct(-rwu - st.zu.cwiseProduct(dwu)).cwiseQuotient(st.wu);
    };
    auto max_step = [&]() {
      double a = step_to_boundary(st.s, ds, nullptr);
      a = std::min(a, step_to_boundary(st.lam, dlam, nullptr));
      a = std::min(a, step_to_boundary(st.wl, dwl, &m.L));
      a = std::min(a, step_to_boundary(st.zl, dzl, &m.L));
      a = std::min(a, step_to_boundary(st.wu, dwu, &m.U));
      a = std::min(a, step_to_boundary(st.zu, dzu, &m.U));
      return a;
    };

    // Predictor.
    const VectorXd sl = st.s.cwiseProduct(st.lam);
    const VectorXd wzl = m.L.cwiseProduct(st.wl.cwiseProduct(st.zl));
    const VectorXd wzu = m.U.cwiseProduct(st.wu.cwiseProduct(st.zu));
    newton(sl, wzl, wzu);

    if (m.count > 0) {
      const double a_aff = max_step();
      const double mu_aff =
          ((st.s + a_aff * ds).dot(st.lam + a_aff * dlam) +
           m.L.cwiseProduct(st.wl + a_aff * dwl).dot(st.zl + a_aff * dzl) +
           m.U.cwiseProduct(st.wu + a_aff * dwu).dot(st.zu + a_aff * dzu)) /
          m.count;
      const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);
      const double target = sigma * mu;
      // Corrector with second-order term.
      const VectorXd c_sl = sl + ds.cwiseProduct(dlam) - VectorXd::Constant(mi, target);
      const VectorXd c_wl =
          wzl + m.L.cwiseProduct(dwl.cwiseProduct(dzl) - VectorXd::Constant(n, target));
      const VectorXd c_wu =
          wzu + m.U.cwiseProduct(dwu.cwiseProduct(dzu) - VectorXd::Constant(n, target));
      newton(c_sl, c_wl, c_wu);
    }

    double alpha = 1.0;
    if (m.count > 0) alpha = std::min(1.0, 0.995 * max_step());
    if (!dx.allFinite()) break;

    st.x += alpha * dx;
    if (me) st.nu += alpha * dnu;
    st.s += alpha * ds;
    st.lam += alpha * dlam;
    st.wl += alpha * dwl;
    st.zl += alpha * dzl;
    st.wu += alpha * dwu;
    st.zu += alpha * dzu;
    // Keep unused bound slots inert.
    for (Index j = 0; j < n; ++j) {
      if (m.L(j) <= 0) {
        st.wl(j) = 1.0;
        st.zl(j) = 0.0;
      }
      if (m.U(j) <= 0) {
        st.wu(j) = 1.0;
        st.zu(j) = 0.0;
      }
    }
  }

  if (!out.timed_out && inf_norm(st.x) > 1e9) out.status = QpStatus::unbounded;
  return out;
}

// Solve the equality-constrained QP of the active set guessed from the
// interior-point iterate. Returns true if the polished point was accepted.
bool polish(const Reduced& p, const Masks& m, const QpSettings& set, IpmState& st) {
  const Index n = p.Q.rows();
  const Index me = p.A_eq.rows();
  const Index mi = p.A_in.rows();

  std::vector<int> bound(n, 0);
  VectorXd xfix = VectorXd::Zero(n);
  std::vector<Index> F;
  for (Index j = 0; j < n; ++j) {
    if (m.L(j) > 0 && st.zl(j) > st.wl(j)) {
      bound[j] = -1;
      xfix(j) = p.lb(j);
    } else if (m.U(j) > 0 && st.zu(j) > st.wu(j)) {
      bound[j] = 1;
      xfix(j) = p.ub(j);
    } else {
      F.push_back(j);
    }
  }
  std::vector<Index> act;
  for (Index i = 0; i < mi; ++i) {
    if (st.lam(i) > st.s(i)) act.push_back(i);
  }
  const Index nf = static_cast<Index>(F.size());
  const Index ma = static_cast<Index>(act.size());
  const Index mc = me + ma;

  MatrixXd C(mc, n);
  VectorXd d(mc);
  if (me) {
    C.topRows(me) = p.A_eq;
    d.head(me) = p.b_eq;
  }
  for (Index k = 0; k < ma; ++k) {
    C.row(me + k) = p.A_in.row(act[k]);
    d(me + k) = p.b_in(act[k]);
  }
  d -= C * xfix;

  const Index dim = nf + mc;
  MatrixXd K = MatrixXd::Zero(dim, dim);
  K.topLeftCorner(nf, nf) = p.Q(F, F);
  const MatrixXd CF = C(Eigen::all, F);
  K.topRightCorner(nf, mc) = CF.transpose();
  K.bottomLeftCorner(mc, nf) = CF;
  VectorXd rhs(dim);
  rhs.head(nf) = -(p.q + p.Q * xfix)(F);
  rhs.tail(mc) = d;

  MatrixXd Kreg = K;
  Kreg.diagonal().head(nf).array() += 1e-9;
  Kreg.diagonal().tail(mc).array() -= 1e-9;
  Eigen::PartialPivLU<MatrixXd> lu(Kreg);
  VectorXd sol = lu.solve(rhs);
  for (int k = 0; k < 5; ++k) sol += lu.solve(rhs - K * sol);
  if (!sol.allFinite()) return false;

  IpmState cand = st;
  cand.x = xfix;
  cand.x(F) = sol.head(nf);
  cand.nu = sol.segment(nf, me);
  cand.lam = VectorXd::Zero(mi);
  for (Index k = 0; k < ma; ++k) cand.lam(act[k]) = sol(nf + me + k);
  const VectorXd g = p.Q * cand.x + p.q + p.A_eq.transpose() * cand.nu +
                     p.A_in.transpose() * cand.lam;
  cand.zl = VectorXd::Zero(n);
  cand.zu = VectorXd::Zero(n);
  for (Index j = 0; j < n; ++j) {
    if (bound[j] < 0) cand.zl(j) = g(j);
    if (bound[j] > 0) cand.zu(j) = -g(j);
  }

  const double dual_tol = 0.1 * set.tol_stat;
  if (mi && cand.lam.minCoeff() < -dual_tol) return false;
  if (n && (cand.zl.minCoeff() < -dual_tol || cand.zu.minCoeff() < -dual_tol)) return false;
  cand.lam = cand.lam.cwiseMax(0.0);
  cand.zl = cand.zl.cwiseMax(0.0);
  cand.zu = cand.zu.cwiseMax(0.0);

  const Errors before = reduced_errors(p, m, st);
  const Errors after = reduced_errors(p, m, cand);
  if (after.primal > std::max(before.primal, set.tol_feas)) return false;
  const double err_before = std::max({before.primal, before.dual, before.comp});
  const double err_after = std::max({after.primal, after.dual, after.comp});
  if (err_after > std::max(err_before, 0.1 * set.tol_feas)) return false;

  cand.s = (p.b_in - p.A_in * cand.x).cwiseMax(0.0);
  cand.wl = m.L.cwiseProduct((cand.x - m.lbf).cwiseMax(0.0)) + (VectorXd::Ones(n) - m.L);
  cand.wu = m.U.cwiseProduct((m.ubf - cand.x).cwiseMax(0.0)) + (VectorXd::Ones(n) - m.U);
  st = std::move(cand);
  return true;
}

nlohmann::json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    throw std::invalid_argument("read_qp_json: bad number '" + s + "'");
  }
  return j.get<double>();
}

nlohmann::json to_json(const VectorXd& v) {
  auto a = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

nlohmann::json to_json(const MatrixXd& M) {
  auto a = nlohmann::json::array();
  for (Index i = 0; i < M.rows(); ++i) a.push_back(to_json(VectorXd(M.row(i).transpose())));
  return a;
}

VectorXd vector_from(const nlohmann::json& j) {
  VectorXd v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = number_from(j[i]);
  return v;
}

MatrixXd matrix_from(const nlohmann::json& j, Index cols) {
  MatrixXd M(static_cast<Index>(j.size()), cols);
  for (Index i = 0; i < M.rows(); ++i) {
    if (static_cast<Index>(j[i].size()) != cols) {
      throw std::invalid_argument("read_qp_json: ragged matrix");
    }
    M.row(i) = vector_from(j[i]).transpose();
  }
  return M;
}

} // namespace

QuadraticProgram::QuadraticProgram(Index n)
    : Q(MatrixXd::Zero(n, n)), q(VectorXd::Zero(n)), A_eq(0, n), b_eq(0), A_in(0, n), b_in(0),
      lb(VectorXd::Constant(n, -kInf)), ub(VectorXd::Constant(n, kInf)) {}

void QuadraticProgram::add_equality(const Eigen::Ref<const Eigen::RowVectorXd>& row,
                                    double rhs) {
  append_row(A_eq, b_eq, row, rhs, num_vars());
}

void QuadraticProgram::add_inequality(const Eigen::Ref<const Eigen::RowVectorXd>& row,
                                      double rhs) {
  append_row(A_in, b_in, row, rhs, num_vars());
}

double QuadraticProgram::objective(const VectorXd& x) const {
  return 0.5 * x.dot(Q * x) + q.dot(x) + constant;
}

void QuadraticProgram::validate(bool check_psd) const {
  const Index n = num_vars();
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("QuadraticProgram: " + what);
  };
  if (Q.rows() != n || Q.cols() != n) fail("Q must be n x n");
  if (lb.size() != n || ub.size() != n) fail("bounds must have length n");
  if (A_eq.rows() != b_eq.size() || (A_eq.rows() > 0 && A_eq.cols() != n)) {
    fail("equality block has inconsistent dimensions");
  }
  if (A_in.rows() != b_in.size() || (A_in.rows() > 0 && A_in.cols() != n)) {
    fail("inequality block has inconsistent dimensions");
  }
  if (!Q.allFinite() || !q.allFinite() || !std::isfinite(constant)) fail("non-finite cost");
  if (!A_eq.allFinite() || !b_eq.allFinite() || !A_in.allFinite() || !b_in.allFinite()) {
    fail("non-finite constraint data");
  }
  for (Index j = 0; j < n; ++j) {
    if (std::isnan(lb(j)) || std::isnan(ub(j)) || lb(j) == kInf || ub(j) == -kInf) {
      fail("invalid bound at index " + std::to_string(j));
    }
    if (lb(j) > ub(j)) fail("lb > ub at index " + std::to_string(j));
  }
  const double scale = std::max(1.0, max_abs(Q));
  if (n && (Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) fail("Q is not symmetric");
  if (check_psd && n) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(Q, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-9 * scale) fail("Q is not positive semidefinite");
  }
}

std::string to_string(QpStatus status) {
  switch (status) {
  case QpStatus::optimal: return "optimal";
  case QpStatus::infeasible: return "infeasible";
  case QpStatus::unbounded: return "unbounded";
  case QpStatus::max_iterations: return "max_iterations";
  }
  return "unknown";
}

KktResiduals kkt_residuals(const QuadraticProgram& p, const QpSolution& sol) {
  KktResiduals k;
  const VectorXd& x = sol.x;
  VectorXd g = p.Q * x + p.q - sol.z_lower + sol.z_upper;
  if (p.A_eq.rows()) {
    g += p.A_eq.transpose() * sol.nu;
    k.primal = std::max(k.primal, inf_norm(p.A_eq * x - p.b_eq));
  }
  if (p.A_in.rows()) {
    g += p.A_in.transpose() * sol.lambda;
    const VectorXd slack = p.b_in - p.A_in * x;
    for (Index i = 0; i < slack.size(); ++i) {
      k.primal = std::max(k.primal, -slack(i));
      k.complementarity = std::max(k.complementarity, std::abs(sol.lambda(i) * slack(i)));
      k.dual_sign = std::max(k.dual_sign, -sol.lambda(i));
    }
  }
  k.stationarity = inf_norm(g);
  for (Index j = 0; j < x.size(); ++j) {
    const double zl = sol.z_lower(j), zu = sol.z_upper(j);
    k.dual_sign = std::max({k.dual_sign, -zl, -zu});
    if (std::isfinite(p.lb(j))) {
      k.primal = std::max(k.primal, p.lb(j) - x(j));
      k.complementarity = std::max(k.complementarity, std::abs(zl * (x(j) - p.lb(j))));
    } else {
      k.complementarity = std::max(k.complementarity, std::abs(zl));
    }
    if (std::isfinite(p.ub(j))) {
      k.primal = std::max(k.primal, x(j) - p.ub(j));
      k.complementarity = std::max(k.complementarity, std::abs(zu * (p.ub(j) - x(j))));
    } else {
      k.complementarity = std::max(k.complementarity, std::abs(zu));
    }
  }
  return k;
}

QpSolution QpSolver::solve(const QuadraticProgram& problem, const VectorXd* initial_guess) const {
  problem.validate(settings_.check_convexity);
  const Index n = problem.num_vars();

  QpSolution sol;
  sol.lambda = VectorXd::Zero(problem.A_in.rows());
  sol.nu = VectorXd::Zero(problem.A_eq.rows());
  sol.z_lower = VectorXd::Zero(n);
  sol.z_upper = VectorXd::Zero(n);

  const Reduced red = reduce(problem, settings_);
  sol.x = red.x_full;
  if (red.infeasible) {
    for (Index k = 0; k < static_cast<Index>(red.cols.size()); ++k) {
      const Index j = red.cols[k];
      sol.x(j) = std::clamp(0.0, problem.lb(j), problem.ub(j));
    }
    sol.status = QpStatus::infeasible;
    sol.objective = problem.objective(sol.x);
    sol.kkt = kkt_residuals(problem, sol);
    return sol;
  }

  const Masks masks = make_masks(red);
  VectorXd x0_red;
  const VectorXd* x0 = nullptr;
  if (initial_guess && initial_guess->size() == n) {
    x0_red = (*initial_guess)(red.cols);
    x0 = &x0_red;
  }
  IpmOutcome out = interior_point(red, masks, settings_, x0);
  if (settings_.polish && out.status == QpStatus::optimal) polish(red, masks, settings_, out.st);

  sol.status = out.status;
  sol.iterations = out.iterations;
  sol.timed_out = out.timed_out;

  const IpmState& st = out.st;
  const double inv_cs = 1.0 / red.cost_scale;
  for (Index k = 0; k < static_cast<Index>(red.cols.size()); ++k) {
    const Index j = red.cols[k];
    sol.x(j) = st.x(k);
    sol.z_lower(j) = masks.L(k) > 0 ? st.zl(k) * inv_cs : 0.0;
    sol.z_upper(j) = masks.U(k) > 0 ? st.zu(k) * inv_cs : 0.0;
  }
  for (Index k = 0; k < static_cast<Index>(red.eq_rows.size()); ++k) {
    sol.nu(red.eq_rows[k]) = st.nu(k) * red.eq_scale(k) * inv_cs;
  }
  for (Index k = 0; k < static_cast<Index>(red.in_rows.size()); ++k) {
    sol.lambda(red.in_rows[k]) = st.lam(k) * red.in_scale(k) * inv_cs;
  }
  // Duals of eliminated variables from the stationarity residual.
  if (red.cols.size() < static_cast<size_t>(n)) {
    VectorXd g = problem.Q * sol.x + problem.q;
    if (problem.A_eq.rows()) g += problem.A_eq.transpose() * sol.nu;
    if (problem.A_in.rows()) g += problem.A_in.transpose() * sol.lambda;
    for (Index j = 0; j < n; ++j) {
      if (!red.fixed[j]) continue;
      if (g(j) >= 0) sol.z_lower(j) = g(j);
      else sol.z_upper(j) = -g(j);
    }
  }
  sol.objective = problem.objective(sol.x);
  sol.kkt = kkt_residuals(problem, sol);
  return sol;
}

QpSolution solve_qp(const QuadraticProgram& problem, const QpSettings& settings) {
  return QpSolver(settings).solve(problem);
}

void write_qp_json(std::ostream& os, const QuadraticProgram& p) {
  nlohmann::json j;
  j["n"] = p.num_vars();
  j["Q"] = to_json(p.Q);
  j["q"] = to_json(p.q);
  j["constant"] = p.constant;
  j["A_eq"] = to_json(p.A_eq);
  j["b_eq"] = to_json(p.b_eq);
  j["A_in"] = to_json(p.A_in);
  j["b_in"] = to_json(p.b_in);
  j["lb"] = to_json(p.lb);
  j["ub"] = to_json(p.ub);
  os << j.dump(1) << '\n';
}

QuadraticProgram read_qp_json(std::istream& is) {
  const nlohmann::json j = nlohmann::json::parse(is);
  const Index n = j.at("n").get<Index>();
  QuadraticProgram p(n);
  p.Q = matrix_from(j.at("Q"), n);
  p.q = vector_from(j.at("q"));
  p.constant = j.value("constant", 0.0);
  p.A_eq = matrix_from(j.at("A_eq"), n);
  p.b_eq = vector_from(j.at("b_eq"));
  p.A_in = matrix_from(j.at("A_in"), n);
  p.b_in = vector_from(j.at("b_in"));
  p.lb = vector_from(j.at("lb"));
  p.ub = vector_from(j.at("ub"));
  p.validate(false);
  return p;
}

} // namespace aimpc
