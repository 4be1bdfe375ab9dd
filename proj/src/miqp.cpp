#include "aimpc/miqp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <stdexcept>

namespace aimpc {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

using Clock = std::chrono::steady_clock;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Activity-based bound tightening of discrete variables over the rows that
// contain at least one of them.
class Propagator {
public:
  Propagator(const QuadraticProgram& p, const std::vector<char>& discrete) : discrete_(discrete) {
    auto add = [&](const Eigen::MatrixXd& A, const VectorXd& b, bool both) {
      for (Index i = 0; i < A.rows(); ++i) {
        Row r;
        bool has_discrete = false;
        for (Index j = 0; j < A.cols(); ++j) {
          if (A(i, j) != 0.0) {
            r.nz.emplace_back(j, A(i, j));
            has_discrete = has_discrete || discrete_[j];
          }
        }
        if (!has_discrete) continue;
        r.b = b(i);
        rows_.push_back(r);
        if (both) {
          for (auto& e : r.nz) e.second = -e.second;
          r.b = -r.b;
          rows_.push_back(std::move(r));
        }
      }
    };
    add(p.A_in, p.b_in, false);
    add(p.A_eq, p.b_eq, true);
  }

  bool run(VectorXd& lb, VectorXd& ub) const {
    for (int round = 0; round < 8; ++round) {
      bool changed = false;
      for (const Row& r : rows_) {
        double finite = 0.0;
        int n_inf = 0;
        Index inf_col = -1;
        for (const auto& [j, a] : r.nz) {
          const double c = a > 0 ? a * lb(j) : a * ub(j);
          if (std::isinf(c)) {
            ++n_inf;
            inf_col = j;
          } else {
            finite += c;
          }
        }
        const double slack_tol = 1e-7 * (1.0 + std::abs(r.b));
        if (n_inf == 0 && finite > r.b + slack_tol) return false;
        if (n_inf > 1) continue;
        for (const auto& [j, a] : r.nz) {
          if (!discrete_[j]) continue;
          double rest;
          if (n_inf == 0) {
            rest = finite - (a > 0 ? a * lb(j) : a * ub(j));
          } else if (inf_col == j) {
            rest = finite;
          } else {
            continue;
          }
          const double limit = (r.b - rest) / a;
          if (a > 0) {
            const double nu = std::floor(limit + 1e-6);
            if (nu < ub(j)) {
              ub(j) = nu;
              changed = true;
            }
          } else {
            const double nl = std::ceil(limit - 1e-6);
            if (nl > lb(j)) {
              lb(j) = nl;
              changed = true;
            }
          }
          if (lb(j) > ub(j)) return false;
        }
      }
      if (!changed) break;
    }
    return true;
  }

private:
  struct Row {
    std::vector<std::pair<Index, double>> nz;
    double b = 0.0;
  };
  std::vector<Row> rows_;
  const std::vector<char>& discrete_;
};

struct Node {
  std::vector<double> lb, ub; // discrete variables only
  double bound = -kInf;
  int depth = 0;
  long id = 0;
};

struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;
    return a.id > b.id;
  }
};

} // namespace

std::vector<Index> MixedIntegerQP::discrete_indices() const {
  std::vector<Index> d(binary_indices);
  d.insert(d.end(), integer_indices.begin(), integer_indices.end());
  std::sort(d.begin(), d.end());
  return d;
}

void MixedIntegerQP::validate() const {
  const Index n = base.num_vars();
  const auto d = discrete_indices();
  for (size_t k = 0; k < d.size(); ++k) {
    if (d[k] < 0 || d[k] >= n) throw std::invalid_argument("MixedIntegerQP: index out of range");
    if (k > 0 && d[k] == d[k - 1]) {
      throw std::invalid_argument("MixedIntegerQP: binary and integer index sets overlap");
    }
    if (!std::isfinite(base.lb(d[k])) || !std::isfinite(base.ub(d[k]))) {
      throw std::invalid_argument("MixedIntegerQP: discrete variable without finite bounds");
    }
  }
  if (!branching_priority.empty() && static_cast<Index>(branching_priority.size()) != n) {
    throw std::invalid_argument("MixedIntegerQP: branching_priority must be empty or size n");
  }
}

std::string to_string(MiqpStatus status) {
  switch (status) {
  case MiqpStatus::optimal: return "optimal";
  case MiqpStatus::feasible_incumbent: return "feasible_incumbent";
  case MiqpStatus::infeasible: return "infeasible";
  case MiqpStatus::timeout_no_incumbent: return "timeout_no_incumbent";
  }
  return "unknown";
}

QuadraticProgram fix_and_relax(const MixedIntegerQP& problem, const IntegerAssignment& assignment) {
  problem.validate();
  QuadraticProgram p = problem.base;
  for (Index j : problem.binary_indices) {
    p.lb(j) = std::max(p.lb(j), 0.0);
    p.ub(j) = std::min(p.ub(j), 1.0);
  }
  const auto d = problem.discrete_indices();
  for (const auto& [j, value] : assignment) {
    if (!std::binary_search(d.begin(), d.end(), j)) {
      throw std::invalid_argument("fix_and_relax: index " + std::to_string(j) +
                                  " is not a discrete variable");
    }
    const double v = static_cast<double>(value);
    if (v < p.lb(j) - 1e-9 || v > p.ub(j) + 1e-9) {
      throw std::invalid_argument("fix_and_relax: value out of bounds for index " +
                                  std::to_string(j));
    }
    p.lb(j) = p.ub(j) = v;
    // Fold the column into constants.
    p.constant += 0.5 * p.Q(j, j) * v * v + p.q(j) * v;
    p.q += p.Q.col(j) * v;
    p.q(j) = 0.0;
    p.Q.row(j).setZero();
    p.Q.col(j).setZero();
    if (p.A_in.rows()) {
      p.b_in -= p.A_in.col(j) * v;
      p.A_in.col(j).setZero();
    }
    if (p.A_eq.rows()) {
      p.b_eq -= p.A_eq.col(j) * v;
      p.A_eq.col(j).setZero();
    }
  }
  return p;
}

MiqpSolution solve_miqp(const MixedIntegerQP& problem, const MiqpConfig& cfg,
                        const std::vector<IntegerAssignment>& warm_starts) {
  const auto t0 = Clock::now();
  problem.validate();
  problem.base.validate(cfg.qp.check_convexity);

  std::optional<Clock::time_point> deadline;
  if (std::isfinite(cfg.time_limit)) {
    deadline = t0 + std::chrono::duration_cast<Clock::duration>(
                        std::chrono::duration<double>(std::max(0.0, cfg.time_limit)));
  }
  auto deadline_hit = [&] { return deadline && Clock::now() >= *deadline; };

  QpSettings relax_settings = cfg.qp;
  relax_settings.check_convexity = false;
  relax_settings.deadline = deadline;
  relax_settings.polish = false;
  QpSettings leaf_settings = relax_settings;
  leaf_settings.polish = cfg.qp.polish;
  const QpSolver relax_solver(relax_settings);
  const QpSolver leaf_solver(leaf_settings);

  const QuadraticProgram& base = problem.base;
  const Index n = base.num_vars();
  const std::vector<Index> disc = problem.discrete_indices();
  const size_t nd = disc.size();
  std::vector<char> is_discrete(n, 0);
  for (Index j : disc) is_discrete[j] = 1;
  const Propagator propagator(base, is_discrete);

  VectorXd root_lb = base.lb, root_ub = base.ub;
  for (Index j : problem.binary_indices) {
    root_lb(j) = std::max(root_lb(j), 0.0);
    root_ub(j) = std::min(root_ub(j), 1.0);
  }
  for (Index j : disc) {
    root_lb(j) = std::ceil(root_lb(j) - 1e-9);
    root_ub(j) = std::floor(root_ub(j) + 1e-9);
  }

  auto priority = [&](Index j) {
    return problem.branching_priority.empty() ? 0 : problem.branching_priority[j];
  };

  MiqpSolution out;
  out.x = VectorXd::Zero(n);
  QuadraticProgram work = base;
  std::set<std::vector<long>> tried;
  bool stopped_by_time = false;

  auto cutoff = [&] {
    if (!std::isfinite(out.objective)) return kInf;
    return out.objective - cfg.gap_tol * std::max(1.0, std::abs(out.objective));
  };

  // Solve with every discrete variable fixed. Returns true on a new incumbent.
  auto try_assignment = [&](const std::vector<long>& values, int warm_index) {
    if (!tried.insert(values).second) return false;
    VectorXd lb = root_lb, ub = root_ub;
    for (size_t k = 0; k < nd; ++k) {
      const double v = static_cast<double>(values[k]);
      if (v < root_lb(disc[k]) || v > root_ub(disc[k])) return false;
      lb(disc[k]) = ub(disc[k]) = v;
    }
    if (!propagator.run(lb, ub)) return false;
    work.lb = lb;
    work.ub = ub;
    const QpSolution s = leaf_solver.solve(work);
    ++out.qp_solves;
    if (s.timed_out) stopped_by_time = true;
    if (s.status != QpStatus::optimal || s.objective >= out.objective) return false;
    out.objective = s.objective;
    out.x = s.x;
    for (size_t k = 0; k < nd; ++k) out.x(disc[k]) = static_cast<double>(values[k]);
    out.incumbent_from_warm_start = warm_index;
    return true;
  };

  for (size_t w = 0; w < warm_starts.size() && !deadline_hit() && !stopped_by_time; ++w) {
    std::vector<long> values(nd);
    bool complete = true;
    for (size_t k = 0; k < nd && complete; ++k) {
      const auto it = warm_starts[w].find(disc[k]);
      if (it == warm_starts[w].end()) complete = false;
      else values[k] = it->second;
    }
    if (complete) try_assignment(values, static_cast<int>(w));
  }

  std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
  {
    Node root;
    root.lb.resize(nd);
    root.ub.resize(nd);
    for (size_t k = 0; k < nd; ++k) {
      root.lb[k] = root_lb(disc[k]);
      root.ub[k] = root_ub(disc[k]);
    }
    open.push(std::move(root));
  }
  long next_id = 1;
  std::optional<Node> dive;
  bool limited = stopped_by_time;

  while (!limited) {
    Node node;
    if (dive) {
      node = std::move(*dive);
      dive.reset();
    } else {
      if (open.empty()) break;
      node = open.top();
      open.pop();
    }
    if (node.bound >= cutoff()) continue;
    if ((cfg.node_limit >= 0 && out.nodes_explored >= cfg.node_limit) || deadline_hit()) {
      open.push(std::move(node));
      limited = true;
      break;
    }
    ++out.nodes_explored;

    VectorXd lb = root_lb, ub = root_ub;
    for (size_t k = 0; k < nd; ++k) {
      lb(disc[k]) = node.lb[k];
      ub(disc[k]) = node.ub[k];
    }
    auto log = [&](const char* what, double bound, Index var) {
      if (!cfg.log) return;
      *cfg.log << "node " << node.id << " depth " << node.depth << " bound " << bound
               << " incumbent " << out.objective << " branch " << var << ' ' << what << '\n';
    };
    if (!propagator.run(lb, ub)) {
      log("propagated-infeasible", node.bound, -1);
      continue;
    }
    work.lb = lb;
    work.ub = ub;
    const QpSolution s = relax_solver.solve(work);
    ++out.qp_solves;
    if (s.timed_out) {
      open.push(std::move(node));
      limited = true;
      break;
    }
    if (s.status == QpStatus::infeasible ||
        (s.status != QpStatus::optimal && s.kkt.primal > 1e3 * cfg.qp.tol_feas)) {
      log("infeasible", node.bound, -1);
      continue;
    }
    const double bound = std::max(node.bound, s.objective);
    if (bound >= cutoff()) {
      log("pruned", bound, -1);
      continue;
    }

    std::vector<long> rounded(nd);
    Index branch = -1;
    size_t branch_k = 0;
    double best_frac = 0.0;
    for (size_t k = 0; k < nd; ++k) {
      const double v = std::clamp(s.x(disc[k]), lb(disc[k]), ub(disc[k]));
      rounded[k] = std::lround(v);
      const double f = v - std::floor(v);
      const double frac = std::min(f, 1.0 - f);
      if (frac <= cfg.integrality_tol) continue;
      bool better = branch < 0 || frac > best_frac + 1e-9;
      if (!better && frac >= best_frac - 1e-9) better = priority(disc[k]) < priority(branch);
      if (better) {
        best_frac = frac;
        branch = disc[k];
        branch_k = k;
      }
    }

    try_assignment(rounded, -1);
    if (stopped_by_time) {
      limited = true;
      break;
    }
    if (branch < 0 || bound >= cutoff()) {
      log(branch < 0 ? "integral" : "solved-by-rounding", bound, -1);
      continue;
    }
    log("branch", bound, branch);

    const double v = s.x(branch);
    Node down, up;
    down.lb = up.lb = std::vector<double>(nd);
    down.ub = up.ub = std::vector<double>(nd);
    for (size_t k = 0; k < nd; ++k) {
      down.lb[k] = up.lb[k] = lb(disc[k]);
      down.ub[k] = up.ub[k] = ub(disc[k]);
    }
    down.ub[branch_k] = std::floor(v);
    up.lb[branch_k] = std::floor(v) + 1.0;
    down.bound = up.bound = bound;
    down.depth = up.depth = node.depth + 1;
    down.id = next_id++;
    up.id = next_id++;
    if (v - std::floor(v) >= 0.5) {
      dive = std::move(up);
      open.push(std::move(down));
    } else {
      dive = std::move(down);
      open.push(std::move(up));
    }
  }

  if (dive) open.push(std::move(*dive));
  const bool have = std::isfinite(out.objective);
  if (!limited) {
    out.bound = have ? out.objective : kInf;
  } else {
    double b = open.empty() ? out.objective : open.top().bound;
    out.bound = have ? std::min(b, out.objective) : b;
  }
  if (have) {
    out.gap = std::max(0.0, out.objective - out.bound) / std::max(1.0, std::abs(out.objective));
    out.status = (!limited || out.gap <= cfg.gap_tol) ? MiqpStatus::optimal
                                                       : MiqpStatus::feasible_incumbent;
  } else {
    out.status = limited ? MiqpStatus::timeout_no_incumbent : MiqpStatus::infeasible;
  }
  out.wall_time = std::chrono::duration<double>(Clock::now() - t0).count();
  return out;
}

} // namespace aimpc
