#pragma once

#include <iosfwd>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "aimpc/qp.hpp"

namespace aimpc {

/// Variable index -> integer value.
using IntegerAssignment = std::map<Eigen::Index, long>;

struct MixedIntegerQP {
  QuadraticProgram base;
  std::vector<Eigen::Index> binary_indices;
  std::vector<Eigen::Index> integer_indices;
  /// Optional per-variable priority (lower branches first); empty or sized n.
  std::vector<int> branching_priority;

  /// Binary and integer indices together, in ascending order.
  std::vector<Eigen::Index> discrete_indices() const;

  /// Throws std::invalid_argument on overlapping or out-of-range index sets,
  /// non-finite bounds on discrete variables, or a malformed priority vector.
  void validate() const;
};

enum class MiqpStatus { optimal, feasible_incumbent, infeasible, timeout_no_incumbent };

std::string to_string(MiqpStatus status);

struct MiqpConfig {
  double time_limit = std::numeric_limits<double>::infinity(); // s
  double gap_tol = 1e-4;                                       // relative
  long node_limit = -1;                                        // < 0: unlimited
  double integrality_tol = 1e-6;
  QpSettings qp;
  /// One line per node when set.
  std::ostream* log = nullptr;
};

struct MiqpSolution {
  MiqpStatus status = MiqpStatus::timeout_no_incumbent;
  Eigen::VectorXd x;
  double objective = std::numeric_limits<double>::infinity();
  double bound = -std::numeric_limits<double>::infinity();
  /// (objective - bound) / max(1, |objective|); 0 when proven optimal.
  double gap = std::numeric_limits<double>::infinity();
  long nodes_explored = 0;
  long qp_solves = 0;
  double wall_time = 0.0; // s
  /// Index into the warm-start list of the assignment that produced the
  /// final incumbent, or -1.
  int incumbent_from_warm_start = -1;
};

/// Fixes the assigned variables (lb = ub = value) and folds their columns into
/// the constraint right-hand sides and the cost, so their coefficients become
/// exactly zero. Remaining binaries are relaxed to [0, 1] within their bounds.
/// Throws std::invalid_argument for non-discrete indices or values outside the
/// variable's bounds.
QuadraticProgram fix_and_relax(const MixedIntegerQP& problem, const IntegerAssignment& assignment);

/// Branch and bound over QP relaxations. Warm starts are probed in order
/// before the search; infeasible or out-of-bound ones are skipped.
MiqpSolution solve_miqp(const MixedIntegerQP& problem, const MiqpConfig& config = {},
                        const std::vector<IntegerAssignment>& warm_starts = {});

} // namespace aimpc
