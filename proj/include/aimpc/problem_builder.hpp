#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aimpc/miqp.hpp"
#include "aimpc/vehicle_models.hpp"

namespace aimpc {

enum class VarKind { continuous, binary, integer };

/// a'z + c over a fixed-length decision vector z.
struct Affine {
  Eigen::VectorXd a;
  double c = 0.0;

  Affine() = default;
  Affine(Eigen::VectorXd coeffs, double constant) : a(std::move(coeffs)), c(constant) {}

  double eval(const Eigen::VectorXd& z) const { return a.dot(z) + c; }

  Affine& operator+=(const Affine& o) {
    a += o.a;
    c += o.c;
    return *this;
  }
  Affine& operator-=(const Affine& o) {
    a -= o.a;
    c -= o.c;
    return *this;
  }
  Affine& operator*=(double s) {
    a *= s;
    c *= s;
    return *this;
  }
  Affine& operator+=(double s) {
    c += s;
    return *this;
  }
};

inline Affine operator+(Affine x, const Affine& y) { return x += y; }
inline Affine operator-(Affine x, const Affine& y) { return x -= y; }
inline Affine operator*(double s, Affine x) { return x *= s; }
inline Affine operator+(Affine x, double s) { return x += s; }
inline Affine operator-(Affine x, double s) { return x += -s; }
inline Affine operator-(double s, Affine x) { return (-1.0 * x) + s; }

/// weight * (a'z + c)^2, or weight * (a'z + c) when linear.
struct CostTerm {
  double weight = 0.0;
  Affine expr;
  std::string tag;
  bool linear = false;
};

/// Collects named variables, squared cost terms and linear rows, then emits a
/// MixedIntegerQP. All variables must be added before expressions are formed.
class ProblemBuilder {
public:
  Eigen::Index add_variable(std::string name, double lb, double ub,
                            VarKind kind = VarKind::continuous, int priority = 0);

  Eigen::Index num_vars() const { return static_cast<Eigen::Index>(names_.size()); }

  Affine var(Eigen::Index j, double coeff = 1.0) const;
  Affine constant(double c) const;

  void add_square(double weight, const Affine& e, std::string tag);
  void add_linear(double weight, const Affine& e, std::string tag);

  void add_le(const Affine& lhs, double rhs, std::string tag);
  void add_ge(const Affine& lhs, double rhs, std::string tag);
  void add_eq(const Affine& lhs, double rhs, std::string tag);

  MixedIntegerQP build() const;

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<CostTerm>& cost_terms() const { return cost_; }
  const std::vector<std::string>& inequality_tags() const { return in_tags_; }
  const std::vector<std::string>& equality_tags() const { return eq_tags_; }
  /// name -> index for binary and integer variables.
  std::vector<std::pair<std::string, Eigen::Index>> discrete_legend() const;

private:
  struct Row {
    Eigen::VectorXd a;
    double b;
  };
  void check(const Affine& e) const;

  std::vector<std::string> names_;
  std::vector<double> lb_, ub_;
  std::vector<VarKind> kind_;
  std::vector<int> priority_;
  std::vector<CostTerm> cost_;
  std::vector<Row> in_, eq_;
  std::vector<std::string> in_tags_, eq_tags_;
};

using StateExpr = std::vector<Affine>;

/// x(i+1) = A x(i) + B u(i) propagated symbolically.
StateExpr propagate(const DiscreteModel& m, const StateExpr& x, const std::vector<Affine>& u);
StateExpr constant_state(const ProblemBuilder& b, const Eigen::VectorXd& x);

/// QP dump plus the variable legend and row tags.
void write_problem_json(std::ostream& os, const MixedIntegerQP& problem,
                        const ProblemBuilder& builder);

} // namespace aimpc
