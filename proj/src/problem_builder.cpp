#include "aimpc/problem_builder.hpp"

#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace aimpc {

using Eigen::Index;

Index ProblemBuilder::add_variable(std::string name, double lb, double ub, VarKind kind,
                                   int priority) {
  if (!cost_.empty() || !in_.empty() || !eq_.empty()) {
    throw std::logic_error("ProblemBuilder: variables must precede expressions");
  }
  if (kind == VarKind::binary) {
    lb = std::max(lb, 0.0);
    ub = std::min(ub, 1.0);
  }
  names_.push_back(std::move(name));
  lb_.push_back(lb);
  ub_.push_back(ub);
  kind_.push_back(kind);
  priority_.push_back(priority);
  return num_vars() - 1;
}

Affine ProblemBuilder::var(Index j, double coeff) const {
  if (j < 0 || j >= num_vars()) throw std::out_of_range("ProblemBuilder: bad variable index");
  Affine e(Eigen::VectorXd::Zero(num_vars()), 0.0);
  e.a(j) = coeff;
  return e;
}

Affine ProblemBuilder::constant(double c) const {
  return Affine(Eigen::VectorXd::Zero(num_vars()), c);
}

void ProblemBuilder::check(const Affine& e) const {
  if (e.a.size() != num_vars()) {
    throw std::invalid_argument("ProblemBuilder: expression length does not match variables");
  }
}

void ProblemBuilder::add_square(double weight, const Affine& e, std::string tag) {
  check(e);
  if (weight < 0) throw std::invalid_argument("ProblemBuilder: negative weight on " + tag);
  cost_.push_back({weight, e, std::move(tag), false});
}

void ProblemBuilder::add_linear(double weight, const Affine& e, std::string tag) {
  check(e);
  cost_.push_back({weight, e, std::move(tag), true});
}

void ProblemBuilder::add_le(const Affine& lhs, double rhs, std::string tag) {
  check(lhs);
  in_.push_back({lhs.a, rhs - lhs.c});
  in_tags_.push_back(std::move(tag));
}

void ProblemBuilder::add_ge(const Affine& lhs, double rhs, std::string tag) {
  check(lhs);
  in_.push_back({-lhs.a, lhs.c - rhs});
  in_tags_.push_back(std::move(tag));
}

void ProblemBuilder::add_eq(const Affine& lhs, double rhs, std::string tag) {
  check(lhs);
  eq_.push_back({lhs.a, rhs - lhs.c});
  eq_tags_.push_back(std::move(tag));
}

MixedIntegerQP ProblemBuilder::build() const {
  const Index n = num_vars();
  MixedIntegerQP m;
  m.base = QuadraticProgram(n);
  QuadraticProgram& p = m.base;
  for (Index j = 0; j < n; ++j) {
    p.lb(j) = lb_[j];
    p.ub(j) = ub_[j];
    if (kind_[j] == VarKind::binary) m.binary_indices.push_back(j);
    if (kind_[j] == VarKind::integer) m.integer_indices.push_back(j);
  }
  m.branching_priority = priority_;

  for (const CostTerm& t : cost_) {
    if (t.linear) {
      p.q += t.weight * t.expr.a;
      p.constant += t.weight * t.expr.c;
      continue;
    }
    // w (a'z + c)^2 = 1/2 z'(2w aa')z + 2wc a'z + wc^2
    std::vector<Index> nz;
    for (Index j = 0; j < n; ++j)
      if (t.expr.a(j) != 0.0) nz.push_back(j);
    for (Index i : nz)
      for (Index j : nz) p.Q(i, j) += 2.0 * t.weight * t.expr.a(i) * t.expr.a(j);
    p.q += 2.0 * t.weight * t.expr.c * t.expr.a;
    p.constant += t.weight * t.expr.c * t.expr.c;
  }

  p.A_in.resize(static_cast<Index>(in_.size()), n);
  p.b_in.resize(static_cast<Index>(in_.size()));
  for (size_t i = 0; i < in_.size(); ++i) {
    p.A_in.row(static_cast<Index>(i)) = in_[i].a.transpose();
    p.b_in(static_cast<Index>(i)) = in_[i].b;
  }
  p.A_eq.resize(static_cast<Index>(eq_.size()), n);
  p.b_eq.resize(static_cast<Index>(eq_.size()));
  for (size_t i = 0; i < eq_.size(); ++i) {
    p.A_eq.row(static_cast<Index>(i)) = eq_[i].a.transpose();
    p.b_eq(static_cast<Index>(i)) = eq_[i].b;
  }
  return m;
}

std::vector<std::pair<std::string, Index>> ProblemBuilder::discrete_legend() const {
  std::vector<std::pair<std::string, Index>> out;
  for (Index j = 0; j < num_vars(); ++j) {
    if (kind_[j] != VarKind::continuous) out.emplace_back(names_[j], j);
  }
  return out;
}

void write_problem_json(std::ostream& os, const MixedIntegerQP& problem,
                        const ProblemBuilder& builder) {
  std::ostringstream qp;
  write_qp_json(qp, problem.base);
  nlohmann::json j;
  j["qp"] = nlohmann::json::parse(qp.str());
  nlohmann::json legend = nlohmann::json::object();
  for (const auto& [name, idx] : builder.discrete_legend()) legend[name] = idx;
  j["discrete_legend"] = legend;
  j["variables"] = builder.names();
  j["inequality_tags"] = builder.inequality_tags();
  j["equality_tags"] = builder.equality_tags();
  os << j.dump(1) << '\n';
}

StateExpr propagate(const DiscreteModel& m, const StateExpr& x, const std::vector<Affine>& u) {
  StateExpr out;
  const Eigen::Index nx = m.A.rows();
  for (Eigen::Index r = 0; r < nx; ++r) {
    Affine e = 0.0 * x[0];
    for (Eigen::Index c = 0; c < nx; ++c)
      if (m.A(r, c) != 0.0) e += m.A(r, c) * x[c];
    for (Eigen::Index c = 0; c < m.B.cols(); ++c)
      if (m.B(r, c) != 0.0) e += m.B(r, c) * u[c];
    out.push_back(std::move(e));
  }
  return out;
}

StateExpr constant_state(const ProblemBuilder& b, const Eigen::VectorXd& x) {
  StateExpr out;
  for (Eigen::Index i = 0; i < x.size(); ++i) out.push_back(b.constant(x(i)));
  return out;
}

} // namespace aimpc
