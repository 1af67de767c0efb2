#pragma once

#include <limits>
#include <string>
#include <vector>

namespace nestlearn {

constexpr double kLpInf = std::numeric_limits<double>::infinity();

/// min c'x subject to rows of {<=, =, >=} and variable bounds.
struct LinearProblem {
  struct Row {
    std::vector<std::pair<int, double>> coeffs;
    char sense;  // '<', '=', '>'
    double rhs;
  };

  std::vector<double> obj, lb, ub;
  std::vector<Row> rows;

  int num_vars() const { return static_cast<int>(obj.size()); }
  int add_var(double lower, double upper, double cost) {
    lb.push_back(lower);
    ub.push_back(upper);
    obj.push_back(cost);
    return num_vars() - 1;
  }
  void add_row(std::vector<std::pair<int, double>> coeffs, char sense, double rhs) {
    rows.push_back({std::move(coeffs), sense, rhs});
  }
};

enum class LpStatus { Optimal, Infeasible, Unbounded, IterLimit };

struct LpResult {
  LpStatus status = LpStatus::Optimal;
  double obj = 0.0;
  std::vector<double> x;
};

/// Bounded-variable two-phase primal simplex (dense tableau, Bland's rule
/// fallback on stalling). Deterministic for identical input.
LpResult solve_lp(const LinearProblem& problem);

}  // namespace nestlearn
