#pragma once

#include <vector>

#include "nestlearn/lp.hpp"

namespace nestlearn {

struct MilpProblem {
  LinearProblem lp;
  std::vector<int> integers;          // variable indices required integral
  std::vector<int> branch_priority;   // optional, higher branches first
};

struct MilpResult {
  LpStatus status = LpStatus::Optimal;
  double obj = 0.0;
  std::vector<double> x;
  long nodes = 0;
};

/// Contract for the master solver: minimize a linear objective over linear
/// constraints with declared integer variables, exactly (integrality
/// tolerance 1e-6) and deterministically for identical input.
class MilpBackend {
 public:
  virtual ~MilpBackend() = default;
  virtual MilpResult solve(const MilpProblem& problem) = 0;
};

/// Embedded branch-and-bound over the bounded-variable simplex: best-first
/// node selection, most-fractional branching.
class BnbBackend final : public MilpBackend {
 public:
  explicit BnbBackend(double abs_gap = 1e-6, long node_limit = 500000)
      : abs_gap_(abs_gap), node_limit_(node_limit) {}
  MilpResult solve(const MilpProblem& problem) override;

 private:
  double abs_gap_;
  long node_limit_;
};

}  // namespace nestlearn
