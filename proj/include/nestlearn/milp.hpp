#pragma once

#include <optional>
#include <ostream>
#include <set>
#include <vector>

#include "nestlearn/bnb.hpp"
#include "nestlearn/likelihood.hpp"
#include "nestlearn/nesttree.hpp"

namespace nestlearn {

struct MasterConfig {
  int m = 0;
  int M = 0;                    // exact nest count
  int L = 1;                    // nesting levels; chain fixes one depth-L path
  int n_params = 0;             // beta dimension in linearization cuts
  double mu_max = 10.0;
  double rho = 1000.0;          // slack penalty on linearization cuts
  double eta_lb = -1e9;
  double beta_box = 50.0;
  bool feasibility_only = false;  // drop eta/beta/mu and all cuts
};

/// One outer-approximation cut: eta + s >= f + grad_f' (z - anchor), with z
/// spanning edge indicators, beta and scales.
struct LinearizationCut {
  double f_value = 0.0;
  std::vector<double> grad_x;       // per candidate edge, d(-loglik)/dx
  std::vector<double> grad_beta;
  std::vector<double> grad_mu;      // per nest slot
  std::vector<double> x_anchor;     // 0/1 per candidate edge
  std::vector<double> beta_anchor;
  std::vector<double> mu_anchor;
};

/// Lower-bounding master: static arborescence/scale/regularization
/// constraints plus accumulating linearization, cycle and no-good cuts.
/// Cycle elimination rows are never materialized up front; see solve_master.
class MasterProblem {
 public:
  explicit MasterProblem(const MasterConfig& cfg);

  const MasterConfig& config() const { return cfg_; }
  const std::vector<Edge>& edges() const { return edges_; }
  int num_linearizations() const { return static_cast<int>(cuts_.size()); }
  int num_no_goods() const { return static_cast<int>(no_goods_.size()); }
  int num_cycle_cuts() const { return static_cast<int>(cycles_.size()); }

  void add_linearization(LinearizationCut cut);
  /// Excludes one exact 0/1 edge vector (the structure's edge count is
  /// pinned, so the one-sided cardinality form suffices).
  void add_no_good(const std::vector<char>& x_active);
  /// Subtour constraint restricted to the given node set.
  void add_cycle_cut(const std::vector<int>& nodes);
  /// Bans a root-descending internal path of length >= L outright: every
  /// tree containing it is too tall.
  void add_path_cut(const std::vector<int>& path_nodes);

  struct Solution {
    NestingTree tree;
    double eta = 0.0;
    double objective = 0.0;
    std::vector<char> x_active;
    std::vector<Violation> violations;  // cycles show up here
    long nodes = 0;
  };
  /// One solve of the current pool, no separation.
  std::optional<Solution> solve_once(MilpBackend& backend) const;

  /// Plain-text model dump for debugging (one objective line, one line per
  /// row; not a compatibility promise).
  void dump(std::ostream& os) const;

  struct Stats {
    int solves = 0;
    long nodes = 0;
    int cycle_cuts = 0;
    int height_cuts = 0;
    int path_cuts = 0;
    int signature_cuts = 0;
  };

 private:
  MilpProblem build() const;

  MasterConfig cfg_;
  NodeIds ids_;
  std::vector<Edge> edges_;
  std::vector<LinearizationCut> cuts_;
  std::vector<std::vector<char>> no_goods_;
  std::vector<std::vector<int>> cycles_;
  std::vector<std::vector<int>> banned_paths_;
};

/// Cut-and-resolve loop: solves the master, lazily separating cycles,
/// height violations and already-visited signatures, until a valid unvisited
/// tree with exactly M nests and height <= L appears.
/// Returns nullopt when the search space is exhausted (normal termination).
std::optional<std::pair<NestingTree, double>> solve_master(
    MasterProblem& mp, MilpBackend& backend, const std::set<std::string>& visited_signatures,
    MasterProblem::Stats* stats = nullptr, int max_rounds = 500);

/// Any valid tree with exactly M nests and height exactly L (feasibility
/// master with eta >= 0). Throws InfeasibleRegularization when none exists.
NestingTree find_initial_tree(int m, int M, int L, MilpBackend& backend, double mu_max = 10.0);

/// Grid rule shared by the driver: M = 0 pairs with L = 1 only; M >= 1 pairs
/// with 2 <= L <= M+1 (structural existence still goes through the master).
bool regularization_candidate(int m, int M, int L);

/// Exact existence test for a tree with M nests and height exactly L over m
/// alternatives: pack the nests into components of at most L-1 levels with
/// two children each; leaves needed = M + components (+1 when the root would
/// otherwise have a single child).
bool structurally_feasible(int m, int M, int L);

}  // namespace nestlearn
