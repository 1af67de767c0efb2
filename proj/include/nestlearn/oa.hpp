#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <utility>

#include "nestlearn/milp.hpp"
#include "nestlearn/nlp.hpp"

namespace nestlearn {

struct OAConfig {
  int max_oa_iterations = 30;
  double mu_max = 10.0;
  double rho = 1000.0;
  double cv_split = 0.25;  // validation fraction (3:1 split)
  std::uint64_t seed = 0;
  enum class Termination { IterLimit, WorseningNlp };
  Termination termination = Termination::IterLimit;
  int threads = 1;
  NlpConfig nlp;
  std::optional<std::pair<int, int>> single_cell;  // restrict the grid to one (M, L)
};

struct IterTrace {
  int iteration = 0;
  double z_nlp = 0.0;
  double z_milp = std::numeric_limits<double>::quiet_NaN();  // NaN: no pivot followed
  std::string signature;
};

struct CellResult {
  int M = 0;
  int L = 1;
  bool feasible = false;
  std::string error;
  std::optional<NestingTree> tree;  // incumbent
  ModelParams params;
  double train_negloglik = std::numeric_limits<double>::infinity();
  double val_negloglik = std::numeric_limits<double>::infinity();
  int visited_trees = 0;
  MasterProblem::Stats master_stats;
  std::vector<IterTrace> trace;
};

struct OAResult {
  std::vector<CellResult> cells;
  int selected = -1;  // index into cells
  std::optional<NestingTree> selected_tree;
  std::optional<NlpResult> refit;  // full-data refit of the winner
  std::vector<double> covariance;             // raw utility^2 units
  std::vector<double> covariance_normalized;  // without the pi^2/6 factor
  std::size_t n_train = 0, n_val = 0;

  int total_visited() const {
    int n = 0;
    for (const auto& c : cells) n += c.visited_trees;
    return n;
  }
};

/// Seeded deterministic split into (train, validation) index lists; original
/// observation order is preserved within each side.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double val_fraction, std::uint64_t seed);

/// One (M, L) cell of Algorithm 1: alternate the constrained estimation and
/// the master pivot, cutting off every visited signature, until the master is
/// infeasible or the termination rule fires. The incumbent is the visited
/// tree with the best training objective.
CellResult run_cell(const ChoiceDataset& train, const ChoiceDataset& val, const UtilitySpec& spec,
                    int M, int L, const OAConfig& config);

/// Full grid sweep with validation-based selection and a full-data refit of
/// the winning structure.
OAResult run_grid(const ChoiceDataset& data, const UtilitySpec& spec, const OAConfig& config);

}  // namespace nestlearn
