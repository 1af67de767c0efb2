#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nestlearn/oa.hpp"

namespace nestlearn {

/// Per-(agent, alternative) attribute drawn uniformly from a finite value
/// set. Varying attributes are what identify the scale parameters; the
/// finite support keeps observation aggregation effective.
struct RandomAttribute {
  std::string name;
  std::vector<double> values;
  double coef = 1.0;  // generic coefficient in the default spec
};

/// Planted data-generating process: tree + scales + systematic utilities.
/// Default spec: one constant per alternative (first fixed to zero) plus one
/// generic coefficient per random attribute.
struct Scenario {
  std::vector<std::string> alternatives;
  NestingTree tree = NestingTree::flat(2);
  std::vector<double> mu;   // per nest slot
  std::vector<double> asc;  // per alternative, asc[0] == 0
  int n_agents = 0;
  std::uint64_t seed = 0;

  std::vector<RandomAttribute> random_vars;
  std::vector<std::string> variable_names;  // optional fixed attributes
  std::vector<double> attributes;           // m x vars, constant across agents
  std::optional<UtilitySpec> utility;       // overrides the default spec
  std::vector<double> beta_true;            // free params of `utility`

  UtilitySpec effective_spec() const;
  std::vector<double> true_beta() const;
  /// mu padded with 1.0 up to the tree's slot count.
  std::vector<double> full_mu() const;
  void validate() const;
};

Scenario scenario_from_json_file(const std::string& path);
Scenario scenario_from_json_text(const std::string& text);

/// Exact closed-form choice probabilities for given utilities (all
/// available): inclusive values bottom-up, conditional products top-down.
std::vector<double> tree_choice_probabilities(const NestingTree& tree,
                                              const std::vector<double>& mu,
                                              const std::vector<double>& utilities);

/// Probabilities of the scenario's deterministic part (random attributes at
/// zero). With no random attributes these are the exact choice probabilities.
std::vector<double> scenario_probabilities(const Scenario& scenario);

/// Categorical sampling from the closed-form probabilities with the seeded
/// counter generator; two equal seeds give identical datasets.
ChoiceDataset simulate(const Scenario& scenario);

struct RecoveryRow {
  int replication = 0;
  bool ok = false;         // learner ran to completion
  bool recovered = false;  // selected signature equals the planted one
  int M = 0, L = 1;
  std::string signature;
  std::vector<double> beta_hat;
  std::vector<double> cov_hat;  // normalized covariance entries, m x m
  int visited_trees = 0;
  std::string error;
};

struct RecoveryTable {
  int m = 0;
  int replications = 0;
  std::vector<std::string> param_names;
  std::string planted_signature;
  std::vector<RecoveryRow> rows;
  double recovery_rate = 0.0;
  // Across-replication means and standard errors (successful rows).
  std::vector<double> beta_mean, beta_se;
  std::vector<double> cov_mean, cov_se;
};

/// Seeded Monte Carlo recovery study: replication r simulates with seed
/// base+r, learns with the grid driver, and records the recovered structure,
/// parameters and implied covariance.
RecoveryTable monte_carlo(const Scenario& scenario, int replications,
                          const OAConfig& learner_config);

void write_recovery_csv(const RecoveryTable& table, const std::string& path);

}  // namespace nestlearn
