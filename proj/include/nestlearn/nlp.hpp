#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nestlearn/likelihood.hpp"

namespace nestlearn {

struct NlpConfig {
  double kkt_tol = 1e-6;
  int max_iters = 500;         // inner quasi-Newton iterations, all rounds combined
  double mu_max = 10.0;
  double barrier_init = 0.1;
  double barrier_shrink = 0.2;
  int lbfgs_memory = 8;
  bool compute_se = false;
  int threads = 1;
};

enum class NlpStatus { Converged, IterLimit, Degenerate };

struct NlpResult {
  ModelParams params;
  double negloglik = 0.0;
  NlpStatus status = NlpStatus::Converged;
  double kkt_residual = 0.0;
  int iterations = 0;
  std::optional<std::vector<double>> se_beta;
  std::optional<std::vector<double>> se_mu;   // per nest slot, NaN for excluded
  std::vector<int> boundary_mu;               // slots whose scale sits on a constraint
  std::vector<std::string> active_constraints;
  bool se_singular = false;
};

/// Fixed-tree maximum likelihood: minimizes the negative log-likelihood over
/// beta and the included scales subject to 1 <= mu_parent <= mu_child <= mu_max
/// along tree edges (log-barrier interior method, L-BFGS inner iterations).
NlpResult estimate(const ChoiceDataset& data, const CompiledSpec& spec, const NestingTree& tree,
                   std::optional<ModelParams> init, const NlpConfig& config = {});

struct StdErrors {
  std::vector<double> se_beta;
  std::vector<double> se_mu;      // per nest slot, NaN for excluded
  std::vector<int> unreliable_mu; // slots flagged boundary-unreliable
  bool singular = false;
};

/// Square roots of the diagonal of the inverse observed information
/// (numeric Hessian of the negative log-likelihood, central differences of
/// the analytic gradient). Scales on a binding constraint are flagged.
StdErrors standard_errors(const ChoiceDataset& data, const CompiledSpec& spec,
                          const NestingTree& tree, const ModelParams& params,
                          double mu_max = 10.0);

}  // namespace nestlearn
