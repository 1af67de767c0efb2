#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "nestlearn/choicedata.hpp"
#include "nestlearn/nesttree.hpp"

namespace nestlearn {

/// Taste parameters plus one scale per nest slot (root fixed at 1; entries
/// for excluded slots are carried along but never read).
struct ModelParams {
  std::vector<double> beta;
  std::vector<double> mu;

  static ModelParams zero(int n_params, int n_slots) {
    return {std::vector<double>(n_params, 0.0), std::vector<double>(n_slots, 1.0)};
  }
};

using Edge = std::pair<int, int>;  // (origin node id, target node id)

/// Candidate edge set of the complete structure graph: root and every nest
/// slot may point at any other nest or any leaf. No leaf origins, no edges
/// into the root, no self-arcs. Order is fixed (origins ascending, nests
/// before leaves per origin) and shared with the master problem.
std::vector<Edge> candidate_edges(const NodeIds& ids);

struct LikelihoodReport {
  double loglik = 0.0;
  std::vector<double> grad_beta;
  std::vector<double> grad_mu;               // per nest slot; zero for excluded
  std::map<Edge, double> grad_edges;
  std::vector<double> per_observation;       // log prob of the chosen alternative
};

/// Bound evaluator for one (dataset, spec, tree): precomputes the tree walk
/// order once and evaluates the log-likelihood and its gradients with a
/// single leaves-to-root and root-to-leaves pass per observation.
class Evaluator {
 public:
  Evaluator(const ChoiceDataset& data, const CompiledSpec& spec, const NestingTree& tree,
            int threads = 1);

  double loglik(const ModelParams& params) const;
  /// Returns loglik; fills analytic gradients for beta and free scales.
  double loglik_grad(const ModelParams& params, std::vector<double>& grad_beta,
                     std::vector<double>& grad_mu) const;
  LikelihoodReport report(const ModelParams& params, bool with_edges, bool with_per_obs) const;

  /// Choice probabilities of one observation (0 for unavailable).
  std::vector<double> choice_probabilities(const ModelParams& params, int n) const;

  const NestingTree& tree() const { return tree_; }
  const ChoiceDataset& data() const { return data_; }
  const CompiledSpec& spec() const { return spec_; }

 private:
  struct Scratch;
  void eval_observation(const ModelParams& params, int n, Scratch& s, bool grads,
                        bool edges) const;

  const ChoiceDataset& data_;
  const CompiledSpec& spec_;
  NestingTree tree_;
  int threads_;
  std::vector<int> reverse_topo_;  // internal nodes, root first
};

/// Per-node inclusive values for a single observation's utilities; entries
/// for leaves and nodes with no available descendants are -infinity.
/// Throws EmptyChoiceSet when nothing is available.
std::vector<double> inclusive_values(const NestingTree& tree, const ModelParams& params,
                                     std::span<const double> utilities,
                                     const std::vector<bool>& available);

// Convenience entry points mirroring the evaluator (compile + evaluate).
double log_likelihood(const ChoiceDataset& data, const CompiledSpec& spec,
                      const NestingTree& tree, const ModelParams& params);
void grad_continuous(const ChoiceDataset& data, const CompiledSpec& spec, const NestingTree& tree,
                     const ModelParams& params, std::vector<double>& grad_beta,
                     std::vector<double>& grad_mu);
std::map<Edge, double> grad_edges(const ChoiceDataset& data, const CompiledSpec& spec,
                                  const NestingTree& tree, const ModelParams& params);

/// Fractional edge indicators over the candidate graph, for the relaxed
/// path-sum likelihood (gradient checking only).
struct RelaxedEdges {
  explicit RelaxedEdges(const NodeIds& ids);
  static RelaxedEdges from_tree(const NestingTree& tree);

  const NodeIds& ids() const { return ids_; }
  double get(int u, int v) const { return x_[index(u, v)]; }
  void set(int u, int v, double value) { x_[index(u, v)] = value; }

 private:
  std::size_t index(int u, int v) const;
  NodeIds ids_;
  std::vector<double> x_;
};

/// Explicit enumeration of every simple root-to-leaf path in the candidate
/// graph, each weighted by the product of its edge indicators. Equals the
/// evaluator at 0/1 tree solutions; accepts fractional indicators as long as
/// the positive support is acyclic. Guarded to m <= 4.
double brute_force_loglik(const ChoiceDataset& data, const CompiledSpec& spec,
                          const RelaxedEdges& x, const ModelParams& params);
double brute_force_loglik(const ChoiceDataset& data, const CompiledSpec& spec,
                          const NestingTree& tree, const ModelParams& params);

}  // namespace nestlearn
