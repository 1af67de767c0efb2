#include "nestlearn/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "nestlearn/util.hpp"

namespace nestlearn {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kBlockSize = 1024;

inline double node_scale(const ModelParams& params, const NodeIds& ids, int node) {
  return ids.is_root(node) ? 1.0 : params.mu[ids.nest_index(node)];
}
}  // namespace

std::vector<Edge> candidate_edges(const NodeIds& ids) {
  std::vector<Edge> edges;
  for (int u = 0; u <= ids.p; ++u) {
    for (int k = 0; k < ids.p; ++k)
      if (ids.nest(k) != u) edges.emplace_back(u, ids.nest(k));
    for (int a = 0; a < ids.m; ++a) edges.emplace_back(u, ids.leaf(a));
  }
  return edges;
}

// ---------------------------------------------------------------------------
// Evaluator

struct Evaluator::Scratch {
  std::vector<double> V;           // per alternative
  std::vector<double> theta;       // per node: V for leaves, Gamma for internal
  std::vector<double> adj;         // dL/dGamma per internal node
  std::vector<double> climb;       // sum of log conditionals node -> root
  std::vector<double> leaf_w;      // dL/dV per leaf
  std::vector<double> path_theta;  // theta of the path child under each path node
  std::vector<char> on_path;       // internal node lies on the chosen ancestry

  // block accumulators
  std::vector<double> gbeta, gmu, gedges;
  double loglik_sum = 0.0;

  void init(const NodeIds& ids, int n_params, std::size_t n_edges) {
    V.assign(ids.m, 0.0);
    theta.assign(ids.total(), kNegInf);
    adj.assign(ids.total(), 0.0);
    climb.assign(ids.total(), 0.0);
    leaf_w.assign(ids.m, 0.0);
    path_theta.assign(ids.total(), 0.0);
    on_path.assign(ids.total(), 0);
    gbeta.assign(n_params, 0.0);
    gmu.assign(ids.p, 0.0);
    gedges.assign(n_edges, 0.0);
    loglik_sum = 0.0;
  }
};

Evaluator::Evaluator(const ChoiceDataset& data, const CompiledSpec& spec, const NestingTree& tree,
                     int threads)
    : data_(data), spec_(spec), tree_(tree), threads_(std::max(1, threads)) {
  if (tree_.num_alternatives() != data_.num_alts())
    fail(Errc::DimensionMismatch, "tree and dataset disagree on the number of alternatives");
  reverse_topo_ = tree_.topo_order();
  std::reverse(reverse_topo_.begin(), reverse_topo_.end());
}

void Evaluator::eval_observation(const ModelParams& params, int n, Scratch& s, bool grads,
                                 bool edges) const {
  const NodeIds& ids = tree_.ids();
  const int m = ids.m;
  const double w = data_.weight(n);
  const int ch = data_.chosen(n);

  // Systematic utilities for this observation.
  for (int a = 0; a < m; ++a) {
    if (!data_.available(n, a)) {
      s.theta[ids.leaf(a)] = kNegInf;
      continue;
    }
    double v = 0.0;
    for (auto [p, var] : spec_.alt_terms[a])
      v += params.beta[p] * (var < 0 ? 1.0 : data_.attribute(n, a, var));
    s.V[a] = v;
    s.theta[ids.leaf(a)] = v;
  }

  // Inclusive values, leaves to root, log-sum-exp stabilized.
  for (int b : tree_.topo_order()) {
    const double mu_b = node_scale(params, ids, b);
    double mx = kNegInf;
    for (int c : tree_.children(b)) {
      double t = s.theta[c];
      if (t > kNegInf) mx = std::max(mx, mu_b * t);
    }
    if (mx == kNegInf) {
      s.theta[b] = kNegInf;
      continue;
    }
    double sum = 0.0;
    for (int c : tree_.children(b)) {
      double t = s.theta[c];
      if (t > kNegInf) sum += std::exp(mu_b * t - mx);
    }
    s.theta[b] = (mx + std::log(sum)) / mu_b;
  }
  if (s.theta[ids.root()] == kNegInf) fail(Errc::EmptyChoiceSet, "observation " + data_.obs_id(n));

  // Log probability of the chosen alternative: climb the ancestry adding
  // one log conditional per edge.
  double lp = 0.0;
  for (int cur = ids.leaf(ch); cur != ids.root();) {
    int par = tree_.parent(cur);
    lp += node_scale(params, ids, par) * (s.theta[cur] - s.theta[par]);
    cur = par;
  }
  s.loglik_sum += w * lp;

  if (!grads && !edges) return;

  // Path bookkeeping and explicit coefficients of each Gamma on the path.
  for (int v : tree_.topo_order()) {
    s.adj[v] = 0.0;
    s.on_path[v] = 0;
  }
  for (int cur = ids.leaf(ch); cur != ids.root();) {
    int par = tree_.parent(cur);
    s.on_path[par] = 1;
    s.path_theta[par] = s.theta[cur];
    if (ids.is_root(par))
      s.adj[par] += -1.0;  // -mu_r, root scale normalized to one
    else
      s.adj[par] += node_scale(params, ids, tree_.parent(par)) - node_scale(params, ids, par);
    cur = par;
  }
  std::fill(s.leaf_w.begin(), s.leaf_w.end(), 0.0);

  // Root-to-leaves pass: push adjoints through the conditional probabilities,
  // collect the explicit scale derivative of each nest's inclusive value.
  for (int b : reverse_topo_) {
    const double mu_b = node_scale(params, ids, b);
    const double gamma_b = s.theta[b];
    if (gamma_b == kNegInf) continue;
    const double a_b = s.adj[b];
    double h = 0.0;  // expected child value under the nest's conditionals
    for (int c : tree_.children(b)) {
      double t = s.theta[c];
      if (t == kNegInf) continue;
      double q = std::exp(mu_b * (t - gamma_b));
      h += q * t;
      if (ids.is_leaf(c))
        s.leaf_w[ids.leaf_index(c)] += a_b * q;
      else
        s.adj[c] += a_b * q;
    }
    if (grads && !ids.is_root(b)) {
      double g = a_b * (h - gamma_b) / mu_b;
      if (s.on_path[b]) g += s.path_theta[b] - gamma_b;
      s.gmu[ids.nest_index(b)] += w * g;
    }
  }

  if (grads) {
    s.leaf_w[ch] += node_scale(params, ids, tree_.parent(ids.leaf(ch)));
    for (int a = 0; a < m; ++a) {
      double lw = s.leaf_w[a];
      if (lw == 0.0 || !data_.available(n, a)) continue;
      for (auto [p, var] : spec_.alt_terms[a])
        s.gbeta[p] += w * lw * (var < 0 ? 1.0 : data_.attribute(n, a, var));
    }
  }

  if (!edges) return;

  // Cumulative climb values C(v): log probability of reaching v from the
  // root along the tree (leaves get their full chosen-path value).
  s.climb[ids.root()] = 0.0;
  for (int b : reverse_topo_) {
    if (s.theta[b] == kNegInf) continue;
    const double mu_b = node_scale(params, ids, b);
    for (int c : tree_.children(b))
      s.climb[c] = (s.theta[c] == kNegInf ? kNegInf
                                          : mu_b * (s.theta[c] - s.theta[b]) + s.climb[b]);
  }

  const auto edges_list = candidate_edges(ids);
  for (std::size_t i = 0; i < edges_list.size(); ++i) {
    auto [u, v] = edges_list[i];
    if (!ids.is_root(u) && (!tree_.nest_included(ids.nest_index(u)) || tree_.depth(u) < 0))
      continue;  // origin outside the tree: no dependence
    double theta_v;
    if (ids.is_leaf(v)) {
      if (!data_.available(n, ids.leaf_index(v))) continue;
      theta_v = s.V[ids.leaf_index(v)];
    } else {
      if (!tree_.nest_included(ids.nest_index(v))) continue;
      theta_v = s.theta[v];
    }
    const double mu_u = node_scale(params, ids, u);
    const double gamma_u = s.theta[u];
    if (gamma_u == kNegInf) continue;

    // Inclusive-value perturbation: the adjoint of Gamma_u times the direct
    // derivative of Gamma_u in the edge indicator.
    double value = s.adj[u] * std::exp(mu_u * (theta_v - gamma_u)) / mu_u;

    // Insertion term: log probability of the chosen alternative along the
    // hypothetical path that crosses (u, v), when that path is simple.
    double ins = 0.0;
    if (ids.is_leaf(v)) {
      if (ids.leaf_index(v) == ch) ins = mu_u * (s.V[ch] - gamma_u) + s.climb[u];
    } else if (s.on_path[v]) {
      bool simple = true;
      for (int wnode = u; wnode != -1; wnode = tree_.parent(wnode))
        if (s.on_path[wnode] && tree_.depth(wnode) >= tree_.depth(v)) {
          simple = false;
          break;
        }
      if (simple)
        ins = (lp - s.climb[v]) + mu_u * (s.theta[v] - gamma_u) + s.climb[u];
    }
    s.gedges[i] += w * (value + ins);
  }
}

namespace {

template <typename Fn>
void run_blocks(int n_obs, int threads, const Fn& fn) {
  const int n_blocks = (n_obs + kBlockSize - 1) / kBlockSize;
  threads = std::max(1, std::min(threads, n_blocks));
  if (threads == 1) {
    for (int b = 0; b < n_blocks; ++b) fn(b);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (int b = t; b < n_blocks; b += threads) fn(b);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

double Evaluator::loglik(const ModelParams& params) const {
  const int n_obs = data_.num_obs();
  const int n_blocks = (n_obs + kBlockSize - 1) / kBlockSize;
  std::vector<double> block_sums(n_blocks, 0.0);
  run_blocks(n_obs, threads_, [&](int b) {
    thread_local Scratch s;
    s.init(tree_.ids(), spec_.n_params, 0);
    for (int n = b * kBlockSize; n < std::min(n_obs, (b + 1) * kBlockSize); ++n)
      eval_observation(params, n, s, false, false);
    block_sums[b] = s.loglik_sum;
  });
  return pairwise_sum(block_sums);
}

double Evaluator::loglik_grad(const ModelParams& params, std::vector<double>& grad_beta,
                              std::vector<double>& grad_mu) const {
  const int n_obs = data_.num_obs();
  const int n_blocks = (n_obs + kBlockSize - 1) / kBlockSize;
  std::vector<double> block_sums(n_blocks, 0.0);
  std::vector<std::vector<double>> block_gbeta(n_blocks), block_gmu(n_blocks);
  run_blocks(n_obs, threads_, [&](int b) {
    Scratch s;
    s.init(tree_.ids(), spec_.n_params, 0);
    for (int n = b * kBlockSize; n < std::min(n_obs, (b + 1) * kBlockSize); ++n)
      eval_observation(params, n, s, true, false);
    block_sums[b] = s.loglik_sum;
    block_gbeta[b] = std::move(s.gbeta);
    block_gmu[b] = std::move(s.gmu);
  });
  grad_beta.assign(spec_.n_params, 0.0);
  grad_mu.assign(tree_.num_slots(), 0.0);
  for (int b = 0; b < n_blocks; ++b) {
    for (int j = 0; j < spec_.n_params; ++j) grad_beta[j] += block_gbeta[b][j];
    for (int j = 0; j < tree_.num_slots(); ++j) grad_mu[j] += block_gmu[b][j];
  }
  return pairwise_sum(block_sums);
}

LikelihoodReport Evaluator::report(const ModelParams& params, bool with_edges,
                                   bool with_per_obs) const {
  LikelihoodReport rep;
  const auto edges_list = candidate_edges(tree_.ids());
  const int n_obs = data_.num_obs();
  const int n_blocks = (n_obs + kBlockSize - 1) / kBlockSize;
  std::vector<double> block_sums(n_blocks, 0.0);
  std::vector<std::vector<double>> block_gbeta(n_blocks), block_gmu(n_blocks),
      block_gedges(n_blocks);
  if (with_per_obs) rep.per_observation.assign(n_obs, 0.0);
  run_blocks(n_obs, threads_, [&](int b) {
    Scratch s;
    s.init(tree_.ids(), spec_.n_params, edges_list.size());
    for (int n = b * kBlockSize; n < std::min(n_obs, (b + 1) * kBlockSize); ++n) {
      double before = s.loglik_sum;
      eval_observation(params, n, s, true, with_edges);
      if (with_per_obs)
        rep.per_observation[n] = (s.loglik_sum - before) / data_.weight(n);
    }
    block_sums[b] = s.loglik_sum;
    block_gbeta[b] = std::move(s.gbeta);
    block_gmu[b] = std::move(s.gmu);
    block_gedges[b] = std::move(s.gedges);
  });
  rep.grad_beta.assign(spec_.n_params, 0.0);
  rep.grad_mu.assign(tree_.num_slots(), 0.0);
  std::vector<double> gedges(edges_list.size(), 0.0);
  for (int b = 0; b < n_blocks; ++b) {
    for (int j = 0; j < spec_.n_params; ++j) rep.grad_beta[j] += block_gbeta[b][j];
    for (int j = 0; j < tree_.num_slots(); ++j) rep.grad_mu[j] += block_gmu[b][j];
    if (with_edges)
      for (std::size_t j = 0; j < gedges.size(); ++j) gedges[j] += block_gedges[b][j];
  }
  if (with_edges)
    for (std::size_t j = 0; j < edges_list.size(); ++j) rep.grad_edges[edges_list[j]] = gedges[j];
  rep.loglik = pairwise_sum(block_sums);
  return rep;
}

std::vector<double> Evaluator::choice_probabilities(const ModelParams& params, int n) const {
  const NodeIds& ids = tree_.ids();
  Scratch s;
  s.init(ids, spec_.n_params, 0);
  eval_observation(params, n, s, false, false);
  // the plain pass leaves the climb values unset; fill them here
  s.climb[ids.root()] = 0.0;
  for (int b : reverse_topo_) {
    if (s.theta[b] == kNegInf) continue;
    const double mu_b = node_scale(params, ids, b);
    for (int c : tree_.children(b))
      s.climb[c] = (s.theta[c] == kNegInf ? kNegInf
                                          : mu_b * (s.theta[c] - s.theta[b]) + s.climb[b]);
  }
  std::vector<double> probs(ids.m, 0.0);
  for (int a = 0; a < ids.m; ++a)
    if (data_.available(n, a)) probs[a] = std::exp(s.climb[ids.leaf(a)]);
  return probs;
}

// ---------------------------------------------------------------------------
// Free functions

std::vector<double> inclusive_values(const NestingTree& tree, const ModelParams& params,
                                     std::span<const double> utilities,
                                     const std::vector<bool>& available) {
  const NodeIds& ids = tree.ids();
  if (static_cast<int>(utilities.size()) != ids.m)
    fail(Errc::DimensionMismatch, "utilities must have one entry per alternative");
  std::vector<double> theta(ids.total(), kNegInf);
  bool any = false;
  for (int a = 0; a < ids.m; ++a)
    if (available.empty() || available[a]) {
      theta[ids.leaf(a)] = utilities[a];
      any = true;
    }
  if (!any) fail(Errc::EmptyChoiceSet, "no available alternative");
  for (int b : tree.topo_order()) {
    const double mu_b = node_scale(params, ids, b);
    double mx = kNegInf;
    for (int c : tree.children(b))
      if (theta[c] > kNegInf) mx = std::max(mx, mu_b * theta[c]);
    if (mx == kNegInf) continue;
    double sum = 0.0;
    for (int c : tree.children(b))
      if (theta[c] > kNegInf) sum += std::exp(mu_b * theta[c] - mx);
    theta[b] = (mx + std::log(sum)) / mu_b;
  }
  std::vector<double> out(ids.total(), std::numeric_limits<double>::quiet_NaN());
  out[ids.root()] = theta[ids.root()];
  for (int k = 0; k < ids.p; ++k)
    if (tree.nest_included(k)) out[ids.nest(k)] = theta[ids.nest(k)];
  return out;
}

double log_likelihood(const ChoiceDataset& data, const CompiledSpec& spec, const NestingTree& tree,
                      const ModelParams& params) {
  return Evaluator(data, spec, tree).loglik(params);
}

void grad_continuous(const ChoiceDataset& data, const CompiledSpec& spec, const NestingTree& tree,
                     const ModelParams& params, std::vector<double>& grad_beta,
                     std::vector<double>& grad_mu) {
  Evaluator(data, spec, tree).loglik_grad(params, grad_beta, grad_mu);
}

std::map<Edge, double> grad_edges(const ChoiceDataset& data, const CompiledSpec& spec,
                                  const NestingTree& tree, const ModelParams& params) {
  return Evaluator(data, spec, tree).report(params, true, false).grad_edges;
}

// ---------------------------------------------------------------------------
// Relaxed path-sum likelihood (oracle for edge gradients)

RelaxedEdges::RelaxedEdges(const NodeIds& ids) : ids_(ids) {
  x_.assign(static_cast<std::size_t>(1 + ids.p) * (ids.p + ids.m), 0.0);
}

std::size_t RelaxedEdges::index(int u, int v) const {
  return static_cast<std::size_t>(u) * (ids_.p + ids_.m) + (v - 1);
}

RelaxedEdges RelaxedEdges::from_tree(const NestingTree& tree) {
  RelaxedEdges x(tree.ids());
  for (auto [u, v] : tree.edge_list()) x.set(u, v, 1.0);
  return x;
}

double brute_force_loglik(const ChoiceDataset& data, const CompiledSpec& spec,
                          const RelaxedEdges& x, const ModelParams& params) {
  const NodeIds& ids = x.ids();
  if (ids.m > 4) fail(Errc::TooLarge, "path enumeration limited to m <= 4");
  if (ids.m != data.num_alts())
    fail(Errc::DimensionMismatch, "edge structure and dataset disagree");

  const int n_internal = 1 + ids.p;
  auto mu_of = [&](int u) { return u == 0 ? 1.0 : params.mu[u - 1]; };

  std::vector<double> contribs(data.num_obs(), 0.0);
  std::vector<double> V(ids.m, 0.0);
  std::vector<double> gamma(n_internal, kNegInf);

  for (int n = 0; n < data.num_obs(); ++n) {
    for (int a = 0; a < ids.m; ++a) {
      if (!data.available(n, a)) continue;
      double v = 0.0;
      for (auto [p, var] : spec.alt_terms[a])
        v += params.beta[p] * (var < 0 ? 1.0 : data.attribute(n, a, var));
      V[a] = v;
    }

    // Inclusive values on the positive support; order nodes so that every
    // positive internal target is computed first (cyclic support is an error).
    std::vector<char> done(n_internal, 0);
    std::fill(gamma.begin(), gamma.end(), kNegInf);
    for (int round = 0; round < n_internal; ++round) {
      bool progress = false;
      for (int u = 0; u < n_internal; ++u) {
        if (done[u]) continue;
        bool ready = true;
        for (int k = 0; k < ids.p && ready; ++k)
          if (ids.nest(k) != u && x.get(u, ids.nest(k)) > 0.0 && !done[ids.nest(k)]) ready = false;
        if (!ready) continue;
        const double mu_u = mu_of(u);
        double mx = kNegInf;
        auto term = [&](double weight, double value) { return std::log(weight) + mu_u * value; };
        for (int a = 0; a < ids.m; ++a)
          if (data.available(n, a) && x.get(u, ids.leaf(a)) > 0.0)
            mx = std::max(mx, term(x.get(u, ids.leaf(a)), V[a]));
        for (int k = 0; k < ids.p; ++k)
          if (ids.nest(k) != u && x.get(u, ids.nest(k)) > 0.0 && gamma[1 + k] > kNegInf)
            mx = std::max(mx, term(x.get(u, ids.nest(k)), gamma[1 + k]));
        if (mx > kNegInf) {
          double sum = 0.0;
          for (int a = 0; a < ids.m; ++a)
            if (data.available(n, a) && x.get(u, ids.leaf(a)) > 0.0)
              sum += std::exp(term(x.get(u, ids.leaf(a)), V[a]) - mx);
          for (int k = 0; k < ids.p; ++k)
            if (ids.nest(k) != u && x.get(u, ids.nest(k)) > 0.0 && gamma[1 + k] > kNegInf)
              sum += std::exp(term(x.get(u, ids.nest(k)), gamma[1 + k]) - mx);
          gamma[u] = (mx + std::log(sum)) / mu_u;
        }
        done[u] = 1;
        progress = true;
      }
      if (!progress) break;
    }
    for (int u = 0; u < n_internal; ++u)
      if (!done[u]) fail(Errc::InvalidTree, "cyclic positive support in relaxed edges");

    // Every simple path from the root to the chosen leaf, weighted by the
    // product of its edge indicators.
    const int ch = data.chosen(n);
    double total = 0.0;
    std::vector<char> visited(n_internal, 0);
    auto dfs = [&](auto&& self, int u, double weight, double partial) -> void {
      double x_leaf = x.get(u, ids.leaf(ch));
      if (x_leaf > 0.0)
        total += weight * x_leaf * (partial + mu_of(u) * (V[ch] - gamma[u]));
      for (int k = 0; k < ids.p; ++k) {
        int v = ids.nest(k);
        if (v == u || visited[1 + k]) continue;
        double xe = x.get(u, v);
        if (xe <= 0.0 || gamma[1 + k] == kNegInf) continue;
        visited[1 + k] = 1;
        self(self, v, weight * xe, partial + mu_of(u) * (gamma[1 + k] - gamma[u]));
        visited[1 + k] = 0;
      }
    };
    visited[0] = 1;
    dfs(dfs, 0, 1.0, 0.0);
    contribs[n] = data.weight(n) * total;
  }
  return pairwise_sum(contribs);
}

double brute_force_loglik(const ChoiceDataset& data, const CompiledSpec& spec,
                          const NestingTree& tree, const ModelParams& params) {
  return brute_force_loglik(data, spec, RelaxedEdges::from_tree(tree), params);
}

}  // namespace nestlearn
