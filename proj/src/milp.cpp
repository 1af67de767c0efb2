#include "nestlearn/milp.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <cstdio>
#include <cstdlib>

namespace nestlearn {

bool regularization_candidate(int m, int M, int L) {
  if (M < 0 || M > m - 2) return false;
  if (M == 0) return L == 1;
  return L >= 2 && L <= M + 1;
}

bool structurally_feasible(int m, int M, int L) {
  if (!regularization_candidate(m, M, L)) return false;
  if (M == 0) return true;
  long cap = (1L << (L - 1)) - 1;  // nests per component, two children each
  long c_min = (M + cap - 1) / cap;
  long needed = M + std::max(2L, c_min);
  return needed <= m;
}

MasterProblem::MasterProblem(const MasterConfig& cfg) : cfg_(cfg), ids_{cfg.m, cfg.m - 2} {
  if (!structurally_feasible(cfg.m, cfg.M, cfg.L))
    fail(Errc::InfeasibleRegularization,
         "M=" + std::to_string(cfg.M) + ", L=" + std::to_string(cfg.L) + " with m=" +
             std::to_string(cfg.m));
  edges_ = candidate_edges(ids_);
}

void MasterProblem::add_linearization(LinearizationCut cut) {
  if (cfg_.feasibility_only) fail(Errc::InvalidTree, "feasibility master takes no cuts");
  if (cut.grad_x.size() != edges_.size() ||
      static_cast<int>(cut.grad_beta.size()) != cfg_.n_params ||
      static_cast<int>(cut.grad_mu.size()) != ids_.p)
    fail(Errc::DimensionMismatch, "linearization cut");
  cuts_.push_back(std::move(cut));
}

void MasterProblem::add_no_good(const std::vector<char>& x_active) {
  if (x_active.size() != edges_.size()) fail(Errc::DimensionMismatch, "no-good cut");
  no_goods_.push_back(x_active);
}

void MasterProblem::add_cycle_cut(const std::vector<int>& nodes) { cycles_.push_back(nodes); }

void MasterProblem::add_path_cut(const std::vector<int>& path_nodes) {
  banned_paths_.push_back(path_nodes);
}

MilpProblem MasterProblem::build() const {
  const int E = static_cast<int>(edges_.size());
  const int p = ids_.p;
  const int m = ids_.m;
  MilpProblem prob;
  LinearProblem& lp = prob.lp;

  // Layout: edges | y | delta | [eta | beta | mu | slacks]
  for (int i = 0; i < E; ++i) lp.add_var(0, 1, 0);
  const int y0 = E;
  for (int k = 0; k < p; ++k) lp.add_var(0, 1, 0);
  const int dvar = lp.add_var(0, 1, 0);
  int eta = -1, b0 = -1, mu0 = -1, s0 = -1;
  if (!cfg_.feasibility_only) {
    eta = lp.add_var(cfg_.eta_lb, kLpInf, 1.0);
    b0 = lp.num_vars();
    for (int j = 0; j < cfg_.n_params; ++j) lp.add_var(-cfg_.beta_box, cfg_.beta_box, 0);
    mu0 = lp.num_vars();
    for (int k = 0; k < p; ++k) lp.add_var(1.0, cfg_.mu_max, 0);
    s0 = lp.num_vars();
    for (std::size_t i = 0; i < cuts_.size(); ++i) lp.add_var(0, kLpInf, cfg_.rho);
  }
  prob.integers.resize(E + p + 1);
  for (int i = 0; i < E + p + 1; ++i) prob.integers[i] = i;
  prob.branch_priority.assign(lp.num_vars(), 0);
  for (int k = 0; k < p; ++k) prob.branch_priority[y0 + k] = 2;
  prob.branch_priority[dvar] = 1;

  auto edge_index = [&](int u, int v) {
    auto it = std::find(edges_.begin(), edges_.end(), Edge{u, v});
    return static_cast<int>(it - edges_.begin());
  };

  // Arborescence edge count: edges = nodes - 1.
  {
    std::vector<std::pair<int, double>> row;
    for (int i = 0; i < E; ++i) row.emplace_back(i, 1.0);
    for (int k = 0; k < p; ++k) row.emplace_back(y0 + k, -1.0);
    lp.add_row(std::move(row), '=', m);
  }
  // Each leaf has exactly one parent.
  for (int a = 0; a < m; ++a) {
    std::vector<std::pair<int, double>> row;
    for (int i = 0; i < E; ++i)
      if (edges_[i].second == ids_.leaf(a)) row.emplace_back(i, 1.0);
    lp.add_row(std::move(row), '=', 1);
  }
  // Included nests have exactly one parent.
  for (int k = 0; k < p; ++k) {
    std::vector<std::pair<int, double>> row;
    for (int i = 0; i < E; ++i)
      if (edges_[i].second == ids_.nest(k)) row.emplace_back(i, 1.0);
    row.emplace_back(y0 + k, -1.0);
    lp.add_row(std::move(row), '=', 0);
  }
  // Nest out-degree in [2y, (m-1)y]: no degenerate nests, silent when excluded.
  for (int k = 0; k < p; ++k) {
    std::vector<std::pair<int, double>> lo, hi;
    for (int i = 0; i < E; ++i)
      if (edges_[i].first == ids_.nest(k)) {
        lo.emplace_back(i, 1.0);
        hi.emplace_back(i, 1.0);
      }
    lo.emplace_back(y0 + k, -2.0);
    hi.emplace_back(y0 + k, -static_cast<double>(m - 1));
    lp.add_row(std::move(lo), '>', 0);
    lp.add_row(std::move(hi), '<', 0);
  }
  // Root out-degree >= 2.
  {
    std::vector<std::pair<int, double>> row;
    for (int i = 0; i < E; ++i)
      if (edges_[i].first == ids_.root()) row.emplace_back(i, 1.0);
    lp.add_row(std::move(row), '>', 2);
  }
  // Any-nest flag: delta forces a root-to-nest edge and caps the nest count.
  {
    std::vector<std::pair<int, double>> row;
    for (int k = 0; k < p; ++k) row.emplace_back(edge_index(ids_.root(), ids_.nest(k)), 1.0);
    row.emplace_back(dvar, -1.0);
    lp.add_row(std::move(row), '>', 0);
  }
  {
    std::vector<std::pair<int, double>> row;
    for (int k = 0; k < p; ++k) row.emplace_back(y0 + k, 1.0);
    row.emplace_back(dvar, -static_cast<double>(m - 2));
    lp.add_row(std::move(row), '<', 0);
  }
  // Exact nest count.
  {
    std::vector<std::pair<int, double>> row;
    for (int k = 0; k < p; ++k) row.emplace_back(y0 + k, 1.0);
    lp.add_row(std::move(row), '=', cfg_.M);
  }
  // Height chain root -> nest_1 -> ... -> nest_{L-1}, fixed up front so one
  // path reaches depth L exactly.
  if (cfg_.L >= 2) {
    lp.lb[edge_index(ids_.root(), ids_.nest(0))] = 1.0;
    for (int i = 0; i + 1 <= cfg_.L - 2; ++i)
      lp.lb[edge_index(ids_.nest(i), ids_.nest(i + 1))] = 1.0;
  }
  // Slot-use symmetry: nest labels are interchangeable, so force the
  // included set onto the lowest slots.
  for (int k = 0; k + 1 < p; ++k)
    lp.add_row({{y0 + k, 1.0}, {y0 + k + 1, -1.0}}, '>', 0);

  if (!cfg_.feasibility_only) {
    // Scale monotonicity under big-M for every ordered nest pair.
    for (int u = 0; u < p; ++u)
      for (int v = 0; v < p; ++v) {
        if (u == v) continue;
        int e = edge_index(ids_.nest(u), ids_.nest(v));
        lp.add_row({{e, cfg_.mu_max}, {mu0 + u, 1.0}, {mu0 + v, -1.0}}, '<', cfg_.mu_max);
      }
    // Outer-approximation cuts with penalized slack.
    for (std::size_t i = 0; i < cuts_.size(); ++i) {
      const auto& cut = cuts_[i];
      double rhs = cut.f_value;
      double scale = 1.0;
      for (double g : cut.grad_x) scale = std::max(scale, std::abs(g));
      for (double g : cut.grad_beta) scale = std::max(scale, std::abs(g));
      for (double g : cut.grad_mu) scale = std::max(scale, std::abs(g));
      std::vector<std::pair<int, double>> row{{eta, 1.0 / scale},
                                              {s0 + static_cast<int>(i), 1.0 / scale}};
      for (int e = 0; e < E; ++e) {
        rhs -= cut.grad_x[e] * cut.x_anchor[e];
        if (cut.grad_x[e] != 0.0) row.emplace_back(e, -cut.grad_x[e] / scale);
      }
      for (int j = 0; j < cfg_.n_params; ++j) {
        rhs -= cut.grad_beta[j] * cut.beta_anchor[j];
        if (cut.grad_beta[j] != 0.0) row.emplace_back(b0 + j, -cut.grad_beta[j] / scale);
      }
      for (int k = 0; k < p; ++k) {
        rhs -= cut.grad_mu[k] * cut.mu_anchor[k];
        if (cut.grad_mu[k] != 0.0) row.emplace_back(mu0 + k, -cut.grad_mu[k] / scale);
      }
      lp.add_row(std::move(row), '>', rhs / scale);
    }
  }
  // No-good cuts in cardinality-strengthened form: with the edge count
  // pinned by the arborescence row, sum_{e in O} x_e <= |O| - 1 excludes
  // exactly the recorded solution and dominates the two-sided form.
  for (const auto& ng : no_goods_) {
    std::vector<std::pair<int, double>> row;
    int count = 0;
    for (int e = 0; e < E; ++e)
      if (ng[e]) {
        row.emplace_back(e, 1.0);
        ++count;
      }
    lp.add_row(std::move(row), '<', count - 1);
  }
  // Banned over-length root paths: one edge of each must be absent.
  for (const auto& nodes : banned_paths_) {
    std::vector<std::pair<int, double>> row;
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i)
      row.emplace_back(edge_index(nodes[i], nodes[i + 1]), 1.0);
    lp.add_row(std::move(row), '<', static_cast<double>(nodes.size()) - 2);
  }
  // Subtour elimination rows gathered so far.
  for (const auto& nodes : cycles_) {
    std::vector<std::pair<int, double>> row;
    for (int e = 0; e < E; ++e) {
      auto [u, v] = edges_[e];
      bool u_in = std::find(nodes.begin(), nodes.end(), u) != nodes.end();
      bool v_in = std::find(nodes.begin(), nodes.end(), v) != nodes.end();
      if (u_in && v_in) row.emplace_back(e, 1.0);
    }
    lp.add_row(std::move(row), '<', static_cast<double>(nodes.size()) - 1);
  }
  return prob;
}

std::optional<MasterProblem::Solution> MasterProblem::solve_once(MilpBackend& backend) const {
  MilpProblem prob = build();
  MilpResult res = backend.solve(prob);
  if (res.status == LpStatus::Infeasible) return std::nullopt;
  if (res.status != LpStatus::Optimal)
    fail(Errc::NumericalFailure, "master solve did not reach optimality");

  Solution sol{NestingTree::flat(cfg_.m), 0.0, res.obj, {}, {}};
  sol.nodes = res.nodes;
  const int E = static_cast<int>(edges_.size());
  sol.x_active.assign(E, 0);
  std::vector<std::pair<int, int>> active;
  for (int e = 0; e < E; ++e)
    if (res.x[e] > 0.5) {
      sol.x_active[e] = 1;
      active.push_back(edges_[e]);
    }
  std::vector<bool> included(ids_.p, false);
  for (int k = 0; k < ids_.p; ++k) included[k] = res.x[E + k] > 0.5;
  sol.tree = NestingTree::from_edges(cfg_.m, active, included, &sol.violations);
  if (!cfg_.feasibility_only) sol.eta = res.x[E + ids_.p + 1];
  return sol;
}

void MasterProblem::dump(std::ostream& os) const {
  MilpProblem prob = build();
  os << "min";
  for (int j = 0; j < prob.lp.num_vars(); ++j)
    if (prob.lp.obj[j] != 0.0) os << " + " << prob.lp.obj[j] << " v" << j;
  os << "\n";
  for (const auto& row : prob.lp.rows) {
    for (auto [j, c] : row.coeffs) os << (c >= 0 ? " +" : " ") << c << " v" << j;
    os << ' ' << row.sense << "= " << row.rhs << "\n";
  }
  for (int j = 0; j < prob.lp.num_vars(); ++j)
    os << "v" << j << " in [" << prob.lp.lb[j] << ", " << prob.lp.ub[j] << "]"
       << (std::find(prob.integers.begin(), prob.integers.end(), j) != prob.integers.end()
               ? " integer"
               : "")
       << "\n";
}

namespace {

// A directed cycle among the active nest-nest edges, if any (node ids).
std::optional<std::vector<int>> find_cycle(const NodeIds& ids,
                                           const std::vector<std::pair<int, int>>& active) {
  std::vector<std::vector<int>> adj(ids.total());
  for (auto [u, v] : active)
    if (ids.is_nest(u) && ids.is_nest(v)) adj[u].push_back(v);
  std::vector<int> color(ids.total(), 0);  // 0 white, 1 on stack, 2 done
  std::vector<int> stack;
  std::optional<std::vector<int>> found;
  auto dfs = [&](auto&& self, int u) -> bool {
    color[u] = 1;
    stack.push_back(u);
    for (int v : adj[u]) {
      if (color[v] == 1) {
        auto it = std::find(stack.begin(), stack.end(), v);
        found = std::vector<int>(it, stack.end());
        return true;
      }
      if (color[v] == 0 && self(self, v)) return true;
    }
    color[u] = 2;
    stack.pop_back();
    return false;
  };
  for (int k = 0; k < ids.p; ++k)
    if (color[ids.nest(k)] == 0 && dfs(dfs, ids.nest(k))) return found;
  return std::nullopt;
}

}  // namespace

std::optional<std::pair<NestingTree, double>> solve_master(
    MasterProblem& mp, MilpBackend& backend, const std::set<std::string>& visited_signatures,
    MasterProblem::Stats* stats, int max_rounds) {
  for (int round = 0; round < max_rounds; ++round) {
    auto sol = mp.solve_once(backend);
    if (stats) ++stats->solves;
    if (stats && sol) stats->nodes += sol->nodes;
    if (std::getenv("NESTLEARN_MASTER_DEBUG"))
      std::fprintf(stderr, "[master] round=%d nodes=%ld %s\n", round,
                   sol ? sol->nodes : -1, sol ? "sol" : "infeasible");
    if (!sol) return std::nullopt;

    std::vector<std::pair<int, int>> active;
    for (std::size_t e = 0; e < mp.edges().size(); ++e)
      if (sol->x_active[e]) active.push_back(mp.edges()[e]);

    if (!sol->violations.empty()) {
      auto cyc = find_cycle(NodeIds{mp.config().m, mp.config().m - 2}, active);
      if (cyc) {
        mp.add_cycle_cut(*cyc);
        if (stats) ++stats->cycle_cuts;
        continue;
      }
      fail(Errc::NumericalFailure,
           "master returned a non-tree solution: " + sol->violations.front().detail);
    }
    if (sol->tree.height() > mp.config().L) {
      mp.add_no_good(sol->x_active);
      if (stats) ++stats->height_cuts;
      // Ban every observed root path of exactly L internal edges: any tree
      // containing one is too tall.
      const int L = mp.config().L;
      const auto& tree = sol->tree;
      std::set<std::vector<int>> paths;
      for (int a = 0; a < mp.config().m; ++a) {
        int leaf = tree.ids().leaf(a);
        if (tree.depth(leaf) <= L) continue;
        std::vector<int> chain;  // leaf ancestry, root last
        for (int v = tree.parent(leaf); v != -1; v = tree.parent(v)) chain.push_back(v);
        std::reverse(chain.begin(), chain.end());  // root ... B(a)
        chain.resize(L + 1);                       // root plus L internal steps
        paths.insert(chain);
      }
      for (const auto& path : paths) {
        mp.add_path_cut(path);
        if (stats) ++stats->path_cuts;
      }
      continue;
    }
    if (visited_signatures.count(sol->tree.signature())) {
      mp.add_no_good(sol->x_active);
      if (stats) ++stats->signature_cuts;
      continue;
    }
    if (sol->tree.num_nests() != mp.config().M)
      fail(Errc::NumericalFailure, "master nest count drifted from M");
    return std::make_pair(sol->tree, sol->eta);
  }
  fail(Errc::IterLimit, "master cut-and-resolve loop exceeded its round limit");
}

NestingTree find_initial_tree(int m, int M, int L, MilpBackend& backend, double mu_max) {
  MasterConfig cfg;
  cfg.m = m;
  cfg.M = M;
  cfg.L = L;
  cfg.mu_max = mu_max;
  cfg.feasibility_only = true;
  MasterProblem mp(cfg);
  auto res = solve_master(mp, backend, {});
  if (!res)
    fail(Errc::InfeasibleRegularization, "no tree with M=" + std::to_string(M) +
                                             " nests and height L=" + std::to_string(L) +
                                             " exists for m=" + std::to_string(m));
  return res->first;
}

}  // namespace nestlearn
