#include "nestlearn/oa.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "nestlearn/util.hpp"

namespace nestlearn {

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double val_fraction, std::uint64_t seed) {
  val_fraction = std::clamp(val_fraction, 0.0, 0.9);
  CounterRng rng(CounterRng::mix(seed, 0x5eed5eed5eed5eedULL));
  auto perm = random_permutation(n, rng);
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * n));
  if (n_val >= n) n_val = n - 1;
  std::vector<std::size_t> val(perm.begin(), perm.begin() + n_val);
  std::vector<std::size_t> train(perm.begin() + n_val, perm.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

namespace {

LinearizationCut make_cut(const Evaluator& eval, const NestingTree& tree,
                          const ModelParams& params, double negloglik) {
  LikelihoodReport rep = eval.report(params, true, false);
  const auto edges = candidate_edges(tree.ids());
  LinearizationCut cut;
  cut.f_value = negloglik;
  cut.grad_x.resize(edges.size());
  cut.x_anchor.assign(edges.size(), 0.0);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    cut.grad_x[i] = -rep.grad_edges.at(edges[i]);
    auto [u, v] = edges[i];
    if (tree.parent(v) == u) cut.x_anchor[i] = 1.0;
  }
  cut.grad_beta.resize(rep.grad_beta.size());
  for (std::size_t j = 0; j < rep.grad_beta.size(); ++j) cut.grad_beta[j] = -rep.grad_beta[j];
  cut.grad_mu.resize(rep.grad_mu.size());
  for (std::size_t k = 0; k < rep.grad_mu.size(); ++k) cut.grad_mu[k] = -rep.grad_mu[k];
  cut.beta_anchor = params.beta;
  cut.mu_anchor = params.mu;
  return cut;
}

}  // namespace

CellResult run_cell(const ChoiceDataset& train_raw, const ChoiceDataset& val_raw,
                    const UtilitySpec& spec, int M, int L, const OAConfig& config) {
  CellResult cell;
  cell.M = M;
  cell.L = L;
  try {
    ChoiceDataset train = train_raw.aggregated();
    ChoiceDataset val = val_raw.aggregated();
    CompiledSpec cspec = compile_spec(train, spec);
    const int m = train.num_alts();

    NlpConfig nlp_cfg = config.nlp;
    nlp_cfg.mu_max = config.mu_max;

    auto eval_validation = [&](const NestingTree& tree, const ModelParams& params) {
      if (val.num_obs() == 0) return 0.0;
      return -Evaluator(val, cspec, tree).loglik(params);
    };

    if (M == 0) {
      NestingTree flat = NestingTree::flat(m);
      NlpResult fit = estimate(train, cspec, flat, std::nullopt, nlp_cfg);
      cell.feasible = true;
      cell.tree = flat;
      cell.params = fit.params;
      cell.train_negloglik = fit.negloglik;
      cell.val_negloglik = eval_validation(flat, fit.params);
      cell.visited_trees = 1;
      cell.trace.push_back({1, fit.negloglik,
                            std::numeric_limits<double>::quiet_NaN(), flat.signature()});
      return cell;
    }

    BnbBackend backend;
    NestingTree tree = find_initial_tree(m, M, L, backend, config.mu_max);

    // One flat fit per cell seeds every nested estimation with good tastes.
    NlpResult flat_fit = estimate(train, cspec, NestingTree::flat(m), std::nullopt, nlp_cfg);
    auto warm_init = [&](const NestingTree& t) {
      ModelParams init{flat_fit.params.beta, std::vector<double>(t.num_slots(), 1.0)};
      for (int k = 0; k < t.num_slots(); ++k)
        if (t.nest_included(k)) init.mu[k] = 1.0 + 0.1 * t.depth(t.ids().nest(k));
      return init;
    };

    MasterConfig mcfg;
    mcfg.m = m;
    mcfg.M = M;
    mcfg.L = L;
    mcfg.n_params = cspec.n_params;
    mcfg.mu_max = config.mu_max;
    mcfg.rho = config.rho;
    mcfg.eta_lb = -10.0 * std::max(1.0, train.total_weight()) * std::log((double)m);
    MasterProblem mp(mcfg);

    std::set<std::string> visited;
    const auto edges = candidate_edges(tree.ids());
    const NodeIds ids = tree.ids();
    auto edge_pos = [&](int u, int v) {
      return std::find(edges.begin(), edges.end(), Edge{u, v}) - edges.begin();
    };
    // Cuts the visited tree and every relabeling of it that the master could
    // still produce (slot permutations consistent with the fixed chain).
    auto cut_visited = [&](const NestingTree& t) {
      std::vector<int> perm(M);
      for (int k = 0; k < M; ++k) perm[k] = k;
      auto remap = [&](int node) {
        return ids.is_nest(node) ? ids.nest(perm[ids.nest_index(node)]) : node;
      };
      // The identity permutation comes first, so the visited tree itself is
      // always excluded. Full equivalence classes are only worth their rows
      // for small M; beyond that the lazy signature check picks up the rest.
      const bool whole_class = M <= 3;
      do {
        std::vector<char> active(edges.size(), 0);
        for (auto [u, v] : t.edge_list()) active[edge_pos(remap(u), remap(v))] = 1;
        bool chain_ok = L < 2 || active[edge_pos(ids.root(), ids.nest(0))];
        for (int i = 0; chain_ok && i + 1 <= L - 2; ++i)
          chain_ok = active[edge_pos(ids.nest(i), ids.nest(i + 1))];
        if (chain_ok) mp.add_no_good(active);
      } while (whole_class && std::next_permutation(perm.begin(), perm.end()));
    };
    double prev_nll = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= config.max_oa_iterations; ++k) {
      Evaluator eval(train, cspec, tree, nlp_cfg.threads);
      NlpResult fit = estimate(train, cspec, tree, warm_init(tree), nlp_cfg);
      visited.insert(tree.signature());
      cut_visited(tree);
      ++cell.visited_trees;
      cell.trace.push_back({k, fit.negloglik,
                            std::numeric_limits<double>::quiet_NaN(), tree.signature()});
      if (fit.negloglik < cell.train_negloglik) {
        cell.train_negloglik = fit.negloglik;
        cell.tree = tree;
        cell.params = fit.params;
      }
      if (config.termination == OAConfig::Termination::WorseningNlp && k >= 2 &&
          fit.negloglik > prev_nll)
        break;
      prev_nll = fit.negloglik;
      if (k == config.max_oa_iterations) break;

      mp.add_linearization(make_cut(eval, tree, fit.params, fit.negloglik));
      auto pivot = solve_master(mp, backend, visited, &cell.master_stats);
      if (!pivot) break;  // search space exhausted: normal termination
      cell.trace.back().z_milp = pivot->second;
      tree = pivot->first;
    }
    cell.feasible = true;
    cell.val_negloglik = eval_validation(*cell.tree, cell.params);
  } catch (const Error& e) {
    cell.feasible = false;
    cell.error = e.what();
  }
  return cell;
}

OAResult run_grid(const ChoiceDataset& data, const UtilitySpec& spec, const OAConfig& config) {
  OAResult result;
  auto [train_idx, val_idx] = split_indices(data.num_obs(), config.cv_split, config.seed);
  ChoiceDataset train = data.subset(train_idx);
  ChoiceDataset val = data.subset(val_idx);
  result.n_train = train_idx.size();
  result.n_val = val_idx.size();

  const int m = data.num_alts();
  std::vector<std::pair<int, int>> grid;
  if (config.single_cell) {
    grid.push_back(*config.single_cell);
  } else {
    grid.emplace_back(0, 1);
    for (int M = 1; M <= m - 2; ++M)
      for (int L = 2; L <= M + 1; ++L) grid.emplace_back(M, L);
  }

  result.cells.resize(grid.size());
  const int threads = std::max(1, std::min(config.threads, static_cast<int>(grid.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < grid.size(); ++i)
      result.cells[i] = run_cell(train, val, spec, grid[i].first, grid[i].second, config);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < grid.size(); i += threads)
          result.cells[i] = run_cell(train, val, spec, grid[i].first, grid[i].second, config);
      });
    for (auto& th : pool) th.join();
  }

  // Validation selection; ties resolve toward the simpler model (smaller M,
  // then smaller L). A cell within a few likelihood units of the best is a
  // tie: the search visits on the order of a hundred candidate structures,
  // so the best spurious held-out gain concentrates around ln(visited) nats.
  // Differences inside that window are noise, not structure.
  double best_val = std::numeric_limits<double>::infinity();
  for (const auto& c : result.cells)
    if (c.feasible) best_val = std::min(best_val, c.val_negloglik);
  if (!std::isfinite(best_val))
    fail(Errc::Infeasible, "every (M, L) cell failed");
  const double tie_tol = 3.0;
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const auto& c = result.cells[i];
    if (!c.feasible || c.val_negloglik > best_val + tie_tol) continue;
    if (result.selected < 0) {
      result.selected = static_cast<int>(i);
      continue;
    }
    const auto& s = result.cells[result.selected];
    if (std::make_pair(c.M, c.L) < std::make_pair(s.M, s.L))
      result.selected = static_cast<int>(i);
  }

  const auto& winner = result.cells[result.selected];
  result.selected_tree = winner.tree;

  ChoiceDataset full = data.aggregated();
  CompiledSpec cspec = compile_spec(full, spec);
  NlpConfig nlp_cfg = config.nlp;
  nlp_cfg.mu_max = config.mu_max;
  nlp_cfg.compute_se = true;
  result.refit = estimate(full, cspec, *winner.tree, winner.params, nlp_cfg);
  result.covariance = covariance_from_tree(*winner.tree, result.refit->params.mu);
  result.covariance_normalized = normalized_covariance(*winner.tree, result.refit->params.mu);
  return result;
}

}  // namespace nestlearn
