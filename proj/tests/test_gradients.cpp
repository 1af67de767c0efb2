#include <cmath>

#include "doctest.h"
#include "nestlearn/likelihood.hpp"
#include "nestlearn/util.hpp"
#include "oracles.hpp"

using namespace nestlearn;

namespace {

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// Random nested instance over m alternatives with a generic coefficient and
// constants, used for all the finite-difference checks.
struct Instance {
  ChoiceDataset data;
  CompiledSpec spec;
  NestingTree tree;
  ModelParams params;
};

Instance random_instance(int m, int n_obs, CounterRng& rng, bool with_availability = true) {
  auto data = oracles::random_dataset(m, n_obs, 1, rng, with_availability);
  std::vector<UtilityTerm> terms;
  for (int a = 0; a < m; ++a)
    terms.push_back({"b", data.alternatives()[a], "x1", false});
  for (int a = 1; a < m; ++a)
    terms.push_back({"asc_" + data.alternatives()[a], data.alternatives()[a], "constant", false});
  auto trees = enumerate_trees(m);
  NestingTree tree = trees[rng.next_below(trees.size())];
  UtilitySpec uspec{std::move(terms)};
  CompiledSpec spec = compile_spec(data, uspec);
  ModelParams p{std::vector<double>(spec.n_params), oracles::random_monotone_mu(tree, rng, 6.0)};
  for (auto& b : p.beta) b = rng.next_range(-1.0, 1.0);
  return {std::move(data), std::move(spec), std::move(tree), std::move(p)};
}

}  // namespace

TEST_CASE("flat-model score is the share residual") {
  CounterRng rng(11);
  auto data = oracles::random_dataset(3, 30, 0, rng);
  auto spec = compile_spec(data, UtilitySpec::asc_only(data.alternatives()));
  auto flat = NestingTree::flat(3);
  ModelParams p{{0.4, -0.2}, {}};
  std::vector<double> gb, gm;
  grad_continuous(data, spec, flat, p, gb, gm);
  Evaluator ev(data, spec, flat);
  // d loglik / d asc_a = sum_n (chosen_na - P_na)
  std::vector<double> want(2, 0.0);
  for (int n = 0; n < data.num_obs(); ++n) {
    auto probs = ev.choice_probabilities(p, n);
    for (int a = 1; a < 3; ++a)
      want[a - 1] += (data.chosen(n) == a ? 1.0 : 0.0) - probs[a];
  }
  CHECK(gb[0] == doctest::Approx(want[0]).epsilon(1e-10));
  CHECK(gb[1] == doctest::Approx(want[1]).epsilon(1e-10));
}

TEST_CASE("continuous gradients match central finite differences at m=5") {
  CounterRng rng(13);
  int checked = 0;
  while (checked < 30) {
    Instance inst = random_instance(5, 12, rng);
    Evaluator ev(inst.data, inst.spec, inst.tree);
    std::vector<double> gb, gm;
    ev.loglik_grad(inst.params, gb, gm);
    const double h = 1e-5;
    for (std::size_t j = 0; j < inst.params.beta.size(); ++j) {
      auto pp = inst.params, pm = inst.params;
      pp.beta[j] += h;
      pm.beta[j] -= h;
      double fd = (ev.loglik(pp) - ev.loglik(pm)) / (2 * h);
      CHECK(rel_err(gb[j], fd) < 1e-6);
    }
    for (int k = 0; k < inst.tree.num_slots(); ++k) {
      if (!inst.tree.nest_included(k)) continue;
      auto pp = inst.params, pm = inst.params;
      pp.mu[k] += h;
      pm.mu[k] -= h;
      double fd = (ev.loglik(pp) - ev.loglik(pm)) / (2 * h);
      CHECK(rel_err(gm[k], fd) < 1e-6);
    }
    ++checked;
  }
}

TEST_CASE("gradient vanishes at the share-matching constants") {
  // With constants only, the flat-model optimum reproduces the empirical
  // shares, where the score is exactly zero.
  ChoiceDataset d({"a1", "a2", "a3"}, {});
  for (int i = 0; i < 20; ++i)
    d.add_observation(std::to_string(i), {true, true, true}, i < 10 ? 0 : (i < 16 ? 1 : 2), {});
  auto spec = compile_spec(d, UtilitySpec::asc_only(d.alternatives()));
  ModelParams p{{std::log(6.0 / 10.0), std::log(4.0 / 10.0)}, {}};
  std::vector<double> gb, gm;
  grad_continuous(d, spec, NestingTree::flat(3), p, gb, gm);
  CHECK(std::abs(gb[0]) < 1e-8);
  CHECK(std::abs(gb[1]) < 1e-8);
}

TEST_CASE("edge gradients match finite differences of the relaxed path sum") {
  CounterRng rng(17);
  int instances = 0;
  double max_rel = 0.0;
  while (instances < 10) {
    int m = 3 + static_cast<int>(rng.next_below(2));
    Instance inst = random_instance(m, 8, rng, false);
    Evaluator ev(inst.data, inst.spec, inst.tree);
    auto edges = grad_edges(inst.data, inst.spec, inst.tree, inst.params);
    RelaxedEdges base = RelaxedEdges::from_tree(inst.tree);
    const auto& ids = inst.tree.ids();
    const double h = 1e-6;
    for (const auto& [edge, grad] : edges) {
      auto [u, v] = edge;
      // Skip origins outside the tree and insertions that close a cycle in
      // the positive support (the relaxed recursion is undefined there).
      if (!ids.is_root(u) && !inst.tree.nest_included(ids.nest_index(u))) continue;
      if (ids.is_nest(v)) {
        if (!inst.tree.nest_included(ids.nest_index(v))) continue;
        bool ancestor = false;
        for (int w = u; w != -1; w = inst.tree.parent(w)) ancestor |= w == v;
        if (ancestor) continue;
      }
      auto xp = base, xm = base;
      xp.set(u, v, xp.get(u, v) + h);
      double up = brute_force_loglik(inst.data, inst.spec, xp, inst.params);
      double fd;
      if (base.get(u, v) >= h) {
        xm.set(u, v, xm.get(u, v) - h);
        double dn = brute_force_loglik(inst.data, inst.spec, xm, inst.params);
        fd = (up - dn) / (2 * h);
      } else {
        // one-sided at x_e = 0 (negative indicators are outside the domain);
        // second-order formula keeps the truncation error within tolerance
        auto x2 = base;
        x2.set(u, v, 2 * h);
        double up2 = brute_force_loglik(inst.data, inst.spec, x2, inst.params);
        double at = brute_force_loglik(inst.data, inst.spec, base, inst.params);
        fd = (4 * up - 3 * at - up2) / (2 * h);
      }
      double re = rel_err(grad, fd);
      max_rel = std::max(max_rel, re);
      CHECK(re < 1e-5);
    }
    ++instances;
  }
  MESSAGE("max relative error ", max_rel);
}

TEST_CASE("symmetric alternatives get symmetric edge gradients") {
  ChoiceDataset d({"a1", "a2", "a3", "a4"}, {});
  for (int a = 0; a < 4; ++a)
    d.add_observation(std::to_string(a), std::vector<bool>(4, true), a, {});
  auto spec = compile_spec(d, UtilitySpec::asc_only(d.alternatives()));
  auto flat = NestingTree::flat(4);
  ModelParams p = ModelParams::zero(spec.n_params, 2);
  auto edges = grad_edges(d, spec, flat, p);
  const auto& ids = flat.ids();
  // All root-to-leaf coordinates are interchangeable here.
  double first = edges.at({ids.root(), ids.leaf(0)});
  for (int a = 1; a < 4; ++a)
    CHECK(edges.at({ids.root(), ids.leaf(a)}) == doctest::Approx(first).epsilon(1e-12));
  // Likewise for nest-to-leaf coordinates of the two (excluded) nests.
  CHECK(edges.at({ids.nest(0), ids.leaf(0)}) ==
        doctest::Approx(edges.at({ids.nest(1), ids.leaf(1)})).epsilon(1e-12));
}

TEST_CASE("direct formula for a root-to-leaf edge at the flat tree") {
  // At a flat tree the derivative for the root->a coordinate reduces to
  // sum_n c_na (V_an - Gamma_r) - exp(V_an - Gamma_r).
  CounterRng rng(23);
  auto d = oracles::random_dataset(3, 15, 0, rng);
  auto spec = compile_spec(d, UtilitySpec::asc_only(d.alternatives()));
  auto flat = NestingTree::flat(3);
  ModelParams p{{0.5, -0.3}, {1.0}};
  auto edges = grad_edges(d, spec, flat, p);
  Evaluator ev(d, spec, flat);
  const auto& ids = flat.ids();
  auto V = systematic_utilities(d, spec, p.beta);
  for (int a = 0; a < 3; ++a) {
    double want = 0.0;
    for (int n = 0; n < d.num_obs(); ++n) {
      std::vector<double> Vn(V.begin() + n * 3, V.begin() + (n + 1) * 3);
      double mx = std::max({Vn[0], Vn[1], Vn[2]});
      double gamma = mx + std::log(std::exp(Vn[0] - mx) + std::exp(Vn[1] - mx) +
                                   std::exp(Vn[2] - mx));
      if (d.chosen(n) == a) want += Vn[a] - gamma;
      want -= std::exp(Vn[a] - gamma);
    }
    CHECK(edges.at({ids.root(), ids.leaf(a)}) == doctest::Approx(want).epsilon(1e-10));
  }
}
