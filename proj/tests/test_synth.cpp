#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "nestlearn/synth.hpp"
#include "oracles.hpp"

using namespace nestlearn;

TEST_CASE("softmax constants reproduce their shares") {
  Scenario sc;
  sc.alternatives = {"a1", "a2"};
  sc.tree = NestingTree::flat(2);
  sc.asc = {0.0, std::log(3.0)};
  sc.n_agents = 100000;
  sc.seed = 314;
  auto data = simulate(sc);
  int count2 = 0;
  for (int n = 0; n < data.num_obs(); ++n) count2 += data.chosen(n) == 1;
  CHECK(std::abs(count2 / 100000.0 - 0.75) < 0.005);
}

TEST_CASE("unit-scale nest collapses to the flat model exactly") {
  Scenario nested;
  nested.alternatives = {"a1", "a2", "a3"};
  nested.tree = NestedPartition(3, {{1, 2}}).to_tree();
  nested.mu = {1.0};
  nested.asc = {0.0, 0.4, -0.2};
  nested.n_agents = 20000;
  nested.seed = 11;
  Scenario flat = nested;
  flat.tree = NestingTree::flat(3);
  flat.mu = {1.0};
  auto p_nested = scenario_probabilities(nested);
  auto p_flat = scenario_probabilities(flat);
  for (int a = 0; a < 3; ++a)
    CHECK(p_nested[a] == doctest::Approx(p_flat[a]).epsilon(1e-12));
  CHECK(simulate(nested) == simulate(flat));  // same probabilities, same draws
}

TEST_CASE("equal seeds reproduce the dataset, different seeds do not") {
  Scenario sc;
  sc.alternatives = {"a1", "a2", "a3"};
  sc.tree = NestedPartition(3, {{0, 1}}).to_tree();
  sc.mu = {1.7};
  sc.asc = {0.0, 0.2, -0.2};
  sc.random_vars = {{"x", {0.0, 1.0}, 0.8}};
  sc.n_agents = 500;
  sc.seed = 123;
  CHECK(simulate(sc) == simulate(sc));
  Scenario other = sc;
  other.seed = 124;
  CHECK_FALSE(simulate(sc) == simulate(other));
}

TEST_CASE("empirical frequencies converge to the closed form") {
  Scenario sc;
  sc.alternatives = {"a1", "a2", "a3", "a4"};
  sc.tree = NestedPartition(4, {{2, 3}}).to_tree();
  sc.mu = {2.5, 1.0};
  sc.asc = {0.0, 0.5, -0.4, 0.3};
  sc.n_agents = 50000;
  sc.seed = 999;
  auto probs = scenario_probabilities(sc);
  auto data = simulate(sc);
  std::vector<int> counts(4, 0);
  for (int n = 0; n < data.num_obs(); ++n) ++counts[data.chosen(n)];
  for (int a = 0; a < 4; ++a) {
    double freq = counts[a] / 50000.0;
    double band = 3.0 * std::sqrt(probs[a] * (1 - probs[a]) / 50000.0);
    CHECK(std::abs(freq - probs[a]) < band);
  }
}

TEST_CASE("scenario JSON parses, including failure modes") {
  auto sc = scenario_from_json_text(R"json({
    "alternatives": ["w", "x", "y", "z"],
    "tree": "(root w (n1 x (n2 y z)))",
    "mu": {"n1": 1.5, "n2": 2.5},
    "asc": {"x": 0.3, "y": -0.3},
    "random_attributes": {"price": {"values": [0, 0.5, 1], "coef": -1.0}},
    "n_agents": 100,
    "seed": 5
  })json");
  CHECK(sc.alternatives.size() == 4);
  CHECK(sc.mu[0] == 1.5);
  CHECK(sc.asc[1] == 0.3);
  CHECK(sc.random_vars.size() == 1);
  CHECK(simulate(sc).num_obs() == 100);

  CHECK_THROWS_AS((void)scenario_from_json_text("{}"), Error);
  CHECK_THROWS_AS((void)scenario_from_json_text(R"json({
    "alternatives": ["a", "b"], "tree": "(root a b)",
    "asc": [1.0, 0.0], "n_agents": 10})json"),
                  Error);  // first constant must be zero
  CHECK_THROWS_AS((void)scenario_from_json_text(R"json({
    "alternatives": ["a", "b", "c"], "tree": "(root a (n1 b c))",
    "mu": {"n1": 0.5}, "n_agents": 10})json"),
                  Error);  // scale below the root's
}

TEST_CASE("custom utility scenarios simulate with beta_true") {
  auto sc = scenario_from_json_text(R"json({
    "alternatives": ["a", "b"],
    "tree": "(root a b)",
    "n_agents": 30000,
    "seed": 77,
    "attributes": {"cost": {"a": 1.0, "b": 2.0}},
    "utility": {"parameters": [
      {"name": "b_cost", "alternative": "a", "variable": "cost"},
      {"name": "b_cost", "alternative": "b", "variable": "cost"}
    ]},
    "beta_true": {"b_cost": -1.0}
  })json");
  auto probs = scenario_probabilities(sc);
  // V = (-1, -2): P(a) = 1/(1+e^-1)
  CHECK(probs[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  auto data = simulate(sc);
  int a_count = 0;
  for (int n = 0; n < data.num_obs(); ++n) a_count += data.chosen(n) == 0;
  CHECK(std::abs(a_count / 30000.0 - probs[0]) < 0.01);
}

TEST_CASE("monte carlo recovery table on a tiny planted study") {
  Scenario sc;
  sc.alternatives = {"a1", "a2", "a3", "a4"};
  sc.tree = NestedPartition(4, {{2, 3}}).to_tree();
  sc.mu = {2.0, 1.0};
  sc.asc = {0.0, 0.3, -0.3, 0.2};
  sc.random_vars = {{"x", {0.0, 1.0}, 1.0}};
  sc.n_agents = 6000;
  sc.seed = 400;
  OAConfig cfg;
  cfg.seed = 8;
  cfg.threads = 2;
  auto table = monte_carlo(sc, 4, cfg);
  CHECK(table.rows.size() == 4);
  CHECK(table.recovery_rate >= 0.75);  // planted correlation is strong
  for (const auto& row : table.rows) {
    REQUIRE(row.ok);
    CHECK(oracles::is_psd(row.cov_hat, 4));
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        CHECK(row.cov_hat[i * 4 + j] == row.cov_hat[j * 4 + i]);
        if (i != j) CHECK(row.cov_hat[i * 4 + j] >= -1e-12);
      }
  }
  CHECK(table.cov_mean.size() == 16);
  CHECK(table.beta_mean.size() == table.param_names.size());

  const std::string path = "nl_test_recovery.csv";
  write_recovery_csv(table, path);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 1 + 4 + 2);  // header, rows, mean, se
  std::remove(path.c_str());
}

TEST_CASE("replication seeds are offset from the base seed") {
  Scenario sc;
  sc.alternatives = {"a1", "a2", "a3"};
  sc.tree = NestingTree::flat(3);
  sc.asc = {0.0, 0.1, -0.1};
  sc.random_vars = {{"x", {0.0, 1.0}, 0.5}};
  sc.n_agents = 300;
  sc.seed = 1000;
  OAConfig cfg;
  cfg.max_oa_iterations = 3;
  auto table = monte_carlo(sc, 2, cfg);
  // replication 1 must equal a fresh run with seed base+1
  Scenario shifted = sc;
  shifted.seed = 1001;
  OAConfig cfg1 = cfg;
  cfg1.seed = cfg.seed + 1;
  auto direct = run_grid(simulate(shifted), sc.effective_spec(), cfg1);
  CHECK(table.rows[1].signature == direct.selected_tree->signature());
}
