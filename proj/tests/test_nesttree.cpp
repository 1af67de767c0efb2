#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"
#include "nestlearn/nesttree.hpp"
#include "nestlearn/util.hpp"
#include "oracles.hpp"

using namespace nestlearn;

namespace {

NestingTree chain4_tree() {
  // root -> {a1, b1}, b1 -> {a2, b2}, b2 -> {a3, a4}
  return NestedPartition(4, {{1, 2, 3}, {2, 3}}).to_tree();
}

}  // namespace

TEST_CASE("enumeration counts match the independent oracles") {
  CHECK(enumerate_trees(2).size() == 1);
  CHECK(enumerate_trees(3).size() == 4);
  CHECK(enumerate_trees(4).size() == 26);
  CHECK(static_cast<long>(enumerate_trees(4).size()) == oracles::count_trees_laminar(4));
  CHECK(static_cast<long>(enumerate_trees(3).size()) == oracles::count_trees_laminar(3));
  for (int m = 2; m <= 6; ++m)
    CHECK(static_cast<long>(enumerate_trees(m).size()) == oracles::count_trees_recurrence(m));
  // The independent recurrence gives 2752 for m = 6; 2712 has been cited
  // elsewhere. Both stay on record; enumeration is the artifact's authority.
  CHECK(enumerate_trees(6).size() == 2752);
  CHECK_THROWS_AS((void)enumerate_trees(9), Error);
}

TEST_CASE("every enumerated tree is valid with at most m-2 nests") {
  for (int m = 2; m <= 5; ++m)
    for (const auto& t : enumerate_trees(m)) {
      CHECK(t.validate().empty());
      CHECK(t.num_nests() <= m - 2);
    }
}

TEST_CASE("signatures are distinct across structures and stable under relabeling") {
  for (int m = 3; m <= 5; ++m) {
    auto trees = enumerate_trees(m);
    std::set<std::string> sigs;
    for (const auto& t : trees) sigs.insert(t.signature());
    CHECK(sigs.size() == trees.size());
  }
  // Same structure, nest labels swapped.
  NodeIds ids{4, 2};
  std::vector<int> parent_a(ids.total(), -1), parent_b(ids.total(), -1);
  std::vector<bool> inc{true, true};
  parent_a[ids.nest(0)] = ids.root();
  parent_a[ids.nest(1)] = ids.root();
  parent_a[ids.leaf(0)] = ids.nest(0);
  parent_a[ids.leaf(1)] = ids.nest(0);
  parent_a[ids.leaf(2)] = ids.nest(1);
  parent_a[ids.leaf(3)] = ids.nest(1);
  parent_b[ids.nest(0)] = ids.root();
  parent_b[ids.nest(1)] = ids.root();
  parent_b[ids.leaf(0)] = ids.nest(1);
  parent_b[ids.leaf(1)] = ids.nest(1);
  parent_b[ids.leaf(2)] = ids.nest(0);
  parent_b[ids.leaf(3)] = ids.nest(0);
  auto ta = NestingTree::from_parents(4, parent_a, inc);
  auto tb = NestingTree::from_parents(4, parent_b, inc);
  CHECK(ta.signature() == tb.signature());
  CHECK_FALSE(ta == tb);

  CHECK(NestingTree::flat(3).signature() !=
        NestedPartition(3, {{0, 1}}).to_tree().signature());
}

TEST_CASE("validate flags the named violations") {
  CHECK(NestingTree::flat(4).validate().empty());

  // Included nest with a single child.
  NodeIds ids{4, 2};
  std::vector<int> parent(ids.total(), -1);
  std::vector<bool> inc{true, false};
  parent[ids.nest(0)] = ids.root();
  parent[ids.leaf(0)] = ids.nest(0);
  parent[ids.leaf(1)] = ids.root();
  parent[ids.leaf(2)] = ids.root();
  parent[ids.leaf(3)] = ids.root();
  auto degenerate = NestingTree::from_parents(4, parent, inc);
  bool found = false;
  for (const auto& v : degenerate.validate()) found |= v.kind == Violation::DegenerateNest;
  CHECK(found);

  // nest1 -> nest2 -> nest1 cycle.
  std::vector<int> cyc(ids.total(), -1);
  std::vector<bool> inc2{true, true};
  cyc[ids.nest(0)] = ids.nest(1);
  cyc[ids.nest(1)] = ids.nest(0);
  for (int a = 0; a < 4; ++a) cyc[ids.leaf(a)] = ids.root();
  auto cyclic = NestingTree::from_parents(4, cyc, inc2);
  found = false;
  for (const auto& v : cyclic.validate()) found |= v.kind == Violation::Cycle;
  CHECK(found);

  // from_edges reports in-degree violations.
  std::vector<Violation> violations;
  NestingTree::from_edges(3, {{0, 2}, {0, 3}}, {false}, &violations);
  CHECK(!violations.empty());
}

TEST_CASE("partition round trips") {
  NestedPartition p(4, {{1, 2, 3}, {2, 3}});
  auto tree = p.to_tree();
  CHECK(tree.to_partition() == p);
  CHECK(tree.height() == 3);
  CHECK(tree.to_text() == "(root a1 (n1 a2 (n2 a3 a4)))");

  NestedPartition flat3(3, {});
  CHECK(flat3.to_tree().signature() == NestingTree::flat(3).signature());

  for (int m = 3; m <= 5; ++m)
    for (const auto& t : enumerate_trees(m)) {
      auto back = t.to_partition().to_tree();
      CHECK(back.signature() == t.signature());
    }

  CHECK_THROWS_AS(NestedPartition(4, {{1}, {2, 3}}), Error);
  auto normalized = NestedPartition::normalized({{1}, {2, 3}, {2, 3}});
  CHECK(normalized.size() == 1);  // singleton dropped, duplicate merged
}

TEST_CASE("height and smallest common nest") {
  auto chain4 = chain4_tree();
  CHECK(chain4.height() == 3);
  CHECK(NestingTree::flat(5).height() == 1);
  const auto& ids = chain4.ids();
  CHECK(chain4.smallest_common_nest(2, 3) == chain4.parent(ids.leaf(2)));
  CHECK(chain4.smallest_common_nest(0, 1) == ids.root());
  int b2 = chain4.parent(ids.leaf(2));
  CHECK(chain4.smallest_common_nest(1, 2) == chain4.parent(b2));
}

TEST_CASE("covariance matches the closed form") {
  const double unit = std::numbers::pi * std::numbers::pi / 6.0;

  auto flat = NestingTree::flat(4);
  auto cov = covariance_from_tree(flat, {1.0, 1.0});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(cov[i * 4 + j] == doctest::Approx(i == j ? unit : 0.0).epsilon(1e-12));

  auto chain4 = chain4_tree();
  // Slot order from partition construction: slot 0 = {a2,a3,a4}, slot 1 = {a3,a4}.
  auto c2 = covariance_from_tree(chain4, {2.0, 4.0});
  CHECK(c2[1 * 4 + 2] == doctest::Approx(unit * (1 - 1.0 / 4)).epsilon(1e-12));
  CHECK(c2[1 * 4 + 3] == doctest::Approx(unit * (1 - 1.0 / 4)).epsilon(1e-12));
  CHECK(c2[2 * 4 + 3] == doctest::Approx(unit * (1 - 1.0 / 16)).epsilon(1e-12));
  CHECK(c2[0 * 4 + 1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(c2[0 * 4 + 2] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(c2[0] == doctest::Approx(unit).epsilon(1e-12));

  auto c3 = covariance_from_tree(chain4, {1.0, 1.0});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(c3[i * 4 + j] == doctest::Approx(i == j ? unit : 0.0).epsilon(1e-12));

  CHECK_THROWS_AS((void)covariance_from_tree(chain4, {4.0, 2.0}), Error);  // nonmonotone
}

TEST_CASE("random monotone scales give symmetric PSD covariances") {
  CounterRng rng(2024);
  for (int m = 3; m <= 5; ++m) {
    auto trees = enumerate_trees(m);
    for (int rep = 0; rep < 40; ++rep) {
      const auto& t = trees[rng.next_below(trees.size())];
      auto mu = oracles::random_monotone_mu(t, rng);
      auto cov = covariance_from_tree(t, mu);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          CHECK(cov[i * m + j] == cov[j * m + i]);
          if (i != j) CHECK(cov[i * m + j] >= -1e-12);
        }
      CHECK(oracles::is_psd(cov, m));
    }
  }
}

TEST_CASE("text form parses and serializes") {
  auto t = parse_tree_text("(root a1 (n1 a2 (n2 a3 a4)))", {});
  CHECK(t.to_text() == "(root a1 (n1 a2 (n2 a3 a4)))");
  CHECK(t.signature() == chain4_tree().signature());

  std::vector<std::string> labels{"walk", "bike", "car", "transit"};
  auto t2 = parse_tree_text("(root walk (active bike car) transit)", labels);
  CHECK(t2.num_nests() == 1);
  CHECK(t2.to_text(labels) == "(root walk transit (n1 bike car))");

  CHECK_THROWS_AS((void)parse_tree_text("(root a1", {}), Error);
  CHECK_THROWS_AS((void)parse_tree_text("(root a1 a1 a2)", {}), Error);
  CHECK_THROWS_AS((void)parse_tree_text("(root walk (n1 bike bus))", labels), Error);
}

TEST_CASE("enumeration filters by nest count and height") {
  auto chains = enumerate_trees(4, 2, 3);
  CHECK(chains.size() == 12);
  for (const auto& t : chains) {
    CHECK(t.num_nests() == 2);
    CHECK(t.height() == 3);
  }
  CHECK(enumerate_trees(4, 0, 1).size() == 1);
  CHECK(enumerate_trees(4, 2, 2).size() == 3);
}
