#include "nestlearn/nesttree.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>

namespace nestlearn {

const char* violation_name(Violation::Kind k) {
  switch (k) {
    case Violation::BadParent: return "BadParent";
    case Violation::InDegree: return "InDegree";
    case Violation::DegenerateNest: return "DegenerateNest";
    case Violation::DegenerateRoot: return "DegenerateRoot";
    case Violation::ExcludedActive: return "ExcludedActive";
    case Violation::Cycle: return "Cycle";
    case Violation::SelfArc: return "SelfArc";
    case Violation::TooManyNests: return "TooManyNests";
    case Violation::EdgeCount: return "EdgeCount";
    case Violation::LeafParent: return "LeafParent";
  }
  return "Unknown";
}

// ---------------------------------------------------------------------------
// NestingTree

NestingTree NestingTree::flat(int m) {
  if (m < 2) fail(Errc::InvalidTree, "need at least 2 alternatives");
  NestingTree t;
  t.ids_ = NodeIds{m, m - 2};
  t.included_.assign(t.ids_.p, false);
  t.parent_.assign(t.ids_.total(), -1);
  for (int a = 0; a < m; ++a) t.parent_[t.ids_.leaf(a)] = t.ids_.root();
  t.rebuild_derived();
  return t;
}

NestingTree NestingTree::from_parents(int m, const std::vector<int>& parent,
                                      const std::vector<bool>& included) {
  if (m < 2) fail(Errc::InvalidTree, "need at least 2 alternatives");
  NodeIds ids{m, m - 2};
  if (static_cast<int>(parent.size()) != ids.total() ||
      static_cast<int>(included.size()) != ids.p)
    fail(Errc::InvalidTree, "parent/included size mismatch");
  for (int v = 0; v < ids.total(); ++v) {
    int pv = parent[v];
    if (pv == -1) continue;
    if (pv < 0 || pv >= ids.total() || ids.is_leaf(pv))
      fail(Errc::InvalidTree, "bad parent pointer at node " + std::to_string(v));
  }
  NestingTree t;
  t.ids_ = ids;
  t.included_ = included;
  t.parent_ = parent;
  t.rebuild_derived();
  return t;
}

NestingTree NestingTree::from_edges(int m, const std::vector<std::pair<int, int>>& edges,
                                    const std::vector<bool>& included,
                                    std::vector<Violation>* violations) {
  NodeIds ids{m, m - 2};
  std::vector<Violation> local;
  auto add = [&](Violation::Kind k, std::string d) { local.push_back({k, std::move(d)}); };

  std::vector<int> parent(ids.total(), -1);
  std::vector<int> indeg(ids.total(), 0);
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || u >= ids.total() || v >= ids.total()) {
      add(Violation::BadParent, "edge endpoint out of range");
      continue;
    }
    if (u == v) add(Violation::SelfArc, "self arc at node " + std::to_string(u));
    if (ids.is_leaf(u)) add(Violation::LeafParent, "edge out of leaf " + std::to_string(u));
    if (ids.is_root(v)) add(Violation::BadParent, "edge into root");
    ++indeg[v];
    parent[v] = u;
  }
  for (int a = 0; a < m; ++a)
    if (indeg[ids.leaf(a)] != 1)
      add(Violation::InDegree, "leaf " + std::to_string(a) + " has in-degree " +
                                   std::to_string(indeg[ids.leaf(a)]));
  for (int k = 0; k < ids.p; ++k) {
    int want = included[k] ? 1 : 0;
    if (indeg[ids.nest(k)] != want)
      add(Violation::InDegree, "nest " + std::to_string(k) + " has in-degree " +
                                   std::to_string(indeg[ids.nest(k)]));
  }
  int n_nodes = 1 + m;
  for (int k = 0; k < ids.p; ++k) n_nodes += included[k] ? 1 : 0;
  if (static_cast<int>(edges.size()) != n_nodes - 1)
    add(Violation::EdgeCount, std::to_string(edges.size()) + " edges for " +
                                  std::to_string(n_nodes) + " nodes");

  if (!local.empty()) {
    if (!violations) fail(Errc::InvalidTree, local.front().detail);
    *violations = std::move(local);
    // Still return a best-effort tree so callers can inspect it.
  }
  NestingTree t;
  t.ids_ = ids;
  t.included_ = included;
  t.parent_ = std::move(parent);
  t.rebuild_derived();
  if (violations && violations->empty()) {
    auto more = t.validate();
    violations->insert(violations->end(), more.begin(), more.end());
  }
  return t;
}

void NestingTree::rebuild_derived() {
  const int n = ids_.total();
  num_included_ = 0;
  for (bool b : included_) num_included_ += b ? 1 : 0;

  children_.assign(n, {});
  // Leaves first (ascending), then nests: matches the serialized text form.
  for (int a = 0; a < ids_.m; ++a) {
    int v = ids_.leaf(a);
    if (parent_[v] >= 0) children_[parent_[v]].push_back(v);
  }
  for (int k = 0; k < ids_.p; ++k) {
    int v = ids_.nest(k);
    if (parent_[v] >= 0) children_[parent_[v]].push_back(v);
  }

  // Depth by parent chasing, capped so cycles leave depth at -1.
  depth_.assign(n, -1);
  depth_[ids_.root()] = 0;
  for (int v = 1; v < n; ++v) {
    if (parent_[v] < 0) continue;
    int steps = 0, u = v;
    while (u != ids_.root() && parent_[u] >= 0 && steps <= n) {
      u = parent_[u];
      ++steps;
    }
    if (u == ids_.root()) depth_[v] = steps;
  }

  // Internal nodes leaves-to-root (deepest first); cycle nodes excluded.
  topo_.clear();
  std::vector<int> internal;
  internal.push_back(ids_.root());
  for (int k = 0; k < ids_.p; ++k)
    if (included_[k] && depth_[ids_.nest(k)] >= 0) internal.push_back(ids_.nest(k));
  std::sort(internal.begin(), internal.end(), [&](int a, int b) {
    if (depth_[a] != depth_[b]) return depth_[a] > depth_[b];
    return a < b;
  });
  topo_ = std::move(internal);
}

int NestingTree::height() const {
  int h = 0;
  for (int a = 0; a < ids_.m; ++a) h = std::max(h, depth_[ids_.leaf(a)]);
  return h;
}

int NestingTree::smallest_common_nest(int leaf_a, int leaf_b) const {
  std::vector<int> anc;
  for (int v = parent_[ids_.leaf(leaf_a)]; v >= 0; v = parent_[v]) anc.push_back(v);
  for (int v = parent_[ids_.leaf(leaf_b)]; v >= 0; v = parent_[v])
    if (std::find(anc.begin(), anc.end(), v) != anc.end()) return v;
  return ids_.root();
}

std::vector<int> NestingTree::descendant_leaves(int v) const {
  std::vector<int> out;
  std::vector<int> stack{v};
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    if (ids_.is_leaf(u)) {
      out.push_back(ids_.leaf_index(u));
      continue;
    }
    for (int c : children_[u]) stack.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<int, int>> NestingTree::edge_list() const {
  std::vector<std::pair<int, int>> edges;
  for (int v = 1; v < ids_.total(); ++v)
    if (parent_[v] >= 0) edges.emplace_back(parent_[v], v);
  return edges;
}

std::vector<Violation> NestingTree::validate() const {
  std::vector<Violation> out;
  auto add = [&](Violation::Kind k, std::string d) { out.push_back({k, std::move(d)}); };

  if (num_included_ > ids_.m - 2)
    add(Violation::TooManyNests, std::to_string(num_included_) + " nests for m=" +
                                     std::to_string(ids_.m));
  if (static_cast<int>(children_[ids_.root()].size()) < 2)
    add(Violation::DegenerateRoot,
        "root has " + std::to_string(children_[ids_.root()].size()) + " children");
  for (int k = 0; k < ids_.p; ++k) {
    int v = ids_.nest(k);
    if (!included_[k]) {
      if (parent_[v] != -1 || !children_[v].empty())
        add(Violation::ExcludedActive, "excluded nest " + std::to_string(k) + " has edges");
      continue;
    }
    if (parent_[v] == -1)
      add(Violation::InDegree, "included nest " + std::to_string(k) + " has no parent");
    if (parent_[v] == v) add(Violation::SelfArc, "nest " + std::to_string(k));
    if (children_[v].size() < 2)
      add(Violation::DegenerateNest, "nest " + std::to_string(k) + " has " +
                                         std::to_string(children_[v].size()) + " children");
    if (parent_[v] != -1 && depth_[v] < 0)
      add(Violation::Cycle, "nest " + std::to_string(k) + " cannot reach the root");
  }
  for (int a = 0; a < ids_.m; ++a) {
    int v = ids_.leaf(a);
    if (parent_[v] == -1)
      add(Violation::InDegree, "leaf " + std::to_string(a) + " has no parent");
    else if (depth_[v] < 0)
      add(Violation::Cycle, "leaf " + std::to_string(a) + " cannot reach the root");
  }
  return out;
}

namespace {

std::string signature_of(const NestingTree& t, int v) {
  if (t.ids().is_leaf(v)) return "a" + std::to_string(t.ids().leaf_index(v));
  std::vector<std::string> parts;
  for (int c : t.children(v)) parts.push_back(signature_of(t, c));
  std::sort(parts.begin(), parts.end());
  std::string s = "(";
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += ' ';
    s += parts[i];
  }
  s += ')';
  return s;
}

}  // namespace

std::string NestingTree::signature() const { return signature_of(*this, ids_.root()); }

NestedPartition NestingTree::to_partition() const {
  std::vector<std::vector<int>> subsets;
  for (int k = 0; k < ids_.p; ++k)
    if (included_[k]) subsets.push_back(descendant_leaves(ids_.nest(k)));
  return NestedPartition(ids_.m, std::move(subsets));
}

std::string NestingTree::to_text(const std::vector<std::string>& leaf_labels) const {
  auto leaf_name = [&](int a) {
    return leaf_labels.empty() ? "a" + std::to_string(a + 1) : leaf_labels.at(a);
  };
  std::string out;
  auto rec = [&](auto&& self, int v) -> void {
    if (ids_.is_leaf(v)) {
      out += leaf_name(ids_.leaf_index(v));
      return;
    }
    out += '(';
    out += ids_.is_root(v) ? "root" : "n" + std::to_string(ids_.nest_index(v) + 1);
    for (int c : children_[v]) {
      out += ' ';
      self(self, c);
    }
    out += ')';
  };
  rec(rec, ids_.root());
  return out;
}

// ---------------------------------------------------------------------------
// NestedPartition

NestedPartition::NestedPartition(int m, std::vector<std::vector<int>> subsets) : m_(m) {
  if (m < 2) fail(Errc::InvalidTree, "need at least 2 alternatives");
  for (auto& s : subsets) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    if (s.size() == 1) fail(Errc::DegeneratePartition, "singleton subset supplied");
    if (s.empty()) fail(Errc::DegeneratePartition, "empty subset supplied");
    for (int a : s)
      if (a < 0 || a >= m) fail(Errc::InvalidTree, "alternative index out of range");
    if (static_cast<int>(s.size()) < m) subsets_.push_back(std::move(s));
  }
  std::sort(subsets_.begin(), subsets_.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a < b;
  });
  subsets_.erase(std::unique(subsets_.begin(), subsets_.end()), subsets_.end());
  // Laminar check: overlapping pairs must nest.
  for (std::size_t i = 0; i < subsets_.size(); ++i)
    for (std::size_t j = i + 1; j < subsets_.size(); ++j) {
      const auto& big = subsets_[i];
      const auto& small = subsets_[j];
      bool any = false, all = true;
      for (int a : small) {
        bool in = std::binary_search(big.begin(), big.end(), a);
        any = any || in;
        all = all && in;
      }
      if (any && !all) fail(Errc::InvalidTree, "subsets overlap without nesting");
    }
}

std::vector<std::vector<int>> NestedPartition::normalized(std::vector<std::vector<int>> subsets) {
  std::vector<std::vector<int>> out;
  for (auto& s : subsets) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    if (s.size() >= 2) out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

NestingTree NestedPartition::to_tree() const {
  NodeIds ids{m_, m_ - 2};
  if (static_cast<int>(subsets_.size()) > ids.p)
    fail(Errc::InvalidTree, "more than m-2 proper subsets");
  std::vector<int> parent(ids.total(), -1);
  std::vector<bool> included(ids.p, false);

  // Subsets are size-descending, so a strict superset always precedes its
  // subsets; the latest (smallest) container wins.
  auto contains = [](const std::vector<int>& sup, const std::vector<int>& sub) {
    for (int a : sub)
      if (!std::binary_search(sup.begin(), sup.end(), a)) return false;
    return true;
  };
  for (std::size_t k = 0; k < subsets_.size(); ++k) {
    included[k] = true;
    int par = ids.root();
    for (std::size_t j = 0; j < k; ++j)
      if (subsets_[j].size() > subsets_[k].size() && contains(subsets_[j], subsets_[k]))
        par = ids.nest(static_cast<int>(j));
    parent[ids.nest(static_cast<int>(k))] = par;
  }
  for (int a = 0; a < m_; ++a) {
    int par = ids.root();
    for (std::size_t k = 0; k < subsets_.size(); ++k)
      if (std::binary_search(subsets_[k].begin(), subsets_[k].end(), a))
        par = ids.nest(static_cast<int>(k));  // later = smaller
    parent[ids.leaf(a)] = par;
  }
  return NestingTree::from_parents(m_, parent, included);
}

// ---------------------------------------------------------------------------
// Enumeration

namespace {

struct Shape {
  std::vector<int> leaves;            // direct leaf children (global indices)
  std::vector<Shape> nests;           // nest children
  int nest_count() const {
    int n = static_cast<int>(nests.size());
    for (const auto& s : nests) n += s.nest_count();
    return n;
  }
  int depth() const {
    int d = 1;  // any direct leaf sits one edge below
    for (const auto& s : nests) d = std::max(d, 1 + s.depth());
    return d;
  }
};

void set_partitions(const std::vector<int>& elems,
                    const std::function<void(const std::vector<std::vector<int>>&)>& emit) {
  std::vector<std::vector<int>> blocks;
  auto rec = [&](auto&& self, std::size_t i) -> void {
    if (i == elems.size()) {
      emit(blocks);
      return;
    }
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
      blocks[bi].push_back(elems[i]);
      self(self, i + 1);
      blocks[bi].pop_back();
    }
    blocks.push_back({elems[i]});
    self(self, i + 1);
    blocks.pop_back();
  };
  rec(rec, 0);
}

// All subtree shapes over a given leaf set (each internal node >= 2 children).
const std::vector<Shape>& shapes_over(const std::vector<int>& leaves,
                                      std::map<std::uint32_t, std::vector<Shape>>& memo) {
  std::uint32_t key = 0;
  for (int a : leaves) key |= 1u << a;
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;

  std::vector<Shape> result;
  set_partitions(leaves, [&](const std::vector<std::vector<int>>& blocks) {
    if (blocks.size() < 2) return;
    std::vector<int> leaf_children;
    std::vector<const std::vector<Shape>*> options;
    std::vector<std::vector<int>> nest_blocks;
    for (const auto& b : blocks) {
      if (b.size() == 1)
        leaf_children.push_back(b[0]);
      else
        nest_blocks.push_back(b);
    }
    for (const auto& b : nest_blocks) options.push_back(&shapes_over(b, memo));
    // Cartesian product over the nested blocks' shape choices.
    std::vector<std::size_t> pick(options.size(), 0);
    while (true) {
      Shape s;
      s.leaves = leaf_children;
      for (std::size_t i = 0; i < options.size(); ++i) s.nests.push_back((*options[i])[pick[i]]);
      std::sort(s.leaves.begin(), s.leaves.end());
      result.push_back(std::move(s));
      std::size_t i = 0;
      for (; i < options.size(); ++i) {
        if (++pick[i] < options[i]->size()) break;
        pick[i] = 0;
      }
      if (i == options.size()) break;
    }
  });
  return memo.emplace(key, std::move(result)).first->second;
}

NestingTree shape_to_tree(int m, const Shape& root_shape) {
  NodeIds ids{m, m - 2};
  std::vector<int> parent(ids.total(), -1);
  std::vector<bool> included(ids.p, false);
  int next_slot = 0;
  auto rec = [&](auto&& self, const Shape& s, int node) -> void {
    for (int a : s.leaves) parent[ids.leaf(a)] = node;
    for (const auto& child : s.nests) {
      int slot = next_slot++;
      included[slot] = true;
      parent[ids.nest(slot)] = node;
      self(self, child, ids.nest(slot));
    }
  };
  rec(rec, root_shape, ids.root());
  return NestingTree::from_parents(m, parent, included);
}

}  // namespace

std::vector<NestingTree> enumerate_trees(int m, std::optional<int> num_nests,
                                         std::optional<int> height) {
  if (m > 8) fail(Errc::TooLarge, "enumeration limited to m <= 8");
  if (m < 2) fail(Errc::InvalidTree, "need at least 2 alternatives");
  std::vector<int> all(m);
  for (int a = 0; a < m; ++a) all[a] = a;
  std::map<std::uint32_t, std::vector<Shape>> memo;
  const auto& shapes = shapes_over(all, memo);
  std::vector<NestingTree> out;
  for (const auto& s : shapes) {
    if (num_nests && s.nest_count() != *num_nests) continue;
    if (height && s.depth() != *height) continue;
    out.push_back(shape_to_tree(m, s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Covariance

static void check_monotone_scales(const NestingTree& tree, const std::vector<double>& mu) {
  const auto& ids = tree.ids();
  if (static_cast<int>(mu.size()) != ids.p)
    fail(Errc::DimensionMismatch, "mu must have one entry per nest slot");
  for (int k = 0; k < ids.p; ++k) {
    if (!tree.nest_included(k)) continue;
    int par = tree.parent(ids.nest(k));
    double mu_par = ids.is_root(par) ? 1.0 : mu[ids.nest_index(par)];
    if (mu_par > mu[k] + 1e-9)
      fail(Errc::ScaleViolation, "scale decreases along edge into nest " + std::to_string(k));
  }
}

std::vector<double> normalized_covariance(const NestingTree& tree, const std::vector<double>& mu) {
  check_monotone_scales(tree, mu);
  const int m = tree.num_alternatives();
  std::vector<double> cov(static_cast<std::size_t>(m) * m, 0.0);
  for (int i = 0; i < m; ++i) {
    cov[static_cast<std::size_t>(i) * m + i] = 1.0;
    for (int j = i + 1; j < m; ++j) {
      int lca = tree.smallest_common_nest(i, j);
      double v = 0.0;
      if (!tree.ids().is_root(lca)) {
        double mu_b = mu[tree.ids().nest_index(lca)];
        v = 1.0 - 1.0 / (mu_b * mu_b);
      }
      cov[static_cast<std::size_t>(i) * m + j] = v;
      cov[static_cast<std::size_t>(j) * m + i] = v;
    }
  }
  return cov;
}

std::vector<double> covariance_from_tree(const NestingTree& tree, const std::vector<double>& mu) {
  auto cov = normalized_covariance(tree, mu);
  const double scale = std::numbers::pi * std::numbers::pi / 6.0;
  for (double& v : cov) v *= scale;
  return cov;
}

// ---------------------------------------------------------------------------
// Text form parsing

namespace {

struct Token {
  enum { Open, Close, Atom } kind;
  std::string text;
};

std::vector<Token> tokenize(const std::string& s) {
  std::vector<Token> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back({Token::Atom, cur});
      cur.clear();
    }
  };
  for (char c : s) {
    if (c == '(') {
      flush();
      out.push_back({Token::Open, "("});
    } else if (c == ')') {
      flush();
      out.push_back({Token::Close, ")"});
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      cur += c;
    }
  }
  flush();
  return out;
}

struct ParsedNode {
  std::string name;                 // internal nodes only
  bool is_leaf = false;
  std::string leaf_label;
  std::vector<ParsedNode> children;
};

ParsedNode parse_node(const std::vector<Token>& toks, std::size_t& i) {
  if (i >= toks.size()) fail(Errc::ParseError, "unexpected end of tree text");
  if (toks[i].kind == Token::Atom) {
    ParsedNode n;
    n.is_leaf = true;
    n.leaf_label = toks[i++].text;
    return n;
  }
  if (toks[i].kind != Token::Open) fail(Errc::ParseError, "expected '(' or leaf");
  ++i;
  if (i >= toks.size() || toks[i].kind != Token::Atom)
    fail(Errc::ParseError, "internal node needs a name");
  ParsedNode n;
  n.name = toks[i++].text;
  while (i < toks.size() && toks[i].kind != Token::Close) n.children.push_back(parse_node(toks, i));
  if (i >= toks.size()) fail(Errc::ParseError, "missing ')'");
  ++i;
  return n;
}

}  // namespace

NestingTree parse_tree_text(const std::string& text, const std::vector<std::string>& leaf_labels,
                            std::vector<std::string>* nest_names) {
  auto toks = tokenize(text);
  std::size_t i = 0;
  ParsedNode root = parse_node(toks, i);
  if (i != toks.size()) fail(Errc::ParseError, "trailing tokens after tree");
  if (root.is_leaf) fail(Errc::ParseError, "root must be an internal node");

  // Collect leaves in appearance order.
  std::vector<std::string> seen;
  auto collect = [&](auto&& self, const ParsedNode& n) -> void {
    if (n.is_leaf) {
      seen.push_back(n.leaf_label);
      return;
    }
    for (const auto& c : n.children) self(self, c);
  };
  collect(collect, root);

  std::vector<std::string> labels = leaf_labels;
  if (labels.empty()) {
    for (const auto& s : seen)
      if (std::find(labels.begin(), labels.end(), s) == labels.end()) labels.push_back(s);
  }
  auto leaf_index = [&](const std::string& s) -> int {
    auto it = std::find(labels.begin(), labels.end(), s);
    if (it == labels.end()) fail(Errc::ParseError, "unknown alternative '" + s + "'");
    return static_cast<int>(it - labels.begin());
  };
  if (seen.size() != labels.size()) fail(Errc::ParseError, "tree must list every alternative once");
  {
    auto sorted = seen;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      fail(Errc::ParseError, "duplicate alternative in tree");
  }

  const int m = static_cast<int>(labels.size());
  if (m < 2) fail(Errc::ParseError, "need at least 2 alternatives");
  NodeIds ids{m, m - 2};
  std::vector<int> parent(ids.total(), -1);
  std::vector<bool> included(ids.p, false);
  if (nest_names) nest_names->clear();
  int next_slot = 0;
  auto build = [&](auto&& self, const ParsedNode& n, int node) -> void {
    for (const auto& c : n.children) {
      if (c.is_leaf) {
        parent[ids.leaf(leaf_index(c.leaf_label))] = node;
      } else {
        if (next_slot >= ids.p) fail(Errc::ParseError, "more than m-2 nests in tree");
        int slot = next_slot++;
        included[slot] = true;
        parent[ids.nest(slot)] = node;
        if (nest_names) nest_names->push_back(c.name);
        self(self, c, ids.nest(slot));
      }
    }
  };
  build(build, root, ids.root());
  return NestingTree::from_parents(m, parent, included);
}

}  // namespace nestlearn
