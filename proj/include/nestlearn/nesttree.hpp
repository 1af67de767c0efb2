#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nestlearn/errors.hpp"

namespace nestlearn {

// Node numbering shared by every module that talks about tree structure:
//   0            root
//   1 .. p       nest slots (p = m - 2), included or not
//   p+1 .. p+m   leaves, leaf a <-> node p+1+a
struct NodeIds {
  int m = 0;  // number of alternatives
  int p = 0;  // nest slots

  int root() const { return 0; }
  int nest(int k) const { return 1 + k; }            // k in [0, p)
  int leaf(int a) const { return 1 + p + a; }        // a in [0, m)
  int total() const { return 1 + p + m; }
  bool is_root(int v) const { return v == 0; }
  bool is_nest(int v) const { return v >= 1 && v <= p; }
  bool is_leaf(int v) const { return v > p && v < total(); }
  int nest_index(int v) const { return v - 1; }
  int leaf_index(int v) const { return v - 1 - p; }
};

struct Violation {
  enum Kind {
    BadParent,        // parent pointer out of range or onto a leaf
    InDegree,         // leaf or included nest without exactly one parent
    DegenerateNest,   // included nest with fewer than 2 children
    DegenerateRoot,   // root with fewer than 2 children
    ExcludedActive,   // excluded nest with incident edges
    Cycle,            // parent chain never reaches the root
    SelfArc,          // node adjacent to itself
    TooManyNests,     // more than m-2 included nests
    EdgeCount,        // edges != nodes - 1
    LeafParent,       // a leaf used as a parent
  } kind;
  std::string detail;
};

const char* violation_name(Violation::Kind k);

class NestedPartition;

/// Rooted nesting tree over m alternatives: up to m-2 internal nest slots,
/// each either included (wired into the tree) or excluded (no edges).
class NestingTree {
 public:
  /// Flat tree: every leaf directly under the root, no nests.
  static NestingTree flat(int m);

  /// Build from parent pointers. parent has ids.total() entries; root entry
  /// and excluded-nest entries are -1. Throws InvalidTree on hard structural
  /// breakage (use validate() for diagnostics instead).
  static NestingTree from_parents(int m, const std::vector<int>& parent,
                                  const std::vector<bool>& included);

  /// Build from an explicit directed edge list over the shared node ids.
  /// Returns violations instead of a tree when the edges do not form one.
  static NestingTree from_edges(int m, const std::vector<std::pair<int, int>>& edges,
                                const std::vector<bool>& included,
                                std::vector<Violation>* violations = nullptr);

  const NodeIds& ids() const { return ids_; }
  int num_alternatives() const { return ids_.m; }
  int num_slots() const { return ids_.p; }
  int num_nests() const { return num_included_; }
  bool nest_included(int k) const { return included_[k]; }
  int parent(int v) const { return parent_[v]; }
  const std::vector<int>& children(int v) const { return children_[v]; }

  /// Internal nodes (root + included nests) ordered leaves-to-root.
  const std::vector<int>& topo_order() const { return topo_; }

  int depth(int v) const { return depth_[v]; }
  int height() const;

  /// Deepest common ancestor of two distinct leaves (node id; root if the
  /// leaves only meet at the root).
  int smallest_common_nest(int leaf_a, int leaf_b) const;

  /// Leaves below node v, ascending by leaf index.
  std::vector<int> descendant_leaves(int v) const;

  std::vector<std::pair<int, int>> edge_list() const;

  std::vector<Violation> validate() const;

  /// Canonical form invariant under nest relabeling: recursively sorted
  /// multiset of children keyed by leaf indices only.
  std::string signature() const;

  NestedPartition to_partition() const;

  /// Nested-list text form, e.g. "(root a1 (n1 a2 (n2 a3 a4)))".
  std::string to_text(const std::vector<std::string>& leaf_labels = {}) const;

  bool operator==(const NestingTree& other) const {
    return ids_.m == other.ids_.m && included_ == other.included_ && parent_ == other.parent_;
  }

 private:
  NestingTree() = default;
  void rebuild_derived();

  NodeIds ids_;
  std::vector<bool> included_;   // p entries
  std::vector<int> parent_;      // total() entries, -1 for root/excluded
  int num_included_ = 0;

  // derived
  std::vector<std::vector<int>> children_;
  std::vector<int> depth_;
  std::vector<int> topo_;
};

/// Laminar family of alternative subsets; always contains the universal set.
class NestedPartition {
 public:
  /// Subsets given as sorted index lists. The universal set is implied and
  /// may be listed or not. Throws DegeneratePartition on singletons unless
  /// they were removed first (see normalized()).
  explicit NestedPartition(int m, std::vector<std::vector<int>> subsets);

  /// Copy of `subsets` with singletons dropped and duplicates merged.
  static std::vector<std::vector<int>> normalized(std::vector<std::vector<int>> subsets);

  int num_alternatives() const { return m_; }
  /// Proper subsets only (universal set excluded), sorted by size descending.
  const std::vector<std::vector<int>>& proper_subsets() const { return subsets_; }

  NestingTree to_tree() const;

  bool operator==(const NestedPartition& other) const = default;

 private:
  int m_;
  std::vector<std::vector<int>> subsets_;
};

/// Exhaustive, duplicate-free enumeration of valid non-degenerate nesting
/// trees; optional filters on included-nest count and height.
std::vector<NestingTree> enumerate_trees(int m, std::optional<int> num_nests = std::nullopt,
                                         std::optional<int> height = std::nullopt);

/// Error-term covariance implied by a tree and monotone scales (mu has one
/// entry per nest slot; root scale fixed at 1). Entries in raw utility^2
/// units, i.e. already carrying the pi^2/6 factor.
std::vector<double> covariance_from_tree(const NestingTree& tree, const std::vector<double>& mu);

/// Same matrix without the pi^2/6 factor (the 1/mu^2-difference entries).
std::vector<double> normalized_covariance(const NestingTree& tree, const std::vector<double>& mu);

/// Parse the nested-list text form. Leaf tokens are matched against
/// `leaf_labels` when given, otherwise treated as a1..am in order of first
/// appearance. Nest labels are recorded into `nest_names` (slot order).
NestingTree parse_tree_text(const std::string& text, const std::vector<std::string>& leaf_labels,
                            std::vector<std::string>* nest_names = nullptr);

}  // namespace nestlearn
