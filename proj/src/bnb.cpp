#include "nestlearn/bnb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "nestlearn/errors.hpp"

namespace nestlearn {

namespace {

constexpr double kIntTol = 1e-6;

struct Node {
  double bound;  // parent LP objective, valid lower bound
  long seq;
  std::vector<double> lb, ub;
};

struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;  // min-heap on bound
    return a.seq > b.seq;
  }
};

int pick_branch_var(const MilpProblem& p, const std::vector<double>& x) {
  int best = -1;
  double best_frac = kIntTol;
  int best_prio = std::numeric_limits<int>::min();
  for (int v : p.integers) {
    double f = x[v] - std::floor(x[v]);
    double frac = std::min(f, 1.0 - f);
    if (frac <= kIntTol) continue;
    int prio = p.branch_priority.empty() ? 0 : p.branch_priority[v];
    if (best < 0 || prio > best_prio || (prio == best_prio && frac > best_frac)) {
      best = v;
      best_frac = frac;
      best_prio = prio;
    }
  }
  return best;
}

}  // namespace

MilpResult BnbBackend::solve(const MilpProblem& problem) {
  MilpResult out;
  LinearProblem lp = problem.lp;

  std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
  long seq = 0;

  auto solve_node = [&](const Node& node) {
    lp.lb = node.lb;
    lp.ub = node.ub;
    return solve_lp(lp);
  };

  Node root{-kLpInf, seq++, problem.lp.lb, problem.lp.ub};
  LpResult rres = solve_node(root);
  ++out.nodes;
  if (rres.status == LpStatus::Infeasible || rres.status == LpStatus::Unbounded ||
      rres.status == LpStatus::IterLimit) {
    out.status = rres.status;
    return out;
  }

  bool have_incumbent = false;
  double incumbent = kLpInf;
  std::vector<double> best_x;
  std::vector<Node> dive;  // LIFO stack used until the first incumbent

  auto process = [&](const LpResult& res, const Node& node) {
    if (res.status != LpStatus::Optimal) return;  // infeasible child: prune
    if (have_incumbent && res.obj >= incumbent - abs_gap_) return;
    int v = pick_branch_var(problem, res.x);
    if (v < 0) {
      // Integral within tolerance: round and accept.
      have_incumbent = true;
      incumbent = res.obj;
      best_x = res.x;
      for (int j : problem.integers) best_x[j] = std::round(best_x[j]);
      return;
    }
    Node down{res.obj, seq++, node.lb, node.ub};
    down.ub[v] = std::floor(res.x[v]);
    Node up{res.obj, seq++, node.lb, node.ub};
    up.lb[v] = std::ceil(res.x[v]);
    // Dive toward the rounding of the LP value first.
    bool up_first = res.x[v] - std::floor(res.x[v]) >= 0.5;
    if (!have_incumbent) {
      dive.push_back(up_first ? std::move(down) : std::move(up));
      dive.push_back(up_first ? std::move(up) : std::move(down));
    } else {
      open.push(std::move(down));
      open.push(std::move(up));
    }
  };

  process(rres, root);

  while (!dive.empty() || !open.empty()) {
    if (out.nodes > node_limit_)
      fail(Errc::NumericalFailure, "branch-and-bound node limit exceeded");
    Node node = [&] {
      if (!dive.empty()) {
        Node n = std::move(dive.back());
        dive.pop_back();
        return n;
      }
      Node n = open.top();
      open.pop();
      return n;
    }();
    if (have_incumbent && node.bound >= incumbent - abs_gap_) continue;
    LpResult res = solve_node(node);
    ++out.nodes;
    process(res, node);
    if (have_incumbent && !dive.empty()) {
      // Flush the remaining dive stack into the best-first queue.
      for (auto& n : dive) open.push(std::move(n));
      dive.clear();
    }
  }

  if (!have_incumbent) {
    out.status = LpStatus::Infeasible;
    return out;
  }
  out.status = LpStatus::Optimal;
  out.obj = incumbent;
  out.x = std::move(best_x);
  return out;
}

}  // namespace nestlearn
