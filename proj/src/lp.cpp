#include "nestlearn/lp.hpp"

#include <algorithm>
#include <cmath>

#include "nestlearn/errors.hpp"

namespace nestlearn {

namespace {

constexpr double kPivotTol = 1e-9;
constexpr double kCostTol = 1e-9;
constexpr double kFeasTol = 1e-7;
constexpr int kMaxIters = 50000;
constexpr int kRefactorEvery = 64;

class Simplex {
 public:
  explicit Simplex(const LinearProblem& p) : np_(p.num_vars()), m_(static_cast<int>(p.rows.size())) {
    // Columns: structural | slack per row | artificial per row.
    ns_ = np_ + m_;
    nt_ = ns_ + m_;
    lb_.assign(nt_, 0.0);
    ub_.assign(nt_, 0.0);
    cost_.assign(nt_, 0.0);
    for (int j = 0; j < np_; ++j) {
      lb_[j] = p.lb[j];
      ub_[j] = p.ub[j];
      cost_[j] = p.obj[j];
    }
    for (int i = 0; i < m_; ++i) {
      int s = np_ + i;
      switch (p.rows[i].sense) {
        case '<': lb_[s] = 0.0; ub_[s] = kLpInf; break;
        case '>': lb_[s] = -kLpInf; ub_[s] = 0.0; break;
        default: lb_[s] = 0.0; ub_[s] = 0.0; break;
      }
    }
    val_.assign(nt_, 0.0);
    for (int j = 0; j < nt_; ++j) {
      if (lb_[j] > -kLpInf)
        val_[j] = lb_[j];
      else if (ub_[j] < kLpInf)
        val_[j] = ub_[j];
      else
        val_[j] = 0.0;
    }

    // Original equality system [A | S | I_signed] x = b. The starting basis
    // takes the row's slack whenever the start residual fits its bounds and
    // an artificial otherwise, so phase I only has to repair the remainder.
    A0_.assign(static_cast<std::size_t>(m_) * nt_, 0.0);
    b0_.assign(m_, 0.0);
    basis_.assign(m_, -1);
    in_basis_.assign(nt_, 0);
    for (int i = 0; i < m_; ++i) {
      double r = p.rows[i].rhs;
      for (auto [j, a] : p.rows[i].coeffs) r -= a * val_[j];
      double sign = r >= 0 ? 1.0 : -1.0;
      double* row = &A0_[static_cast<std::size_t>(i) * nt_];
      for (auto [j, a] : p.rows[i].coeffs) row[j] += a;
      row[np_ + i] = 1.0;   // slack
      row[ns_ + i] = sign;  // artificial
      b0_[i] = p.rows[i].rhs;
      int s = np_ + i;
      bool slack_fits = r >= lb_[s] - 1e-12 && r <= ub_[s] + 1e-12;
      int bcol = slack_fits ? s : ns_ + i;
      lb_[ns_ + i] = 0.0;
      ub_[ns_ + i] = slack_fits ? 0.0 : kLpInf;  // unused artificials stay fixed
      basis_[i] = bcol;
      in_basis_[bcol] = 1;
      rhs_scale_ = std::max(rhs_scale_, std::abs(p.rows[i].rhs));
    }
    T_.assign(static_cast<std::size_t>(m_) * nt_, 0.0);
    rhs_.assign(m_, 0.0);
    xb_.assign(m_, 0.0);
    if (!refactor()) ok_ = false;
  }

  LpResult run(const LinearProblem& p) {
    LpResult out;
    if (!ok_) {
      out.status = LpStatus::IterLimit;
      return out;
    }
    // Phase I: drive the artificial sum to zero (skipped when the slack
    // start is already feasible).
    bool need_phase1 = false;
    for (int i = 0; i < m_; ++i)
      if (basis_[i] >= ns_) need_phase1 = true;
    if (need_phase1) {
      std::vector<double> phase1(nt_, 0.0);
      for (int i = 0; i < m_; ++i) phase1[ns_ + i] = 1.0;
      LpStatus st = iterate(phase1, true);
      if (st == LpStatus::IterLimit) {
        out.status = st;
        return out;
      }
      double infeas = 0.0;
      for (int i = 0; i < m_; ++i)
        if (basis_[i] >= ns_) infeas += std::abs(xb_[i]);
      if (infeas > kFeasTol * (1.0 + rhs_scale_)) {
        out.status = LpStatus::Infeasible;
        return out;
      }
      for (int j = ns_; j < nt_; ++j) {
        ub_[j] = 0.0;
        if (!in_basis_[j]) val_[j] = 0.0;
      }
    }
    LpStatus st = iterate(cost_, false);
    out.status = st;
    if (st != LpStatus::Optimal) return out;
    out.x.assign(np_, 0.0);
    for (int j = 0; j < np_; ++j) out.x[j] = in_basis_[j] ? 0.0 : val_[j];
    for (int i = 0; i < m_; ++i)
      if (basis_[i] < np_) out.x[basis_[i]] = xb_[i];
    out.obj = 0.0;
    for (int j = 0; j < np_; ++j) out.obj += p.obj[j] * out.x[j];
    return out;
  }

 private:
  // Rebuilds T = B^-1 [A|S|I] and rhs = B^-1 b from the original data by
  // Gauss-Jordan elimination with partial pivoting on the basis columns.
  bool refactor() {
    const int w = m_ + nt_ + 1;
    std::vector<double> W(static_cast<std::size_t>(m_) * w);
    for (int i = 0; i < m_; ++i) {
      const double* arow = &A0_[static_cast<std::size_t>(i) * nt_];
      double* wrow = &W[static_cast<std::size_t>(i) * w];
      for (int k = 0; k < m_; ++k) wrow[k] = arow[basis_[k]];
      for (int j = 0; j < nt_; ++j) wrow[m_ + j] = arow[j];
      wrow[m_ + nt_] = b0_[i];
    }
    std::vector<int> rowperm(m_);
    for (int i = 0; i < m_; ++i) rowperm[i] = i;
    for (int col = 0; col < m_; ++col) {
      int piv = -1;
      double best = 1e-12;
      for (int i = col; i < m_; ++i) {
        double v = std::abs(W[static_cast<std::size_t>(rowperm[i]) * w + col]);
        if (v > best) {
          best = v;
          piv = i;
        }
      }
      if (piv < 0) return false;  // numerically singular basis
      std::swap(rowperm[col], rowperm[piv]);
      double* prow = &W[static_cast<std::size_t>(rowperm[col]) * w];
      double d = prow[col];
      for (int j = col; j < w; ++j) prow[j] /= d;
      for (int i = 0; i < m_; ++i) {
        if (i == col) continue;
        double* row = &W[static_cast<std::size_t>(rowperm[i]) * w];
        double f = row[col];
        if (f == 0.0) continue;
        for (int j = col; j < w; ++j) row[j] -= f * prow[j];
      }
    }
    for (int k = 0; k < m_; ++k) {
      const double* wrow = &W[static_cast<std::size_t>(rowperm[k]) * w];
      double* trow = &T_[static_cast<std::size_t>(k) * nt_];
      for (int j = 0; j < nt_; ++j) trow[j] = wrow[m_ + j];
      rhs_[k] = wrow[m_ + nt_];
    }
    pivots_since_refactor_ = 0;
    recompute_basics();
    return true;
  }

  void recompute_basics() {
    for (int i = 0; i < m_; ++i) {
      double v = rhs_[i];
      const double* row = &T_[static_cast<std::size_t>(i) * nt_];
      for (int j = 0; j < nt_; ++j)
        if (!in_basis_[j] && val_[j] != 0.0) v -= row[j] * val_[j];
      xb_[i] = v;
    }
  }

  LpStatus iterate(const std::vector<double>& c, bool phase1) {
    int stall = 0;
    std::vector<double> d(nt_);
    for (int iter = 0; iter < kMaxIters; ++iter) {
      const bool bland = stall > 40;
      // Reduced costs accumulated row-wise over basics with nonzero cost.
      std::copy(c.begin(), c.end(), d.begin());
      for (int i = 0; i < m_; ++i) {
        double cb = c[basis_[i]];
        if (cb == 0.0) continue;
        const double* row = &T_[static_cast<std::size_t>(i) * nt_];
        for (int j = 0; j < nt_; ++j) d[j] -= cb * row[j];
      }
      int enter = -1;
      const double tol = kCostTol * (phase1 ? 1.0 + rhs_scale_ : 1.0);
      double best_viol = 0.0;
      int enter_dir = 0;
      for (int j = 0; j < nt_; ++j) {
        if (in_basis_[j] || lb_[j] == ub_[j]) continue;
        bool at_lb = lb_[j] > -kLpInf && val_[j] <= lb_[j] + 1e-12;
        bool at_ub = ub_[j] < kLpInf && val_[j] >= ub_[j] - 1e-12;
        int dir = 0;
        double viol = 0.0;
        if (at_lb && !at_ub) {
          if (d[j] < -tol) { dir = +1; viol = -d[j]; }
        } else if (at_ub && !at_lb) {
          if (d[j] > tol) { dir = -1; viol = d[j]; }
        } else if (!at_lb && !at_ub) {
          if (d[j] < -tol) { dir = +1; viol = -d[j]; }
          else if (d[j] > tol) { dir = -1; viol = d[j]; }
        }
        if (dir == 0) continue;
        if (bland) { enter = j; enter_dir = dir; break; }
        if (viol > best_viol) {
          best_viol = viol;
          enter = j;
          enter_dir = dir;
        }
      }
      if (enter < 0) {
        // Candidate optimum: verify on fresh factors before declaring it.
        if (pivots_since_refactor_ > 0) {
          if (!refactor()) return LpStatus::IterLimit;
          continue;
        }
        return LpStatus::Optimal;
      }

      double span = ub_[enter] - lb_[enter];
      double tmax = span;
      int leave_row = -1;
      double leave_coef = 0.0;
      bool leave_to_upper = false;
      for (int i = 0; i < m_; ++i) {
        double a = T_[static_cast<std::size_t>(i) * nt_ + enter] * enter_dir;
        if (std::abs(a) < kPivotTol) continue;
        int bj = basis_[i];
        double t;
        bool to_upper;
        if (a > 0) {
          if (lb_[bj] <= -kLpInf) continue;
          t = (xb_[i] - lb_[bj]) / a;
          to_upper = false;
        } else {
          if (ub_[bj] >= kLpInf) continue;
          t = (ub_[bj] - xb_[i]) / (-a);
          to_upper = true;
        }
        if (t < -1e-9) t = 0.0;
        bool better = t < tmax - 1e-12;
        bool tie = leave_row >= 0 && std::abs(t - tmax) <= 1e-12;
        if (better || (tie && (bland ? basis_[i] < basis_[leave_row]
                                     : std::abs(a) > std::abs(leave_coef)))) {
          tmax = std::max(t, 0.0);
          leave_row = i;
          leave_coef = a;
          leave_to_upper = to_upper;
        }
      }
      if (tmax >= kLpInf) {
        if (pivots_since_refactor_ > 0) {
          if (!refactor()) return LpStatus::IterLimit;
          continue;
        }
        return phase1 ? LpStatus::IterLimit : LpStatus::Unbounded;
      }
      stall = (tmax < 1e-10) ? stall + 1 : 0;

      if (leave_row < 0) {
        // Bound flip: the entering variable runs to its opposite bound.
        for (int i = 0; i < m_; ++i)
          xb_[i] -= T_[static_cast<std::size_t>(i) * nt_ + enter] * enter_dir * tmax;
        val_[enter] += enter_dir * tmax;
        continue;
      }

      double enter_val = val_[enter] + enter_dir * tmax;
      const double step = enter_dir * tmax;
      for (int i = 0; i < m_; ++i)
        xb_[i] -= T_[static_cast<std::size_t>(i) * nt_ + enter] * step;

      int leaving = basis_[leave_row];
      double* prow = &T_[static_cast<std::size_t>(leave_row) * nt_];
      double piv = prow[enter];
      for (int j = 0; j < nt_; ++j) prow[j] /= piv;
      rhs_[leave_row] /= piv;
      for (int i = 0; i < m_; ++i) {
        if (i == leave_row) continue;
        double* row = &T_[static_cast<std::size_t>(i) * nt_];
        double f = row[enter];
        if (f == 0.0) continue;
        for (int j = 0; j < nt_; ++j) row[j] -= f * prow[j];
        rhs_[i] -= f * rhs_[leave_row];
      }
      in_basis_[leaving] = 0;
      val_[leaving] = leave_to_upper ? ub_[leaving] : lb_[leaving];
      in_basis_[enter] = 1;
      basis_[leave_row] = enter;
      xb_[leave_row] = enter_val;
      if (++pivots_since_refactor_ >= kRefactorEvery && !refactor())
        return LpStatus::IterLimit;
    }
    return LpStatus::IterLimit;
  }

  int np_, m_, ns_, nt_;
  std::vector<double> lb_, ub_, cost_, val_, T_, rhs_, xb_, A0_, b0_;
  std::vector<int> basis_;
  std::vector<char> in_basis_;
  double rhs_scale_ = 0.0;
  int pivots_since_refactor_ = 0;
  bool ok_ = true;
};

}  // namespace

LpResult solve_lp(const LinearProblem& problem) {
  if (problem.rows.empty()) {
    LpResult out;
    out.x.assign(problem.num_vars(), 0.0);
    for (int j = 0; j < problem.num_vars(); ++j) {
      double v;
      if (problem.obj[j] > 0)
        v = problem.lb[j];
      else if (problem.obj[j] < 0)
        v = problem.ub[j];
      else
        v = problem.lb[j] > -kLpInf ? problem.lb[j] : std::min(problem.ub[j], 0.0);
      if (v <= -kLpInf || v >= kLpInf) {
        out.status = LpStatus::Unbounded;
        return out;
      }
      out.x[j] = v;
      out.obj += problem.obj[j] * v;
    }
    return out;
  }
  Simplex s(problem);
  return s.run(problem);
}

}  // namespace nestlearn
