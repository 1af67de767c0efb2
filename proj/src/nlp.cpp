#include "nestlearn/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace nestlearn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One linear inequality g(theta) = sum coeff*theta - rhs >= 0.
struct Ineq {
  std::vector<std::pair<int, double>> coeffs;
  double rhs;
  std::string label;
};

struct Problem {
  const Evaluator* eval;
  int q = 0;                       // beta dimension
  std::vector<int> free_slots;     // included nest slots, variable order q..q+k
  std::vector<Ineq> ineqs;
  int dim() const { return q + static_cast<int>(free_slots.size()); }

  ModelParams to_params(const std::vector<double>& theta) const {
    ModelParams p;
    p.beta.assign(theta.begin(), theta.begin() + q);
    p.mu.assign(eval->tree().num_slots(), 1.0);
    for (std::size_t i = 0; i < free_slots.size(); ++i) p.mu[free_slots[i]] = theta[q + i];
    return p;
  }

  double slack(const Ineq& g, const std::vector<double>& theta) const {
    double s = -g.rhs;
    for (auto [j, c] : g.coeffs) s += c * theta[j];
    return s;
  }

  // f = -loglik and its gradient in theta.
  double f_grad(const std::vector<double>& theta, std::vector<double>& grad) const {
    ModelParams p = to_params(theta);
    std::vector<double> gb, gm;
    double ll = eval->loglik_grad(p, gb, gm);
    grad.assign(dim(), 0.0);
    for (int j = 0; j < q; ++j) grad[j] = -gb[j];
    for (std::size_t i = 0; i < free_slots.size(); ++i) grad[q + i] = -gm[free_slots[i]];
    return -ll;
  }
};

double inf_norm(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// L-BFGS minimization of f(theta) - tau * sum log(slack_i); the line search
// rejects any step that leaves the strict interior.
struct BarrierSolver {
  const Problem& prob;
  double tau;
  int memory;

  double value_grad(const std::vector<double>& theta, std::vector<double>& grad) const {
    double val = prob.f_grad(theta, grad);
    for (const auto& g : prob.ineqs) {
      double s = prob.slack(g, theta);
      if (s <= 0) return kInf;
      val -= tau * std::log(s);
      for (auto [j, c] : g.coeffs) grad[j] -= tau * c / s;
    }
    return val;
  }

  // Returns iterations used; theta/val/grad updated in place.
  int minimize(std::vector<double>& theta, double& val, std::vector<double>& grad, double tol,
               int iter_budget) const {
    const int n = prob.dim();
    std::deque<std::vector<double>> s_hist, y_hist;
    std::vector<double> dir(n), theta_new(n), grad_new(n);
    int used = 0;
    while (used < iter_budget && inf_norm(grad) > tol) {
      // two-loop recursion
      dir = grad;
      std::vector<double> alpha(s_hist.size());
      for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
        double sy = 0, sg = 0;
        for (int j = 0; j < n; ++j) sy += s_hist[i][j] * y_hist[i][j];
        for (int j = 0; j < n; ++j) sg += s_hist[i][j] * dir[j];
        alpha[i] = sg / sy;
        for (int j = 0; j < n; ++j) dir[j] -= alpha[i] * y_hist[i][j];
      }
      if (!s_hist.empty()) {
        double sy = 0, yy = 0;
        const auto& s = s_hist.back();
        const auto& y = y_hist.back();
        for (int j = 0; j < n; ++j) {
          sy += s[j] * y[j];
          yy += y[j] * y[j];
        }
        double gamma = sy / std::max(yy, 1e-300);
        for (int j = 0; j < n; ++j) dir[j] *= gamma;
      }
      for (std::size_t i = 0; i < s_hist.size(); ++i) {
        double yd = 0, sy = 0;
        for (int j = 0; j < n; ++j) yd += y_hist[i][j] * dir[j];
        for (int j = 0; j < n; ++j) sy += s_hist[i][j] * y_hist[i][j];
        double beta = yd / sy;
        for (int j = 0; j < n; ++j) dir[j] += (alpha[i] - beta) * s_hist[i][j];
      }
      for (int j = 0; j < n; ++j) dir[j] = -dir[j];

      double slope = 0;
      for (int j = 0; j < n; ++j) slope += dir[j] * grad[j];
      if (slope >= 0) {  // fall back to steepest descent
        slope = 0;
        for (int j = 0; j < n; ++j) {
          dir[j] = -grad[j];
          slope -= grad[j] * grad[j];
        }
        s_hist.clear();
        y_hist.clear();
      }

      // Fraction-to-boundary cap keeps the trial strictly interior, so the
      // backtracking below never burns steps on infeasible points.
      double t_feas = kInf;
      for (const auto& g : prob.ineqs) {
        double slope_g = 0;
        for (auto [j, cf] : g.coeffs) slope_g += cf * dir[j];
        if (slope_g < 0) t_feas = std::min(t_feas, prob.slack(g, theta) / -slope_g);
      }
      double step = std::min(1.0, 0.995 * t_feas);
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        for (int j = 0; j < n; ++j) theta_new[j] = theta[j] + step * dir[j];
        double val_new = value_grad(theta_new, grad_new);
        if (std::isfinite(val_new) && val_new <= val + 1e-4 * step * slope) {
          std::vector<double> s(n), y(n);
          for (int j = 0; j < n; ++j) {
            s[j] = theta_new[j] - theta[j];
            y[j] = grad_new[j] - grad[j];
          }
          double sy = 0;
          for (int j = 0; j < n; ++j) sy += s[j] * y[j];
          if (sy > 1e-12) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            if (static_cast<int>(s_hist.size()) > memory) {
              s_hist.pop_front();
              y_hist.pop_front();
            }
          }
          theta = theta_new;
          val = val_new;
          grad = grad_new;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      ++used;
      if (!accepted) break;  // no finite improvement at any step length
    }
    return used;
  }
};

}  // namespace

NlpResult estimate(const ChoiceDataset& data, const CompiledSpec& spec, const NestingTree& tree,
                   std::optional<ModelParams> init, const NlpConfig& config) {
  auto violations = tree.validate();
  if (!violations.empty()) fail(Errc::InvalidTree, violations.front().detail);

  Evaluator eval(data, spec, tree, config.threads);
  Problem prob;
  prob.eval = &eval;
  prob.q = spec.n_params;
  const NodeIds& ids = tree.ids();
  for (int k = 0; k < ids.p; ++k)
    if (tree.nest_included(k)) prob.free_slots.push_back(k);

  // Scale constraints: monotone along edges, boxed into [1, mu_max].
  auto var_of_slot = [&](int slot) {
    auto it = std::find(prob.free_slots.begin(), prob.free_slots.end(), slot);
    return prob.q + static_cast<int>(it - prob.free_slots.begin());
  };
  for (int k : prob.free_slots) {
    int var = var_of_slot(k);
    prob.ineqs.push_back({{{var, 1.0}}, 1.0, "mu_" + std::to_string(k + 1) + " >= 1"});
    prob.ineqs.push_back({{{var, -1.0}}, -config.mu_max,
                          "mu_" + std::to_string(k + 1) + " <= mu_max"});
    int par = tree.parent(ids.nest(k));
    if (!ids.is_root(par))
      prob.ineqs.push_back({{{var, 1.0}, {var_of_slot(ids.nest_index(par)), -1.0}},
                            0.0,
                            "mu_" + std::to_string(ids.nest_index(par) + 1) +
                                " <= mu_" + std::to_string(k + 1)});
  }

  // Start point: strictly interior. A supplied start is nudged inside.
  std::vector<double> theta(prob.dim(), 0.0);
  if (init) {
    if (static_cast<int>(init->beta.size()) != prob.q)
      fail(Errc::DimensionMismatch, "init beta size");
    for (int j = 0; j < prob.q; ++j) theta[j] = init->beta[j];
    for (std::size_t i = 0; i < prob.free_slots.size(); ++i)
      theta[prob.q + i] = init->mu[prob.free_slots[i]];
  } else {
    for (std::size_t i = 0; i < prob.free_slots.size(); ++i)
      theta[prob.q + i] = 1.0 + 0.1 * tree.depth(ids.nest(prob.free_slots[i]));
  }
  // Interior projection in parent-before-child order.
  for (int b : std::vector<int>(tree.topo_order().rbegin(), tree.topo_order().rend())) {
    if (ids.is_root(b)) continue;
    int i = static_cast<int>(std::find(prob.free_slots.begin(), prob.free_slots.end(),
                                       ids.nest_index(b)) -
                             prob.free_slots.begin());
    int par = tree.parent(b);
    double lo = ids.is_root(par) ? 1.0 : theta[prob.q + (std::find(prob.free_slots.begin(),
                                                                   prob.free_slots.end(),
                                                                   ids.nest_index(par)) -
                                                         prob.free_slots.begin())];
    theta[prob.q + i] = std::min(std::max(theta[prob.q + i], lo + 1e-3),
                                 config.mu_max - 1e-3);
    if (theta[prob.q + i] <= lo) theta[prob.q + i] = 0.5 * (lo + config.mu_max);
  }

  NlpResult result;
  std::vector<double> grad;
  int used_total = 0;

  // Track the best feasible iterate by raw objective. The supplied start
  // counts even when it sits on a constraint boundary (the interior
  // projection above may have moved it).
  std::vector<double> best_theta = theta;
  double best_f = prob.f_grad(theta, grad);
  if (!std::isfinite(best_f)) fail(Errc::NumericalFailure, "non-finite likelihood at start");
  if (init) {
    std::vector<double> raw(prob.dim(), 0.0);
    for (int j = 0; j < prob.q; ++j) raw[j] = init->beta[j];
    for (std::size_t i = 0; i < prob.free_slots.size(); ++i)
      raw[prob.q + i] = init->mu[prob.free_slots[i]];
    bool feasible = true;
    for (const auto& g : prob.ineqs)
      if (prob.slack(g, raw) < -1e-9) feasible = false;
    if (feasible) {
      std::vector<double> tmp;
      double f_raw = prob.f_grad(raw, tmp);
      if (std::isfinite(f_raw) && f_raw < best_f) {
        best_f = f_raw;
        best_theta = raw;
      }
    }
  }

  // Stationarity is judged relative to the objective's magnitude: gradient
  // entries are weighted sums over observations, so an absolute tolerance on
  // an N-scaled likelihood would sit below evaluation noise.
  const double scale = 1.0 + std::abs(best_f);
  const double grad_tol = config.kkt_tol * scale;

  if (prob.ineqs.empty()) {
    BarrierSolver solver{prob, 0.0, config.lbfgs_memory};
    double val = best_f;
    used_total = solver.minimize(theta, val, grad, grad_tol, config.max_iters);
    result.kkt_residual = inf_norm(grad) / scale;
    result.status =
        result.kkt_residual <= config.kkt_tol ? NlpStatus::Converged : NlpStatus::IterLimit;
    if (val < best_f) {
      best_f = val;
      best_theta = theta;
    }
  } else {
    const double tau_min = config.kkt_tol * scale;
    double tau = std::max(config.barrier_init, tau_min);
    double residual = kInf;
    while (true) {
      BarrierSolver solver{prob, tau, config.lbfgs_memory};
      std::vector<double> bgrad;
      double bval = solver.value_grad(theta, bgrad);
      int budget = std::min(config.max_iters - used_total, 150);
      if (budget <= 0) break;
      used_total += solver.minimize(theta, bval, bgrad, std::max(tau, grad_tol), budget);
      std::vector<double> fg;
      double fval = prob.f_grad(theta, fg);
      if (fval < best_f) {
        best_f = fval;
        best_theta = theta;
      }
      residual = inf_norm(bgrad);
      if (tau <= tau_min) break;
      tau = std::max(tau * config.barrier_shrink, tau_min);
    }
    result.kkt_residual = residual / scale;
    result.status = (result.kkt_residual <= 10 * config.kkt_tol && used_total < config.max_iters)
                        ? NlpStatus::Converged
                        : NlpStatus::IterLimit;
  }

  result.iterations = used_total;
  result.params = prob.to_params(best_theta);
  result.negloglik = best_f;

  // Binding constraints at the returned point.
  for (const auto& g : prob.ineqs)
    if (prob.slack(g, best_theta) < 1e-3) result.active_constraints.push_back(g.label);
  for (std::size_t i = 0; i < prob.free_slots.size(); ++i) {
    double mu = best_theta[prob.q + i];
    int slot = prob.free_slots[i];
    int par = tree.parent(ids.nest(slot));
    double mu_par = ids.is_root(par) ? 1.0 : result.params.mu[ids.nest_index(par)];
    if (mu - mu_par < 1e-3 || config.mu_max - mu < 1e-3) result.boundary_mu.push_back(slot);
  }

  if (config.compute_se) {
    auto se = standard_errors(data, spec, tree, result.params, config.mu_max);
    result.se_singular = se.singular;
    if (!se.singular) {
      result.se_beta = se.se_beta;
      result.se_mu = se.se_mu;
    }
  }
  return result;
}

StdErrors standard_errors(const ChoiceDataset& data, const CompiledSpec& spec,
                          const NestingTree& tree, const ModelParams& params, double mu_max) {
  Evaluator eval(data, spec, tree);
  const NodeIds& ids = tree.ids();
  std::vector<int> free_slots;
  for (int k = 0; k < ids.p; ++k)
    if (tree.nest_included(k)) free_slots.push_back(k);
  const int q = spec.n_params;
  const int n = q + static_cast<int>(free_slots.size());

  auto grad_at = [&](const std::vector<double>& theta) {
    ModelParams p = params;
    for (int j = 0; j < q; ++j) p.beta[j] = theta[j];
    for (std::size_t i = 0; i < free_slots.size(); ++i) p.mu[free_slots[i]] = theta[q + i];
    std::vector<double> gb, gm, out(n);
    eval.loglik_grad(p, gb, gm);
    for (int j = 0; j < q; ++j) out[j] = -gb[j];
    for (std::size_t i = 0; i < free_slots.size(); ++i) out[q + i] = -gm[free_slots[i]];
    return out;
  };

  std::vector<double> theta(n);
  for (int j = 0; j < q; ++j) theta[j] = params.beta[j];
  for (std::size_t i = 0; i < free_slots.size(); ++i) theta[q + i] = params.mu[free_slots[i]];

  // Observed information: numeric Hessian of -loglik, symmetrized.
  std::vector<double> H(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    double h = 1e-5 * std::max(1.0, std::abs(theta[i]));
    auto tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    auto gp = grad_at(tp);
    auto gm = grad_at(tm);
    for (int j = 0; j < n; ++j) H[static_cast<std::size_t>(i) * n + j] = (gp[j] - gm[j]) / (2 * h);
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double v = 0.5 * (H[static_cast<std::size_t>(i) * n + j] + H[static_cast<std::size_t>(j) * n + i]);
      H[static_cast<std::size_t>(i) * n + j] = H[static_cast<std::size_t>(j) * n + i] = v;
    }

  StdErrors out;
  // Cholesky factorization; failure means the information matrix is not
  // positive definite at this point.
  std::vector<double> L(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double sum = H[static_cast<std::size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        sum -= L[static_cast<std::size_t>(i) * n + k] * L[static_cast<std::size_t>(j) * n + k];
      if (i == j) {
        if (sum <= 0) {
          out.singular = true;
          break;
        }
        L[static_cast<std::size_t>(i) * n + i] = std::sqrt(sum);
      } else {
        L[static_cast<std::size_t>(i) * n + j] = sum / L[static_cast<std::size_t>(j) * n + j];
      }
    }
    if (out.singular) break;
  }
  if (!out.singular) {
    // diag of H^-1 via forward/back solves on unit vectors
    std::vector<double> se(n, 0.0), y(n), z(n);
    for (int col = 0; col < n; ++col) {
      for (int i = 0; i < n; ++i) {
        double sum = (i == col) ? 1.0 : 0.0;
        for (int k = 0; k < i; ++k) sum -= L[static_cast<std::size_t>(i) * n + k] * y[k];
        y[i] = sum / L[static_cast<std::size_t>(i) * n + i];
      }
      for (int i = n - 1; i >= 0; --i) {
        double sum = y[i];
        for (int k = i + 1; k < n; ++k) sum -= L[static_cast<std::size_t>(k) * n + i] * z[k];
        z[i] = sum / L[static_cast<std::size_t>(i) * n + i];
      }
      se[col] = z[col] > 0 ? std::sqrt(z[col]) : 0.0;
    }
    out.se_beta.assign(se.begin(), se.begin() + q);
    out.se_mu.assign(tree.num_slots(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < free_slots.size(); ++i) out.se_mu[free_slots[i]] = se[q + i];
  }
  for (std::size_t i = 0; i < free_slots.size(); ++i) {
    int slot = free_slots[i];
    int par = tree.parent(ids.nest(slot));
    double mu_par = ids.is_root(par) ? 1.0 : params.mu[ids.nest_index(par)];
    double mu = params.mu[slot];
    if (mu - mu_par < 1e-3 || mu - 1.0 < 1e-3 || mu_max - mu < 1e-3)
      out.unreliable_mu.push_back(slot);
  }
  return out;
}

}  // namespace nestlearn
