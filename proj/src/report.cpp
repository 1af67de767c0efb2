#include "nestlearn/report.hpp"

#include <cmath>
#include <sstream>

namespace nestlearn {

namespace {

nlohmann::json num_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

std::string fmt(const nlohmann::json& v) {
  if (v.is_null()) return "-";
  return v.dump();
}

}  // namespace

nlohmann::json dataset_json(const ChoiceDataset& data) {
  nlohmann::json j;
  j["observations"] = data.num_obs();
  j["alternatives"] = data.alternatives();
  j["variables"] = data.variable_names();
  j["total_weight"] = data.total_weight();
  return j;
}

nlohmann::json nlp_json(const NlpResult& fit, const std::vector<std::string>& param_names,
                        const NestingTree& tree, const std::vector<std::string>& labels) {
  nlohmann::json j;
  j["negloglik"] = fit.negloglik;
  j["status"] = fit.status == NlpStatus::Converged
                    ? "Converged"
                    : (fit.status == NlpStatus::IterLimit ? "IterLimit" : "Degenerate");
  j["kkt_residual"] = fit.kkt_residual;
  j["iterations"] = fit.iterations;
  j["tree"] = tree.to_text(labels);
  j["signature"] = tree.signature();
  j["beta"] = nlohmann::json::array();
  for (std::size_t i = 0; i < param_names.size(); ++i) {
    nlohmann::json e{{"name", param_names[i]}, {"value", fit.params.beta[i]}};
    if (fit.se_beta) e["std_error"] = (*fit.se_beta)[i];
    j["beta"].push_back(e);
  }
  j["mu"] = nlohmann::json::array();
  for (int k = 0; k < tree.num_slots(); ++k) {
    if (!tree.nest_included(k)) continue;
    nlohmann::json e{{"nest", "n" + std::to_string(k + 1)}, {"value", fit.params.mu[k]}};
    if (fit.se_mu && std::isfinite((*fit.se_mu)[k])) e["std_error"] = (*fit.se_mu)[k];
    e["boundary"] =
        std::find(fit.boundary_mu.begin(), fit.boundary_mu.end(), k) != fit.boundary_mu.end();
    j["mu"].push_back(e);
  }
  if (fit.se_singular) j["se_singular"] = true;
  if (!fit.active_constraints.empty()) j["active_constraints"] = fit.active_constraints;
  return j;
}

nlohmann::json cell_json(const CellResult& cell, const std::vector<std::string>& labels) {
  nlohmann::json j;
  j["M"] = cell.M;
  j["L"] = cell.L;
  j["feasible"] = cell.feasible;
  if (!cell.feasible) {
    j["error"] = cell.error;
    return j;
  }
  j["train_negloglik"] = cell.train_negloglik;
  j["val_negloglik"] = cell.val_negloglik;
  j["visited_trees"] = cell.visited_trees;
  j["tree"] = cell.tree->to_text(labels);
  j["signature"] = cell.tree->signature();
  j["trace"] = nlohmann::json::array();
  for (const auto& t : cell.trace)
    j["trace"].push_back({{"iteration", t.iteration},
                          {"z_nlp", t.z_nlp},
                          {"z_milp", num_or_null(t.z_milp)},
                          {"signature", t.signature}});
  j["master"] = {{"solves", cell.master_stats.solves},
                 {"cycle_cuts", cell.master_stats.cycle_cuts},
                 {"height_cuts", cell.master_stats.height_cuts},
                 {"signature_cuts", cell.master_stats.signature_cuts}};
  return j;
}

nlohmann::json covariance_json(const NestingTree& tree, const std::vector<double>& mu,
                               const std::vector<std::string>& labels) {
  const int m = tree.num_alternatives();
  auto raw = covariance_from_tree(tree, mu);
  auto norm = normalized_covariance(tree, mu);
  auto matrix = [&](const std::vector<double>& flat) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int j = 0; j < m; ++j) row.push_back(flat[static_cast<std::size_t>(i) * m + j]);
      rows.push_back(row);
    }
    return rows;
  };
  nlohmann::json j;
  j["alternatives"] = labels;
  j["raw"] = matrix(raw);
  j["normalized"] = matrix(norm);
  return j;
}

nlohmann::json grid_json(const OAResult& result, const std::vector<std::string>& param_names,
                         const std::vector<std::string>& labels) {
  nlohmann::json j;
  j["split"] = {{"train", result.n_train}, {"validation", result.n_val}};
  j["grid"] = nlohmann::json::array();
  for (const auto& cell : result.cells) j["grid"].push_back(cell_json(cell, labels));
  const auto& sel = result.cells[result.selected];
  j["selected"] = {{"M", sel.M},
                   {"L", sel.L},
                   {"tree", sel.tree->to_text(labels)},
                   {"signature", sel.tree->signature()},
                   {"val_negloglik", sel.val_negloglik}};
  j["visited_trees_total"] = result.total_visited();
  j["refit"] = nlp_json(*result.refit, param_names, *result.selected_tree, labels);
  j["covariance"] = covariance_json(*result.selected_tree, result.refit->params.mu, labels);
  return j;
}

nlohmann::json recovery_json(const RecoveryTable& table) {
  nlohmann::json j;
  j["replications"] = table.replications;
  j["planted_signature"] = table.planted_signature;
  j["recovery_rate"] = table.recovery_rate;
  j["parameters"] = table.param_names;
  j["beta_mean"] = table.beta_mean;
  j["beta_se"] = table.beta_se;
  j["cov_mean"] = table.cov_mean;
  j["cov_se"] = table.cov_se;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : table.rows) {
    nlohmann::json e{{"replication", r.replication}, {"ok", r.ok}, {"recovered", r.recovered}};
    if (r.ok) {
      e["M"] = r.M;
      e["L"] = r.L;
      e["signature"] = r.signature;
      e["beta_hat"] = r.beta_hat;
      e["visited_trees"] = r.visited_trees;
    } else {
      e["error"] = r.error;
    }
    j["rows"].push_back(e);
  }
  return j;
}

std::string report_dump(const nlohmann::json& report) { return report.dump(2) + "\n"; }

namespace {

void render_refit(std::ostringstream& os, const nlohmann::json& refit) {
  os << "tree: " << refit["tree"].get<std::string>() << "\n";
  os << "negative log-likelihood: " << fmt(refit["negloglik"]) << " (" <<
      refit["status"].get<std::string>() << ")\n";
  os << "parameters:\n";
  for (const auto& b : refit["beta"]) {
    os << "  " << b["name"].get<std::string>() << " = " << fmt(b["value"]);
    if (b.contains("std_error")) os << " (" << fmt(b["std_error"]) << ")";
    os << "\n";
  }
  for (const auto& e : refit["mu"]) {
    os << "  mu[" << e["nest"].get<std::string>() << "] = " << fmt(e["value"]);
    if (e.contains("std_error")) os << " (" << fmt(e["std_error"]) << ")";
    if (e["boundary"].get<bool>()) os << " [boundary]";
    os << "\n";
  }
}

void render_covariance(std::ostringstream& os, const nlohmann::json& cov) {
  os << "implied covariance (raw units):\n";
  const auto& labels = cov["alternatives"];
  const auto& raw = cov["raw"];
  for (std::size_t i = 0; i < raw.size(); ++i) {
    os << "  " << labels[i].get<std::string>() << ":";
    for (const auto& v : raw[i]) os << " " << fmt(v);
    os << "\n";
  }
}

}  // namespace

std::string render_text(const nlohmann::json& report) {
  std::ostringstream os;
  const std::string command = report.value("command", "");
  os << "nestlearn " << command << " report (version " << report["report_version"] << ")\n";
  if (report.contains("dataset")) {
    const auto& d = report["dataset"];
    os << "dataset: " << fmt(d["observations"]) << " observations, "
       << d["alternatives"].size() << " alternatives\n";
  }
  if (report.contains("split"))
    os << "split: train " << fmt(report["split"]["train"]) << ", validation "
       << fmt(report["split"]["validation"]) << "\n";
  if (report.contains("grid")) {
    os << "\n(M, L) grid: train / validation negative log-likelihood, visited trees\n";
    for (const auto& cell : report["grid"]) {
      os << "  M=" << fmt(cell["M"]) << " L=" << fmt(cell["L"]) << ": ";
      if (!cell["feasible"].get<bool>()) {
        os << "infeasible\n";
        continue;
      }
      os << fmt(cell["train_negloglik"]) << " / " << fmt(cell["val_negloglik"]) << ", visited "
         << fmt(cell["visited_trees"]) << "\n";
    }
    os << "selected: M=" << fmt(report["selected"]["M"]) << " L=" << fmt(report["selected"]["L"])
       << " tree " << report["selected"]["tree"].get<std::string>() << "\n";
    os << "total visited trees: " << fmt(report["visited_trees_total"]) << "\n";
  }
  if (report.contains("refit")) {
    os << "\nfull-data refit\n";
    render_refit(os, report["refit"]);
  }
  if (report.contains("estimate")) {
    os << "\nestimate\n";
    render_refit(os, report["estimate"]);
  }
  if (report.contains("covariance")) render_covariance(os, report["covariance"]);
  if (report.contains("comparison")) {
    os << "\ncomparison: label, nests, full / train / validation negloglik, visited\n";
    for (const auto& row : report["comparison"]) {
      os << "  " << row["label"].get<std::string>() << ": " << fmt(row["nests"]) << ", "
         << fmt(row["full_negloglik"]) << " / " << fmt(row["train_negloglik"]) << " / "
         << fmt(row["val_negloglik"]) << ", " << fmt(row["visited_trees"]) << "\n";
    }
  }
  if (report.contains("recovery")) {
    const auto& rec = report["recovery"];
    os << "\nrecovery: rate " << fmt(rec["recovery_rate"]) << " over "
       << fmt(rec["replications"]) << " replications (planted "
       << rec["planted_signature"].get<std::string>() << ")\n";
  }
  if (report.contains("enumeration")) {
    const auto& en = report["enumeration"];
    os << "\nenumeration: m=" << fmt(en["m"]) << " total " << fmt(en["count"]) << "\n";
    for (const auto& cell : en["by_cell"])
      os << "  M=" << fmt(cell["M"]) << " L=" << fmt(cell["L"]) << ": " << fmt(cell["count"])
         << "\n";
    if (en.contains("note")) os << "note: " << en["note"].get<std::string>() << "\n";
  }
  if (report.contains("warnings"))
    for (const auto& w : report["warnings"]) os << "warning: " << w.get<std::string>() << "\n";
  return os.str();
}

}  // namespace nestlearn
