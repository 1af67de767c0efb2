#include "nestlearn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "nestlearn/util.hpp"

namespace nestlearn {

UtilitySpec Scenario::effective_spec() const {
  if (utility) return *utility;
  std::vector<UtilityTerm> terms;
  for (std::size_t a = 0; a < alternatives.size(); ++a)
    terms.push_back({"asc_" + alternatives[a], alternatives[a], "constant", a == 0});
  for (const auto& rv : random_vars)
    for (const auto& alt : alternatives) terms.push_back({"b_" + rv.name, alt, rv.name, false});
  return UtilitySpec(std::move(terms));
}

std::vector<double> Scenario::true_beta() const {
  if (utility) return beta_true;
  std::vector<double> beta(asc.begin() + 1, asc.end());
  for (const auto& rv : random_vars) beta.push_back(rv.coef);
  return beta;
}

std::vector<double> Scenario::full_mu() const {
  std::vector<double> padded = mu;
  padded.resize(tree.num_slots(), 1.0);
  return padded;
}

void Scenario::validate() const {
  const int m = static_cast<int>(alternatives.size());
  if (m < 2) fail(Errc::ParseError, "scenario needs at least 2 alternatives");
  if (tree.num_alternatives() != m) fail(Errc::ParseError, "scenario tree size mismatch");
  if (!utility) {
    if (static_cast<int>(asc.size()) != m) fail(Errc::ParseError, "scenario needs one ASC per alternative");
    if (asc[0] != 0.0)
      fail(Errc::ParseError, "the first alternative's ASC is normalized to zero");
  }
  if (n_agents < 1) fail(Errc::ParseError, "scenario needs n_agents >= 1");
  for (const auto& rv : random_vars)
    if (rv.values.empty()) fail(Errc::ParseError, "random attribute " + rv.name + " needs values");
  auto violations = tree.validate();
  if (!violations.empty()) fail(Errc::InvalidTree, violations.front().detail);
  covariance_from_tree(tree, full_mu());  // throws ScaleViolation when not monotone
}

std::vector<double> tree_choice_probabilities(const NestingTree& tree,
                                              const std::vector<double>& mu,
                                              const std::vector<double>& utilities) {
  const NodeIds& ids = tree.ids();
  ModelParams params{{}, mu};
  std::vector<double> gamma =
      inclusive_values(tree, params, utilities, std::vector<bool>(ids.m, true));
  std::vector<double> probs(ids.m, 0.0);
  for (int a = 0; a < ids.m; ++a) {
    double lp = 0.0;
    double value = utilities[a];
    for (int node = ids.leaf(a); !ids.is_root(node);) {
      int par = tree.parent(node);
      double mu_par = ids.is_root(par) ? 1.0 : mu[ids.nest_index(par)];
      lp += mu_par * (value - gamma[par]);
      value = gamma[par];
      node = par;
    }
    probs[a] = std::exp(lp);
  }
  return probs;
}

namespace {

// Skeleton one-observation dataset used to resolve the scenario's spec.
ChoiceDataset scenario_skeleton(const Scenario& sc) {
  ChoiceDataset d(sc.alternatives, sc.variable_names);
  const int m = static_cast<int>(sc.alternatives.size());
  const int nv = static_cast<int>(sc.variable_names.size());
  std::vector<double> attrs(sc.attributes);
  if (attrs.empty()) attrs.assign(static_cast<std::size_t>(m) * nv, 0.0);
  d.add_observation("skeleton", std::vector<bool>(m, true), 0, attrs);
  return d;
}

}  // namespace

std::vector<double> scenario_probabilities(const Scenario& sc) {
  sc.validate();
  ChoiceDataset skeleton = scenario_skeleton(sc);
  CompiledSpec cspec = compile_spec(skeleton, sc.effective_spec());
  ModelParams params{sc.true_beta(), sc.full_mu()};
  if (static_cast<int>(params.beta.size()) != cspec.n_params)
    fail(Errc::DimensionMismatch, "scenario has " + std::to_string(params.beta.size()) +
                                      " true parameters for " + std::to_string(cspec.n_params) +
                                      " free spec parameters");
  std::vector<double> V = systematic_utilities(skeleton, cspec, params.beta);
  return tree_choice_probabilities(sc.tree, sc.full_mu(), V);
}

ChoiceDataset simulate(const Scenario& sc) {
  sc.validate();
  const int m = static_cast<int>(sc.alternatives.size());

  // Full variable set: fixed attributes first, then random ones.
  std::vector<std::string> all_vars = sc.variable_names;
  for (const auto& rv : sc.random_vars) all_vars.push_back(rv.name);
  const int nv = static_cast<int>(all_vars.size());

  ChoiceDataset out(sc.alternatives, all_vars);
  // Resolve the utility spec once against a skeleton with the same variables.
  ChoiceDataset skeleton(sc.alternatives, all_vars);
  skeleton.add_observation("skeleton", std::vector<bool>(m, true), 0,
                           std::vector<double>(static_cast<std::size_t>(m) * nv, 0.0));
  CompiledSpec cspec = compile_spec(skeleton, sc.effective_spec());
  std::vector<double> beta = sc.true_beta();
  if (static_cast<int>(beta.size()) != cspec.n_params)
    fail(Errc::DimensionMismatch, "scenario true parameters vs spec");

  CounterRng rng(CounterRng::mix(sc.seed, 0xda7a5eedULL));
  const std::vector<double> mu_full = sc.full_mu();
  std::vector<bool> all(m, true);
  const int n_fixed = static_cast<int>(sc.variable_names.size());
  std::vector<double> attrs(static_cast<std::size_t>(m) * nv, 0.0);
  std::vector<double> V(m);
  for (int n = 0; n < sc.n_agents; ++n) {
    for (int a = 0; a < m; ++a) {
      for (int v = 0; v < n_fixed; ++v)
        attrs[a * nv + v] = sc.attributes[a * n_fixed + v];
      for (std::size_t r = 0; r < sc.random_vars.size(); ++r) {
        const auto& rv = sc.random_vars[r];
        attrs[a * nv + n_fixed + r] =
            rv.values[rng.next_below(rv.values.size())];
      }
    }
    for (int a = 0; a < m; ++a) {
      double v = 0.0;
      for (auto [p, var] : cspec.alt_terms[a])
        v += beta[p] * (var < 0 ? 1.0 : attrs[a * nv + var]);
      V[a] = v;
    }
    std::vector<double> probs = tree_choice_probabilities(sc.tree, mu_full, V);
    double u = rng.next_double();
    int chosen = m - 1;
    double acc = 0.0;
    for (int a = 0; a < m; ++a) {
      acc += probs[a];
      if (u < acc) {
        chosen = a;
        break;
      }
    }
    out.add_observation(std::to_string(n + 1), all, chosen, attrs);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario files

Scenario scenario_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail(Errc::ParseError, std::string("scenario: ") + e.what());
  }
  Scenario sc;
  if (!j.contains("alternatives") || !j.contains("tree") || !j.contains("n_agents"))
    fail(Errc::ParseError, "scenario needs alternatives, tree and n_agents");
  sc.alternatives = j["alternatives"].get<std::vector<std::string>>();
  std::vector<std::string> nest_names;
  sc.tree = parse_tree_text(j["tree"].get<std::string>(), sc.alternatives, &nest_names);
  sc.mu.assign(sc.tree.num_slots(), 1.0);
  if (j.contains("mu")) {
    if (!j["mu"].is_object()) fail(Errc::ParseError, "scenario mu must map nest name to scale");
    for (auto& [name, value] : j["mu"].items()) {
      auto it = std::find(nest_names.begin(), nest_names.end(), name);
      if (it == nest_names.end()) fail(Errc::ParseError, "unknown nest '" + name + "' in mu");
      sc.mu[it - nest_names.begin()] = value.get<double>();
    }
  }
  const int m = static_cast<int>(sc.alternatives.size());
  sc.asc.assign(m, 0.0);
  if (j.contains("asc")) {
    if (j["asc"].is_array()) {
      sc.asc = j["asc"].get<std::vector<double>>();
    } else {
      for (auto& [name, value] : j["asc"].items()) {
        auto it = std::find(sc.alternatives.begin(), sc.alternatives.end(), name);
        if (it == sc.alternatives.end())
          fail(Errc::ParseError, "unknown alternative '" + name + "' in asc");
        sc.asc[it - sc.alternatives.begin()] = value.get<double>();
      }
    }
  }
  sc.n_agents = j["n_agents"].get<int>();
  sc.seed = j.value("seed", 0);
  if (j.contains("attributes")) {
    for (auto& [var, by_alt] : j["attributes"].items()) sc.variable_names.push_back(var);
    sc.attributes.assign(static_cast<std::size_t>(m) * sc.variable_names.size(), 0.0);
    int v = 0;
    for (auto& [var, by_alt] : j["attributes"].items()) {
      for (auto& [alt, value] : by_alt.items()) {
        auto it = std::find(sc.alternatives.begin(), sc.alternatives.end(), alt);
        if (it == sc.alternatives.end())
          fail(Errc::ParseError, "unknown alternative '" + alt + "' in attributes");
        sc.attributes[(it - sc.alternatives.begin()) * sc.variable_names.size() + v] =
            value.get<double>();
      }
      ++v;
    }
  }
  if (j.contains("random_attributes")) {
    for (auto& [name, def] : j["random_attributes"].items()) {
      RandomAttribute rv;
      rv.name = name;
      if (!def.contains("values")) fail(Errc::ParseError, "random attribute needs 'values'");
      rv.values = def["values"].get<std::vector<double>>();
      rv.coef = def.value("coef", 1.0);
      sc.random_vars.push_back(std::move(rv));
    }
  }
  if (j.contains("utility")) {
    sc.utility = UtilitySpec::from_json_text(j["utility"].dump());
    if (!j.contains("beta_true")) fail(Errc::ParseError, "custom utility needs beta_true");
    const auto& names = sc.utility->free_params();
    sc.beta_true.assign(names.size(), 0.0);
    for (auto& [name, value] : j["beta_true"].items()) {
      auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) fail(Errc::ParseError, "unknown parameter '" + name + "' in beta_true");
      sc.beta_true[it - names.begin()] = value.get<double>();
    }
  }
  sc.validate();
  return sc;
}

Scenario scenario_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::ParseError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json_text(ss.str());
}

// ---------------------------------------------------------------------------
// Monte Carlo recovery

RecoveryTable monte_carlo(const Scenario& scenario, int replications,
                          const OAConfig& learner_config) {
  scenario.validate();
  if (replications < 1) fail(Errc::ParseError, "need at least one replication");

  RecoveryTable table;
  table.m = static_cast<int>(scenario.alternatives.size());
  table.replications = replications;
  table.planted_signature = scenario.tree.signature();
  table.param_names = scenario.effective_spec().free_params();
  table.rows.resize(replications);

  UtilitySpec spec = scenario.effective_spec();
  auto run_one = [&](int r) {
    RecoveryRow row;
    row.replication = r;
    try {
      Scenario sr = scenario;
      sr.seed = scenario.seed + static_cast<std::uint64_t>(r);
      ChoiceDataset data = simulate(sr);
      OAConfig cfg = learner_config;
      cfg.seed = learner_config.seed + static_cast<std::uint64_t>(r);
      cfg.threads = 1;  // replications own the parallel budget
      OAResult res = run_grid(data, spec, cfg);
      row.ok = true;
      row.signature = res.selected_tree->signature();
      row.recovered = row.signature == table.planted_signature;
      row.M = res.cells[res.selected].M;
      row.L = res.cells[res.selected].L;
      row.beta_hat = res.refit->params.beta;
      row.cov_hat = res.covariance_normalized;
      row.visited_trees = res.total_visited();
    } catch (const Error& e) {
      row.ok = false;
      row.error = e.what();
    }
    table.rows[r] = std::move(row);
  };

  const int threads = std::max(1, std::min(learner_config.threads, replications));
  if (threads == 1) {
    for (int r = 0; r < replications; ++r) run_one(r);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (int r = t; r < replications; r += threads) run_one(r);
      });
    for (auto& th : pool) th.join();
  }

  int recovered = 0, ok = 0;
  for (const auto& row : table.rows) {
    if (row.recovered) ++recovered;
    if (row.ok) ++ok;
  }
  table.recovery_rate = static_cast<double>(recovered) / replications;

  auto summarize = [&](auto get, std::size_t dim, std::vector<double>& mean,
                       std::vector<double>& se) {
    mean.assign(dim, 0.0);
    se.assign(dim, 0.0);
    if (ok == 0) return;
    for (const auto& row : table.rows)
      if (row.ok)
        for (std::size_t i = 0; i < dim; ++i) mean[i] += get(row)[i];
    for (double& v : mean) v /= ok;
    if (ok < 2) return;
    for (const auto& row : table.rows)
      if (row.ok)
        for (std::size_t i = 0; i < dim; ++i) {
          double d = get(row)[i] - mean[i];
          se[i] += d * d;
        }
    for (double& v : se) v = std::sqrt(v / (ok - 1) / ok);
  };
  summarize([](const RecoveryRow& r) -> const std::vector<double>& { return r.beta_hat; },
            table.param_names.size(), table.beta_mean, table.beta_se);
  summarize([](const RecoveryRow& r) -> const std::vector<double>& { return r.cov_hat; },
            static_cast<std::size_t>(table.m) * table.m, table.cov_mean, table.cov_se);
  return table;
}

void write_recovery_csv(const RecoveryTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(Errc::ParseError, "cannot open " + path + " for writing");
  out.precision(12);
  out << "replication,ok,recovered,M,L,visited_trees,signature";
  for (const auto& p : table.param_names) out << ',' << p;
  for (int i = 0; i < table.m; ++i)
    for (int j = 0; j < table.m; ++j) out << ",cov_" << i + 1 << '_' << j + 1;
  out << '\n';
  for (const auto& row : table.rows) {
    out << row.replication << ',' << row.ok << ',' << row.recovered << ',' << row.M << ','
        << row.L << ',' << row.visited_trees << ',' << '"' << row.signature << '"';
    auto emit = [&](const std::vector<double>& xs, std::size_t dim) {
      for (std::size_t i = 0; i < dim; ++i) {
        out << ',';
        if (i < xs.size()) out << xs[i];
      }
    };
    emit(row.beta_hat, table.param_names.size());
    emit(row.cov_hat, static_cast<std::size_t>(table.m) * table.m);
    out << '\n';
  }
  out << "mean,,,,,," << '"' << "rate=" << table.recovery_rate << '"';
  for (std::size_t i = 0; i < table.param_names.size(); ++i) out << ',' << table.beta_mean[i];
  for (std::size_t i = 0; i < table.cov_mean.size(); ++i) out << ',' << table.cov_mean[i];
  out << '\n';
  out << "se,,,,,,";
  for (std::size_t i = 0; i < table.param_names.size(); ++i) out << ',' << table.beta_se[i];
  for (std::size_t i = 0; i < table.cov_se.size(); ++i) out << ',' << table.cov_se[i];
  out << '\n';
}

}  // namespace nestlearn
