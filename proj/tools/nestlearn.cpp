#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "nestlearn/report.hpp"

using namespace nestlearn;
using nlohmann::json;

namespace {

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case Errc::NumericalFailure:
    case Errc::IterLimit:
    case Errc::Infeasible:
    case Errc::Unbounded:
    case Errc::SingularInformation:
      return 3;
    default:
      return 2;
  }
}

struct CommonOpts {
  std::string data_path, spec_path, out_path;
  std::string format = "text";
  double split = 0.25;
  std::uint64_t seed = 0;
  double mu_max = 10.0;
  double rho = 1000.0;
  int max_iter = 30;
  int threads = 0;
  int nests = -1, levels = -1;
};

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("NESTLEARN_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

OAConfig make_config(const CommonOpts& o) {
  OAConfig cfg;
  cfg.max_oa_iterations = o.max_iter;
  cfg.mu_max = o.mu_max;
  cfg.rho = o.rho;
  cfg.cv_split = o.split;
  cfg.seed = o.seed;
  cfg.threads = resolve_threads(o.threads);
  if (o.nests >= 0) {
    int levels = o.levels >= 0 ? o.levels : (o.nests == 0 ? 1 : 2);
    cfg.single_cell = std::make_pair(o.nests, levels);
  }
  return cfg;
}

json config_echo(const CommonOpts& o, const OAConfig& cfg) {
  json j;
  j["split"] = o.split;
  j["seed"] = o.seed;
  j["mu_max"] = o.mu_max;
  j["rho"] = o.rho;
  j["max_iter"] = o.max_iter;
  j["threads"] = cfg.threads;
  if (cfg.single_cell) j["cell"] = {{"M", cfg.single_cell->first}, {"L", cfg.single_cell->second}};
  return j;
}

UtilitySpec load_spec(const CommonOpts& o, const ChoiceDataset& data) {
  if (!o.spec_path.empty()) return UtilitySpec::from_json_file(o.spec_path);
  // Default: one constant per alternative (first fixed to zero) plus one
  // generic coefficient per attribute column.
  std::vector<UtilityTerm> terms;
  for (std::size_t a = 0; a < data.alternatives().size(); ++a)
    terms.push_back({"asc_" + data.alternatives()[a], data.alternatives()[a], "constant", a == 0});
  for (const auto& var : data.variable_names())
    for (const auto& alt : data.alternatives()) terms.push_back({"b_" + var, alt, var, false});
  return UtilitySpec(std::move(terms));
}

NestingTree load_tree(const std::string& path, const std::vector<std::string>& labels) {
  std::ifstream in(path);
  if (!in) fail(Errc::ParseError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.contains("tree")) fail(Errc::ParseError, "bad tree file " + path);
    return parse_tree_text(j["tree"].get<std::string>(), labels);
  }
  return parse_tree_text(text, labels);
}

void emit(const json& report, const CommonOpts& o) {
  if (!o.out_path.empty()) {
    std::ofstream out(o.out_path);
    if (!out) fail(Errc::ParseError, "cannot open " + o.out_path + " for writing");
    out << report_dump(report);
  }
  if (o.format == "json")
    std::cout << report_dump(report);
  else
    std::cout << render_text(report);
}

json base_report(const std::string& command, const CommonOpts& o, const OAConfig& cfg) {
  json report;
  report["report_version"] = 1;
  report["command"] = command;
  report["config"] = config_echo(o, cfg);
  return report;
}

int cmd_learn(const CommonOpts& o) {
  auto t0 = std::chrono::steady_clock::now();
  ChoiceDataset data = load_dataset(o.data_path);
  UtilitySpec spec = load_spec(o, data);
  CompiledSpec compiled = compile_spec(data, spec);
  OAConfig cfg = make_config(o);
  OAResult result = run_grid(data, spec, cfg);

  json report = base_report("learn", o, cfg);
  report["dataset"] = dataset_json(data);
  if (!compiled.warnings.empty()) report["warnings"] = compiled.warnings;
  report.update(grid_json(result, compiled.param_names, data.alternatives()));
  report["timing"] = {{"seconds", std::chrono::duration<double>(
                                      std::chrono::steady_clock::now() - t0)
                                      .count()}};
  emit(report, o);
  return 0;
}

int cmd_estimate(const CommonOpts& o, const std::string& tree_path,
                 const std::vector<std::string>& compare_paths) {
  auto t0 = std::chrono::steady_clock::now();
  ChoiceDataset data = load_dataset(o.data_path);
  UtilitySpec spec = load_spec(o, data);
  CompiledSpec compiled = compile_spec(data, spec);
  OAConfig cfg = make_config(o);
  cfg.threads = resolve_threads(o.threads);

  NestingTree tree = load_tree(tree_path, data.alternatives());
  auto violations = tree.validate();
  if (!violations.empty())
    fail(Errc::InvalidTree, std::string(violation_name(violations.front().kind)) + ": " +
                                violations.front().detail);

  NlpConfig nlp_cfg = cfg.nlp;
  nlp_cfg.mu_max = cfg.mu_max;
  nlp_cfg.compute_se = true;

  ChoiceDataset full = data.aggregated();
  NlpResult fit = estimate(full, compiled, tree, std::nullopt, nlp_cfg);

  json report = base_report("estimate", o, cfg);
  report["dataset"] = dataset_json(data);
  if (!compiled.warnings.empty()) report["warnings"] = compiled.warnings;
  report["estimate"] = nlp_json(fit, compiled.param_names, tree, data.alternatives());
  report["covariance"] = covariance_json(tree, fit.params.mu, data.alternatives());

  // Comparison block: given tree, any --compare trees, and the flat
  // benchmark, each fitted on train and evaluated on validation.
  auto [train_idx, val_idx] = split_indices(data.num_obs(), o.split, o.seed);
  ChoiceDataset train = data.subset(train_idx).aggregated();
  ChoiceDataset val = data.subset(val_idx).aggregated();
  NlpConfig inner = nlp_cfg;
  inner.compute_se = false;
  json comparison = json::array();
  auto add_row = [&](const std::string& label, const NestingTree& t) {
    NlpResult on_full = estimate(full, compiled, t, std::nullopt, inner);
    NlpResult on_train = estimate(train, compiled, t, std::nullopt, inner);
    double val_nll =
        val.num_obs() ? -Evaluator(val, compiled, t).loglik(on_train.params) : 0.0;
    comparison.push_back({{"label", label},
                          {"tree", t.to_text(data.alternatives())},
                          {"nests", t.num_nests()},
                          {"full_negloglik", on_full.negloglik},
                          {"train_negloglik", on_train.negloglik},
                          {"val_negloglik", val_nll},
                          {"visited_trees", 1}});
  };
  add_row("tree", tree);
  for (std::size_t i = 0; i < compare_paths.size(); ++i) {
    NestingTree t = load_tree(compare_paths[i], data.alternatives());
    auto v = t.validate();
    if (!v.empty()) fail(Errc::InvalidTree, compare_paths[i] + ": " + v.front().detail);
    add_row("compare_" + std::to_string(i + 1), t);
  }
  if (tree.num_nests() > 0) add_row("multinomial", NestingTree::flat(data.num_alts()));
  report["comparison"] = comparison;
  report["split"] = {{"train", train_idx.size()}, {"validation", val_idx.size()}};
  report["timing"] = {{"seconds", std::chrono::duration<double>(
                                      std::chrono::steady_clock::now() - t0)
                                      .count()}};
  emit(report, o);
  return 0;
}

int cmd_simulate(const CommonOpts& o, const std::string& scenario_path) {
  Scenario sc = scenario_from_json_file(scenario_path);
  ChoiceDataset data = simulate(sc);
  if (o.out_path.empty()) fail(Errc::ParseError, "simulate needs --out for the CSV");
  write_csv(data, o.out_path);
  json report;
  report["report_version"] = 1;
  report["command"] = "simulate";
  report["observations"] = data.num_obs();
  report["alternatives"] = data.alternatives();
  report["seed"] = sc.seed;
  report["out"] = o.out_path;
  std::cout << (o.format == "json" ? report_dump(report)
                                   : "simulated " + std::to_string(data.num_obs()) +
                                         " observations -> " + o.out_path + "\n");
  return 0;
}

int cmd_montecarlo(const CommonOpts& o, const std::string& scenario_path, int reps,
                   const std::string& report_path) {
  auto t0 = std::chrono::steady_clock::now();
  Scenario sc = scenario_from_json_file(scenario_path);
  OAConfig cfg = make_config(o);
  RecoveryTable table = monte_carlo(sc, reps, cfg);
  if (!o.out_path.empty()) write_recovery_csv(table, o.out_path);

  json report = base_report("montecarlo", o, cfg);
  report["recovery"] = recovery_json(table);
  report["timing"] = {{"seconds", std::chrono::duration<double>(
                                      std::chrono::steady_clock::now() - t0)
                                      .count()}};
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << report_dump(report);
  }
  std::cout << (o.format == "json" ? report_dump(report) : render_text(report));
  return 0;
}

int cmd_enumerate(const CommonOpts& o, int m, bool list_trees) {
  if (m > 8) fail(Errc::TooLarge, "enumeration limited to m <= 8");
  std::optional<int> want_nests = o.nests >= 0 ? std::optional<int>(o.nests) : std::nullopt;
  std::optional<int> want_levels = o.levels >= 0 ? std::optional<int>(o.levels) : std::nullopt;
  auto trees = enumerate_trees(m, want_nests, want_levels);

  std::map<std::pair<int, int>, int> by_cell;
  for (const auto& t : trees) ++by_cell[{t.num_nests(), t.height()}];

  json report;
  report["report_version"] = 1;
  report["command"] = "enumerate";
  json en;
  en["m"] = m;
  en["count"] = trees.size();
  en["by_cell"] = json::array();
  for (const auto& [cell, count] : by_cell)
    en["by_cell"].push_back({{"M", cell.first}, {"L", cell.second}, {"count", count}});
  if (m == 6 && !want_nests && !want_levels && trees.size() != 2712)
    en["note"] = "commonly cited total for m=6 is 2712; this exhaustive enumeration of "
                 "non-degenerate laminar families finds " + std::to_string(trees.size());
  if (list_trees) {
    en["trees"] = json::array();
    for (const auto& t : trees) en["trees"].push_back(t.to_text());
  }
  report["enumeration"] = en;
  emit(report, o);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nested logit structure learning"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string tree_path, scenario_path, report_path;
  std::vector<std::string> compare_paths;
  int reps = 20, enum_m = 3;
  bool list_trees = false;

  auto add_common = [&](CLI::App* sub, bool with_data) {
    if (with_data) sub->add_option("--data", o.data_path, "long-format CSV")->required();
    sub->add_option("--spec", o.spec_path, "utility spec JSON (default: one constant per alternative)");
    sub->add_option("--split", o.split, "validation fraction");
    sub->add_option("--seed", o.seed, "random seed");
    sub->add_option("--mu-max", o.mu_max, "scale upper bound");
    sub->add_option("--rho", o.rho, "linearization slack penalty");
    sub->add_option("--max-iter", o.max_iter, "outer-approximation iterations per cell");
    sub->add_option("--threads", o.threads, "thread budget (or NESTLEARN_THREADS)");
    sub->add_option("--out", o.out_path, "output file");
    sub->add_option("--format", o.format, "stdout format: text|json")
        ->check(CLI::IsMember({"text", "json"}));
  };

  auto* learn = app.add_subcommand("learn", "learn the nesting structure from data");
  add_common(learn, true);
  learn->add_option("--nests", o.nests, "restrict to one cell: nest count M");
  learn->add_option("--levels", o.levels, "restrict to one cell: nesting levels L");

  auto* est = app.add_subcommand("estimate", "estimate a fixed nesting tree");
  add_common(est, true);
  est->add_option("--tree", tree_path, "tree file (text or JSON)")->required();
  est->add_option("--compare", compare_paths, "additional tree files for the comparison table");

  auto* sim = app.add_subcommand("simulate", "simulate choices from a scenario");
  add_common(sim, false);
  sim->add_option("--scenario", scenario_path, "scenario JSON")->required();

  auto* mc = app.add_subcommand("montecarlo", "seeded recovery study");
  add_common(mc, false);
  mc->add_option("--scenario", scenario_path, "scenario JSON")->required();
  mc->add_option("--reps", reps, "replications");
  mc->add_option("--report", report_path, "also write the JSON report here");

  auto* en = app.add_subcommand("enumerate", "enumerate all nesting trees");
  add_common(en, false);
  en->add_option("--m", enum_m, "number of alternatives")->required();
  en->add_option("--nests", o.nests, "filter by nest count");
  en->add_option("--levels", o.levels, "filter by height");
  en->add_flag("--list", list_trees, "print every tree");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (learn->parsed()) return cmd_learn(o);
    if (est->parsed()) return cmd_estimate(o, tree_path, compare_paths);
    if (sim->parsed()) return cmd_simulate(o, scenario_path);
    if (mc->parsed()) return cmd_montecarlo(o, scenario_path, reps, report_path);
    if (en->parsed()) return cmd_enumerate(o, enum_m, list_trees);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
