#include "nestlearn/choicedata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

namespace nestlearn {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

ChoiceDataset::ChoiceDataset(std::vector<std::string> alternatives,
                             std::vector<std::string> variable_names)
    : alternatives_(std::move(alternatives)), variable_names_(std::move(variable_names)) {
  if (alternatives_.size() < 2) fail(Errc::ParseError, "need at least 2 alternatives");
}

void ChoiceDataset::add_observation(std::string obs_id, const std::vector<bool>& available,
                                    int chosen, const std::vector<double>& attrs, double weight) {
  const int m = num_alts();
  const int nv = num_vars();
  if (static_cast<int>(available.size()) != m ||
      static_cast<int>(attrs.size()) != m * nv)
    fail(Errc::DimensionMismatch, "observation " + obs_id);
  if (std::none_of(available.begin(), available.end(), [](bool b) { return b; }))
    fail(Errc::EmptyChoiceSet, "observation " + obs_id);
  if (chosen < 0 || chosen >= m) fail(Errc::NoChoice, "observation " + obs_id);
  if (!available[chosen]) fail(Errc::ChosenUnavailable, "observation " + obs_id);
  for (int a = 0; a < m; ++a)
    for (int v = 0; v < nv; ++v)
      if (available[a] && !std::isfinite(attrs[a * nv + v]))
        fail(Errc::NonNumericAttribute, "observation " + obs_id + ", alternative " +
                                            alternatives_[a] + ", variable " + variable_names_[v]);
  obs_ids_.push_back(std::move(obs_id));
  weights_.push_back(weight);
  chosen_.push_back(chosen);
  for (int a = 0; a < m; ++a) avail_.push_back(available[a] ? 1 : 0);
  for (int a = 0; a < m; ++a)
    for (int v = 0; v < nv; ++v) attrs_.push_back(available[a] ? attrs[a * nv + v] : kNaN);
}

double ChoiceDataset::total_weight() const {
  double w = 0;
  for (double x : weights_) w += x;
  return w;
}

int ChoiceDataset::alt_index(const std::string& name) const {
  auto it = std::find(alternatives_.begin(), alternatives_.end(), name);
  return it == alternatives_.end() ? -1 : static_cast<int>(it - alternatives_.begin());
}

int ChoiceDataset::var_index(const std::string& name) const {
  auto it = std::find(variable_names_.begin(), variable_names_.end(), name);
  return it == variable_names_.end() ? -1 : static_cast<int>(it - variable_names_.begin());
}

ChoiceDataset ChoiceDataset::aggregated() const {
  const int m = num_alts();
  const int nv = num_vars();
  ChoiceDataset out(alternatives_, variable_names_);
  std::map<std::string, int> groups;
  const std::size_t row_attrs = static_cast<std::size_t>(m) * nv;
  for (int n = 0; n < num_obs(); ++n) {
    std::string key;
    key.reserve(1 + m + row_attrs * sizeof(double));
    key.push_back(static_cast<char>(chosen_[n]));
    for (int a = 0; a < m; ++a) key.push_back(static_cast<char>(avail_[n * m + a]));
    const char* bytes = reinterpret_cast<const char*>(&attrs_[n * row_attrs]);
    key.append(bytes, row_attrs * sizeof(double));
    auto [it, inserted] = groups.emplace(key, out.num_obs());
    if (inserted) {
      std::vector<bool> av(m);
      for (int a = 0; a < m; ++a) av[a] = avail_[n * m + a];
      std::vector<double> at(attrs_.begin() + n * row_attrs,
                             attrs_.begin() + (n + 1) * row_attrs);
      for (double& x : at)
        if (!std::isfinite(x)) x = 0.0;  // placeholder, unread for unavailable
      out.add_observation(obs_ids_[n], av, chosen_[n], at, weights_[n]);
    } else {
      out.weights_[it->second] += weights_[n];
    }
  }
  return out;
}

ChoiceDataset ChoiceDataset::subset(const std::vector<std::size_t>& indices) const {
  const int m = num_alts();
  const int nv = num_vars();
  ChoiceDataset out(alternatives_, variable_names_);
  for (std::size_t n : indices) {
    std::vector<bool> av(m);
    for (int a = 0; a < m; ++a) av[a] = avail_[n * m + a];
    std::vector<double> at(m * nv);
    for (int a = 0; a < m; ++a)
      for (int v = 0; v < nv; ++v) {
        double x = attrs_[(n * m + a) * nv + v];
        at[a * nv + v] = std::isfinite(x) ? x : 0.0;
      }
    out.add_observation(obs_ids_[n], av, chosen_[n], at, weights_[n]);
  }
  return out;
}

bool ChoiceDataset::operator==(const ChoiceDataset& other) const {
  if (alternatives_ != other.alternatives_ || variable_names_ != other.variable_names_ ||
      obs_ids_ != other.obs_ids_ || weights_ != other.weights_ || chosen_ != other.chosen_ ||
      avail_ != other.avail_)
    return false;
  // Attributes compared on available pairs only (others are NaN padding).
  const int m = num_alts();
  const int nv = num_vars();
  for (int n = 0; n < num_obs(); ++n)
    for (int a = 0; a < m; ++a) {
      if (!available(n, a)) continue;
      for (int v = 0; v < nv; ++v)
        if (attribute(n, a, v) != other.attribute(n, a, v)) return false;
    }
  return true;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

int parse_binary(const std::string& s, const std::string& what, int line_no) {
  if (s == "0") return 0;
  if (s == "1") return 1;
  fail(Errc::ParseError, what + " must be 0 or 1 (line " + std::to_string(line_no) + ")");
}

}  // namespace

ChoiceDataset load_dataset(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) fail(Errc::ParseError, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) fail(Errc::ParseError, "empty file " + path);
  auto header = split_csv_line(line);

  auto col_of = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(Errc::MissingColumn, name);
    return static_cast<int>(it - header.begin());
  };
  const int c_obs = col_of(schema.obs_col);
  const int c_alt = col_of(schema.alt_col);
  const int c_chosen = col_of(schema.chosen_col);
  const int c_avail = col_of(schema.avail_col);

  std::vector<std::string> var_names;
  std::vector<int> var_cols;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (c == c_obs || c == c_alt || c == c_chosen || c == c_avail) continue;
    var_names.push_back(header[c]);
    var_cols.push_back(c);
  }

  struct Row {
    std::string alt;
    int chosen, avail, line_no;
    std::vector<double> vals;
  };
  std::vector<std::string> obs_order;
  std::map<std::string, std::vector<Row>> rows_by_obs;
  std::vector<std::string> alt_order;

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      fail(Errc::ParseError, "wrong field count on line " + std::to_string(line_no));
    Row row;
    row.alt = fields[c_alt];
    row.chosen = parse_binary(fields[c_chosen], "chosen", line_no);
    row.avail = parse_binary(fields[c_avail], "avail", line_no);
    row.line_no = line_no;
    row.vals.resize(var_cols.size());
    for (std::size_t v = 0; v < var_cols.size(); ++v) {
      if (!parse_double(fields[var_cols[v]], row.vals[v])) {
        if (row.avail)
          fail(Errc::NonNumericAttribute,
               "column " + var_names[v] + ", line " + std::to_string(line_no));
        row.vals[v] = kNaN;
      }
    }
    const std::string& obs = fields[c_obs];
    if (!rows_by_obs.count(obs)) obs_order.push_back(obs);
    rows_by_obs[obs].push_back(std::move(row));
    if (std::find(alt_order.begin(), alt_order.end(), fields[c_alt]) == alt_order.end())
      alt_order.push_back(fields[c_alt]);
  }
  if (alt_order.size() < 2) fail(Errc::ParseError, "fewer than 2 alternatives in " + path);

  ChoiceDataset out(alt_order, var_names);
  const int m = static_cast<int>(alt_order.size());
  const int nv = static_cast<int>(var_names.size());
  for (const auto& obs : obs_order) {
    std::vector<bool> avail(m, false);
    std::vector<double> attrs(static_cast<std::size_t>(m) * nv, 0.0);
    int chosen = -1;
    std::vector<bool> seen(m, false);
    for (const auto& row : rows_by_obs[obs]) {
      int a = static_cast<int>(std::find(alt_order.begin(), alt_order.end(), row.alt) -
                               alt_order.begin());
      if (seen[a])
        fail(Errc::ParseError, "duplicate alternative row for observation " + obs);
      seen[a] = true;
      if (row.chosen) {
        if (chosen != -1) fail(Errc::DuplicateChoice, "observation " + obs);
        if (!row.avail) fail(Errc::ChosenUnavailable, "observation " + obs);
        chosen = a;
      }
      if (row.avail) {
        avail[a] = true;
        for (int v = 0; v < nv; ++v) attrs[a * nv + v] = row.vals[v];
      }
    }
    if (chosen == -1) fail(Errc::NoChoice, "observation " + obs);
    out.add_observation(obs, avail, chosen, attrs);
  }
  return out;
}

void write_csv(const ChoiceDataset& d, const std::string& path) {
  for (int n = 0; n < d.num_obs(); ++n)
    if (d.weight(n) != 1.0)
      fail(Errc::ParseError, "aggregated datasets cannot be written as CSV");
  std::ofstream out(path);
  if (!out) fail(Errc::ParseError, "cannot open " + path + " for writing");
  out << "obs_id,alt_id,chosen,avail";
  for (const auto& v : d.variable_names()) out << ',' << v;
  out << '\n';
  out.precision(17);
  for (int n = 0; n < d.num_obs(); ++n)
    for (int a = 0; a < d.num_alts(); ++a) {
      out << d.obs_id(n) << ',' << d.alternatives()[a] << ',' << (d.chosen(n) == a ? 1 : 0) << ','
          << (d.available(n, a) ? 1 : 0);
      for (int v = 0; v < d.num_vars(); ++v) {
        out << ',';
        if (d.available(n, a)) out << d.attribute(n, a, v);
      }
      out << '\n';
    }
}

// ---------------------------------------------------------------------------
// UtilitySpec

UtilitySpec::UtilitySpec(std::vector<UtilityTerm> terms) : terms_(std::move(terms)) {
  for (const auto& t : terms_) {
    auto& bucket = t.fixed ? fixed_params_ : free_params_;
    if (std::find(bucket.begin(), bucket.end(), t.param) == bucket.end())
      bucket.push_back(t.param);
  }
  for (const auto& f : fixed_params_)
    if (std::find(free_params_.begin(), free_params_.end(), f) != free_params_.end())
      fail(Errc::ParseError, "parameter " + f + " is both fixed and free");
}

UtilitySpec UtilitySpec::asc_only(const std::vector<std::string>& alternatives) {
  std::vector<UtilityTerm> terms;
  for (std::size_t a = 0; a < alternatives.size(); ++a)
    terms.push_back({"asc_" + alternatives[a], alternatives[a], "constant", a == 0});
  return UtilitySpec(std::move(terms));
}

UtilitySpec UtilitySpec::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail(Errc::ParseError, std::string("utility spec: ") + e.what());
  }
  if (!j.contains("parameters") || !j["parameters"].is_array())
    fail(Errc::ParseError, "utility spec needs a 'parameters' array");
  std::vector<UtilityTerm> terms;
  for (const auto& e : j["parameters"]) {
    UtilityTerm t;
    t.param = e.at("name").get<std::string>();
    t.alternative = e.at("alternative").get<std::string>();
    t.variable = e.at("variable").get<std::string>();
    t.fixed = e.value("fixed", false);
    terms.push_back(std::move(t));
  }
  return UtilitySpec(std::move(terms));
}

UtilitySpec UtilitySpec::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::ParseError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string UtilitySpec::to_json_text() const {
  nlohmann::json j;
  j["parameters"] = nlohmann::json::array();
  for (const auto& t : terms_) {
    nlohmann::json e{{"name", t.param}, {"alternative", t.alternative}, {"variable", t.variable}};
    if (t.fixed) e["fixed"] = true;
    j["parameters"].push_back(e);
  }
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Compilation against a dataset

CompiledSpec compile_spec(const ChoiceDataset& dataset, const UtilitySpec& spec) {
  CompiledSpec out;
  out.param_names = spec.free_params();
  out.n_params = static_cast<int>(out.param_names.size());
  out.alt_terms.resize(dataset.num_alts());

  auto param_index = [&](const std::string& name) {
    auto it = std::find(out.param_names.begin(), out.param_names.end(), name);
    return it == out.param_names.end() ? -1 : static_cast<int>(it - out.param_names.begin());
  };

  for (const auto& t : spec.terms()) {
    int a = dataset.alt_index(t.alternative);
    if (a < 0) fail(Errc::ParseError, "unknown alternative " + t.alternative + " in spec");
    int v = -1;
    if (t.variable != "constant") {
      v = dataset.var_index(t.variable);
      if (v < 0) fail(Errc::MissingColumn, t.variable);
    }
    if (t.fixed) continue;  // normalized to zero, contributes nothing
    out.alt_terms[a].emplace_back(param_index(t.param), v);
  }

  // Identification. Constants on every alternative with none fixed are the
  // provably unidentifiable case and are rejected outright.
  {
    std::vector<bool> has_free_const(dataset.num_alts(), false);
    bool any_fixed_const = false;
    bool any_const = false;
    for (const auto& t : spec.terms()) {
      if (t.variable != "constant") continue;
      any_const = true;
      if (t.fixed)
        any_fixed_const = true;
      else
        has_free_const[dataset.alt_index(t.alternative)] = true;
    }
    if (any_const && !any_fixed_const &&
        std::all_of(has_free_const.begin(), has_free_const.end(), [](bool b) { return b; }))
      fail(Errc::ParseError,
           "constants on every alternative with none fixed to zero are not identified");
  }
  // Non-varying variables: warn when no alternative's coefficient is fixed.
  for (int v = 0; v < dataset.num_vars(); ++v) {
    bool varies = false;
    for (int n = 0; n < dataset.num_obs() && !varies; ++n) {
      double ref = kNaN;
      for (int a = 0; a < dataset.num_alts(); ++a) {
        if (!dataset.available(n, a)) continue;
        double x = dataset.attribute(n, a, v);
        if (std::isnan(ref))
          ref = x;
        else if (x != ref)
          varies = true;
      }
    }
    if (varies) continue;
    bool used_free = false, any_fixed = false;
    for (const auto& t : spec.terms()) {
      if (t.variable != dataset.variable_names()[v]) continue;
      (t.fixed ? any_fixed : used_free) = true;
    }
    if (used_free && !any_fixed)
      out.warnings.push_back("variable " + dataset.variable_names()[v] +
                             " does not vary across alternatives; consider fixing one "
                             "alternative's coefficient to zero");
  }
  return out;
}

std::vector<double> systematic_utilities(const ChoiceDataset& dataset, const CompiledSpec& spec,
                                         const std::vector<double>& beta) {
  if (static_cast<int>(beta.size()) != spec.n_params)
    fail(Errc::DimensionMismatch, "beta has " + std::to_string(beta.size()) + " entries, spec has " +
                                      std::to_string(spec.n_params) + " free parameters");
  const int m = dataset.num_alts();
  std::vector<double> V(static_cast<std::size_t>(dataset.num_obs()) * m, kNaN);
  for (int n = 0; n < dataset.num_obs(); ++n)
    for (int a = 0; a < m; ++a) {
      if (!dataset.available(n, a)) continue;
      double v = 0.0;
      for (auto [p, var] : spec.alt_terms[a])
        v += beta[p] * (var < 0 ? 1.0 : dataset.attribute(n, a, var));
      V[static_cast<std::size_t>(n) * m + a] = v;
    }
  return V;
}

}  // namespace nestlearn
