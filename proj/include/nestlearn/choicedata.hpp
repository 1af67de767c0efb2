#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nestlearn/errors.hpp"

namespace nestlearn {

/// Column-name mapping for the long-format CSV.
struct CsvSchema {
  std::string obs_col = "obs_id";
  std::string alt_col = "alt_id";
  std::string chosen_col = "chosen";
  std::string avail_col = "avail";
};

/// Immutable choice observations: universal alternative set, availability,
/// chosen alternative and attribute values per (observation, alternative).
/// Observation weights support aggregation of identical rows.
class ChoiceDataset {
 public:
  ChoiceDataset(std::vector<std::string> alternatives, std::vector<std::string> variable_names);

  /// Appends one observation. `attrs` is row-major [alt][var]; entries for
  /// unavailable alternatives are ignored (stored as NaN).
  void add_observation(std::string obs_id, const std::vector<bool>& available, int chosen,
                       const std::vector<double>& attrs, double weight = 1.0);

  int num_obs() const { return static_cast<int>(chosen_.size()); }
  int num_alts() const { return static_cast<int>(alternatives_.size()); }
  int num_vars() const { return static_cast<int>(variable_names_.size()); }
  double total_weight() const;

  const std::vector<std::string>& alternatives() const { return alternatives_; }
  const std::vector<std::string>& variable_names() const { return variable_names_; }
  int alt_index(const std::string& name) const;  // -1 when absent
  int var_index(const std::string& name) const;

  const std::string& obs_id(int n) const { return obs_ids_[n]; }
  double weight(int n) const { return weights_[n]; }
  int chosen(int n) const { return chosen_[n]; }
  bool available(int n, int a) const { return avail_[static_cast<std::size_t>(n) * num_alts() + a]; }
  double attribute(int n, int a, int v) const {
    return attrs_[(static_cast<std::size_t>(n) * num_alts() + a) * num_vars() + v];
  }

  /// Merges observations with identical availability, choice and attributes;
  /// weights add up. Group order follows first occurrence.
  ChoiceDataset aggregated() const;

  /// New dataset holding the given observations in the given order.
  ChoiceDataset subset(const std::vector<std::size_t>& indices) const;

  bool operator==(const ChoiceDataset& other) const;

 private:
  std::vector<std::string> alternatives_;
  std::vector<std::string> variable_names_;
  std::vector<std::string> obs_ids_;
  std::vector<double> weights_;
  std::vector<int> chosen_;
  std::vector<std::uint8_t> avail_;  // num_obs x num_alts
  std::vector<double> attrs_;        // num_obs x num_alts x num_vars
};

ChoiceDataset load_dataset(const std::string& path, const CsvSchema& schema = {});
void write_csv(const ChoiceDataset& dataset, const std::string& path);

/// One linear utility term: parameter times attribute (or times 1 for
/// constants) on one alternative. Terms sharing a parameter name produce
/// generic coefficients.
struct UtilityTerm {
  std::string param;
  std::string alternative;
  std::string variable;  // "constant" for an intercept
  bool fixed = false;    // parameter normalized to zero
};

class UtilitySpec {
 public:
  UtilitySpec() = default;
  explicit UtilitySpec(std::vector<UtilityTerm> terms);

  /// One constant per alternative; the first alternative's is fixed to zero.
  static UtilitySpec asc_only(const std::vector<std::string>& alternatives);

  static UtilitySpec from_json_file(const std::string& path);
  static UtilitySpec from_json_text(const std::string& text);
  std::string to_json_text() const;

  const std::vector<UtilityTerm>& terms() const { return terms_; }
  /// Free parameter names, in order of first appearance.
  const std::vector<std::string>& free_params() const { return free_params_; }
  const std::vector<std::string>& fixed_params() const { return fixed_params_; }

 private:
  std::vector<UtilityTerm> terms_;
  std::vector<std::string> free_params_;
  std::vector<std::string> fixed_params_;
};

/// Spec resolved against a dataset: per-alternative term lists with integer
/// parameter/variable ids, ready for evaluation.
struct CompiledSpec {
  int n_params = 0;
  std::vector<std::string> param_names;
  // per alternative: (param index, variable index or -1 for constant)
  std::vector<std::vector<std::pair<int, int>>> alt_terms;
  std::vector<std::string> warnings;  // identification advisories
};

/// Resolves names and runs identification checks. Constants on every
/// alternative with none fixed are rejected; other non-varying variables
/// produce warnings only.
CompiledSpec compile_spec(const ChoiceDataset& dataset, const UtilitySpec& spec);

/// V[n][a] = sum of beta * attribute over the alternative's terms; NaN where
/// unavailable. Row-major num_obs x num_alts.
std::vector<double> systematic_utilities(const ChoiceDataset& dataset, const CompiledSpec& spec,
                                         const std::vector<double>& beta);

}  // namespace nestlearn
