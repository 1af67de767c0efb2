#pragma once

#include <string>

#include "json.hpp"
#include "nestlearn/oa.hpp"
#include "nestlearn/synth.hpp"

namespace nestlearn {

// Report JSON is the single source of truth; the text rendering below prints
// numbers exactly as they serialize, so every figure in the text exists in
// the JSON verbatim.

nlohmann::json dataset_json(const ChoiceDataset& data);
nlohmann::json nlp_json(const NlpResult& fit, const std::vector<std::string>& param_names,
                        const NestingTree& tree, const std::vector<std::string>& labels);
nlohmann::json cell_json(const CellResult& cell, const std::vector<std::string>& labels);
nlohmann::json covariance_json(const NestingTree& tree, const std::vector<double>& mu,
                               const std::vector<std::string>& labels);
nlohmann::json grid_json(const OAResult& result, const std::vector<std::string>& param_names,
                         const std::vector<std::string>& labels);
nlohmann::json recovery_json(const RecoveryTable& table);

std::string render_text(const nlohmann::json& report);

/// Serialization used everywhere a report file is written: 2-space indent,
/// keys sorted by nlohmann's object ordering, newline-terminated.
std::string report_dump(const nlohmann::json& report);

}  // namespace nestlearn
