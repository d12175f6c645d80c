#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "invsel/evidence.hpp"
#include "invsel/harness.hpp"
#include "invsel/hypothesis.hpp"
#include "invsel/models.hpp"

namespace invsel {

using Json = nlohmann::ordered_json;

/// {"n", "m", "x", "z"?, "y"} with y row-major by site.
Json dataset_to_json(const Dataset& data);
Dataset dataset_from_json(const Json& j);

Json chain_config_to_json(const ChainConfig& c);
ChainConfig chain_config_from_json(const Json& j, ChainConfig base = {});

/// Field names mirror ExperimentConfig; the roster is a list of model names.
/// Missing fields keep the values of `base`.
Json experiment_config_to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const Json& j, ExperimentConfig base = {});

Json truth_to_json(const TruthAssignment& t);

/// Model ids are written as string keys.
Json evidence_to_json(const EvidenceReport& e);
EvidenceReport evidence_from_json(const Json& j);

Json discrepancy_to_json(const DiscrepancyReport& r, bool include_draws = false);
DiscrepancyReport discrepancy_from_json(const Json& j);

/// Columns beta, cfdr_t1, cfnr_t1, cfdr_t2, cfnr_t2.
void write_decisions_csv(std::ostream& out, const DecisionTable& t1, const DecisionTable& t2);

Json summary_to_json(const ExperimentResult& r);
Json replicate_summary_to_json(const ReplicateSummary& s);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

}  // namespace invsel
