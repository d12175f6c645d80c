#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "invsel/evidence.hpp"
#include "invsel/hypothesis.hpp"
#include "invsel/models.hpp"
#include "invsel/samplers.hpp"

namespace invsel {

enum class Scenario { SingleCovariate, TwoCovariate };

std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& name);

/// Fixed true coefficients; unset ones are drawn from U(-1, 1).
struct TruthOverride {
    std::optional<double> alpha0;
    std::optional<double> beta0;
    std::optional<double> gamma0;
};

struct ExperimentConfig {
    Scenario scenario = Scenario::SingleCovariate;
    std::size_t n = 10;
    std::size_t m = 10;
    /// Empty: the full roster of the scenario.
    std::vector<ModelSpec> roster;
    /// Drop the data-generating model from the roster.
    bool misspecified = false;
    double alpha_default = 1.0;
    /// Dirichlet weight of models with both covariates.
    double alpha_bivariate = 5.0;
    double c = 1.0;
    double alpha_level = 0.05;
    /// Shift a and tolerance eps of the null event; both 0 by default.
    double shift = 0.0;
    double tolerance = 0.0;
    std::vector<double> beta_grid = default_beta_grid();
    ChainConfig chain = ChainConfig::paper();
    GibbsSettings gibbs;
    std::uint64_t root_seed = 1;
    /// Dataset replicates for pBFDR / pBFNR.
    std::size_t replicates = 10;
    /// Worker threads for per-model work; 0 uses the hardware count. Results do not depend on it.
    std::size_t threads = 0;
    TruthOverride truth;

    /// Throws InvalidArgument on an inconsistent configuration.
    void validate() const;
    /// Roster actually run: the configured or default roster, minus the
    /// true model when misspecified.
    std::vector<ModelSpec> effective_roster() const;
    std::map<int, double> dirichlet_alpha() const;

    /// "paper" or "desk"; the preset only sets the chain budgets.
    static ExperimentConfig preset(const std::string& name);
};

/// The model that generates the data in each scenario.
ModelSpec true_model(Scenario scenario);

struct TruthAssignment {
    double alpha0 = 0.0;
    double beta0 = 0.0;
    std::optional<double> gamma0;
    /// Id of the generating model in the roster; absent when misspecified.
    std::optional<int> true_model_id;
};

/// Single covariate: alpha0, beta0 ~ U(-1, 1), x_i ~ U(-1, 1),
/// y_ij ~ Poisson(exp(alpha0 + beta0 x_i)). Two covariates add
/// gamma0 ~ U(-1, 1) and z_i ~ U(0, 2).
std::pair<Dataset, TruthAssignment> generate_dataset(const ExperimentConfig& config, SeededStream& stream);
std::pair<Dataset, TruthAssignment> generate_dataset(const ExperimentConfig& config);

struct ModelOutcome {
    ModelSpec spec;
    bool ok = false;
    std::string error;
    CpoEstimate cpo;
    double forward_acceptance = 0.0;
    std::size_t istar = 0;
    double stage1_acceptance = 0.0;
    std::vector<double> stage2_acceptance;
    std::vector<double> weight_ess;
    bool clamped = false;
    /// T1 and T2, or a single T3 for models with both covariates.
    std::vector<DiscrepancyReport> reports;

    double coverage(DiscrepancyKind requested) const;
};

struct Failure {
    int model_id = 0;
    std::string model_name;
    std::optional<std::size_t> site;
    std::string message;
};

/// Non-Bayesian diagnostics against the known truth (simulation only).
struct ValidationSummary {
    std::optional<int> true_model_id;
    int best_model = 0;
    /// Realized FDR / FNR of each beta's decision against the truth, per column set.
    std::vector<double> realized_fdr_t1, realized_fnr_t1, realized_fdr_t2, realized_fnr_t2;
    /// Some beta accepts exactly the true null.
    bool exact_selection_t1 = false;
    bool exact_selection_t2 = false;
};

struct ExperimentResult {
    ExperimentConfig config;
    std::optional<Dataset> data;
    TruthAssignment truth;
    std::vector<ModelOutcome> models;
    EvidenceReport evidence;
    /// v per model for the T1 and T2 column sets (T3 in both for bivariate models).
    std::map<int, double> v_t1, v_t2;
    DecisionTable table_t1, table_t2;
    ValidationSummary validation;
    std::vector<Failure> failures;

    bool partial() const { return !failures.empty(); }
};

/// Full pipeline on freshly generated data.
ExperimentResult run_experiment(const ExperimentConfig& config);
/// Full pipeline on given data.
ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& data, const TruthAssignment& truth);

/// v, decision tables and validation from model posteriors and coverages.
void assemble_decisions(ExperimentResult& result);

struct ReplicateSummary {
    std::vector<double> beta_grid;
    std::size_t replicates = 0;
    std::vector<double> pbfdr_t1, pbfnr_t1, pbfdr_t2, pbfnr_t2;
    std::vector<double> se_fdr_t1, se_fnr_t1, se_fdr_t2, se_fnr_t2;
};

/// Averages cFDR / cFNR over `replicates` datasets whose seeds derive from
/// the root seed ("replicate=r"). With `identical_seeds` every replicate
/// reuses the root seed.
ReplicateSummary replicate_error_rates(const ExperimentConfig& config, std::size_t replicates,
                                       bool identical_seeds = false);

/// Writes config.json, dataset.json, evidence.json, discrepancy_<model>.json,
/// decisions.csv, summary.json and, on partial failure, failures.json.
void write_run_directory(const ExperimentResult& result, const std::string& dir);

/// Recomputes the decision tables from a run directory's evidence.json and
/// discrepancy files, optionally with another beta grid, and rewrites decisions.csv.
ExperimentResult sweep_run_directory(const std::string& dir, const std::optional<std::vector<double>>& grid = {});

}  // namespace invsel
