#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "invsel/errors.hpp"
#include "invsel/harness.hpp"
#include "invsel/serialization.hpp"

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string preset = "desk";
    bool misspecified = false;
    std::string out = "run";
    std::optional<std::string> scenario;
    std::optional<std::size_t> n, m, threads;
    std::optional<std::string> dataset_path;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config_path, "JSON file with ExperimentConfig fields");
    cmd->add_option("--seed", o.seed, "root seed");
    cmd->add_option("--preset", o.preset, "chain budgets: paper or desk")->check(CLI::IsMember({"paper", "desk"}));
    cmd->add_flag("--misspecified", o.misspecified, "drop the data-generating model from the roster");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--scenario", o.scenario, "single_covariate or two_covariate");
    cmd->add_option("--n", o.n, "number of sites");
    cmd->add_option("--m", o.m, "replicates per site");
    cmd->add_option("--threads", o.threads, "worker threads (0 = all cores)");
}

invsel::ExperimentConfig build_config(const CommonOptions& o) {
    auto config = invsel::ExperimentConfig::preset(o.preset);
    if (!o.config_path.empty()) config = invsel::experiment_config_from_json(invsel::read_json_file(o.config_path), config);
    if (o.seed) config.root_seed = *o.seed;
    if (o.misspecified) config.misspecified = true;
    if (o.scenario) config.scenario = invsel::parse_scenario(*o.scenario);
    if (o.n) config.n = *o.n;
    if (o.m) config.m = *o.m;
    if (o.threads) config.threads = *o.threads;
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Inverse regression model selection by Bayesian multiple testing"};
    app.require_subcommand(1);

    CommonOptions gen_opts, run_opts, rep_opts;
    auto* generate = app.add_subcommand("generate", "simulate a dataset and write dataset.json");
    add_common(generate, gen_opts);

    auto* run = app.add_subcommand("run", "full pipeline; writes a run directory");
    add_common(run, run_opts);
    run->add_option("--dataset", run_opts.dataset_path, "use this dataset.json instead of simulating");

    std::string sweep_dir;
    std::optional<std::string> sweep_config;
    auto* sweep = app.add_subcommand("sweep", "recompute decisions.csv from a run directory");
    sweep->add_option("--out", sweep_dir, "run directory")->required();
    sweep->add_option("--config", sweep_config, "JSON file whose beta_grid replaces the stored one");

    std::optional<std::size_t> replicates;
    bool identical = false;
    auto* replicate = app.add_subcommand("replicate", "pBFDR / pBFNR over simulated replicates");
    add_common(replicate, rep_opts);
    replicate->add_option("--replicates", replicates, "number of datasets (default from config)");
    replicate->add_flag("--identical-seeds", identical, "reuse the root seed for every replicate");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*generate) {
            const auto config = build_config(gen_opts);
            const auto [data, truth] = invsel::generate_dataset(config);
            std::filesystem::create_directories(gen_opts.out);
            const auto dir = std::filesystem::path(gen_opts.out);
            invsel::write_json_file((dir / "dataset.json").string(), invsel::dataset_to_json(data));
            invsel::write_json_file((dir / "truth.json").string(), invsel::truth_to_json(truth));
            std::cout << "wrote " << (dir / "dataset.json").string() << '\n';
            return 0;
        }
        if (*run) {
            const auto config = build_config(run_opts);
            invsel::ExperimentResult result;
            if (run_opts.dataset_path) {
                const auto data = invsel::dataset_from_json(invsel::read_json_file(*run_opts.dataset_path));
                invsel::TruthAssignment unknown;
                result = invsel::run_experiment(config, data, unknown);
            } else {
                result = invsel::run_experiment(config);
            }
            invsel::write_run_directory(result, run_opts.out);
            std::cout << "best model: " << result.validation.best_model << "\n";
            for (const auto& f : result.failures)
                std::cerr << "failed: " << f.model_name << (f.site ? " site " + std::to_string(*f.site + 1) : "")
                          << ": " << f.message << '\n';
            return result.partial() ? 2 : 0;
        }
        if (*sweep) {
            std::optional<std::vector<double>> grid;
            if (sweep_config) {
                const auto j = invsel::read_json_file(*sweep_config);
                if (j.contains("beta_grid")) grid = j["beta_grid"].get<std::vector<double>>();
            }
            const auto result = invsel::sweep_run_directory(sweep_dir, grid);
            return result.partial() ? 2 : 0;
        }
        if (*replicate) {
            const auto config = build_config(rep_opts);
            const auto summary = invsel::replicate_error_rates(config, replicates.value_or(config.replicates), identical);
            std::filesystem::create_directories(rep_opts.out);
            invsel::write_json_file((std::filesystem::path(rep_opts.out) / "replicates.json").string(),
                                    invsel::replicate_summary_to_json(summary));
            return 0;
        }
    } catch (const invsel::InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
