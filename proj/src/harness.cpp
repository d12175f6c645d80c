#include "invsel/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "invsel/errors.hpp"
#include "invsel/serialization.hpp"

namespace invsel {

std::string to_string(Scenario s) { return s == Scenario::SingleCovariate ? "single_covariate" : "two_covariate"; }

Scenario parse_scenario(const std::string& name) {
    if (name == "single_covariate") return Scenario::SingleCovariate;
    if (name == "two_covariate") return Scenario::TwoCovariate;
    throw InvalidArgument("unknown scenario: " + name);
}

ModelSpec true_model(Scenario scenario) {
    ModelSpec spec;
    spec.family = Family::Poisson;
    spec.link = Link::Log;
    spec.form = RegressionForm::Linear;
    spec.covariates = scenario == Scenario::SingleCovariate ? CovariateSet::X : CovariateSet::XZ;
    return spec;
}

// --- configuration ----------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (n < 2 || m < 2) throw InvalidArgument("config: n and m must be at least 2");
    if (!(alpha_default > 0.0 && alpha_bivariate > 0.0)) throw InvalidArgument("config: Dirichlet weights must be positive");
    if (!(c > 0.0)) throw InvalidArgument("config: c must be positive");
    if (!(alpha_level > 0.0 && alpha_level < 1.0)) throw InvalidArgument("config: alpha_level must lie in (0, 1)");
    if (!(tolerance >= 0.0) || !std::isfinite(shift)) throw InvalidArgument("config: bad shift or tolerance");
    if (gibbs.burn >= gibbs.n_iter) throw InvalidArgument("config: Gibbs burn-in must be shorter than the run");
    chain.validate();
    const auto roster_run = effective_roster();
    validate_roster(roster_run);
    for (const auto& spec : roster_run)
        if (scenario == Scenario::SingleCovariate && spec.uses_z())
            throw InvalidArgument("config: model " + spec.name() + " needs z, absent in this scenario");
    if (misspecified)
        for (const auto& spec : roster_run)
            if (same_model(spec, true_model(scenario)))
                throw InvalidArgument("config: misspecified run still contains the true model");
    (void)beta_sweep({{1, 0.5}}, beta_grid);
}

std::vector<ModelSpec> ExperimentConfig::effective_roster() const {
    std::vector<ModelSpec> base = roster;
    if (base.empty())
        base = scenario == Scenario::SingleCovariate ? single_covariate_roster() : two_covariate_roster();
    if (!misspecified) return base;
    std::vector<ModelSpec> out;
    for (const auto& spec : base)
        if (!same_model(spec, true_model(scenario))) out.push_back(spec);
    return out;
}

std::map<int, double> ExperimentConfig::dirichlet_alpha() const {
    std::map<int, double> out;
    for (const auto& spec : effective_roster()) out[spec.id] = spec.is_bivariate() ? alpha_bivariate : alpha_default;
    return out;
}

ExperimentConfig ExperimentConfig::preset(const std::string& name) {
    ExperimentConfig config;
    if (name == "paper") {
        config.chain = ChainConfig::paper();
    } else if (name == "desk") {
        config.chain = ChainConfig::desk();
    } else {
        throw InvalidArgument("unknown preset: " + name + " (expected paper or desk)");
    }
    return config;
}

// --- data -----------------------------------------------------------------------------

std::pair<Dataset, TruthAssignment> generate_dataset(const ExperimentConfig& config, SeededStream& stream) {
    const bool two = config.scenario == Scenario::TwoCovariate;
    TruthAssignment truth;
    const double a = stream.uniform(-1.0, 1.0);
    const double b = stream.uniform(-1.0, 1.0);
    const double g = stream.uniform(-1.0, 1.0);
    truth.alpha0 = config.truth.alpha0.value_or(a);
    truth.beta0 = config.truth.beta0.value_or(b);
    if (two) truth.gamma0 = config.truth.gamma0.value_or(g);

    std::vector<double> x(config.n);
    for (double& v : x) v = stream.uniform(-1.0, 1.0);
    std::optional<std::vector<double>> z;
    if (two) {
        z.emplace(config.n);
        for (double& v : *z) v = stream.uniform(0.0, 2.0);
    }
    std::vector<std::vector<std::int64_t>> y(config.n, std::vector<std::int64_t>(config.m));
    for (std::size_t i = 0; i < config.n; ++i) {
        const double lp = truth.alpha0 + truth.beta0 * x[i] + (two ? *truth.gamma0 * (*z)[i] : 0.0);
        for (auto& count : y[i]) count = stream.poisson(std::exp(lp));
    }
    for (const auto& spec : config.effective_roster())
        if (same_model(spec, true_model(config.scenario))) truth.true_model_id = spec.id;
    return {Dataset(std::move(x), std::move(z), std::move(y)), truth};
}

std::pair<Dataset, TruthAssignment> generate_dataset(const ExperimentConfig& config) {
    auto stream = SeededStream(config.root_seed).derive("data");
    return generate_dataset(config, stream);
}

double ModelOutcome::coverage(DiscrepancyKind requested) const {
    const auto kind = effective_kind(spec, requested);
    for (const auto& r : reports)
        if (r.kind == kind) return r.coverage;
    throw InvalidState("model " + spec.name() + " has no " + to_string(kind) + " report");
}

// --- pipeline ---------------------------------------------------------------------------

namespace {

ModelOutcome run_model(const ModelSpec& spec, const Dataset& data, const ExperimentConfig& config,
                       const SeededStream& root, std::vector<Failure>& failures) {
    ModelOutcome out;
    out.spec = spec;
    auto fail = [&](std::optional<std::size_t> site, const std::string& message) {
        failures.push_back({spec.id, spec.name(), site, message});
        out.ok = false;
        out.error = message;
    };
    const auto model_stream = root.derive("model=" + std::to_string(spec.id));
    try {
        const ParamCodec codec(spec, data);
        const InverseTarget forward(codec, data, InverseTarget::Mode::Forward, std::nullopt, config.chain.prior_width);
        auto forward_stream = model_stream.derive("stage=forward");
        const auto run = run_chain(forward, initial_params(spec, data), config.chain.n_first_stage,
                                   config.chain.first_burn, config.chain.step_scales, forward_stream);
        out.forward_acceptance = run.acceptance_rate;
        std::vector<ParamVector> draws;
        draws.reserve(run.states.size());
        for (const auto& s : run.states) draws.push_back(forward.params(s));
        out.cpo = estimate_log_cpo(spec, data, draws);
        for (std::size_t i = 0; i < out.cpo.failed.size(); ++i)
            if (out.cpo.failed[i]) fail(i, "CPO estimate is not finite");
        if (out.cpo.any_failed()) return out;

        const auto irm = irmcmc_cv_posteriors(spec, data, config.chain, model_stream.derive("stage=irmcmc"));
        out.istar = irm.istar;
        out.stage1_acceptance = irm.stage1_acceptance;
        out.stage2_acceptance = irm.stage2_acceptance;
        out.weight_ess = irm.weight_ess;
        out.clamped = irm.any_clamped;
        if (spec.is_bivariate()) {
            out.reports.push_back(
                build_discrepancy_report(spec, data, irm.sites, DiscrepancyKind::T3, config.c, config.alpha_level,
                                         config.shift, config.tolerance));
        } else {
            for (auto kind : {DiscrepancyKind::T1, DiscrepancyKind::T2})
                out.reports.push_back(build_discrepancy_report(spec, data, irm.sites, kind, config.c, config.alpha_level,
                                                               config.shift, config.tolerance));
        }
        out.ok = true;
    } catch (const SiteFailure& e) {
        fail(e.site(), e.what());
    } catch (const std::exception& e) {
        fail(std::nullopt, e.what());
    }
    return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    auto [data, truth] = generate_dataset(config);
    return run_experiment(config, data, truth);
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& data, const TruthAssignment& truth) {
    config.validate();
    if (data.n() < 2) throw InvalidArgument("run_experiment: too few sites");
    ExperimentResult result;
    result.config = config;
    result.data = data;
    result.truth = truth;
    const auto roster = config.effective_roster();
    const SeededStream root(config.root_seed);

    // Per-model work fans out over threads; each model owns its stream and slot.
    result.models.resize(roster.size());
    std::vector<std::vector<Failure>> model_failures(roster.size());
    std::size_t workers = config.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : config.threads;
    workers = std::min(workers, roster.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t k = next++; k < roster.size(); k = next++)
            result.models[k] = run_model(roster[k], data, config, root, model_failures[k]);
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (auto& f : model_failures) result.failures.insert(result.failures.end(), f.begin(), f.end());

    std::map<int, double> mean_log_cpo, alpha;
    const auto all_alpha = config.dirichlet_alpha();
    for (const auto& outcome : result.models)
        if (outcome.ok) {
            mean_log_cpo[outcome.spec.id] = outcome.cpo.mean();
            alpha[outcome.spec.id] = all_alpha.at(outcome.spec.id);
        }
    if (mean_log_cpo.empty()) throw InvalidState("run_experiment: every model failed");
    auto gibbs_stream = root.derive("evidence").derive("gibbs");
    result.evidence = build_evidence_report(mean_log_cpo, data.n(), alpha, config.gibbs, gibbs_stream);
    assemble_decisions(result);
    return result;
}

void assemble_decisions(ExperimentResult& result) {
    result.v_t1.clear();
    result.v_t2.clear();
    for (const auto& outcome : result.models) {
        const int id = outcome.spec.id;
        const auto it = result.evidence.model_posterior.find(id);
        if (!outcome.ok || it == result.evidence.model_posterior.end()) {
            result.v_t1[id] = 1.0;
            result.v_t2[id] = 1.0;
            continue;
        }
        result.v_t1[id] = compute_v(it->second, outcome.coverage(DiscrepancyKind::T1));
        result.v_t2[id] = compute_v(it->second, outcome.coverage(DiscrepancyKind::T2));
    }
    result.table_t1 = beta_sweep(result.v_t1, result.config.beta_grid);
    result.table_t2 = beta_sweep(result.v_t2, result.config.beta_grid);

    ValidationSummary& val = result.validation;
    val = {};
    val.true_model_id = result.truth.true_model_id;
    double best = -1.0;
    for (const auto& [id, p] : result.evidence.model_posterior)
        if (p > best) {
            best = p;
            val.best_model = id;
        }
    if (!val.true_model_id) return;
    const int truth_id = *val.true_model_id;
    auto realized = [&](const DecisionTable& table, std::vector<double>& fdr, std::vector<double>& fnr, bool& exact) {
        for (std::size_t g = 0; g < table.beta_grid.size(); ++g) {
            double false_disc = 0.0, false_non = 0.0, rejected = 0.0, kept = 0.0;
            for (std::size_t k = 0; k < table.model_ids.size(); ++k) {
                const bool is_true = table.model_ids[k] == truth_id;
                if (table.decisions[g][k]) {
                    rejected += 1.0;
                    false_disc += is_true;
                } else {
                    kept += 1.0;
                    false_non += !is_true;
                }
            }
            fdr.push_back(false_disc / std::max(rejected, 1.0));
            fnr.push_back(false_non / std::max(kept, 1.0));
            if (table.accepted(g) == std::vector<int>{truth_id}) exact = true;
        }
    };
    realized(result.table_t1, val.realized_fdr_t1, val.realized_fnr_t1, val.exact_selection_t1);
    realized(result.table_t2, val.realized_fdr_t2, val.realized_fnr_t2, val.exact_selection_t2);
}

// --- replicates -----------------------------------------------------------------------------

ReplicateSummary replicate_error_rates(const ExperimentConfig& config, std::size_t replicates, bool identical_seeds) {
    if (replicates < 2) throw InvalidArgument("replicate_error_rates: at least two replicates required");
    ReplicateSummary out;
    out.beta_grid = config.beta_grid;
    out.replicates = replicates;
    const std::size_t G = config.beta_grid.size();
    std::vector<std::vector<double>> series(4, std::vector<double>(G * replicates));
    for (std::size_t r = 0; r < replicates; ++r) {
        ExperimentConfig cfg = config;
        if (!identical_seeds) cfg.root_seed = derive_seed(config.root_seed, "replicate=" + std::to_string(r));
        const auto res = run_experiment(cfg);
        for (std::size_t g = 0; g < G; ++g) {
            series[0][g * replicates + r] = res.table_t1.cfdr[g];
            series[1][g * replicates + r] = res.table_t1.cfnr[g];
            series[2][g * replicates + r] = res.table_t2.cfdr[g];
            series[3][g * replicates + r] = res.table_t2.cfnr[g];
        }
    }
    std::vector<double>* means[4] = {&out.pbfdr_t1, &out.pbfnr_t1, &out.pbfdr_t2, &out.pbfnr_t2};
    std::vector<double>* ses[4] = {&out.se_fdr_t1, &out.se_fnr_t1, &out.se_fdr_t2, &out.se_fnr_t2};
    const auto S = static_cast<double>(replicates);
    for (int s = 0; s < 4; ++s)
        for (std::size_t g = 0; g < G; ++g) {
            const double* v = &series[s][g * replicates];
            double mean = 0.0;
            for (std::size_t r = 0; r < replicates; ++r) mean += v[r];
            mean /= S;
            double ss = 0.0;
            for (std::size_t r = 0; r < replicates; ++r) ss += (v[r] - mean) * (v[r] - mean);
            means[s]->push_back(mean);
            ses[s]->push_back(std::sqrt(ss / (S - 1.0) / S));
        }
    return out;
}

// --- run directories --------------------------------------------------------------------------

namespace {

std::string discrepancy_file(const ModelSpec& spec) { return "discrepancy_" + spec.name() + ".json"; }

Json model_file_json(const ModelOutcome& m) {
    Json j;
    j["model_id"] = m.spec.id;
    j["model_name"] = m.spec.name();
    j["ok"] = m.ok;
    if (!m.ok) j["error"] = m.error;
    j["log_cpo"] = m.cpo.log_cpo;
    j["forward_acceptance"] = m.forward_acceptance;
    j["istar"] = m.istar + 1;
    j["stage1_acceptance"] = m.stage1_acceptance;
    j["stage2_acceptance"] = m.stage2_acceptance;
    j["weight_ess"] = m.weight_ess;
    j["prior_clamped"] = m.clamped;
    Json reports = Json::array();
    for (const auto& r : m.reports) reports.push_back(discrepancy_to_json(r));
    j["reports"] = reports;
    return j;
}

}  // namespace

void write_run_directory(const ExperimentResult& result, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path root(dir);
    write_json_file((root / "config.json").string(), experiment_config_to_json(result.config));
    if (result.data) write_json_file((root / "dataset.json").string(), dataset_to_json(*result.data));
    write_json_file((root / "evidence.json").string(), evidence_to_json(result.evidence));
    for (const auto& m : result.models) write_json_file((root / discrepancy_file(m.spec)).string(), model_file_json(m));
    {
        std::ofstream csv(root / "decisions.csv");
        if (!csv) throw InvalidArgument("cannot write " + (root / "decisions.csv").string());
        write_decisions_csv(csv, result.table_t1, result.table_t2);
    }
    write_json_file((root / "summary.json").string(), summary_to_json(result));
    const fs::path manifest = root / "failures.json";
    if (result.partial()) {
        Json list = Json::array();
        for (const auto& f : result.failures) {
            Json e;
            e["model_id"] = f.model_id;
            e["model_name"] = f.model_name;
            if (f.site) e["site"] = *f.site + 1;
            e["message"] = f.message;
            list.push_back(e);
        }
        write_json_file(manifest.string(), list);
    } else if (fs::exists(manifest)) {
        fs::remove(manifest);
    }
}

ExperimentResult sweep_run_directory(const std::string& dir, const std::optional<std::vector<double>>& grid) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    ExperimentResult result;
    result.config = experiment_config_from_json(read_json_file((root / "config.json").string()));
    if (grid) result.config.beta_grid = *grid;
    if (fs::exists(root / "dataset.json")) result.data = dataset_from_json(read_json_file((root / "dataset.json").string()));
    result.evidence = evidence_from_json(read_json_file((root / "evidence.json").string()));
    const Json summary = read_json_file((root / "summary.json").string());
    if (summary.contains("truth")) {
        const Json& t = summary["truth"];
        result.truth.alpha0 = t.value("alpha0", 0.0);
        result.truth.beta0 = t.value("beta0", 0.0);
        if (t.contains("gamma0")) result.truth.gamma0 = t["gamma0"].get<double>();
        if (t.contains("true_model_id")) result.truth.true_model_id = t["true_model_id"].get<int>();
    }
    for (const auto& spec : result.config.effective_roster()) {
        ModelOutcome m;
        m.spec = spec;
        const fs::path file = root / discrepancy_file(spec);
        if (fs::exists(file)) {
            const Json j = read_json_file(file.string());
            m.ok = j.value("ok", false);
            m.error = j.value("error", std::string());
            for (const auto& r : j.at("reports")) m.reports.push_back(discrepancy_from_json(r));
            m.cpo.log_cpo = j.value("log_cpo", std::vector<double>{});
            m.cpo.failed.assign(m.cpo.log_cpo.size(), false);
        }
        result.models.push_back(std::move(m));
    }
    if (fs::exists(root / "failures.json"))
        for (const auto& e : read_json_file((root / "failures.json").string())) {
            Failure f;
            f.model_id = e.value("model_id", 0);
            f.model_name = e.value("model_name", std::string());
            if (e.contains("site")) f.site = e["site"].get<std::size_t>() - 1;
            f.message = e.value("message", std::string());
            result.failures.push_back(f);
        }
    assemble_decisions(result);
    {
        std::ofstream csv(root / "decisions.csv");
        write_decisions_csv(csv, result.table_t1, result.table_t2);
    }
    write_json_file((root / "summary.json").string(), summary_to_json(result));
    return result;
}

}  // namespace invsel
