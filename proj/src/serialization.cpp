#include "invsel/serialization.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

#include "invsel/errors.hpp"

namespace invsel {

Json dataset_to_json(const Dataset& data) {
    Json j;
    j["n"] = data.n();
    j["m"] = data.m();
    j["x"] = data.x();
    if (data.has_z()) j["z"] = data.z();
    j["y"] = data.y();
    return j;
}

Dataset dataset_from_json(const Json& j) {
    try {
        auto x = j.at("x").get<std::vector<double>>();
        std::optional<std::vector<double>> z;
        if (j.contains("z") && !j["z"].is_null()) z = j["z"].get<std::vector<double>>();
        auto y = j.at("y").get<std::vector<std::vector<std::int64_t>>>();
        if (j.contains("n") && j["n"].get<std::size_t>() != x.size())
            throw InvalidArgument("dataset: n does not match the length of x");
        if (j.contains("m") && !y.empty() && j["m"].get<std::size_t>() != y.front().size())
            throw InvalidArgument("dataset: m does not match the rows of y");
        return Dataset(std::move(x), std::move(z), std::move(y));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("dataset: ") + e.what());
    }
}

Json chain_config_to_json(const ChainConfig& c) {
    Json j;
    j["n_first_stage"] = c.n_first_stage;
    j["first_burn"] = c.first_burn;
    j["n_resample"] = c.n_resample;
    j["n_second_stage_per_theta"] = c.n_second_stage_per_theta;
    j["second_stage_initial_burn"] = c.second_stage_initial_burn;
    j["step_scales"] = c.step_scales;
    j["quadrature_points"] = c.quadrature_points;
    j["c1"] = c.prior_width.c1;
    j["c2"] = c.prior_width.c2;
    return j;
}

ChainConfig chain_config_from_json(const Json& j, ChainConfig c) {
    c.n_first_stage = j.value("n_first_stage", c.n_first_stage);
    c.first_burn = j.value("first_burn", c.first_burn);
    c.n_resample = j.value("n_resample", c.n_resample);
    c.n_second_stage_per_theta = j.value("n_second_stage_per_theta", c.n_second_stage_per_theta);
    c.second_stage_initial_burn = j.value("second_stage_initial_burn", c.second_stage_initial_burn);
    if (j.contains("step_scales")) c.step_scales = j["step_scales"].get<std::map<std::string, double>>();
    c.quadrature_points = j.value("quadrature_points", c.quadrature_points);
    c.prior_width.c1 = j.value("c1", c.prior_width.c1);
    c.prior_width.c2 = j.value("c2", c.prior_width.c2);
    return c;
}

Json experiment_config_to_json(const ExperimentConfig& c) {
    Json j;
    j["scenario"] = to_string(c.scenario);
    j["n"] = c.n;
    j["m"] = c.m;
    Json roster = Json::array();
    for (const auto& spec : c.roster) roster.push_back({{"id", spec.id}, {"name", spec.name()}});
    j["roster"] = roster;
    j["misspecified"] = c.misspecified;
    j["alpha_default"] = c.alpha_default;
    j["alpha_bivariate"] = c.alpha_bivariate;
    j["c"] = c.c;
    j["alpha_level"] = c.alpha_level;
    j["shift"] = c.shift;
    j["tolerance"] = c.tolerance;
    j["beta_grid"] = c.beta_grid;
    j["chain"] = chain_config_to_json(c.chain);
    j["gibbs"] = {{"n_iter", c.gibbs.n_iter}, {"burn", c.gibbs.burn}};
    j["root_seed"] = c.root_seed;
    j["replicates"] = c.replicates;
    Json truth = Json::object();
    if (c.truth.alpha0) truth["alpha0"] = *c.truth.alpha0;
    if (c.truth.beta0) truth["beta0"] = *c.truth.beta0;
    if (c.truth.gamma0) truth["gamma0"] = *c.truth.gamma0;
    j["truth"] = truth;
    return j;
}

ExperimentConfig experiment_config_from_json(const Json& j, ExperimentConfig c) {
    try {
        if (j.contains("scenario")) c.scenario = parse_scenario(j["scenario"].get<std::string>());
        c.n = j.value("n", c.n);
        c.m = j.value("m", c.m);
        if (j.contains("roster")) {
            c.roster.clear();
            int position = 0;
            for (const auto& entry : j["roster"]) {
                ++position;
                if (entry.is_string()) {
                    c.roster.push_back(parse_model_name(entry.get<std::string>(), position));
                } else {
                    c.roster.push_back(parse_model_name(entry.at("name").get<std::string>(),
                                                        entry.value("id", position)));
                }
            }
        }
        c.misspecified = j.value("misspecified", c.misspecified);
        c.alpha_default = j.value("alpha_default", c.alpha_default);
        c.alpha_bivariate = j.value("alpha_bivariate", c.alpha_bivariate);
        c.c = j.value("c", c.c);
        c.alpha_level = j.value("alpha_level", c.alpha_level);
        c.shift = j.value("shift", c.shift);
        c.tolerance = j.value("tolerance", c.tolerance);
        if (j.contains("beta_grid")) c.beta_grid = j["beta_grid"].get<std::vector<double>>();
        if (j.contains("chain")) c.chain = chain_config_from_json(j["chain"], c.chain);
        if (j.contains("gibbs")) {
            c.gibbs.n_iter = j["gibbs"].value("n_iter", c.gibbs.n_iter);
            c.gibbs.burn = j["gibbs"].value("burn", c.gibbs.burn);
        }
        c.root_seed = j.value("root_seed", c.root_seed);
        c.replicates = j.value("replicates", c.replicates);
        c.threads = j.value("threads", c.threads);
        if (j.contains("truth")) {
            const Json& t = j["truth"];
            if (t.contains("alpha0")) c.truth.alpha0 = t["alpha0"].get<double>();
            if (t.contains("beta0")) c.truth.beta0 = t["beta0"].get<double>();
            if (t.contains("gamma0")) c.truth.gamma0 = t["gamma0"].get<double>();
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
}

Json truth_to_json(const TruthAssignment& t) {
    Json j;
    j["alpha0"] = t.alpha0;
    j["beta0"] = t.beta0;
    if (t.gamma0) j["gamma0"] = *t.gamma0;
    if (t.true_model_id) j["true_model_id"] = *t.true_model_id;
    return j;
}

namespace {

template <typename T>
Json id_map(const std::map<int, T>& values) {
    Json j = Json::object();
    for (const auto& [id, v] : values) j[std::to_string(id)] = v;
    return j;
}

std::map<int, double> id_map_from(const Json& j) {
    std::map<int, double> out;
    for (const auto& [key, value] : j.items()) out[std::stoi(key)] = value.get<double>();
    return out;
}

}  // namespace

Json evidence_to_json(const EvidenceReport& e) {
    Json j;
    j["reference"] = e.reference;
    j["mean_log_cpo"] = id_map(e.mean_log_cpo);
    j["log_pbf"] = id_map(e.log_pbf);
    j["model_posterior"] = id_map(e.model_posterior);
    j["dirichlet_alpha"] = id_map(e.dirichlet_alpha);
    return j;
}

EvidenceReport evidence_from_json(const Json& j) {
    EvidenceReport e;
    e.reference = j.at("reference").get<int>();
    e.mean_log_cpo = id_map_from(j.at("mean_log_cpo"));
    e.log_pbf = id_map_from(j.at("log_pbf"));
    e.model_posterior = id_map_from(j.at("model_posterior"));
    e.dirichlet_alpha = id_map_from(j.at("dirichlet_alpha"));
    return e;
}

Json discrepancy_to_json(const DiscrepancyReport& r, bool include_draws) {
    Json j;
    j["model_id"] = r.model_id;
    j["model_name"] = r.model_name;
    j["kind"] = to_string(r.kind);
    j["c"] = r.c;
    j["observed"] = r.observed;
    j["lower"] = r.lower;
    j["upper"] = r.upper;
    j["alpha_level"] = r.alpha_level;
    j["shift"] = r.shift;
    j["tolerance"] = r.tolerance;
    j["coverage"] = r.coverage;
    j["n_draws"] = r.draws.size();
    if (include_draws) j["draws"] = r.draws;
    return j;
}

DiscrepancyReport discrepancy_from_json(const Json& j) {
    DiscrepancyReport r;
    r.model_id = j.at("model_id").get<int>();
    r.model_name = j.value("model_name", std::string());
    r.kind = parse_discrepancy_kind(j.at("kind").get<std::string>());
    r.c = j.at("c").get<double>();
    r.observed = j.at("observed").get<double>();
    r.lower = j.at("lower").get<double>();
    r.upper = j.at("upper").get<double>();
    r.alpha_level = j.at("alpha_level").get<double>();
    r.shift = j.value("shift", 0.0);
    r.tolerance = j.value("tolerance", 0.0);
    r.coverage = j.at("coverage").get<double>();
    if (j.contains("draws")) r.draws = j["draws"].get<std::vector<double>>();
    return r;
}

void write_decisions_csv(std::ostream& out, const DecisionTable& t1, const DecisionTable& t2) {
    if (t1.beta_grid != t2.beta_grid) throw InvalidArgument("decisions csv: tables use different beta grids");
    out << "beta,cfdr_t1,cfnr_t1,cfdr_t2,cfnr_t2\n";
    char line[160];
    for (std::size_t g = 0; g < t1.beta_grid.size(); ++g) {
        std::snprintf(line, sizeof line, "%.2f,%.10g,%.10g,%.10g,%.10g\n", t1.beta_grid[g], t1.cfdr[g], t1.cfnr[g],
                      t2.cfdr[g], t2.cfnr[g]);
        out << line;
    }
}

namespace {

Json table_json(const DecisionTable& t) {
    Json j;
    Json steps = Json::array();
    auto step = [&](std::size_t g) {
        steps.push_back({{"beta", t.beta_grid[g]}, {"accepted", t.accepted(g)}, {"cfdr", t.cfdr[g]}, {"cfnr", t.cfnr[g]}});
    };
    step(0);
    for (std::size_t g : t.change_points) step(g);
    j["steps"] = steps;
    return j;
}

}  // namespace

Json summary_to_json(const ExperimentResult& r) {
    Json j;
    j["scenario"] = to_string(r.config.scenario);
    j["n"] = r.config.n;
    j["m"] = r.config.m;
    j["root_seed"] = r.config.root_seed;
    j["misspecified"] = r.config.misspecified;
    j["truth"] = truth_to_json(r.truth);
    j["reference"] = r.evidence.reference;
    j["best_model"] = r.validation.best_model;
    Json models = Json::array();
    for (const auto& m : r.models) {
        Json e;
        e["id"] = m.spec.id;
        e["name"] = m.spec.name();
        e["ok"] = m.ok;
        const auto post = r.evidence.model_posterior.find(m.spec.id);
        if (post != r.evidence.model_posterior.end()) {
            e["posterior"] = post->second;
            e["log_pbf"] = r.evidence.log_pbf.at(m.spec.id);
            e["mean_log_cpo"] = r.evidence.mean_log_cpo.at(m.spec.id);
        }
        if (m.ok) {
            e["coverage_t1"] = m.coverage(DiscrepancyKind::T1);
            e["coverage_t2"] = m.coverage(DiscrepancyKind::T2);
        }
        e["v_t1"] = r.v_t1.at(m.spec.id);
        e["v_t2"] = r.v_t2.at(m.spec.id);
        models.push_back(e);
    }
    j["models"] = models;
    j["decisions_t1"] = table_json(r.table_t1);
    j["decisions_t2"] = table_json(r.table_t2);
    Json val;
    if (r.validation.true_model_id) {
        val["true_model_id"] = *r.validation.true_model_id;
        val["exact_selection_t1"] = r.validation.exact_selection_t1;
        val["exact_selection_t2"] = r.validation.exact_selection_t2;
        val["realized_fdr_t1"] = r.validation.realized_fdr_t1;
        val["realized_fnr_t1"] = r.validation.realized_fnr_t1;
        val["realized_fdr_t2"] = r.validation.realized_fdr_t2;
        val["realized_fnr_t2"] = r.validation.realized_fnr_t2;
    }
    j["validation"] = val;
    j["failures"] = r.failures.size();
    return j;
}

Json replicate_summary_to_json(const ReplicateSummary& s) {
    Json j;
    j["replicates"] = s.replicates;
    j["beta"] = s.beta_grid;
    j["pbfdr_t1"] = s.pbfdr_t1;
    j["pbfnr_t1"] = s.pbfnr_t1;
    j["pbfdr_t2"] = s.pbfdr_t2;
    j["pbfnr_t2"] = s.pbfnr_t2;
    j["se_fdr_t1"] = s.se_fdr_t1;
    j["se_fnr_t1"] = s.se_fnr_t1;
    j["se_fdr_t2"] = s.se_fdr_t2;
    j["se_fnr_t2"] = s.se_fnr_t2;
    return j;
}

Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot read " + path);
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(path + ": " + e.what());
    }
}

void write_json_file(const std::string& path, const Json& j) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write " + path);
    out << j.dump(2) << '\n';
}

}  // namespace invsel
