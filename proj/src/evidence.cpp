#include "invsel/evidence.hpp"

#include <numbers>
#include <numeric>

#include "invsel/errors.hpp"

namespace invsel {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_mean_exp(std::span<const double> values) {
    return log_sum_exp(values) - std::log(static_cast<double>(values.size()));
}

// Predictive pieces of one site for one draw: log f(y_i | .) over all
// replicates and log f(y_i1 | .) for the first one.
struct SiteTerms {
    double log_block;
    double log_first;
};

SiteTerms site_terms(const ModelSpec& spec, const Dataset& data, const GpStructure* gp, const ParamVector& theta,
                     std::size_t site) {
    const std::int64_t first = data.y(site, 0);
    if (!gp) {
        const double lp = site_predictor(spec, theta, data, site);
        return {site_log_likelihood(spec, data, site, lp), observation_log_pmf(spec, first, lp)};
    }
    auto line = [&](std::size_t j) {
        return mean_line(spec, theta, data.x()[j], spec.uses_z() ? data.z()[j] : 0.0);
    };
    const Eigen::VectorXd& w = gp->conditional_weights(site);
    double cond_mean = line(site);
    for (std::size_t j = 0; j < data.n(); ++j)
        if (j != site) cond_mean += w(static_cast<Eigen::Index>(j)) * (theta.eta[j] - line(j));
    const double cond_sd = std::sqrt(std::exp(*theta.omega) * gp->conditional_variance(site));
    const double block = log_gaussian_integral(
        [&](double eta) { return site_log_likelihood(spec, data, site, eta); }, cond_mean, cond_sd);
    const double single = log_gaussian_integral(
        [&](double eta) { return observation_log_pmf(spec, first, eta); }, cond_mean, cond_sd);
    return {block, single};
}

}  // namespace

namespace detail {

double log_gaussian_integral_grid(const std::vector<double>& log_values, double step, double mean, double sd,
                                  double centre) {
    const auto half = static_cast<int>(log_values.size() / 2);
    std::vector<double> terms(log_values.size());
    for (std::size_t k = 0; k < log_values.size(); ++k) {
        const double eta = centre + (static_cast<int>(k) - half) * step;
        const double z = (eta - mean) / sd;
        terms[k] = log_values[k] - 0.5 * z * z;
    }
    return log_sum_exp(terms) + std::log(step) - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

}  // namespace detail

bool CpoEstimate::any_failed() const { return std::find(failed.begin(), failed.end(), true) != failed.end(); }

double CpoEstimate::mean() const {
    if (log_cpo.empty()) throw InvalidState("CpoEstimate: no sites");
    if (any_failed()) throw InvalidState("CpoEstimate: some site estimates failed");
    return std::accumulate(log_cpo.begin(), log_cpo.end(), 0.0) / static_cast<double>(log_cpo.size());
}

CpoEstimate estimate_log_cpo(const ModelSpec& spec, const Dataset& data, const std::vector<ParamVector>& draws) {
    if (draws.empty()) throw InvalidArgument("estimate_log_cpo: no posterior draws");
    std::optional<GpStructure> gp;
    if (spec.is_gp()) gp.emplace(spec, data);
    const std::size_t n = data.n();
    const std::size_t count = draws.size();
    const auto trim = static_cast<std::size_t>(std::floor(kCpoTrimFraction * static_cast<double>(count)));

    CpoEstimate out;
    out.log_cpo.assign(n, kNegInf);
    out.failed.assign(n, false);
    std::vector<double> inv_block(count), ratio(count);
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < count; ++d) {
            const auto terms = site_terms(spec, data, gp ? &*gp : nullptr, draws[d], i);
            inv_block[d] = -terms.log_block;
            ratio[d] = terms.log_first - terms.log_block;
        }
        // drop the heaviest denominator weights
        std::iota(order.begin(), order.end(), 0);
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count - trim), order.end(),
                         [&](std::size_t a, std::size_t b) {
                             return inv_block[a] < inv_block[b] || (inv_block[a] == inv_block[b] && a < b);
                         });
        std::vector<double> kept_inv, kept_ratio;
        kept_inv.reserve(count - trim);
        kept_ratio.reserve(count - trim);
        for (std::size_t k = 0; k < count - trim; ++k) {
            kept_inv.push_back(inv_block[order[k]]);
            kept_ratio.push_back(ratio[order[k]]);
        }
        const double value = log_mean_exp(kept_ratio) - log_mean_exp(kept_inv);
        if (std::isfinite(value)) {
            out.log_cpo[i] = value;
        } else {
            out.failed[i] = true;
        }
    }
    return out;
}

double direct_log_cpo(const ModelSpec& spec, const Dataset& data, std::size_t site, std::size_t n_steps,
                      std::size_t burn, const std::map<std::string, double>& step_scales, SeededStream& stream) {
    const auto draws = forward_posterior_draws(spec, data, n_steps, burn, step_scales, stream, site);
    std::vector<double> logs;
    logs.reserve(draws.size());
    for (const auto& theta : draws)
        logs.push_back(observation_log_pmf(spec, data.y(site, 0), site_predictor(spec, theta, data, site)));
    return log_mean_exp(logs);
}

int reference_model(const std::map<int, double>& mean_log_cpo) {
    if (mean_log_cpo.empty()) throw InvalidArgument("reference_model: no models");
    auto best = mean_log_cpo.begin();
    for (auto it = mean_log_cpo.begin(); it != mean_log_cpo.end(); ++it)
        if (it->second > best->second) best = it;
    return best->first;
}

double log_pbf(const std::map<int, double>& mean_log_cpo, int k, std::size_t n_sites) {
    const auto it = mean_log_cpo.find(k);
    if (it == mean_log_cpo.end()) throw InvalidArgument("log_pbf: unknown model id " + std::to_string(k));
    const double top = mean_log_cpo.at(reference_model(mean_log_cpo));
    return static_cast<double>(n_sites) * (it->second - top);
}

namespace {

void check_gibbs_inputs(const std::map<int, double>& log_pbfs, const std::map<int, double>& alpha) {
    if (log_pbfs.size() < 1) throw InvalidArgument("gibbs: no models");
    if (log_pbfs.size() != alpha.size()) throw InvalidArgument("gibbs: alpha and log PBF maps differ");
    for (const auto& [id, value] : log_pbfs) {
        const auto it = alpha.find(id);
        if (it == alpha.end()) throw InvalidArgument("gibbs: no alpha for model " + std::to_string(id));
        if (!(it->second > 0.0) || !std::isfinite(it->second))
            throw InvalidArgument("gibbs: alpha must be positive");
        if (!std::isfinite(value)) throw InvalidArgument("gibbs: log PBF must be finite");
    }
}

}  // namespace

std::map<int, double> gibbs_model_posterior(const std::map<int, double>& log_pbfs,
                                            const std::map<int, double>& dirichlet_alpha, std::size_t n_iter,
                                            std::size_t burn, SeededStream& stream) {
    check_gibbs_inputs(log_pbfs, dirichlet_alpha);
    if (burn >= n_iter) throw InvalidArgument("gibbs: burn-in must be shorter than the run");
    std::vector<int> ids;
    std::vector<double> pbf, alpha;
    for (const auto& [id, value] : log_pbfs) {
        ids.push_back(id);
        pbf.push_back(value);
        alpha.push_back(dirichlet_alpha.at(id));
    }
    const std::size_t K = ids.size();
    std::size_t zeta = static_cast<std::size_t>(std::max_element(pbf.begin(), pbf.end()) - pbf.begin());
    std::vector<std::size_t> counts(K, 0);
    std::vector<double> log_p(K), log_w(K);
    for (std::size_t t = 0; t < n_iter; ++t) {
        for (std::size_t k = 0; k < K; ++k) log_p[k] = stream.log_gamma_variate(alpha[k] + (k == zeta ? 1.0 : 0.0));
        const double norm = log_sum_exp(log_p);
        for (std::size_t k = 0; k < K; ++k) log_w[k] = log_p[k] - norm + pbf[k];
        zeta = stream.categorical_from_log(log_w);
        if (t >= burn) ++counts[zeta];
    }
    std::map<int, double> out;
    const auto kept = static_cast<double>(n_iter - burn);
    for (std::size_t k = 0; k < K; ++k) out[ids[k]] = static_cast<double>(counts[k]) / kept;
    return out;
}

std::map<int, double> exact_model_posterior(const std::map<int, double>& log_pbfs,
                                            const std::map<int, double>& dirichlet_alpha) {
    check_gibbs_inputs(log_pbfs, dirichlet_alpha);
    std::vector<double> logs;
    for (const auto& [id, value] : log_pbfs) logs.push_back(std::log(dirichlet_alpha.at(id)) + value);
    const double norm = log_sum_exp(logs);
    std::map<int, double> out;
    std::size_t k = 0;
    for (const auto& [id, value] : log_pbfs) out[id] = std::exp(logs[k++] - norm);
    return out;
}

EvidenceReport build_evidence_report(const std::map<int, double>& mean_log_cpo, std::size_t n_sites,
                                     const std::map<int, double>& dirichlet_alpha, GibbsSettings gibbs,
                                     SeededStream& stream) {
    EvidenceReport report;
    report.mean_log_cpo = mean_log_cpo;
    report.reference = reference_model(mean_log_cpo);
    for (const auto& [id, value] : mean_log_cpo) report.log_pbf[id] = log_pbf(mean_log_cpo, id, n_sites);
    report.dirichlet_alpha = dirichlet_alpha;
    report.model_posterior = gibbs_model_posterior(report.log_pbf, dirichlet_alpha, gibbs.n_iter, gibbs.burn, stream);
    return report;
}

}  // namespace invsel
