#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "invsel/models.hpp"
#include "invsel/random.hpp"
#include "invsel/samplers.hpp"

namespace invsel {

/// Per-site log CPO, log pi(y_i1 | Y_{-i}), with a failure flag per site.
struct CpoEstimate {
    std::vector<double> log_cpo;
    std::vector<bool> failed;

    bool any_failed() const;
    /// (1/n) sum_i log_cpo[i]; throws InvalidState if any site failed.
    double mean() const;
};

/// Fraction of the largest denominator weights dropped before averaging.
inline constexpr double kCpoTrimFraction = 0.001;

/// CPO of the first replicate of every site from full-data posterior draws,
/// by the block-leave-out identity
///   E[f(y_i1|theta) / f(y_i|theta)] / E[1 / f(y_i|theta)].
/// For GP models the site's own latent value is integrated out against its
/// conditional given the other sites, so the identity runs over
/// (alpha, beta, gamma, omega, eta_{-i}).
CpoEstimate estimate_log_cpo(const ModelSpec& spec, const Dataset& data, const std::vector<ParamVector>& draws);

/// Reference estimate for one site: posterior draws with the site removed
/// entirely, then log of the average f(y_i1 | theta).
double direct_log_cpo(const ModelSpec& spec, const Dataset& data, std::size_t site, std::size_t n_steps,
                      std::size_t burn, const std::map<std::string, double>& step_scales, SeededStream& stream);

/// log of  integral exp(log_f(eta)) N(eta; mean, sd^2) d eta  for a
/// log-concave log_f, by a grid rule centred at the integrand's mode.
template <typename F>
double log_gaussian_integral(F&& log_f, double mean, double sd);

/// Model with the largest mean log CPO (smallest id on ties).
int reference_model(const std::map<int, double>& mean_log_cpo);

/// n * (mean_log_cpo[k] - mean_log_cpo[reference]). Throws InvalidArgument for an unknown id.
double log_pbf(const std::map<int, double>& mean_log_cpo, int k, std::size_t n_sites);

/// Gibbs sampler over (zeta, p): p | zeta ~ Dirichlet(alpha + e_zeta),
/// P(zeta = k | p) proportional to p_k * PBF_k. Returns the frequency of
/// each zeta value after burn-in.
std::map<int, double> gibbs_model_posterior(const std::map<int, double>& log_pbfs,
                                            const std::map<int, double>& dirichlet_alpha, std::size_t n_iter,
                                            std::size_t burn, SeededStream& stream);

/// Stationary law of the same chain in closed form: alpha_k * PBF_k, normalized.
std::map<int, double> exact_model_posterior(const std::map<int, double>& log_pbfs,
                                            const std::map<int, double>& dirichlet_alpha);

struct EvidenceReport {
    std::map<int, double> mean_log_cpo;
    std::map<int, double> log_pbf;
    int reference = 0;
    std::map<int, double> model_posterior;
    std::map<int, double> dirichlet_alpha;
};

struct GibbsSettings {
    std::size_t n_iter = 100000;
    std::size_t burn = 10000;
};

EvidenceReport build_evidence_report(const std::map<int, double>& mean_log_cpo, std::size_t n_sites,
                                     const std::map<int, double>& dirichlet_alpha, GibbsSettings gibbs,
                                     SeededStream& stream);

// --- implementation of the template -------------------------------------------

namespace detail {
double log_gaussian_integral_grid(const std::vector<double>& log_values, double step, double mean, double sd,
                                  double centre);
}

template <typename F>
double log_gaussian_integral(F&& log_f, double mean, double sd) {
    if (!(sd > 1e-9)) return log_f(mean);
    auto h = [&](double eta) {
        const double z = (eta - mean) / sd;
        return log_f(eta) - 0.5 * z * z;
    };
    // Newton on the log integrand with central differences.
    double mode = mean;
    double delta = 1e-3 * sd;
    double curvature = -1.0 / (sd * sd);
    for (int iter = 0; iter < 50; ++iter) {
        const double f0 = h(mode), fp = h(mode + delta), fm = h(mode - delta);
        const double grad = (fp - fm) / (2.0 * delta);
        const double hess = (fp - 2.0 * f0 + fm) / (delta * delta);
        if (!(hess < 0.0) || !std::isfinite(grad)) break;
        curvature = hess;
        double move = -grad / hess;
        move = std::clamp(move, -3.0 * sd, 3.0 * sd);
        mode += move;
        delta = 1e-3 * std::min(sd, 1.0 / std::sqrt(-hess));
        if (std::abs(move) < 1e-10 * (1.0 + std::abs(mode))) break;
    }
    const double tau = std::min(sd, 1.0 / std::sqrt(-curvature));
    constexpr int kHalf = 96;
    const double step = 12.0 * tau / kHalf;
    std::vector<double> logs;
    logs.reserve(2 * kHalf + 1);
    for (int k = -kHalf; k <= kHalf; ++k) logs.push_back(log_f(mode + k * step));
    return detail::log_gaussian_integral_grid(logs, step, mean, sd, mode);
}

}  // namespace invsel
