#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "invsel/models.hpp"
#include "invsel/random.hpp"

namespace invsel {

/// Budgets and tuning for the importance-resampling pipeline.
struct ChainConfig {
    std::size_t n_first_stage = 30000;
    std::size_t first_burn = 10000;
    std::size_t n_resample = 1000;               // M
    std::size_t n_second_stage_per_theta = 100;  // R
    std::size_t second_stage_initial_burn = 10000;
    /// Initial TMCMC scales by parameter label ("alpha", "beta", "gamma",
    /// "omega", "eta", "x", "z"). Missing labels start at 0.1. Scales are
    /// tuned during burn-in and frozen afterwards.
    std::map<std::string, double> step_scales;
    std::size_t quadrature_points = 32;
    PriorWidth prior_width;

    /// Throws InvalidArgument unless first_burn < n_first_stage,
    /// n_resample <= n_first_stage - first_burn and all scales are positive.
    void validate() const;

    static ChainConfig paper();
    /// Half of every paper budget.
    static ChainConfig desk();
};

/// Draws of the held-out covariate(s) of one site from its leave-one-out
/// inverse cross-validation posterior.
struct CvPosterior {
    std::size_t site = 0;
    std::vector<Covariate> covariates;
    /// draws[c][j]: j-th draw of covariates[c].
    std::vector<std::vector<double>> draws;
    Eigen::VectorXd mean;
    Eigen::MatrixXd variance;

    std::size_t dimension() const { return draws.size(); }
    std::size_t size() const { return draws.empty() ? 0 : draws.front().size(); }
    /// Recomputes mean and variance from the draws.
    void summarize();
};

using LogDensityFn = std::function<double(std::span<const double>)>;

struct TmcmcMove {
    std::vector<double> state;
    double log_density = 0.0;
    bool accepted = false;
};

/// One additive TMCMC move: a single epsilon = |N(0,1)| shared by all
/// coordinates, an independent random sign per coordinate, proposal
/// x_j + sign_j * scale_j * epsilon, Metropolis acceptance (unit Jacobian).
/// Throws InvalidState when the target is -inf at `current`.
TmcmcMove tmcmc_step(SeededStream& stream, std::span<const double> current, const LogDensityFn& log_target,
                     std::span<const double> scales);
/// Same move with the current log density supplied by the caller.
TmcmcMove tmcmc_step(SeededStream& stream, std::span<const double> current, double current_log_density,
                     const LogDensityFn& log_target, std::span<const double> scales);

/// A TMCMC chain with per-coordinate scales tuned during burn-in only.
/// Once burn-in has seen enough states, moves run along the axes of the
/// Cholesky factor A of the burn-in covariance: x + epsilon * A (b * scales)
/// with the same shared epsilon and random signs b, which keeps the move
/// additive and symmetric.
class TmcmcChain {
public:
    TmcmcChain(LogDensityFn target, std::vector<double> initial, std::vector<double> scales);

    /// Burn-in with scale and axis adaptation towards 30% acceptance; both
    /// are frozen when it returns.
    void adapt(SeededStream& stream, std::size_t steps);
    bool step(SeededStream& stream);

    /// Swap the target keeping the state. Returns false (and leaves the
    /// chain unusable until reset) if the state has zero density under it.
    bool retarget(LogDensityFn target);
    void reset(std::vector<double> state);
    /// Per-coordinate scales in the original coordinates; drops adapted axes.
    void set_scales(std::vector<double> scales);

    const std::vector<double>& state() const { return state_; }
    double log_density() const { return log_density_; }
    const std::vector<double>& scales() const { return scales_; }
    /// Adapted move axes; empty when moves run along the coordinates.
    const Eigen::MatrixXd& axes() const { return axes_; }
    double acceptance_rate() const;

private:
    LogDensityFn target_;
    std::vector<double> state_;
    double log_density_;
    std::vector<double> scales_;
    Eigen::MatrixXd axes_;
    std::size_t steps_ = 0;
    std::size_t accepted_ = 0;
};

/// Flat coordinates used by the samplers. Linear models use
/// (alpha, beta?, gamma?). GP models add omega and whitened latents u with
/// eta = mean line + exp(omega / 2) L u, where L L^T is the unit GP
/// correlation; u then has a standard normal prior.
class ParamCodec {
public:
    ParamCodec(const ModelSpec& spec, const Dataset& data);

    std::size_t dimension() const { return labels_.size(); }
    const std::vector<std::string>& labels() const { return labels_; }
    ParamVector decode(std::span<const double> coords) const;
    std::vector<double> encode(const ParamVector& theta) const;
    /// Log prior density of the coordinates up to a constant.
    double log_prior(std::span<const double> coords) const;
    const GpStructure* gp() const { return gp_.get(); }
    const ModelSpec& spec() const { return spec_; }

private:
    ModelSpec spec_;
    const Dataset* data_;
    std::vector<std::string> labels_;
    std::shared_ptr<const GpStructure> gp_;
    Eigen::MatrixXd design_;  // n x (1 + #covariates)
};

/// Joint target over the parameter coordinates and, when a site is held
/// out, its free held-out covariate coordinate(s).
class InverseTarget {
public:
    enum class Mode {
        Forward,          // every site with its observed covariates
        ExcludeSite,      // site dropped entirely (responses too)
        HoldOutCovariate  // site covariate(s) unknown, responses retained
    };

    InverseTarget(const ParamCodec& codec, const Dataset& data, Mode mode, std::optional<std::size_t> site,
                  PriorWidth width);

    std::size_t dimension() const { return codec_->dimension() + free_heldout_; }
    double operator()(std::span<const double> coords) const;
    ParamVector params(std::span<const double> coords) const;
    /// Values of the held-out covariates, including pinned point-mass ones.
    std::vector<double> held_out_values(std::span<const double> coords) const;
    /// Starting state from parameters; held-out covariates at their interval midpoint.
    std::vector<double> initial_state(const ParamVector& theta) const;
    std::vector<std::string> labels() const;

private:
    const ParamCodec* codec_;
    const Dataset* data_;
    Mode mode_;
    std::optional<std::size_t> site_;
    PriorWidth width_;
    std::size_t free_heldout_ = 0;
    bool pinned_ = false;
};

/// Site whose ybar is closest to the median ybar; ties go to the smallest index.
std::size_t select_istar(const Dataset& data);

/// log of  integral f(y_site | theta, u) dpi(u | theta)  over the
/// held-out covariate prior, by midpoint quadrature (a product rule for two
/// covariates). -inf when the prior is undefined at theta.
double log_heldout_marginal(const ModelSpec& spec, const ParamVector& theta, const Dataset& data, std::size_t site,
                            std::size_t quadrature_points, PriorWidth width = {});

/// Log of the unnormalized importance weight moving a draw of the pivot
/// site's leave-one-out posterior to site i's.
double log_importance_weight(const ModelSpec& spec, const ParamVector& theta, std::size_t site, std::size_t istar,
                             const Dataset& data, std::size_t quadrature_points, PriorWidth width = {});
double importance_weight(const ModelSpec& spec, const ParamVector& theta, std::size_t site, std::size_t istar,
                         const Dataset& data, std::size_t quadrature_points, PriorWidth width = {});

/// Selects `count` indices without replacement with probabilities driven by
/// exp(log_weights) (Efraimidis-Spirakis keys). If fewer than `count`
/// weights are positive, the shortfall is drawn with replacement among the
/// positive ones. Returned indices are sorted ascending.
std::vector<std::size_t> weighted_sample_without_replacement(SeededStream& stream, std::span<const double> log_weights,
                                                             std::size_t count);

/// Rough starting point: least squares of the linked site means on the
/// covariates; GP latents start on the mean line with omega = -2.
ParamVector initial_params(const ModelSpec& spec, const Dataset& data);

/// Posterior draws from a TMCMC run on `target` (burn-in with adaptation,
/// then `n_steps - burn` retained states).
struct ChainRun {
    std::vector<std::vector<double>> states;
    double acceptance_rate = 0.0;
};
ChainRun run_chain(const InverseTarget& target, const ParamVector& start, std::size_t n_steps, std::size_t burn,
                   const std::map<std::string, double>& step_scales, SeededStream& stream);

/// Full-data (forward) posterior draws of the parameters.
std::vector<ParamVector> forward_posterior_draws(const ModelSpec& spec, const Dataset& data, std::size_t n_steps,
                                                 std::size_t burn, const std::map<std::string, double>& step_scales,
                                                 SeededStream& stream, std::optional<std::size_t> exclude_site = {});

struct IrmcmcResult {
    std::size_t istar = 0;
    std::vector<CvPosterior> sites;
    double stage1_acceptance = 0.0;
    std::vector<double> stage2_acceptance;
    /// Effective sample size of the importance weights per site.
    std::vector<double> weight_ess;
    bool any_clamped = false;
};

/// Leave-one-out inverse cross-validation posteriors of all n sites by
/// importance-resampling MCMC. Throws SiteFailure if every importance
/// weight of some site is zero.
IrmcmcResult irmcmc_cv_posteriors(const ModelSpec& spec, const Dataset& data, const ChainConfig& config,
                                  const SeededStream& stream, std::optional<std::size_t> istar_override = {});

/// Reference sampler: one long TMCMC chain on the joint
/// (held-out covariates, parameters) posterior of a single site.
CvPosterior direct_cv_posterior(const ModelSpec& spec, const Dataset& data, std::size_t site, std::size_t n_steps,
                                std::size_t burn, const ChainConfig& config, SeededStream& stream);

}  // namespace invsel
