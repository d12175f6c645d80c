#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace invsel {

enum class Family { Poisson, Geometric };
enum class Link { Log, Logit, Probit };
enum class RegressionForm { Linear, GaussianProcess };
enum class CovariateSet { X, Z, XZ };
enum class Covariate { X, Z };

/// One competing inverse regression model.
struct ModelSpec {
    int id = 0;
    Family family = Family::Poisson;
    Link link = Link::Log;
    RegressionForm form = RegressionForm::Linear;
    CovariateSet covariates = CovariateSet::X;

    bool uses_x() const { return covariates != CovariateSet::Z; }
    bool uses_z() const { return covariates != CovariateSet::X; }
    bool is_gp() const { return form == RegressionForm::GaussianProcess; }
    bool is_bivariate() const { return covariates == CovariateSet::XZ; }
    /// Covariates that are inverted (held out) at a site, in storage order.
    std::vector<Covariate> inverted() const;
    /// e.g. "poisson-log-linear-x", "geometric-probit-gp-xz".
    std::string name() const;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Throws InvalidArgument when family and link do not pair up
/// (Poisson needs Log; Geometric needs Logit or Probit).
void validate(const ModelSpec& spec);
/// Ids unique and 1 < K.
void validate_roster(std::span<const ModelSpec> roster);
/// Same model ignoring the id.
bool same_model(const ModelSpec& a, const ModelSpec& b);

/// Poisson log, geometric logit, geometric probit; each linear and GP; covariate x. K = 6.
std::vector<ModelSpec> single_covariate_roster();
/// The single-covariate roster crossed with covariate sets {X, Z, XZ}. K = 18.
std::vector<ModelSpec> two_covariate_roster();
/// Linear-only subset of the two-covariate roster. K = 9.
std::vector<ModelSpec> two_covariate_linear_roster();
ModelSpec parse_model_name(const std::string& name, int id);

/// Model parameters. `beta` is the x coefficient, `gamma` the z coefficient,
/// `omega` the log GP variance and `eta` the latent GP values at the n
/// observed sites.
struct ParamVector {
    double alpha = 0.0;
    std::optional<double> beta;
    std::optional<double> gamma;
    std::optional<double> omega;
    std::vector<double> eta;
};

/// Throws InvalidArgument when the optional fields do not match the model.
void check_shape(const ModelSpec& spec, const ParamVector& theta, std::size_t n_sites);

/// Covariates X (and optionally Z) with an n x m table of replicated counts.
/// Per-site sufficient statistics are computed once on construction.
class Dataset {
public:
    Dataset(std::vector<double> x, std::optional<std::vector<double>> z, std::vector<std::vector<std::int64_t>> y);

    std::size_t n() const { return x_.size(); }
    std::size_t m() const { return m_; }
    const std::vector<double>& x() const { return x_; }
    bool has_z() const { return z_.has_value(); }
    const std::vector<double>& z() const;
    const std::vector<double>& covariate(Covariate which) const;
    const std::vector<std::vector<std::int64_t>>& y() const { return y_; }
    std::int64_t y(std::size_t site, std::size_t rep) const { return y_[site][rep]; }

    double ybar(std::size_t site) const { return ybar_[site]; }
    double s(std::size_t site) const { return s_[site]; }
    /// Sum over replicates of y_ij.
    double total(std::size_t site) const { return total_[site]; }
    /// Sum over replicates of log(y_ij!).
    double log_factorial_total(std::size_t site) const { return log_fact_[site]; }

private:
    std::vector<double> x_;
    std::optional<std::vector<double>> z_;
    std::vector<std::vector<std::int64_t>> y_;
    std::size_t m_ = 0;
    std::vector<double> ybar_, s_, total_, log_fact_;
};

/// Linear predictor alpha + beta x + gamma z, using whichever terms the model has.
double mean_line(const ModelSpec& spec, const ParamVector& theta, double x, double z);
/// Linear predictor at an observed site: the latent eta value for GP models,
/// the mean line at the site's covariates otherwise.
double site_predictor(const ModelSpec& spec, const ParamVector& theta, const Dataset& data, std::size_t site);

/// Poisson mean lambda or geometric success probability p for a linear predictor.
double response_from_predictor(const ModelSpec& spec, double lp);

/// Mean response at covariate value(s). With `site` supplied for a GP model the
/// site's latent eta is used; otherwise the mean line. Throws InvalidArgument
/// when a covariate the model needs is missing.
double mean_response(const ModelSpec& spec, const ParamVector& theta, std::optional<double> x,
                     std::optional<double> z = std::nullopt, std::optional<std::size_t> site = std::nullopt);

/// log f(y | predictor) for a single count.
double observation_log_pmf(const ModelSpec& spec, std::int64_t y, double lp);
/// log-likelihood of all m replicates of `site` at linear predictor `lp`,
/// evaluated from sufficient statistics.
double site_log_likelihood(const ModelSpec& spec, const Dataset& data, std::size_t site, double lp);

/// Sum of per-observation log densities over the included sites. When
/// `replicates` is given, entry k lists the replicate indices used for
/// sites[k]; otherwise every replicate is used. Returns -inf for
/// inadmissible parameters.
double log_likelihood(const ModelSpec& spec, const ParamVector& theta, const Dataset& data,
                      std::span<const std::size_t> sites,
                      const std::vector<std::vector<std::size_t>>* replicates = nullptr);
/// All sites, all replicates.
double log_likelihood(const ModelSpec& spec, const ParamVector& theta, const Dataset& data);

/// Bounds of the flat prior on omega for GP models.
inline constexpr double kOmegaMin = -10.0;
inline constexpr double kOmegaMax = 10.0;
/// Relative diagonal jitter: the GP covariance gets 1e-8 * exp(omega) added.
inline constexpr double kGpRelativeJitter = 1e-8;

/// Rows are covariate points; one column per covariate the model uses.
Eigen::MatrixXd gp_points(const ModelSpec& spec, const Dataset& data);
/// exp(omega) * exp(-|p_i - p_j|^2) + jitter * [i == j].
Eigen::MatrixXd gp_cov_matrix(const Eigen::MatrixXd& points, double omega, double jitter);

/// Multivariate normal log density of `eta` with the given mean and covariance
/// exp(omega) * (exp(-d^2) + 1e-8 I) at `points`. -inf if the factorization fails.
double gp_log_density(const Eigen::MatrixXd& points, std::span<const double> eta, std::span<const double> mean,
                      double omega);

/// Flat prior on (alpha, beta, gamma, omega) plus, for GP models, the
/// multivariate normal log density of eta with mean line mean and the squared
/// exponential covariance at the observed points.
double log_param_prior(const ModelSpec& spec, const ParamVector& theta, const Dataset& data);

/// Precomputed pieces of the unit-variance GP correlation at the observed
/// points: Cholesky factor of exp(-d^2) + 1e-8 I and, for every site, the
/// coefficients of its conditional mean given the other sites.
class GpStructure {
public:
    GpStructure(const ModelSpec& spec, const Dataset& data);

    std::size_t size() const { return static_cast<std::size_t>(chol_.rows()); }
    /// Lower Cholesky factor L with L L^T = exp(-d^2) + 1e-8 I.
    const Eigen::MatrixXd& chol() const { return chol_; }
    double log_det() const { return log_det_; }
    /// eta_i | eta_{-i} ~ N(mu_i + sum_j w_ij (eta_j - mu_j), exp(omega) * v_i).
    const Eigen::VectorXd& conditional_weights(std::size_t site) const { return cond_weights_[site]; }
    double conditional_variance(std::size_t site) const { return cond_var_[site]; }

private:
    Eigen::MatrixXd chol_;
    double log_det_ = 0.0;
    std::vector<Eigen::VectorXd> cond_weights_;  // length n; entry for `site` itself is 0
    std::vector<double> cond_var_;
};

/// Interval constants of the covariate prior: [ybar - c1 s / sqrt(m), ybar + c2 s / sqrt(m)].
struct PriorWidth {
    double c1 = 1.0;
    double c2 = 100.0;
};

/// Support of the uniform prior of one held-out covariate.
struct XPriorInterval {
    double lo = 0.0;
    double hi = 0.0;
    /// The lower response bound was nonpositive and got clamped.
    bool clamped = false;
    bool point_mass() const { return lo == hi; }
    double width() const { return hi - lo; }
};

/// Response window [l, u] for a site with the clamp applied: l <= 0 becomes
/// ybar * 1e-3, and an all-zero site is treated as having ybar = 1 / (2m).
struct ResponseWindow {
    double lower = 0.0;
    double upper = 0.0;
    bool clamped = false;
};
ResponseWindow response_window(double ybar, double s, std::size_t m, PriorWidth width);
ResponseWindow response_window(const Dataset& data, std::size_t site, PriorWidth width);

/// Maps a response window through the inverse link and solves
/// offset + coef * x = predictor for both ends. nullopt when |coef| < 1e-10.
std::optional<XPriorInterval> covariate_interval(Link link, const ResponseWindow& window, double offset, double coef);

/// Covariate prior interval of the held-out `which` covariate at `site`.
/// For bivariate models the other covariate enters at its observed value.
/// GP models use their mean line. Throws DegenerateCoefficient when the
/// coefficient of `which` has magnitude below 1e-10.
XPriorInterval x_prior_interval(const ModelSpec& spec, const ParamVector& theta, const Dataset& data,
                                std::size_t site, Covariate which, PriorWidth width = {});
/// Non-throwing form: nullopt for a degenerate coefficient.
std::optional<XPriorInterval> try_x_prior_interval(const ModelSpec& spec, const ParamVector& theta,
                                                   const Dataset& data, std::size_t site, Covariate which,
                                                   PriorWidth width = {});

/// -log(b - a) inside (a, b), -inf outside. A point-mass interval gives -inf
/// everywhere (samplers pin the covariate to the point instead).
double log_x_prior_density(const ModelSpec& spec, const ParamVector& theta, const Dataset& data, std::size_t site,
                           Covariate which, double value, PriorWidth width = {});
double log_uniform_density(const XPriorInterval& interval, double value);

std::string to_string(Family f);
std::string to_string(Link l);
std::string to_string(RegressionForm r);
std::string to_string(CovariateSet c);

}  // namespace invsel
