#include "invsel/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "invsel/errors.hpp"
#include "invsel/random.hpp"

namespace invsel {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kMinCoefficient = 1e-10;

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct LogProbs {
    double success;  // log p
    double failure;  // log(1 - p)
};

LogProbs geometric_log_probs(Link link, double lp) {
    if (link == Link::Logit) return {-softplus(-lp), -softplus(lp)};
    return {log_std_normal_cdf(lp), log_std_normal_cdf(-lp)};
}

}  // namespace

std::vector<Covariate> ModelSpec::inverted() const {
    switch (covariates) {
        case CovariateSet::X: return {Covariate::X};
        case CovariateSet::Z: return {Covariate::Z};
        case CovariateSet::XZ: return {Covariate::X, Covariate::Z};
    }
    return {};
}

std::string to_string(Family f) { return f == Family::Poisson ? "poisson" : "geometric"; }

std::string to_string(Link l) {
    switch (l) {
        case Link::Log: return "log";
        case Link::Logit: return "logit";
        case Link::Probit: return "probit";
    }
    return "?";
}

std::string to_string(RegressionForm r) { return r == RegressionForm::Linear ? "linear" : "gp"; }

std::string to_string(CovariateSet c) {
    switch (c) {
        case CovariateSet::X: return "x";
        case CovariateSet::Z: return "z";
        case CovariateSet::XZ: return "xz";
    }
    return "?";
}

std::string ModelSpec::name() const {
    return to_string(family) + "-" + to_string(link) + "-" + to_string(form) + "-" + to_string(covariates);
}

ModelSpec parse_model_name(const std::string& name, int id) {
    std::vector<std::string> parts;
    std::stringstream ss(name);
    for (std::string part; std::getline(ss, part, '-');) parts.push_back(part);
    if (parts.size() != 4) throw InvalidArgument("model name must look like family-link-form-covariates: " + name);
    ModelSpec spec;
    spec.id = id;
    if (parts[0] == "poisson") spec.family = Family::Poisson;
    else if (parts[0] == "geometric") spec.family = Family::Geometric;
    else throw InvalidArgument("unknown family: " + parts[0]);
    if (parts[1] == "log") spec.link = Link::Log;
    else if (parts[1] == "logit") spec.link = Link::Logit;
    else if (parts[1] == "probit") spec.link = Link::Probit;
    else throw InvalidArgument("unknown link: " + parts[1]);
    if (parts[2] == "linear") spec.form = RegressionForm::Linear;
    else if (parts[2] == "gp") spec.form = RegressionForm::GaussianProcess;
    else throw InvalidArgument("unknown regression form: " + parts[2]);
    if (parts[3] == "x") spec.covariates = CovariateSet::X;
    else if (parts[3] == "z") spec.covariates = CovariateSet::Z;
    else if (parts[3] == "xz") spec.covariates = CovariateSet::XZ;
    else throw InvalidArgument("unknown covariate set: " + parts[3]);
    validate(spec);
    return spec;
}

void validate(const ModelSpec& spec) {
    const bool ok = spec.family == Family::Poisson ? spec.link == Link::Log : spec.link != Link::Log;
    if (!ok) throw InvalidArgument("model " + spec.name() + ": family and link do not pair");
}

void validate_roster(std::span<const ModelSpec> roster) {
    if (roster.size() < 2) throw InvalidArgument("roster needs at least two models");
    std::set<int> ids;
    for (const auto& spec : roster) {
        validate(spec);
        if (!ids.insert(spec.id).second) throw InvalidArgument("duplicate model id " + std::to_string(spec.id));
    }
}

bool same_model(const ModelSpec& a, const ModelSpec& b) {
    return a.family == b.family && a.link == b.link && a.form == b.form && a.covariates == b.covariates;
}

namespace {

std::vector<ModelSpec> base_models(CovariateSet covariates, bool include_gp) {
    std::vector<ModelSpec> out;
    const std::pair<Family, Link> pairs[] = {
        {Family::Poisson, Link::Log}, {Family::Geometric, Link::Logit}, {Family::Geometric, Link::Probit}};
    for (auto [family, link] : pairs) {
        out.push_back({0, family, link, RegressionForm::Linear, covariates});
        if (include_gp) out.push_back({0, family, link, RegressionForm::GaussianProcess, covariates});
    }
    return out;
}

std::vector<ModelSpec> numbered(std::vector<ModelSpec> models) {
    for (std::size_t k = 0; k < models.size(); ++k) models[k].id = static_cast<int>(k + 1);
    return models;
}

}  // namespace

std::vector<ModelSpec> single_covariate_roster() { return numbered(base_models(CovariateSet::X, true)); }

std::vector<ModelSpec> two_covariate_roster() {
    std::vector<ModelSpec> all;
    for (auto set : {CovariateSet::XZ, CovariateSet::X, CovariateSet::Z}) {
        auto part = base_models(set, true);
        all.insert(all.end(), part.begin(), part.end());
    }
    return numbered(std::move(all));
}

std::vector<ModelSpec> two_covariate_linear_roster() {
    std::vector<ModelSpec> all;
    for (auto set : {CovariateSet::XZ, CovariateSet::X, CovariateSet::Z}) {
        auto part = base_models(set, false);
        all.insert(all.end(), part.begin(), part.end());
    }
    return numbered(std::move(all));
}

void check_shape(const ModelSpec& spec, const ParamVector& theta, std::size_t n_sites) {
    auto fail = [&](const char* what) { throw InvalidArgument("parameters do not match " + spec.name() + ": " + what); };
    if (theta.beta.has_value() != spec.uses_x()) fail("beta");
    if (theta.gamma.has_value() != spec.uses_z()) fail("gamma");
    if (theta.omega.has_value() != spec.is_gp()) fail("omega");
    if (spec.is_gp() ? theta.eta.size() != n_sites : !theta.eta.empty()) fail("eta");
}

// --- Dataset ---------------------------------------------------------------

Dataset::Dataset(std::vector<double> x, std::optional<std::vector<double>> z, std::vector<std::vector<std::int64_t>> y)
    : x_(std::move(x)), z_(std::move(z)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    if (n < 2) throw InvalidArgument("dataset needs n >= 2 sites");
    if (y_.size() != n) throw InvalidArgument("dataset: y must have one row per site");
    if (z_ && z_->size() != n) throw InvalidArgument("dataset: z must have one value per site");
    m_ = y_.front().size();
    if (m_ < 2) throw InvalidArgument("dataset needs m >= 2 replicates");
    ybar_.resize(n);
    s_.resize(n);
    total_.resize(n);
    log_fact_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (y_[i].size() != m_) throw InvalidArgument("dataset: every site needs m replicates");
        double sum = 0.0, log_fact = 0.0;
        for (auto v : y_[i]) {
            if (v < 0) throw InvalidArgument("dataset: counts must be nonnegative");
            sum += static_cast<double>(v);
            log_fact += std::lgamma(static_cast<double>(v) + 1.0);
        }
        const double mean = sum / static_cast<double>(m_);
        double ss = 0.0;
        for (auto v : y_[i]) ss += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
        ybar_[i] = mean;
        s_[i] = std::sqrt(ss / static_cast<double>(m_ - 1));
        total_[i] = sum;
        log_fact_[i] = log_fact;
    }
}

const std::vector<double>& Dataset::z() const {
    if (!z_) throw InvalidArgument("dataset has no z covariate");
    return *z_;
}

const std::vector<double>& Dataset::covariate(Covariate which) const { return which == Covariate::X ? x_ : z(); }

// --- responses and likelihood ----------------------------------------------

double mean_line(const ModelSpec& spec, const ParamVector& theta, double x, double z) {
    double lp = theta.alpha;
    if (spec.uses_x()) lp += *theta.beta * x;
    if (spec.uses_z()) lp += *theta.gamma * z;
    return lp;
}

double site_predictor(const ModelSpec& spec, const ParamVector& theta, const Dataset& data, std::size_t site) {
    if (spec.is_gp()) return theta.eta[site];
    return mean_line(spec, theta, data.x()[site], spec.uses_z() ? data.z()[site] : 0.0);
}

double response_from_predictor(const ModelSpec& spec, double lp) {
    switch (spec.link) {
        case Link::Log: return std::exp(lp);
        case Link::Logit: return 1.0 / (1.0 + std::exp(-lp));
        case Link::Probit: return std_normal_cdf(lp);
    }
    return std::numeric_limits<double>::quiet_NaN();
}

double mean_response(const ModelSpec& spec, const ParamVector& theta, std::optional<double> x, std::optional<double> z,
                     std::optional<std::size_t> site) {
    if (spec.is_gp() && site) {
        if (*site >= theta.eta.size()) throw InvalidArgument("mean_response: site index out of range");
        return response_from_predictor(spec, theta.eta[*site]);
    }
    if (spec.uses_x() && !x) throw InvalidArgument("mean_response: model needs covariate x");
    if (spec.uses_z() && !z) throw InvalidArgument("mean_response: model needs covariate z");
    return response_from_predictor(spec, mean_line(spec, theta, x.value_or(0.0), z.value_or(0.0)));
}

double observation_log_pmf(const ModelSpec& spec, std::int64_t y, double lp) {
    if (!std::isfinite(lp)) return kNegInf;
    const auto yd = static_cast<double>(y);
    if (spec.family == Family::Poisson) {
        const double lambda = std::exp(lp);
        if (!(lambda > 0.0) || !std::isfinite(lambda)) return kNegInf;
        return yd * lp - lambda - std::lgamma(yd + 1.0);
    }
    const auto lpr = geometric_log_probs(spec.link, lp);
    double out = lpr.success;
    if (y > 0) out += yd * lpr.failure;
    return std::isnan(out) ? kNegInf : out;
}

double site_log_likelihood(const ModelSpec& spec, const Dataset& data, std::size_t site, double lp) {
    if (!std::isfinite(lp)) return kNegInf;
    const double m = static_cast<double>(data.m());
    const double total = data.total(site);
    if (spec.family == Family::Poisson) {
        const double lambda = std::exp(lp);
        if (!(lambda > 0.0) || !std::isfinite(lambda)) return kNegInf;
        return total * lp - m * lambda - data.log_factorial_total(site);
    }
    const auto lpr = geometric_log_probs(spec.link, lp);
    double out = m * lpr.success;
    if (total > 0.0) out += total * lpr.failure;
    return std::isnan(out) ? kNegInf : out;
}

double log_likelihood(const ModelSpec& spec, const ParamVector& theta, const Dataset& data,
                      std::span<const std::size_t> sites, const std::vector<std::vector<std::size_t>>* replicates) {
    if (replicates && replicates->size() != sites.size())
        throw InvalidArgument("log_likelihood: replicate mask must list one entry per included site");
    double total = 0.0;
    for (std::size_t k = 0; k < sites.size(); ++k) {
        const std::size_t site = sites[k];
        if (site >= data.n()) throw InvalidArgument("log_likelihood: site index out of range");
        const double lp = site_predictor(spec, theta, data, site);
        if (!replicates) {
            total += site_log_likelihood(spec, data, site, lp);
        } else {
            for (std::size_t rep : (*replicates)[k]) {
                if (rep >= data.m()) throw InvalidArgument("log_likelihood: replicate index out of range");
                total += observation_log_pmf(spec, data.y(site, rep), lp);
            }
        }
        if (total == kNegInf) return kNegInf;
    }
    return total;
}

double log_likelihood(const ModelSpec& spec, const ParamVector& theta, const Dataset& data) {
    std::vector<std::size_t> all(data.n());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return log_likelihood(spec, theta, data, all);
}

// --- Gaussian process pieces -----------------------------------------------

Eigen::MatrixXd gp_points(const ModelSpec& spec, const Dataset& data) {
    const auto cols = static_cast<Eigen::Index>(spec.uses_x() + spec.uses_z());
    Eigen::MatrixXd points(static_cast<Eigen::Index>(data.n()), cols);
    for (std::size_t i = 0; i < data.n(); ++i) {
        Eigen::Index c = 0;
        if (spec.uses_x()) points(static_cast<Eigen::Index>(i), c++) = data.x()[i];
        if (spec.uses_z()) points(static_cast<Eigen::Index>(i), c++) = data.z()[i];
    }
    return points;
}

Eigen::MatrixXd gp_cov_matrix(const Eigen::MatrixXd& points, double omega, double jitter) {
    const Eigen::Index n = points.rows();
    const double scale = std::exp(omega);
    Eigen::MatrixXd cov(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        cov(i, i) = scale + jitter;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double d2 = (points.row(i) - points.row(j)).squaredNorm();
            cov(i, j) = cov(j, i) = scale * std::exp(-d2);
        }
    }
    return cov;
}

double gp_log_density(const Eigen::MatrixXd& points, std::span<const double> eta, std::span<const double> mean,
                      double omega) {
    const auto n = static_cast<Eigen::Index>(eta.size());
    if (points.rows() != n || mean.size() != eta.size())
        throw InvalidArgument("gp_log_density: points, eta and mean must have equal length");
    const Eigen::MatrixXd cov = gp_cov_matrix(points, omega, kGpRelativeJitter * std::exp(omega));
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) return kNegInf;
    Eigen::VectorXd resid(n);
    for (Eigen::Index i = 0; i < n; ++i) resid(i) = eta[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)];
    const Eigen::VectorXd white = llt.matrixL().solve(resid);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi) - 0.5 * log_det - 0.5 * white.squaredNorm();
}

double log_param_prior(const ModelSpec& spec, const ParamVector& theta, const Dataset& data) {
    check_shape(spec, theta, data.n());
    if (!spec.is_gp()) return 0.0;
    if (*theta.omega < kOmegaMin || *theta.omega > kOmegaMax) return kNegInf;
    std::vector<double> mean(data.n());
    for (std::size_t i = 0; i < data.n(); ++i)
        mean[i] = mean_line(spec, theta, data.x()[i], spec.uses_z() ? data.z()[i] : 0.0);
    return gp_log_density(gp_points(spec, data), theta.eta, mean, *theta.omega);
}

GpStructure::GpStructure(const ModelSpec& spec, const Dataset& data) {
    const Eigen::MatrixXd corr = gp_cov_matrix(gp_points(spec, data), 0.0, kGpRelativeJitter);
    const Eigen::Index n = corr.rows();
    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    if (llt.info() != Eigen::Success) throw InvalidState("GP correlation matrix is not positive definite");
    chol_ = llt.matrixL();
    log_det_ = 2.0 * chol_.diagonal().array().log().sum();

    cond_weights_.resize(static_cast<std::size_t>(n));
    cond_var_.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd weights = Eigen::VectorXd::Zero(n);
        if (n == 1) {
            cond_var_[0] = corr(0, 0);
            cond_weights_[0] = weights;
            continue;
        }
        std::vector<Eigen::Index> others;
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) others.push_back(j);
        const auto k = static_cast<Eigen::Index>(others.size());
        Eigen::MatrixXd sub(k, k);
        Eigen::VectorXd cross(k);
        for (Eigen::Index a = 0; a < k; ++a) {
            cross(a) = corr(i, others[static_cast<std::size_t>(a)]);
            for (Eigen::Index b = 0; b < k; ++b)
                sub(a, b) = corr(others[static_cast<std::size_t>(a)], others[static_cast<std::size_t>(b)]);
        }
        const Eigen::VectorXd solved = sub.llt().solve(cross);
        for (Eigen::Index a = 0; a < k; ++a) weights(others[static_cast<std::size_t>(a)]) = solved(a);
        cond_var_[static_cast<std::size_t>(i)] = std::max(corr(i, i) - cross.dot(solved), kGpRelativeJitter);
        cond_weights_[static_cast<std::size_t>(i)] = std::move(weights);
    }
}

// --- covariate prior --------------------------------------------------------

ResponseWindow response_window(double ybar, double s, std::size_t m, PriorWidth width) {
    ResponseWindow w;
    double centre = ybar;
    if (centre <= 0.0) {
        // an all-zero site: half-count continuity correction
        centre = 0.5 / static_cast<double>(m);
        w.clamped = true;
    }
    const double se = s / std::sqrt(static_cast<double>(m));
    w.lower = centre - width.c1 * se;
    w.upper = centre + width.c2 * se;
    if (w.lower <= 0.0) {
        w.lower = centre * 1e-3;
        w.clamped = true;
    }
    return w;
}

ResponseWindow response_window(const Dataset& data, std::size_t site, PriorWidth width) {
    return response_window(data.ybar(site), data.s(site), data.m(), width);
}

std::optional<XPriorInterval> covariate_interval(Link link, const ResponseWindow& window, double offset, double coef) {
    if (!(std::abs(coef) >= kMinCoefficient)) return std::nullopt;
    double lp_a = 0.0, lp_b = 0.0;
    switch (link) {
        case Link::Log:
            lp_a = std::log(window.lower);
            lp_b = std::log(window.upper);
            break;
        case Link::Logit:
            // geometric mean (1 - p) / p = exp(-predictor)
            lp_a = -std::log(window.lower);
            lp_b = -std::log(window.upper);
            break;
        case Link::Probit:
            lp_a = std_normal_inverse_cdf(1.0 / (window.upper + 1.0));
            lp_b = std_normal_inverse_cdf(1.0 / (window.lower + 1.0));
            break;
    }
    const double e1 = (lp_a - offset) / coef;
    const double e2 = (lp_b - offset) / coef;
    XPriorInterval out;
    out.lo = std::min(e1, e2);
    out.hi = std::max(e1, e2);
    out.clamped = window.clamped;
    return out;
}

std::optional<XPriorInterval> try_x_prior_interval(const ModelSpec& spec, const ParamVector& theta,
                                                   const Dataset& data, std::size_t site, Covariate which,
                                                   PriorWidth width) {
    double coef = 0.0, offset = theta.alpha;
    if (which == Covariate::X) {
        if (!spec.uses_x()) throw InvalidArgument("x_prior_interval: model " + spec.name() + " has no x");
        coef = *theta.beta;
        if (spec.uses_z()) offset += *theta.gamma * data.z()[site];
    } else {
        if (!spec.uses_z()) throw InvalidArgument("x_prior_interval: model " + spec.name() + " has no z");
        coef = *theta.gamma;
        if (spec.uses_x()) offset += *theta.beta * data.x()[site];
    }
    return covariate_interval(spec.link, response_window(data, site, width), offset, coef);
}

XPriorInterval x_prior_interval(const ModelSpec& spec, const ParamVector& theta, const Dataset& data,
                                std::size_t site, Covariate which, PriorWidth width) {
    auto interval = try_x_prior_interval(spec, theta, data, site, which, width);
    if (!interval) throw DegenerateCoefficient("x_prior_interval: covariate coefficient is numerically zero");
    return *interval;
}

double log_uniform_density(const XPriorInterval& interval, double value) {
    if (interval.point_mass()) return kNegInf;
    return (value > interval.lo && value < interval.hi) ? -std::log(interval.hi - interval.lo) : kNegInf;
}

double log_x_prior_density(const ModelSpec& spec, const ParamVector& theta, const Dataset& data, std::size_t site,
                           Covariate which, double value, PriorWidth width) {
    return log_uniform_density(x_prior_interval(spec, theta, data, site, which, width), value);
}

}  // namespace invsel
