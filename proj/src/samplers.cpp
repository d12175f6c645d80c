#include "invsel/samplers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "invsel/errors.hpp"

namespace invsel {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kTargetAcceptance = 0.3;
constexpr std::size_t kAdaptBatch = 50;

// Running log-sum-exp.
class LogSumExp {
public:
    void add(double v) {
        if (v == kNegInf || std::isnan(v)) return;
        if (v > max_) {
            sum_ = sum_ * std::exp(max_ - v) + 1.0;
            max_ = v;
        } else {
            sum_ += std::exp(v - max_);
        }
    }
    double value() const { return sum_ > 0.0 ? max_ + std::log(sum_) : kNegInf; }

private:
    double max_ = kNegInf;
    double sum_ = 0.0;
};

double default_scale(const std::string& label) {
    if (label == "omega") return 0.5;
    if (label == "eta") return 0.3;
    if (label == "x" || label == "z") return 0.2;
    return 0.1;
}

std::string scale_key(const std::string& label) {
    if (!label.empty() && label[0] == 'u') return "eta";
    return label;
}

// Linear predictor of a held-out site at covariate values ordered as spec.inverted().
double heldout_predictor(const ModelSpec& spec, const ParamVector& theta, std::span<const double> values) {
    switch (spec.covariates) {
        case CovariateSet::X: return mean_line(spec, theta, values[0], 0.0);
        case CovariateSet::Z: return mean_line(spec, theta, 0.0, values[0]);
        case CovariateSet::XZ: return mean_line(spec, theta, values[0], values[1]);
    }
    return 0.0;
}

// Prior intervals of every held-out covariate of `site`; empty if undefined at theta.
std::vector<XPriorInterval> heldout_intervals(const ModelSpec& spec, const ParamVector& theta, const Dataset& data,
                                              std::size_t site, PriorWidth width) {
    std::vector<XPriorInterval> out;
    for (Covariate c : spec.inverted()) {
        auto interval = try_x_prior_interval(spec, theta, data, site, c, width);
        if (!interval) return {};
        out.push_back(*interval);
    }
    return out;
}

// Step scales for the conditional of the held-out covariates given theta:
// 2.4 / sqrt(d) times each covariate's conditional sd, read off a midpoint grid.
std::vector<double> conditional_scales(const ModelSpec& spec, const ParamVector& theta, const Dataset& data,
                                       std::size_t site, const std::vector<XPriorInterval>& intervals,
                                       std::size_t nodes) {
    const std::size_t dim = intervals.size();
    std::vector<double> h(dim);
    for (std::size_t c = 0; c < dim; ++c) h[c] = intervals[c].width() / static_cast<double>(nodes);
    auto node = [&](std::size_t c, std::size_t k) { return intervals[c].lo + (static_cast<double>(k) + 0.5) * h[c]; };
    std::vector<double> logs, values(2, 0.0);
    std::vector<std::array<double, 2>> points;
    const std::size_t outer = nodes, inner = dim == 2 ? nodes : 1;
    for (std::size_t k = 0; k < outer; ++k)
        for (std::size_t l = 0; l < inner; ++l) {
            values[0] = node(0, k);
            if (dim == 2) values[1] = node(1, l);
            logs.push_back(site_log_likelihood(spec, data, site, heldout_predictor(spec, theta, values)));
            points.push_back({values[0], values[1]});
        }
    const double total = log_sum_exp(logs);
    std::vector<double> scales(dim);
    for (std::size_t c = 0; c < dim; ++c) {
        double m1 = 0.0, m2 = 0.0;
        if (total != kNegInf)
            for (std::size_t t = 0; t < logs.size(); ++t) {
                const double w = std::exp(logs[t] - total);
                m1 += w * points[t][c];
                m2 += w * points[t][c] * points[t][c];
            }
        const double var = std::max(m2 - m1 * m1, 0.0) + h[c] * h[c] / 12.0;
        scales[c] = 2.4 / std::sqrt(static_cast<double>(dim)) * std::sqrt(var);
    }
    return scales;
}

double midpoint(const XPriorInterval& iv) { return 0.5 * (iv.lo + iv.hi); }

}  // namespace

// --- ChainConfig -------------------------------------------------------------

void ChainConfig::validate() const {
    if (!(first_burn < n_first_stage)) throw InvalidArgument("chain config: first_burn must be < n_first_stage");
    if (n_resample == 0 || n_resample > n_first_stage - first_burn)
        throw InvalidArgument("chain config: n_resample must lie in [1, n_first_stage - first_burn]");
    if (n_second_stage_per_theta == 0) throw InvalidArgument("chain config: n_second_stage_per_theta must be positive");
    if (quadrature_points == 0) throw InvalidArgument("chain config: quadrature_points must be positive");
    for (const auto& [label, scale] : step_scales)
        if (!(scale > 0.0)) throw InvalidArgument("chain config: step scale for " + label + " must be positive");
    if (!(prior_width.c1 > 0.0 && prior_width.c2 > 0.0)) throw InvalidArgument("chain config: c1, c2 must be positive");
}

ChainConfig ChainConfig::paper() { return ChainConfig{}; }

ChainConfig ChainConfig::desk() {
    ChainConfig c;
    c.n_first_stage = 15000;
    c.first_burn = 5000;
    c.n_resample = 500;
    c.n_second_stage_per_theta = 50;
    c.second_stage_initial_burn = 5000;
    return c;
}

void CvPosterior::summarize() {
    const auto d = static_cast<Eigen::Index>(draws.size());
    const std::size_t count = size();
    mean = Eigen::VectorXd::Zero(d);
    variance = Eigen::MatrixXd::Zero(d, d);
    if (count == 0) return;
    for (Eigen::Index a = 0; a < d; ++a) {
        const auto& v = draws[static_cast<std::size_t>(a)];
        mean(a) = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(count);
    }
    if (count < 2) return;
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = 0; b <= a; ++b) {
            const auto& va = draws[static_cast<std::size_t>(a)];
            const auto& vb = draws[static_cast<std::size_t>(b)];
            double acc = 0.0;
            for (std::size_t j = 0; j < count; ++j) acc += (va[j] - mean(a)) * (vb[j] - mean(b));
            variance(a, b) = variance(b, a) = acc / static_cast<double>(count - 1);
        }
}

// --- TMCMC ---------------------------------------------------------------------

TmcmcMove tmcmc_step(SeededStream& stream, std::span<const double> current, double current_log_density,
                     const LogDensityFn& log_target, std::span<const double> scales) {
    if (current_log_density == kNegInf || std::isnan(current_log_density))
        throw InvalidState("tmcmc_step: target density is zero at the current state");
    if (scales.size() != current.size()) throw InvalidArgument("tmcmc_step: one scale per coordinate required");
    const double epsilon = std::abs(stream.normal());
    TmcmcMove move;
    move.state.resize(current.size());
    for (std::size_t j = 0; j < current.size(); ++j)
        move.state[j] = current[j] + stream.sign() * scales[j] * epsilon;
    const double proposed = log_target(move.state);
    const double log_u = std::log(stream.uniform());
    if (!std::isnan(proposed) && log_u < proposed - current_log_density) {
        move.log_density = proposed;
        move.accepted = true;
    } else {
        move.state.assign(current.begin(), current.end());
        move.log_density = current_log_density;
    }
    return move;
}

TmcmcMove tmcmc_step(SeededStream& stream, std::span<const double> current, const LogDensityFn& log_target,
                     std::span<const double> scales) {
    return tmcmc_step(stream, current, log_target(current), log_target, scales);
}

TmcmcChain::TmcmcChain(LogDensityFn target, std::vector<double> initial, std::vector<double> scales)
    : target_(std::move(target)), state_(std::move(initial)), scales_(std::move(scales)) {
    if (scales_.size() != state_.size()) throw InvalidArgument("TmcmcChain: one scale per coordinate required");
    log_density_ = target_(state_);
    if (log_density_ == kNegInf || std::isnan(log_density_))
        throw InvalidState("TmcmcChain: initial state has zero target density");
}

bool TmcmcChain::step(SeededStream& stream) {
    TmcmcMove move;
    if (axes_.size() == 0) {
        move = tmcmc_step(stream, state_, log_density_, target_, scales_);
    } else {
        const double epsilon = std::abs(stream.normal());
        const auto d = static_cast<Eigen::Index>(state_.size());
        Eigen::VectorXd b(d);
        for (Eigen::Index j = 0; j < d; ++j) b(j) = stream.sign() * scales_[static_cast<std::size_t>(j)] * epsilon;
        const Eigen::VectorXd delta = axes_.triangularView<Eigen::Lower>() * b;
        move.state = state_;
        for (Eigen::Index j = 0; j < d; ++j) move.state[static_cast<std::size_t>(j)] += delta(j);
        const double proposed = target_(move.state);
        const double log_u = std::log(stream.uniform());
        move.accepted = !std::isnan(proposed) && log_u < proposed - log_density_;
        move.log_density = proposed;
    }
    ++steps_;
    if (move.accepted) {
        ++accepted_;
        state_ = std::move(move.state);
        log_density_ = move.log_density;
    }
    return move.accepted;
}

void TmcmcChain::adapt(SeededStream& stream, std::size_t steps) {
    const std::size_t d = state_.size();
    const auto dd = static_cast<Eigen::Index>(d);
    std::vector<double> base = scales_;
    double log_factor = 0.0;
    bool base_from_samples = false;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dd);
    Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(dd, dd);
    std::size_t n_seen = 0;
    const std::size_t collect_from = steps / 5;
    const std::size_t rescale_from = (2 * steps) / 5;
    std::size_t batch_accepted = 0, batch_index = 0;

    for (std::size_t t = 0; t < steps; ++t) {
        if (step(stream)) ++batch_accepted;
        if (t >= collect_from) {
            ++n_seen;
            const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(state_.data(), dd);
            const Eigen::VectorXd delta = x - mean;
            mean += delta / static_cast<double>(n_seen);
            m2 += delta * (x - mean).transpose();
        }
        if ((t + 1) % kAdaptBatch != 0) continue;
        const double rate = static_cast<double>(batch_accepted) / static_cast<double>(kAdaptBatch);
        batch_accepted = 0;
        ++batch_index;
        log_factor += 2.0 * (rate - kTargetAcceptance) / std::sqrt(static_cast<double>(batch_index));
        if (t >= rescale_from && n_seen >= 200) {
            Eigen::MatrixXd cov = m2 / static_cast<double>(n_seen - 1);
            cov = 0.5 * (cov + cov.transpose());
            cov.diagonal().array() += 1e-12 * std::max(cov.diagonal().maxCoeff(), 1e-300);
            const Eigen::LLT<Eigen::MatrixXd> llt(cov);
            if (llt.info() == Eigen::Success) {
                Eigen::MatrixXd lower = llt.matrixL();
                if (lower.allFinite()) {
                    axes_ = std::move(lower);
                    std::fill(base.begin(), base.end(), 1.0);
                    if (!base_from_samples) {
                        log_factor = std::log(2.38 / std::sqrt(static_cast<double>(d)));
                        base_from_samples = true;
                    }
                }
            }
        }
        log_factor = std::clamp(log_factor, -12.0, 12.0);
        for (std::size_t j = 0; j < d; ++j) scales_[j] = base[j] * std::exp(log_factor);
    }
    steps_ = 0;
    accepted_ = 0;
}

bool TmcmcChain::retarget(LogDensityFn target) {
    target_ = std::move(target);
    log_density_ = target_(state_);
    return log_density_ != kNegInf && !std::isnan(log_density_);
}

void TmcmcChain::reset(std::vector<double> state) {
    state_ = std::move(state);
    log_density_ = target_(state_);
    if (log_density_ == kNegInf || std::isnan(log_density_))
        throw InvalidState("TmcmcChain::reset: state has zero target density");
}

void TmcmcChain::set_scales(std::vector<double> scales) {
    if (scales.size() != state_.size()) throw InvalidArgument("TmcmcChain::set_scales: dimension mismatch");
    for (double sc : scales)
        if (!(sc > 0.0) || !std::isfinite(sc)) throw InvalidArgument("TmcmcChain::set_scales: scales must be positive");
    scales_ = std::move(scales);
    axes_.resize(0, 0);
}

double TmcmcChain::acceptance_rate() const {
    return steps_ == 0 ? 0.0 : static_cast<double>(accepted_) / static_cast<double>(steps_);
}

// --- parameter coordinates ----------------------------------------------------

ParamCodec::ParamCodec(const ModelSpec& spec, const Dataset& data) : spec_(spec), data_(&data) {
    validate(spec);
    if (spec.uses_z() && !data.has_z()) throw InvalidArgument("model " + spec.name() + " needs covariate z");
    labels_.push_back("alpha");
    if (spec.uses_x()) labels_.push_back("beta");
    if (spec.uses_z()) labels_.push_back("gamma");
    const auto n = static_cast<Eigen::Index>(data.n());
    design_.resize(n, 1 + spec.uses_x() + spec.uses_z());
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index c = 0;
        design_(i, c++) = 1.0;
        if (spec.uses_x()) design_(i, c++) = data.x()[static_cast<std::size_t>(i)];
        if (spec.uses_z()) design_(i, c++) = data.z()[static_cast<std::size_t>(i)];
    }
    if (spec.is_gp()) {
        labels_.push_back("omega");
        for (std::size_t i = 0; i < data.n(); ++i) labels_.push_back("u" + std::to_string(i + 1));
        gp_ = std::make_shared<const GpStructure>(spec, data);
    }
}

ParamVector ParamCodec::decode(std::span<const double> coords) const {
    ParamVector theta;
    std::size_t k = 0;
    theta.alpha = coords[k++];
    if (spec_.uses_x()) theta.beta = coords[k++];
    if (spec_.uses_z()) theta.gamma = coords[k++];
    if (spec_.is_gp()) {
        theta.omega = coords[k++];
        const auto n = static_cast<Eigen::Index>(data_->n());
        Eigen::Map<const Eigen::VectorXd> u(coords.data() + k, n);
        Eigen::VectorXd coef(design_.cols());
        Eigen::Index c = 0;
        coef(c++) = theta.alpha;
        if (theta.beta) coef(c++) = *theta.beta;
        if (theta.gamma) coef(c++) = *theta.gamma;
        Eigen::VectorXd eta = gp_->chol().triangularView<Eigen::Lower>() * u;
        eta = design_ * coef + std::exp(0.5 * *theta.omega) * eta;
        theta.eta.assign(eta.data(), eta.data() + n);
    }
    return theta;
}

std::vector<double> ParamCodec::encode(const ParamVector& theta) const {
    check_shape(spec_, theta, data_->n());
    std::vector<double> coords;
    coords.push_back(theta.alpha);
    if (theta.beta) coords.push_back(*theta.beta);
    if (theta.gamma) coords.push_back(*theta.gamma);
    if (spec_.is_gp()) {
        coords.push_back(*theta.omega);
        const auto n = static_cast<Eigen::Index>(data_->n());
        Eigen::VectorXd coef(design_.cols());
        Eigen::Index c = 0;
        coef(c++) = theta.alpha;
        if (theta.beta) coef(c++) = *theta.beta;
        if (theta.gamma) coef(c++) = *theta.gamma;
        Eigen::VectorXd resid = Eigen::Map<const Eigen::VectorXd>(theta.eta.data(), n) - design_ * coef;
        const Eigen::VectorXd u =
            gp_->chol().triangularView<Eigen::Lower>().solve(resid) * std::exp(-0.5 * *theta.omega);
        coords.insert(coords.end(), u.data(), u.data() + n);
    }
    return coords;
}

double ParamCodec::log_prior(std::span<const double> coords) const {
    if (!spec_.is_gp()) return 0.0;
    const std::size_t k = 1 + spec_.uses_x() + spec_.uses_z();
    const double omega = coords[k];
    if (omega < kOmegaMin || omega > kOmegaMax) return kNegInf;
    double ss = 0.0;
    for (std::size_t j = k + 1; j < coords.size() && j < dimension(); ++j) ss += coords[j] * coords[j];
    return -0.5 * ss;
}

// --- joint targets ------------------------------------------------------------

InverseTarget::InverseTarget(const ParamCodec& codec, const Dataset& data, Mode mode, std::optional<std::size_t> site,
                             PriorWidth width)
    : codec_(&codec), data_(&data), mode_(mode), site_(site), width_(width) {
    if (mode_ != Mode::Forward && (!site_ || *site_ >= data.n()))
        throw InvalidArgument("InverseTarget: a valid site is required");
    if (mode_ == Mode::HoldOutCovariate) {
        pinned_ = data.s(*site_) == 0.0;
        free_heldout_ = pinned_ ? 0 : codec.spec().inverted().size();
    }
}

std::vector<std::string> InverseTarget::labels() const {
    auto labels = codec_->labels();
    if (free_heldout_ > 0)
        for (Covariate c : codec_->spec().inverted()) labels.push_back(c == Covariate::X ? "x" : "z");
    return labels;
}

ParamVector InverseTarget::params(std::span<const double> coords) const {
    return codec_->decode(coords.first(codec_->dimension()));
}

double InverseTarget::operator()(std::span<const double> coords) const {
    const auto param_coords = coords.first(codec_->dimension());
    double total = codec_->log_prior(param_coords);
    if (total == kNegInf) return kNegInf;
    const ParamVector theta = codec_->decode(param_coords);
    const ModelSpec& spec = codec_->spec();
    for (std::size_t j = 0; j < data_->n(); ++j) {
        if (mode_ != Mode::Forward && j == *site_) continue;
        total += site_log_likelihood(spec, *data_, j, site_predictor(spec, theta, *data_, j));
        if (total == kNegInf) return kNegInf;
    }
    if (mode_ != Mode::HoldOutCovariate) return total;

    const auto intervals = heldout_intervals(spec, theta, *data_, *site_, width_);
    if (intervals.empty()) return kNegInf;
    std::vector<double> values(intervals.size());
    for (std::size_t c = 0; c < intervals.size(); ++c) {
        if (pinned_) {
            values[c] = intervals[c].lo;
        } else {
            values[c] = coords[codec_->dimension() + c];
            total += log_uniform_density(intervals[c], values[c]);
            if (total == kNegInf) return kNegInf;
        }
    }
    return total + site_log_likelihood(spec, *data_, *site_, heldout_predictor(spec, theta, values));
}

std::vector<double> InverseTarget::held_out_values(std::span<const double> coords) const {
    if (mode_ != Mode::HoldOutCovariate) return {};
    if (!pinned_) return {coords.begin() + static_cast<std::ptrdiff_t>(codec_->dimension()), coords.end()};
    const auto intervals = heldout_intervals(codec_->spec(), params(coords), *data_, *site_, width_);
    std::vector<double> values;
    for (const auto& iv : intervals) values.push_back(iv.lo);
    return values;
}

std::vector<double> InverseTarget::initial_state(const ParamVector& theta) const {
    auto state = codec_->encode(theta);
    if (free_heldout_ > 0) {
        const auto intervals = heldout_intervals(codec_->spec(), theta, *data_, *site_, width_);
        if (intervals.empty()) throw InvalidState("InverseTarget: covariate prior undefined at the starting point");
        for (const auto& iv : intervals) state.push_back(midpoint(iv));
    }
    return state;
}

// --- pieces of the importance-resampling scheme ---------------------------------

std::size_t select_istar(const Dataset& data) {
    std::vector<double> means(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) means[i] = data.ybar(i);
    const double median = empirical_quantile(means, 0.5);
    std::size_t best = 0;
    for (std::size_t i = 1; i < means.size(); ++i)
        if (std::abs(means[i] - median) < std::abs(means[best] - median)) best = i;
    return best;
}

double log_heldout_marginal(const ModelSpec& spec, const ParamVector& theta, const Dataset& data, std::size_t site,
                            std::size_t quadrature_points, PriorWidth width) {
    const auto intervals = heldout_intervals(spec, theta, data, site, width);
    if (intervals.empty()) return kNegInf;
    const double log_q = std::log(static_cast<double>(quadrature_points));
    if (intervals.front().point_mass()) {
        std::vector<double> values;
        for (const auto& iv : intervals) values.push_back(iv.lo);
        return site_log_likelihood(spec, data, site, heldout_predictor(spec, theta, values));
    }
    auto node = [&](const XPriorInterval& iv, std::size_t k) {
        return iv.lo + (static_cast<double>(k) + 0.5) * iv.width() / static_cast<double>(quadrature_points);
    };
    LogSumExp acc;
    if (intervals.size() == 1) {
        double value[2] = {0.0, 0.0};
        for (std::size_t k = 0; k < quadrature_points; ++k) {
            value[0] = node(intervals[0], k);
            acc.add(site_log_likelihood(spec, data, site, heldout_predictor(spec, theta, value)));
        }
        return acc.value() - log_q;
    }
    double values[2];
    for (std::size_t k = 0; k < quadrature_points; ++k) {
        values[0] = node(intervals[0], k);
        for (std::size_t l = 0; l < quadrature_points; ++l) {
            values[1] = node(intervals[1], l);
            acc.add(site_log_likelihood(spec, data, site, heldout_predictor(spec, theta, values)));
        }
    }
    return acc.value() - 2.0 * log_q;
}

double log_importance_weight(const ModelSpec& spec, const ParamVector& theta, std::size_t site, std::size_t istar,
                             const Dataset& data, std::size_t quadrature_points, PriorWidth width) {
    if (site == istar) return 0.0;
    const double numer = site_log_likelihood(spec, data, istar, site_predictor(spec, theta, data, istar)) +
                         log_heldout_marginal(spec, theta, data, site, quadrature_points, width);
    const double denom = site_log_likelihood(spec, data, site, site_predictor(spec, theta, data, site)) +
                         log_heldout_marginal(spec, theta, data, istar, quadrature_points, width);
    if (denom == kNegInf || numer == kNegInf || std::isnan(numer) || std::isnan(denom)) return kNegInf;
    return numer - denom;
}

double importance_weight(const ModelSpec& spec, const ParamVector& theta, std::size_t site, std::size_t istar,
                         const Dataset& data, std::size_t quadrature_points, PriorWidth width) {
    return std::exp(log_importance_weight(spec, theta, site, istar, data, quadrature_points, width));
}

std::vector<std::size_t> weighted_sample_without_replacement(SeededStream& stream, std::span<const double> log_weights,
                                                             std::size_t count) {
    double top = kNegInf;
    for (double lw : log_weights)
        if (!std::isnan(lw)) top = std::max(top, lw);
    if (top == kNegInf) throw InvalidArgument("weighted sampling: every weight is zero");
    std::vector<std::pair<double, std::size_t>> keys;
    std::vector<double> positive_logs;
    std::vector<std::size_t> positive_index;
    for (std::size_t j = 0; j < log_weights.size(); ++j) {
        const double u = stream.uniform();
        const double w = std::isnan(log_weights[j]) ? 0.0 : std::exp(log_weights[j] - top);
        if (w > 0.0) {
            keys.emplace_back(std::log(u) / w, j);
            positive_logs.push_back(log_weights[j]);
            positive_index.push_back(j);
        }
    }
    const std::size_t take = std::min(count, keys.size());
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(take), keys.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<std::size_t> chosen;
    chosen.reserve(count);
    for (std::size_t k = 0; k < take; ++k) chosen.push_back(keys[k].second);
    while (chosen.size() < count) chosen.push_back(positive_index[stream.categorical_from_log(positive_logs)]);
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

ParamVector initial_params(const ModelSpec& spec, const Dataset& data) {
    const auto n = static_cast<Eigen::Index>(data.n());
    const Eigen::Index p = 1 + spec.uses_x() + spec.uses_z();
    Eigen::MatrixXd design(n, p);
    Eigen::VectorXd target(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto site = static_cast<std::size_t>(i);
        Eigen::Index c = 0;
        design(i, c++) = 1.0;
        if (spec.uses_x()) design(i, c++) = data.x()[site];
        if (spec.uses_z()) design(i, c++) = data.z()[site];
        const double mean = std::max(data.ybar(site), 0.5 / static_cast<double>(data.m()));
        switch (spec.link) {
            case Link::Log: target(i) = std::log(mean); break;
            case Link::Logit: target(i) = -std::log(mean); break;
            case Link::Probit: target(i) = std_normal_inverse_cdf(1.0 / (mean + 1.0)); break;
        }
    }
    const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(target);
    auto nonzero = [](double v) { return std::abs(v) < 1e-3 ? std::copysign(1e-3, v) : v; };
    ParamVector theta;
    Eigen::Index c = 0;
    theta.alpha = coef(c++);
    if (spec.uses_x()) theta.beta = nonzero(coef(c++));
    if (spec.uses_z()) theta.gamma = nonzero(coef(c++));
    if (spec.is_gp()) {
        theta.omega = -2.0;
        theta.eta.resize(data.n());
        for (std::size_t i = 0; i < data.n(); ++i)
            theta.eta[i] = mean_line(spec, theta, data.x()[i], spec.uses_z() ? data.z()[i] : 0.0);
    }
    return theta;
}

ChainRun run_chain(const InverseTarget& target, const ParamVector& start, std::size_t n_steps, std::size_t burn,
                   const std::map<std::string, double>& step_scales, SeededStream& stream) {
    if (burn >= n_steps) throw InvalidArgument("run_chain: burn-in must be shorter than the run");
    const auto labels = target.labels();
    std::vector<double> scales(labels.size());
    for (std::size_t j = 0; j < labels.size(); ++j) {
        const auto key = scale_key(labels[j]);
        const auto it = step_scales.find(key);
        scales[j] = it != step_scales.end() ? it->second : default_scale(key);
    }
    LogDensityFn fn = [&target](std::span<const double> c) { return target(c); };
    TmcmcChain chain(fn, target.initial_state(start), std::move(scales));
    chain.adapt(stream, burn);
    ChainRun run;
    run.states.reserve(n_steps - burn);
    for (std::size_t t = burn; t < n_steps; ++t) {
        chain.step(stream);
        run.states.push_back(chain.state());
    }
    run.acceptance_rate = chain.acceptance_rate();
    return run;
}

std::vector<ParamVector> forward_posterior_draws(const ModelSpec& spec, const Dataset& data, std::size_t n_steps,
                                                 std::size_t burn, const std::map<std::string, double>& step_scales,
                                                 SeededStream& stream, std::optional<std::size_t> exclude_site) {
    const ParamCodec codec(spec, data);
    const InverseTarget target(codec, data,
                               exclude_site ? InverseTarget::Mode::ExcludeSite : InverseTarget::Mode::Forward,
                               exclude_site, PriorWidth{});
    const auto run = run_chain(target, initial_params(spec, data), n_steps, burn, step_scales, stream);
    std::vector<ParamVector> draws;
    draws.reserve(run.states.size());
    for (const auto& s : run.states) draws.push_back(target.params(s));
    return draws;
}

// --- the full importance-resampling MCMC ------------------------------------------

namespace {

// Second-stage sampler for one site: TMCMC on the held-out covariates given
// each resampled parameter draw in turn, warm-started across draws.
CvPosterior second_stage(const ModelSpec& spec, const Dataset& data, std::size_t site,
                         const std::vector<ParamVector>& thetas, const std::vector<std::size_t>& chosen,
                         const ChainConfig& config, SeededStream& stream, double& acceptance) {
    CvPosterior post;
    post.site = site;
    post.covariates = spec.inverted();
    const std::size_t dim = post.covariates.size();
    const std::size_t per_theta = config.n_second_stage_per_theta;
    post.draws.assign(dim, {});
    for (auto& d : post.draws) d.reserve(chosen.size() * per_theta);
    acceptance = 1.0;

    auto conditional = [&](const ParamVector& theta, const std::vector<XPriorInterval>& intervals) {
        return LogDensityFn([&spec, &data, site, theta, intervals](std::span<const double> v) {
            double total = 0.0;
            for (std::size_t c = 0; c < intervals.size(); ++c) {
                total += log_uniform_density(intervals[c], v[c]);
                if (total == kNegInf) return kNegInf;
            }
            return total + site_log_likelihood(spec, data, site, heldout_predictor(spec, theta, v));
        });
    };

    // the conditional's spread changes with theta, so the step scale follows it
    const std::size_t scale_nodes = dim == 1 ? 4 * config.quadrature_points : config.quadrature_points;
    std::optional<TmcmcChain> chain;
    std::vector<XPriorInterval> previous;
    std::size_t steps = 0, accepted = 0;
    for (std::size_t idx : chosen) {
        const ParamVector& theta = thetas[idx];
        const auto intervals = heldout_intervals(spec, theta, data, site, config.prior_width);
        if (intervals.empty()) throw SiteFailure(site, "resampled parameter has no covariate prior");
        if (intervals.front().point_mass()) {
            for (std::size_t c = 0; c < dim; ++c) post.draws[c].insert(post.draws[c].end(), per_theta, intervals[c].lo);
            continue;
        }
        if (!chain) {
            std::vector<double> start, scales;
            for (std::size_t c = 0; c < dim; ++c) {
                start.push_back(midpoint(intervals[c]));
                const auto key = post.covariates[c] == Covariate::X ? "x" : "z";
                const auto it = config.step_scales.find(key);
                scales.push_back(it != config.step_scales.end() ? it->second : 0.05 * intervals[c].width());
            }
            chain.emplace(conditional(theta, intervals), std::move(start), std::move(scales));
            chain->set_scales(conditional_scales(spec, theta, data, site, intervals, scale_nodes));
            chain->adapt(stream, config.second_stage_initial_burn);
        } else if (!chain->retarget(conditional(theta, intervals))) {
            // previous value outside the new support: carry its relative position over
            std::vector<double> moved(dim);
            for (std::size_t c = 0; c < dim; ++c) {
                const double t = previous[c].point_mass()
                                     ? 0.5
                                     : std::clamp((chain->state()[c] - previous[c].lo) / previous[c].width(), 1e-6,
                                                  1.0 - 1e-6);
                moved[c] = intervals[c].lo + t * intervals[c].width();
            }
            chain->reset(std::move(moved));
        }
        chain->set_scales(conditional_scales(spec, theta, data, site, intervals, scale_nodes));
        for (std::size_t r = 0; r < per_theta; ++r) {
            accepted += chain->step(stream);
            ++steps;
            for (std::size_t c = 0; c < dim; ++c) post.draws[c].push_back(chain->state()[c]);
        }
        previous = intervals;
    }
    if (steps > 0) acceptance = static_cast<double>(accepted) / static_cast<double>(steps);
    post.summarize();
    return post;
}

}  // namespace

IrmcmcResult irmcmc_cv_posteriors(const ModelSpec& spec, const Dataset& data, const ChainConfig& config,
                                  const SeededStream& stream, std::optional<std::size_t> istar_override) {
    config.validate();
    IrmcmcResult result;
    result.istar = istar_override.value_or(select_istar(data));
    if (result.istar >= data.n()) throw InvalidArgument("irmcmc: pivot site out of range");
    const std::size_t n = data.n();

    const ParamCodec codec(spec, data);
    const InverseTarget pivot_target(codec, data, InverseTarget::Mode::HoldOutCovariate, result.istar,
                                     config.prior_width);
    auto pivot_stream = stream.derive("stage=pivot");
    const auto run = run_chain(pivot_target, initial_params(spec, data), config.n_first_stage, config.first_burn,
                               config.step_scales, pivot_stream);
    result.stage1_acceptance = run.acceptance_rate;

    std::vector<ParamVector> thetas;
    thetas.reserve(run.states.size());
    for (const auto& s : run.states) thetas.push_back(pivot_target.params(s));

    for (std::size_t i = 0; i < n; ++i) result.any_clamped |= response_window(data, i, config.prior_width).clamped;

    // per draw: log f(y_j | theta, x_j) and log of the held-out marginal for every site
    const std::size_t draws = thetas.size();
    std::vector<double> known(draws * n), heldout(draws * n);
    for (std::size_t d = 0; d < draws; ++d)
        for (std::size_t j = 0; j < n; ++j) {
            known[d * n + j] = site_log_likelihood(spec, data, j, site_predictor(spec, thetas[d], data, j));
            heldout[d * n + j] =
                log_heldout_marginal(spec, thetas[d], data, j, config.quadrature_points, config.prior_width);
        }

    const std::size_t pivot = result.istar;
    result.sites.resize(n);
    result.stage2_acceptance.resize(n);
    result.weight_ess.resize(n);
    std::vector<double> log_w(draws);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < draws; ++d) {
            if (i == pivot) {
                log_w[d] = 0.0;
                continue;
            }
            const double numer = known[d * n + pivot] + heldout[d * n + i];
            const double denom = known[d * n + i] + heldout[d * n + pivot];
            log_w[d] = (numer == kNegInf || denom == kNegInf || std::isnan(numer - denom)) ? kNegInf : numer - denom;
        }
        const double total = log_sum_exp(log_w);
        if (total == kNegInf) throw SiteFailure(i, "all importance weights are zero");
        double sum_sq = 0.0;
        for (double lw : log_w) sum_sq += std::exp(2.0 * (lw - total));
        result.weight_ess[i] = 1.0 / sum_sq;

        auto site_stream = stream.derive("site=" + std::to_string(i + 1));
        auto resample_stream = site_stream.derive("resample");
        const auto chosen = weighted_sample_without_replacement(resample_stream, log_w, config.n_resample);
        auto chain_stream = site_stream.derive("conditional");
        result.sites[i] = second_stage(spec, data, i, thetas, chosen, config, chain_stream, result.stage2_acceptance[i]);
    }
    return result;
}

CvPosterior direct_cv_posterior(const ModelSpec& spec, const Dataset& data, std::size_t site, std::size_t n_steps,
                                std::size_t burn, const ChainConfig& config, SeededStream& stream) {
    const ParamCodec codec(spec, data);
    const InverseTarget target(codec, data, InverseTarget::Mode::HoldOutCovariate, site, config.prior_width);
    const auto run = run_chain(target, initial_params(spec, data), n_steps, burn, config.step_scales, stream);
    CvPosterior post;
    post.site = site;
    post.covariates = spec.inverted();
    post.draws.assign(post.covariates.size(), {});
    for (const auto& s : run.states) {
        const auto values = target.held_out_values(s);
        for (std::size_t c = 0; c < values.size(); ++c) post.draws[c].push_back(values[c]);
    }
    post.summarize();
    return post;
}

}  // namespace invsel
