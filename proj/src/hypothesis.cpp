#include "invsel/hypothesis.hpp"

#include <algorithm>
#include <cmath>

#include "invsel/errors.hpp"
#include "invsel/random.hpp"

namespace invsel {

std::string to_string(DiscrepancyKind kind) {
    switch (kind) {
        case DiscrepancyKind::T1: return "T1";
        case DiscrepancyKind::T2: return "T2";
        case DiscrepancyKind::T3: return "T3";
    }
    return "?";
}

DiscrepancyKind parse_discrepancy_kind(const std::string& name) {
    if (name == "T1" || name == "t1") return DiscrepancyKind::T1;
    if (name == "T2" || name == "t2") return DiscrepancyKind::T2;
    if (name == "T3" || name == "t3") return DiscrepancyKind::T3;
    throw InvalidArgument("unknown discrepancy kind: " + name);
}

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t c, double scale) {
    if (a != b || a != c) throw InvalidArgument("discrepancy: length mismatch");
    if (a == 0) throw InvalidArgument("discrepancy: no sites");
    if (!(scale > 0.0)) throw InvalidArgument("discrepancy: c must be positive");
}

}  // namespace

double discrepancy_t1(std::span<const double> values, std::span<const double> means,
                      std::span<const double> variances, double c) {
    check_lengths(values.size(), means.size(), variances.size(), c);
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) total += std::abs(values[i] - means[i]) / std::sqrt(variances[i] + c);
    return total / static_cast<double>(values.size());
}

double discrepancy_t2(std::span<const double> values, std::span<const double> means,
                      std::span<const double> variances, double c) {
    check_lengths(values.size(), means.size(), variances.size(), c);
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double dev = values[i] - means[i];
        total += dev * dev / (variances[i] + c);
    }
    return total / static_cast<double>(values.size());
}

double discrepancy_t3(std::span<const Eigen::Vector2d> values, std::span<const Eigen::Vector2d> means,
                      std::span<const Eigen::Matrix2d> covariances, double c) {
    check_lengths(values.size(), means.size(), covariances.size(), c);
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const Eigen::Matrix2d& v = covariances[i];
        const double tol = 1e-12 * (1.0 + v.cwiseAbs().maxCoeff());
        if (std::abs(v(0, 1) - v(1, 0)) > tol || v(0, 0) < -tol || v(1, 1) < -tol ||
            v.determinant() < -tol * (1.0 + v.cwiseAbs().maxCoeff()))
            throw InvalidArgument("discrepancy_t3: covariance must be symmetric positive semidefinite");
        const Eigen::Matrix2d shifted = v + c * Eigen::Matrix2d::Identity();
        const Eigen::Vector2d dev = values[i] - means[i];
        total += dev.dot(shifted.ldlt().solve(dev));
    }
    return total / static_cast<double>(values.size());
}

DiscrepancyKind effective_kind(const ModelSpec& spec, DiscrepancyKind requested) {
    return spec.is_bivariate() ? DiscrepancyKind::T3 : requested;
}

double interval_coverage(std::span<const double> draws, double observed, double alpha_level, double& lower,
                         double& upper, double shift, double tolerance) {
    if (draws.empty()) throw InvalidArgument("interval_coverage: no draws");
    if (!(alpha_level > 0.0 && alpha_level < 1.0)) throw InvalidArgument("interval_coverage: alpha must lie in (0, 1)");
    if (!(tolerance >= 0.0) || !std::isfinite(shift)) throw InvalidArgument("interval_coverage: bad shift or tolerance");
    std::vector<double> sorted(draws.begin(), draws.end());
    std::sort(sorted.begin(), sorted.end());
    lower = sorted_quantile(sorted, 0.5 * alpha_level);
    upper = sorted_quantile(sorted, 1.0 - 0.5 * alpha_level);
    std::size_t inside = 0;
    for (double t : draws) {
        const double diff = t - observed;
        if (diff >= lower - shift - tolerance && diff <= upper - shift + tolerance) ++inside;
    }
    return static_cast<double>(inside) / static_cast<double>(draws.size());
}

DiscrepancyReport build_discrepancy_report(const ModelSpec& spec, const Dataset& data,
                                           const std::vector<CvPosterior>& cv_posteriors, DiscrepancyKind kind,
                                           double c, double alpha_level, double shift, double tolerance) {
    const std::size_t n = data.n();
    if (cv_posteriors.size() != n) throw InvalidState("discrepancy report: one CV posterior per site required");
    if ((kind == DiscrepancyKind::T3) != spec.is_bivariate())
        throw InvalidArgument("discrepancy report: T3 is used exactly for models with both covariates");
    const std::size_t count = cv_posteriors.front().size();
    const std::size_t dim = spec.inverted().size();
    for (const auto& post : cv_posteriors)
        if (post.size() != count || post.dimension() != dim)
            throw InvalidState("discrepancy report: CV posteriors hold different numbers of draws");
    if (count == 0) throw InvalidState("discrepancy report: empty CV posteriors");

    DiscrepancyReport report;
    report.model_id = spec.id;
    report.model_name = spec.name();
    report.kind = kind;
    report.c = c;
    report.alpha_level = alpha_level;
    report.draws.resize(count);

    if (kind == DiscrepancyKind::T3) {
        std::vector<Eigen::Vector2d> means(n), observed(n), values(n);
        std::vector<Eigen::Matrix2d> covs(n);
        for (std::size_t i = 0; i < n; ++i) {
            means[i] = cv_posteriors[i].mean;
            covs[i] = cv_posteriors[i].variance;
            observed[i] = Eigen::Vector2d(data.x()[i], data.z()[i]);
        }
        report.observed = discrepancy_t3(observed, means, covs, c);
        for (std::size_t j = 0; j < count; ++j) {
            for (std::size_t i = 0; i < n; ++i)
                values[i] = Eigen::Vector2d(cv_posteriors[i].draws[0][j], cv_posteriors[i].draws[1][j]);
            report.draws[j] = discrepancy_t3(values, means, covs, c);
        }
    } else {
        const std::vector<double>& truth = data.covariate(spec.inverted().front());
        std::vector<double> means(n), vars(n), values(n);
        for (std::size_t i = 0; i < n; ++i) {
            means[i] = cv_posteriors[i].mean(0);
            vars[i] = cv_posteriors[i].variance(0, 0);
        }
        auto measure = kind == DiscrepancyKind::T1 ? discrepancy_t1 : discrepancy_t2;
        report.observed = measure(truth, means, vars, c);
        for (std::size_t j = 0; j < count; ++j) {
            for (std::size_t i = 0; i < n; ++i) values[i] = cv_posteriors[i].draws[0][j];
            report.draws[j] = measure(values, means, vars, c);
        }
    }
    report.shift = shift;
    report.tolerance = tolerance;
    report.coverage =
        interval_coverage(report.draws, report.observed, alpha_level, report.lower, report.upper, shift, tolerance);
    return report;
}

double compute_v(double model_posterior_prob, double coverage) {
    if (!(model_posterior_prob >= 0.0 && model_posterior_prob <= 1.0 && coverage >= 0.0 && coverage <= 1.0))
        throw InvalidArgument("compute_v: probabilities must lie in [0, 1]");
    return 1.0 - model_posterior_prob * coverage;
}

std::vector<int> decide(std::span<const double> v, double beta) {
    std::vector<int> d(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) d[k] = v[k] > beta ? 1 : 0;
    return d;
}

ErrorRates conditional_error_rates(std::span<const int> d, std::span<const double> v) {
    if (d.size() != v.size()) throw InvalidArgument("conditional_error_rates: length mismatch");
    double fd = 0.0, fn = 0.0;
    std::size_t rejected = 0;
    for (std::size_t k = 0; k < d.size(); ++k) {
        if (d[k]) {
            fd += 1.0 - v[k];
            ++rejected;
        } else {
            fn += v[k];
        }
    }
    const std::size_t kept = d.size() - rejected;
    return {fd / static_cast<double>(std::max<std::size_t>(rejected, 1)),
            fn / static_cast<double>(std::max<std::size_t>(kept, 1))};
}

std::vector<double> default_beta_grid() {
    std::vector<double> grid;
    for (int k = 1; k <= 99; ++k) grid.push_back(k / 100.0);
    return grid;
}

std::vector<int> DecisionTable::accepted(std::size_t g) const {
    std::vector<int> ids;
    for (std::size_t k = 0; k < model_ids.size(); ++k)
        if (decisions[g][k] == 0) ids.push_back(model_ids[k]);
    return ids;
}

DecisionTable beta_sweep(const std::map<int, double>& v, const std::vector<double>& grid) {
    if (grid.empty()) throw InvalidArgument("beta_sweep: empty grid");
    for (std::size_t g = 0; g < grid.size(); ++g) {
        if (!(grid[g] > 0.0 && grid[g] < 1.0)) throw InvalidArgument("beta_sweep: grid must lie in (0, 1)");
        if (g > 0 && !(grid[g] > grid[g - 1])) throw InvalidArgument("beta_sweep: grid must be increasing");
    }
    DecisionTable table;
    table.beta_grid = grid;
    for (const auto& [id, value] : v) {
        table.model_ids.push_back(id);
        table.v.push_back(value);
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
        auto d = decide(table.v, grid[g]);
        const auto rates = conditional_error_rates(d, table.v);
        table.cfdr.push_back(rates.cfdr);
        table.cfnr.push_back(rates.cfnr);
        if (g > 0 && d != table.decisions.back()) table.change_points.push_back(g);
        table.decisions.push_back(std::move(d));
    }
    return table;
}

}  // namespace invsel
