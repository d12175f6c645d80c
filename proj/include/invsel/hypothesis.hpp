#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "invsel/models.hpp"
#include "invsel/samplers.hpp"

namespace invsel {

enum class DiscrepancyKind { T1, T2, T3 };

std::string to_string(DiscrepancyKind kind);
DiscrepancyKind parse_discrepancy_kind(const std::string& name);

/// (1/n) sum |v_i - E_i| / sqrt(Var_i + c).
double discrepancy_t1(std::span<const double> values, std::span<const double> means,
                      std::span<const double> variances, double c);
/// (1/n) sum (v_i - E_i)^2 / (Var_i + c).
double discrepancy_t2(std::span<const double> values, std::span<const double> means,
                      std::span<const double> variances, double c);
/// (1/n) sum (v_i - E_i)^T (Var_i + c I)^{-1} (v_i - E_i) for 2-vectors.
/// Throws InvalidArgument when a covariance is not symmetric PSD.
double discrepancy_t3(std::span<const Eigen::Vector2d> values, std::span<const Eigen::Vector2d> means,
                      std::span<const Eigen::Matrix2d> covariances, double c);

struct DiscrepancyReport {
    int model_id = 0;
    std::string model_name;
    DiscrepancyKind kind = DiscrepancyKind::T1;
    double c = 1.0;
    /// T at the observed covariates.
    double observed = 0.0;
    /// T at the j-th joint draw of the held-out covariates.
    std::vector<double> draws;
    double lower = 0.0;
    double upper = 0.0;
    double alpha_level = 0.05;
    /// Shift a and tolerance eps of the null event.
    double shift = 0.0;
    double tolerance = 0.0;
    /// Fraction of draws with T(draw) - observed in [lower - shift - tolerance, upper - shift + tolerance].
    double coverage = 0.0;
};

/// Kind used for a model under a requested single-covariate kind: models
/// with both covariates always use T3.
DiscrepancyKind effective_kind(const ModelSpec& spec, DiscrepancyKind requested);

/// Joint draws pair the j-th draw of every site. The observed value uses
/// the same per-site means and variances as the draws.
/// Throws InvalidState when the sites hold different numbers of draws and
/// InvalidArgument when `kind` does not fit the model's covariate set.
DiscrepancyReport build_discrepancy_report(const ModelSpec& spec, const Dataset& data,
                                           const std::vector<CvPosterior>& cv_posteriors, DiscrepancyKind kind,
                                           double c, double alpha_level, double shift = 0.0,
                                           double tolerance = 0.0);

/// Fraction of `draws` whose value minus `observed` lies in the equal-tailed
/// (1 - alpha_level) interval of the draws, moved by -shift and widened by
/// `tolerance` on both sides; the unmoved interval is written to lower/upper.
double interval_coverage(std::span<const double> draws, double observed, double alpha_level, double& lower,
                         double& upper, double shift = 0.0, double tolerance = 0.0);

/// 1 - P(zeta = k) * coverage.
double compute_v(double model_posterior_prob, double coverage);

/// d_k = 1 iff v_k > beta.
std::vector<int> decide(std::span<const double> v, double beta);

struct ErrorRates {
    double cfdr = 0.0;
    double cfnr = 0.0;
};
/// cFDR = sum d(1 - v) / max(sum d, 1); cFNR = sum (1 - d) v / max(sum (1 - d), 1).
ErrorRates conditional_error_rates(std::span<const int> d, std::span<const double> v);

/// 0.01, 0.02, ..., 0.99.
std::vector<double> default_beta_grid();

struct DecisionTable {
    std::vector<double> beta_grid;
    std::vector<int> model_ids;
    std::vector<double> v;
    /// decisions[g][k] for beta_grid[g] and model_ids[k].
    std::vector<std::vector<int>> decisions;
    std::vector<double> cfdr;
    std::vector<double> cfnr;
    /// Grid indices g > 0 where decisions[g] differs from decisions[g - 1].
    std::vector<std::size_t> change_points;

    /// Ids whose null is accepted (d = 0) at grid index g.
    std::vector<int> accepted(std::size_t g) const;
};

/// Throws InvalidArgument unless the grid is increasing inside (0, 1).
DecisionTable beta_sweep(const std::map<int, double>& v, const std::vector<double>& grid = default_beta_grid());

}  // namespace invsel
