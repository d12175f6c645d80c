#include <doctest.h>

#include <cmath>
#include <numbers>

#include "invsel/errors.hpp"
#include "invsel/models.hpp"
#include "invsel/random.hpp"

using namespace invsel;

namespace {

ModelSpec model(Family f, Link l, RegressionForm r = RegressionForm::Linear, CovariateSet c = CovariateSet::X) {
    ModelSpec s;
    s.family = f;
    s.link = l;
    s.form = r;
    s.covariates = c;
    return s;
}

ParamVector line(double a, double b) {
    ParamVector t;
    t.alpha = a;
    t.beta = b;
    return t;
}

}  // namespace

TEST_CASE("rosters and names") {
    const auto single = single_covariate_roster();
    CHECK(single.size() == 6);
    CHECK(two_covariate_roster().size() == 18);
    CHECK(two_covariate_linear_roster().size() == 9);
    for (const auto& s : two_covariate_roster()) CHECK(same_model(parse_model_name(s.name(), 1), s));
    CHECK_THROWS_AS(validate(model(Family::Poisson, Link::Logit)), InvalidArgument);
    CHECK_THROWS_AS(validate(model(Family::Geometric, Link::Log)), InvalidArgument);
    CHECK_THROWS_AS(parse_model_name("poisson-log-cubic-x", 1), InvalidArgument);
    std::vector<ModelSpec> dup{single[0], single[1]};
    dup[1].id = dup[0].id;
    CHECK_THROWS_AS(validate_roster(dup), InvalidArgument);
}

TEST_CASE("link functions") {
    const auto pois = model(Family::Poisson, Link::Log);
    const auto logit = model(Family::Geometric, Link::Logit);
    const auto probit = model(Family::Geometric, Link::Probit);
    for (double x : {-3.0, 0.0, 7.0}) CHECK(mean_response(pois, line(0, 0), x) == doctest::Approx(1.0));
    CHECK(response_from_predictor(logit, 0.0) == doctest::Approx(0.5));
    CHECK(std::abs(response_from_predictor(probit, mean_line(probit, line(1, 2), 0.5, 0.0)) - 0.97725) < 1e-5);
    // logit: geometric mean (1-p)/p = exp(-lp)
    const double p = response_from_predictor(logit, 0.7);
    CHECK((1.0 - p) / p == doctest::Approx(std::exp(-0.7)));

    ParamVector two = line(0.1, 0.2);
    two.gamma = 0.3;
    const auto xz = model(Family::Poisson, Link::Log, RegressionForm::Linear, CovariateSet::XZ);
    CHECK_THROWS_AS(mean_response(xz, two, 1.0), InvalidArgument);
    CHECK(mean_response(xz, two, 1.0, 2.0) == doctest::Approx(std::exp(0.1 + 0.2 + 0.6)));
}

TEST_CASE("observation densities") {
    const auto pois = model(Family::Poisson, Link::Log);
    const auto logit = model(Family::Geometric, Link::Logit);
    CHECK(observation_log_pmf(pois, 0, 0.0) == doctest::Approx(-1.0));
    CHECK(observation_log_pmf(logit, 0, 0.0) == doctest::Approx(std::log(0.5)));

    const Dataset data({0.0, std::log(2.0)}, std::nullopt, {{1, 1}, {2, 2}});
    const std::vector<std::size_t> sites{0, 1};
    const std::vector<std::vector<std::size_t>> first{{0}, {0}};
    CHECK(log_likelihood(pois, line(0, 1), data, sites, &first) == doctest::Approx(-3.0 + std::log(2.0)));
    // sum over all replicates is twice that
    CHECK(log_likelihood(pois, line(0, 1), data) == doctest::Approx(2.0 * (-3.0 + std::log(2.0))));

    const auto probit = model(Family::Geometric, Link::Probit);
    // p = Phi(50) rounds to 1; the failure term stays finite through log Phi(-50)
    CHECK(observation_log_pmf(probit, 3, 50.0) == doctest::Approx(3.0 * log_std_normal_cdf(-50.0)));
    CHECK(observation_log_pmf(pois, 1, -1e6) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("site likelihood from sufficient statistics matches per-observation sums") {
    SeededStream s(4, "suff");
    std::vector<double> x(4);
    std::vector<std::vector<std::int64_t>> y(4, std::vector<std::int64_t>(6));
    for (std::size_t i = 0; i < 4; ++i) {
        x[i] = s.uniform(-1, 1);
        for (auto& v : y[i]) v = s.poisson(2.5);
    }
    const Dataset data(x, std::nullopt, y);
    for (const auto& spec : single_covariate_roster()) {
        if (spec.is_gp()) continue;
        for (std::size_t i = 0; i < 4; ++i) {
            const double lp = 0.3 - 0.2 * i;
            double direct = 0.0;
            for (auto v : y[i]) direct += observation_log_pmf(spec, v, lp);
            CHECK(site_log_likelihood(spec, data, i, lp) == doctest::Approx(direct).epsilon(1e-12));
        }
    }
}

TEST_CASE("GP prior density") {
    Eigen::MatrixXd one(1, 1);
    one << 0.3;
    const std::vector<double> mu1{0.7};
    CHECK(gp_log_density(one, mu1, mu1, 0.0) ==
          doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-7));

    Eigen::MatrixXd pts(2, 1);
    pts << 0.0, 1.0;
    const auto k = gp_cov_matrix(pts, 0.0, 0.0);
    CHECK(std::abs(k(0, 1) - 0.367879441171) < 1e-9);
    Eigen::MatrixXd same(2, 1);
    same << 0.5, 0.5;
    CHECK(gp_cov_matrix(same, 0.0, 0.0).isApproxToConstant(1.0));

    const std::vector<double> mu{0.2, -0.1};
    const double expected = -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(1.0 - std::exp(-2.0));
    CHECK(gp_log_density(pts, mu, mu, 0.0) == doctest::Approx(expected).epsilon(1e-7));

    // through the model prior: eta on the mean line
    const auto gp = model(Family::Poisson, Link::Log, RegressionForm::GaussianProcess);
    const Dataset data({0.0, 1.0}, std::nullopt, {{1, 2}, {3, 4}});
    ParamVector th = line(0.4, -0.5);
    th.omega = 0.0;
    th.eta = {0.4, -0.1};
    CHECK(log_param_prior(gp, th, data) == doctest::Approx(expected).epsilon(1e-7));
    CHECK(log_param_prior(model(Family::Poisson, Link::Log), line(3, -9), data) == 0.0);
}

TEST_CASE("GP conditional structure matches the joint covariance") {
    const Dataset data({-0.8, -0.1, 0.3, 0.9}, std::nullopt, {{1, 1}, {1, 1}, {1, 1}, {1, 1}});
    const auto gp = model(Family::Poisson, Link::Log, RegressionForm::GaussianProcess);
    const GpStructure g(gp, data);
    const Eigen::MatrixXd k = gp_cov_matrix(gp_points(gp, data), 0.0, kGpRelativeJitter);
    const Eigen::MatrixXd prec = k.inverse();
    for (std::size_t i = 0; i < 4; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        CHECK(g.conditional_variance(i) == doctest::Approx(1.0 / prec(ii, ii)).epsilon(1e-8));
        for (Eigen::Index j = 0; j < 4; ++j)
            if (j != ii) CHECK(g.conditional_weights(i)(j) == doctest::Approx(-prec(ii, j) / prec(ii, ii)).epsilon(1e-6));
    }
    CHECK((g.chol() * g.chol().transpose() - k).norm() < 1e-10);
}

TEST_CASE("covariate prior interval") {
    const auto w = response_window(3.0, 1.0, 100, PriorWidth{1.0, 100.0});
    CHECK(w.lower == doctest::Approx(2.9));
    CHECK(w.upper == doctest::Approx(13.0));
    CHECK_FALSE(w.clamped);
    const auto iv = covariate_interval(Link::Log, w, 0.5, 2.0);
    REQUIRE(iv.has_value());
    const double a = (std::log(2.9) - 0.5) / 2.0, b = (std::log(13.0) - 0.5) / 2.0;
    CHECK(iv->lo == doctest::Approx(a));
    CHECK(iv->hi == doctest::Approx(b));
    CHECK(log_uniform_density(*iv, 0.5 * (a + b)) == doctest::Approx(-std::log(b - a)));
    CHECK(log_uniform_density(XPriorInterval{0.0, 2.0}, 1.0) == doctest::Approx(-std::log(2.0)));
    CHECK(log_uniform_density(XPriorInterval{0.0, 2.0}, 2.5) == -std::numeric_limits<double>::infinity());

    // degenerate interval at log ybar
    const auto point = covariate_interval(Link::Log, response_window(std::exp(1.0), 0.0, 10, {}), 0.0, 1.0);
    REQUIRE(point.has_value());
    CHECK(point->lo == doctest::Approx(1.0));
    CHECK(point->point_mass());

    CHECK_FALSE(covariate_interval(Link::Log, w, 0.0, 1e-12).has_value());
    // negative slope flips the ends
    const auto neg = covariate_interval(Link::Log, w, 0.0, -1.0);
    CHECK(neg->lo == doctest::Approx(-std::log(13.0)));

    const auto clamped = response_window(1.0, 5.0, 4, {});
    CHECK(clamped.clamped);
    CHECK(clamped.lower == doctest::Approx(1e-3));
}

TEST_CASE("logit and probit windows invert the geometric mean") {
    const ResponseWindow w{0.5, 4.0, false};
    // logit: mean (1-p)/p = exp(-lp)  =>  lp = -log(mean)
    const auto lg = covariate_interval(Link::Logit, w, 0.0, 1.0);
    CHECK(lg->lo == doctest::Approx(-std::log(4.0)));
    CHECK(lg->hi == doctest::Approx(-std::log(0.5)));
    // probit: p = 1/(1+mean)
    const auto pr = covariate_interval(Link::Probit, w, 0.0, 1.0);
    CHECK(pr->lo == doctest::Approx(std_normal_inverse_cdf(1.0 / 5.0)));
    CHECK(pr->hi == doctest::Approx(std_normal_inverse_cdf(1.0 / 1.5)));
}

TEST_CASE("x prior interval via the dataset and degenerate coefficients") {
    const auto pois = model(Family::Poisson, Link::Log);
    const Dataset data({0.1, 0.2}, std::nullopt, {{2, 4}, {3, 3}});
    CHECK_THROWS_AS(x_prior_interval(pois, line(0, 0), data, 0, Covariate::X), DegenerateCoefficient);
    CHECK_FALSE(try_x_prior_interval(pois, line(0, 0), data, 0, Covariate::X).has_value());
    const auto iv = x_prior_interval(pois, line(0.2, 1.5), data, 0, Covariate::X);
    const double s = std::sqrt(2.0);
    CHECK(iv.lo == doctest::Approx((std::log(3.0 - s / std::sqrt(2.0)) - 0.2) / 1.5));
    CHECK(iv.hi == doctest::Approx((std::log(3.0 + 100.0 * s / std::sqrt(2.0)) - 0.2) / 1.5));
}

TEST_CASE("the prior interval contains the true covariate as m grows") {
    // The lower response bound ybar - c1 s / sqrt(m) exceeds the true mean with
    // probability 1 - Phi(c1) in the limit, so containment tends to Phi(c1).
    SeededStream s(17, "consistency");
    const auto pois = model(Family::Poisson, Link::Log);
    const std::size_t n = 200, m = 10000;
    std::vector<double> x(n);
    std::vector<std::vector<std::int64_t>> y(n, std::vector<std::int64_t>(m));
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = s.uniform(-1, 1);
        for (auto& v : y[i]) v = s.poisson(std::exp(0.3 + 0.8 * x[i]));
    }
    const Dataset data(x, std::nullopt, y);
    auto fraction = [&](double c1) {
        std::size_t inside = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto iv = x_prior_interval(pois, line(0.3, 0.8), data, i, Covariate::X, PriorWidth{c1, 100.0});
            if (iv.lo < x[i] && x[i] < iv.hi) ++inside;
        }
        return static_cast<double>(inside) / n;
    };
    const double phi1 = std_normal_cdf(1.0);
    CHECK(std::abs(fraction(1.0) - phi1) < 3.0 * std::sqrt(phi1 * (1 - phi1) / n));
    CHECK(fraction(3.0) >= 0.99);
}
