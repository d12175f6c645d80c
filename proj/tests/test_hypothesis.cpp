#include <doctest.h>

#include <cmath>

#include "invsel/errors.hpp"
#include "invsel/hypothesis.hpp"
#include "invsel/random.hpp"
#include "oracles.hpp"

using namespace invsel;

TEST_CASE("discrepancies") {
    const std::vector<double> v{1.0, 2.0, 3.0}, mean{1.0, 2.0, 3.0}, var{0.5, 0.0, 2.0};
    CHECK(discrepancy_t1(v, mean, var, 1.0) == 0.0);
    CHECK(discrepancy_t2(v, mean, var, 1.0) == 0.0);
    const std::vector<double> off{2.0, 1.0, 4.0}, zero{0.0, 0.0, 0.0};
    CHECK(discrepancy_t1(off, mean, zero, 1.0) == doctest::Approx(1.0));
    CHECK(discrepancy_t2(off, mean, zero, 1.0) == doctest::Approx(1.0));
    CHECK(discrepancy_t1(off, mean, zero, 2.0) < 1.0);
    CHECK(discrepancy_t2(off, mean, zero, 2.0) < 1.0);
    const std::vector<double> short_v{1.0};
    CHECK_THROWS_AS(discrepancy_t1(short_v, mean, var, 1.0), InvalidArgument);

    const std::vector<Eigen::Vector2d> p{{1.0, 1.0}}, origin{{0.0, 0.0}};
    const std::vector<Eigen::Matrix2d> none{Eigen::Matrix2d::Zero()};
    CHECK(discrepancy_t3(p, origin, none, 1.0) == doctest::Approx(2.0));
    CHECK(discrepancy_t3(origin, origin, none, 1.0) == 0.0);
    // isotropic covariance: rotation invariant
    const std::vector<Eigen::Matrix2d> iso{Eigen::Matrix2d::Identity() * 0.5};
    const std::vector<Eigen::Vector2d> rotated{{std::sqrt(2.0), 0.0}};
    CHECK(discrepancy_t3(p, origin, iso, 1.0) == doctest::Approx(discrepancy_t3(rotated, origin, iso, 1.0)));
    Eigen::Matrix2d indefinite;
    indefinite << 1.0, 2.0, 2.0, 1.0;
    const std::vector<Eigen::Matrix2d> bad{indefinite};
    CHECK_THROWS_AS(discrepancy_t3(p, origin, bad, 1.0), InvalidArgument);
}

TEST_CASE("interval coverage") {
    std::vector<double> grid(10000);
    for (std::size_t j = 0; j < grid.size(); ++j) grid[j] = (j + 0.5) / grid.size();
    double lo = 0, hi = 0;
    CHECK(interval_coverage(grid, 0.4, 0.05, lo, hi) == doctest::Approx(0.575).epsilon(1e-3));
    CHECK(lo == doctest::Approx(0.025).epsilon(1e-3));
    CHECK(interval_coverage(grid, 0.0, 0.05, lo, hi) == doctest::Approx(0.95).epsilon(1e-3));
    // a shift of 0.1 moves the window down by 0.1
    CHECK(interval_coverage(grid, 0.4, 0.05, lo, hi, 0.1) == doctest::Approx(0.675).epsilon(1e-3));
    CHECK(interval_coverage(grid, 0.4, 0.05, lo, hi, 0.0, 0.05) == doctest::Approx(0.575 + 0.05).epsilon(1e-3));

    // moving every draw moves the interval with it; the observed value stays put
    std::vector<double> shifted(grid);
    for (auto& g : shifted) g += 3.0;
    CHECK(interval_coverage(shifted, 0.4, 0.05, lo, hi) == doctest::Approx(interval_coverage(grid, 0.4, 0.05, lo, hi)));

    const std::vector<double> constant(50, 2.0);
    CHECK(interval_coverage(constant, 0.0, 0.05, lo, hi) == 1.0);
    CHECK(interval_coverage(constant, 1.0, 0.05, lo, hi) == 0.0);
}

TEST_CASE("discrepancy report pairs draws across sites") {
    ModelSpec pois;
    const Dataset data({0.0, 1.0}, std::nullopt, {{1, 1}, {2, 2}});
    std::vector<CvPosterior> post(2);
    for (std::size_t i = 0; i < 2; ++i) {
        post[i].site = i;
        post[i].covariates = {Covariate::X};
        post[i].draws = {{0.0, 1.0, 2.0, 3.0}};
        post[i].summarize();
    }
    const auto r = build_discrepancy_report(pois, data, post, DiscrepancyKind::T2, 1.0, 0.05);
    REQUIRE(r.draws.size() == 4);
    const double var = post[0].variance(0, 0);
    // j-th draw pairs (j, j) across both sites
    CHECK(r.draws[0] == doctest::Approx(1.5 * 1.5 / (var + 1.0)));
    CHECK(r.observed == doctest::Approx(0.5 * (1.5 * 1.5 + 0.5 * 0.5) / (var + 1.0)));
    post[1].draws[0].pop_back();
    CHECK_THROWS_AS(build_discrepancy_report(pois, data, post, DiscrepancyKind::T2, 1.0, 0.05), InvalidState);
    CHECK_THROWS_AS(build_discrepancy_report(pois, data, post, DiscrepancyKind::T3, 1.0, 0.05), InvalidArgument);

    ModelSpec xz = pois;
    xz.covariates = CovariateSet::XZ;
    CHECK(effective_kind(xz, DiscrepancyKind::T1) == DiscrepancyKind::T3);
    CHECK(effective_kind(pois, DiscrepancyKind::T2) == DiscrepancyKind::T2);
}

TEST_CASE("v and decisions") {
    CHECK(compute_v(0.0, 0.7) == 1.0);
    CHECK(compute_v(1.0, 1.0) == 0.0);
    CHECK(compute_v(0.8, 0.5) == doctest::Approx(0.6));
    CHECK(decide(std::vector<double>{0.9, 0.1}, 0.5) == std::vector<int>{1, 0});
    CHECK(decide(std::vector<double>{0.5}, 0.5) == std::vector<int>{0});
    CHECK(decide(std::vector<double>{0.3, 0.98}, 0.99) == std::vector<int>{0, 0});

    const std::vector<double> v{0.9, 0.9, 0.1};
    const auto rates = conditional_error_rates(std::vector<int>{1, 1, 0}, v);
    CHECK(rates.cfdr == doctest::Approx(0.1));
    CHECK(rates.cfnr == doctest::Approx(0.1));
    const auto none = conditional_error_rates(std::vector<int>{0, 0, 0}, v);
    CHECK(none.cfdr == 0.0);
    CHECK(none.cfnr == doctest::Approx(19.0 / 30.0));
    const auto all = conditional_error_rates(std::vector<int>{1, 1, 1}, v);
    CHECK(all.cfdr == doctest::Approx(1.1 / 3.0));
    CHECK(all.cfnr == 0.0);
}

TEST_CASE("threshold decision maximizes the expected-discovery objective") {
    CHECK(oracle::decision_bruteforce_mismatches(1000, 7) == 0);
}

TEST_CASE("decision invariant under increasing transforms") {
    SeededStream s(8, "transform");
    for (int t = 0; t < 200; ++t) {
        std::vector<double> v(4), v2(4);
        for (int k = 0; k < 4; ++k) {
            v[k] = s.uniform();
            v2[k] = std::pow(v[k], 3.0);
        }
        const double beta = s.uniform();
        CHECK(decide(v, beta) == decide(v2, std::pow(beta, 3.0)));
    }
}

TEST_CASE("beta sweep monotonicity and change points") {
    SeededStream s(9, "sweep");
    for (int t = 0; t < 300; ++t) {
        std::map<int, double> v;
        const int K = 2 + static_cast<int>(s.uniform() * 5);
        for (int k = 1; k <= K; ++k) v[k] = s.uniform();
        const auto table = beta_sweep(v);
        for (std::size_t g = 1; g < table.beta_grid.size(); ++g) {
            CHECK(table.cfdr[g] <= table.cfdr[g - 1] + 1e-15);
            CHECK(table.cfnr[g] >= table.cfnr[g - 1] - 1e-15);
        }
    }
    const auto equal = beta_sweep({{1, 0.4}, {2, 0.4}, {3, 0.4}});
    CHECK(equal.change_points.size() <= 1);
    const auto low = beta_sweep({{1, 0.5}, {2, 0.7}});
    CHECK(low.decisions[0] == std::vector<int>{1, 1});
    CHECK(low.accepted(98) == std::vector<int>{1, 2});
    CHECK_THROWS_AS(beta_sweep({{1, 0.5}}, {0.5, 0.4}), InvalidArgument);
    CHECK_THROWS_AS(beta_sweep({{1, 0.5}}, {0.0, 0.4}), InvalidArgument);
}
