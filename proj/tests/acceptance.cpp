// Acceptance checks 1-7. Prints one PASS/FAIL line per criterion, with
// supporting numbers on indented lines, and exits nonzero if any fails.
// Usage: acceptance [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "invsel/harness.hpp"
#include "invsel/serialization.hpp"
#include "oracles.hpp"

using namespace invsel;

namespace {

struct Outcome {
    bool pass = false;
    std::string summary;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void note(const std::string& line) {
    std::printf("    %s\n", line.c_str());
    std::fflush(stdout);
}

int id_of(const ExperimentResult& r, const std::string& name) {
    for (const auto& m : r.models)
        if (m.spec.name() == name) return m.spec.id;
    return -1;
}

std::string name_of(const ExperimentResult& r, int id) {
    for (const auto& m : r.models)
        if (m.spec.id == id) return m.spec.name();
    return "?";
}

// Model ids sorted by v, ascending; ties keep id order.
std::vector<int> order_by_v(const std::map<int, double>& v) {
    std::vector<int> ids;
    for (const auto& [k, x] : v) ids.push_back(k);
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return v.at(a) < v.at(b); });
    return ids;
}

// `id` has the unique smallest v: as beta rises it is accepted first and alone.
bool first_alone(const std::map<int, double>& v, int id) {
    const auto ids = order_by_v(v);
    return ids.size() > 1 && ids[0] == id && v.at(ids[0]) < v.at(ids[1]);
}

// Some grid beta accepts exactly {id}.
bool exact_range(const DecisionTable& t, int id) {
    for (std::size_t g = 0; g < t.beta_grid.size(); ++g)
        if (t.accepted(g) == std::vector<int>{id}) return true;
    return false;
}

bool monotone(const DecisionTable& t) {
    for (std::size_t g = 1; g < t.beta_grid.size(); ++g)
        if (t.cfdr[g] > t.cfdr[g - 1] + 1e-12 || t.cfnr[g] < t.cfnr[g - 1] - 1e-12) return false;
    return true;
}

ExperimentConfig desk(std::uint64_t seed) {
    auto c = ExperimentConfig::preset("desk");
    c.root_seed = seed;
    return c;
}

std::string v_line(const ExperimentResult& r, const std::map<int, double>& v) {
    std::string s;
    for (int id : order_by_v(v)) s += fmt("%s=%.3f ", name_of(r, id).c_str(), v.at(id));
    return s;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
    std::vector<std::string> failed;
    auto check = [&](bool ok, const std::string& what) {
        note(std::string(ok ? "ok   " : "FAIL ") + what);
        if (!ok) failed.push_back(what);
    };
    const double rt = oracle::normal_roundtrip_error();
    check(rt < 1e-8, fmt("Phi round trip max error %.2e (< 1e-8)", rt));
    for (const auto& alpha : {std::vector<double>{1, 1, 1}, std::vector<double>{0.5, 2.0, 5.0}}) {
        const double z = oracle::dirichlet_moment_z(alpha, 100000, 1);
        check(z < 3.0, fmt("Dirichlet(%g,%g,%g) moments worst %.2f SE (< 3)", alpha[0], alpha[1], alpha[2], z));
    }
    const auto nm = oracle::batch_moments(oracle::tmcmc_trace("normal", 100000, 0.0, 2.4, 1));
    check(std::abs(nm.mean) < 3 * nm.mean_se && std::abs(nm.var - 1) < 3 * nm.var_se,
          fmt("TMCMC N(0,1): mean %.4f (SE %.4f), var %.4f (SE %.4f)", nm.mean, nm.mean_se, nm.var, nm.var_se));
    const auto gm = oracle::batch_moments(oracle::tmcmc_trace("gamma", 100000, 1.5, 2.0, 1));
    check(std::abs(gm.mean - 1.5) < 3 * gm.mean_se && std::abs(gm.var - 0.75) < 3 * gm.var_se,
          fmt("TMCMC Gamma(3,2): mean %.4f (SE %.4f), var %.4f (SE %.4f)", gm.mean, gm.mean_se, gm.var, gm.var_se));
    const double cpo = oracle::conjugate_cpo_relative_error(1, 10, 5, 2.0, 2.0, 1.0, 20000);
    check(cpo < 0.05, fmt("CPO vs negative binomial: worst relative log error %.4f (< 0.05)", cpo));
    double worst = 0.0;
    for (double log_r : {-2.0, -0.5, 0.0, 1.0}) {
        SeededStream s(1, fmt("acceptance/gibbs/%g", log_r));
        const auto g = gibbs_model_posterior({{1, 0.0}, {2, log_r}}, {{1, 1.0}, {2, 1.0}}, 100000, 10000, s);
        worst = std::max(worst, std::abs(g.at(1) - oracle::discretized_gibbs_probability(log_r, 1.0, 1.0)));
    }
    check(worst < 0.02, fmt("Gibbs K=2 vs discretized chain: worst difference %.4f (< 0.02)", worst));
    const auto bad = oracle::decision_bruteforce_mismatches(1000, 1);
    check(bad == 0, fmt("threshold vs exhaustive maximizer, 1000 sets with K<=4: %zu mismatches", bad));
    return {failed.empty(), failed.empty() ? "all oracle checks within tolerance"
                                           : fmt("%zu oracle check(s) outside tolerance", failed.size())};
}

double ks_distance(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
    }
    return d;
}

Outcome criterion2() {
    ModelSpec spec;  // poisson-log-linear-x
    SeededStream gen(2, "acceptance/toy");
    const std::vector<double> x{-0.6, 0.1, 0.7};
    std::vector<std::vector<std::int64_t>> y(3, std::vector<std::int64_t>(20));
    for (std::size_t i = 0; i < 3; ++i)
        for (auto& v : y[i]) v = gen.poisson(std::exp(0.5 + 0.8 * x[i]));
    const Dataset data(x, std::nullopt, y);
    const auto chain = ChainConfig::paper();

    const SeededStream root(2, "acceptance/irmcmc");
    const auto irm = irmcmc_cv_posteriors(spec, data, chain, root);
    SeededStream ds = root.derive("direct");
    const auto direct = direct_cv_posterior(spec, data, 0, 1000000, 100000, chain, ds);
    SeededStream fs = root.derive("forward");
    const auto fwd = forward_posterior_draws(spec, data, 50000, 10000, {}, fs);
    ParamVector mean;
    mean.alpha = 0.0;
    mean.beta = 0.0;
    for (const auto& d : fwd) {
        mean.alpha += d.alpha / static_cast<double>(fwd.size());
        *mean.beta += *d.beta / static_cast<double>(fwd.size());
    }
    const auto iv = x_prior_interval(spec, mean, data, 0, Covariate::X);
    const auto& a = irm.sites[0].draws[0];
    const auto& b = direct.draws[0];
    const double ks = ks_distance(a, b);
    const double diff = std::abs(irm.sites[0].mean(0) - direct.mean(0));
    note(fmt("pivot site %zu; site 1: IRMCMC %zu draws mean %.4f, direct %zu draws mean %.4f", irm.istar + 1, a.size(),
             irm.sites[0].mean(0), b.size(), direct.mean(0)));
    note(fmt("prior interval at posterior-mean theta: [%.4f, %.4f], width %.4f", iv.lo, iv.hi, iv.width()));
    const bool pass = ks < 0.05 && diff < 0.02 * iv.width();
    return {pass, fmt("KS %.4f (< 0.05), |mean diff| %.4f = %.2f%% of width (< 2%%)", ks, diff,
                      100.0 * diff / iv.width())};
}

Outcome criterion3() {
    int best = 0, exact = 0, mono = 0;
    const int seeds = 10;
    for (int s = 1; s <= seeds; ++s) {
        const auto r = run_experiment(desk(static_cast<std::uint64_t>(s)));
        const int truth = *r.truth.true_model_id;
        const bool is_best = r.validation.best_model == truth;
        const bool ex = exact_range(r.table_t1, truth) && exact_range(r.table_t2, truth);
        const bool mo = monotone(r.table_t1) && monotone(r.table_t2);
        best += is_best;
        exact += ex;
        mono += mo;
        note(fmt("seed %2d: P(true)=%.3f best=%s exact-range=%s monotone=%s failures=%zu", s,
                 r.evidence.model_posterior.at(truth), name_of(r, r.validation.best_model).c_str(),
                 ex ? "yes" : "no", mo ? "yes" : "no", r.failures.size()));
        note("         v(T1): " + v_line(r, r.v_t1));
    }
    const bool pass = best >= 8 && exact >= 8 && mono == seeds;
    return {pass, fmt("true model has max posterior in %d/10 (>= 8), exact-acceptance range in %d/10 (>= 8), "
                      "monotone cFDR/cFNR in %d/10",
                      best, exact, mono)};
}

Outcome criterion4() {
    int hits = 0;
    for (int s = 1; s <= 10; ++s) {
        auto c = desk(static_cast<std::uint64_t>(s));
        c.misspecified = true;
        const auto r = run_experiment(c);
        const int gp = id_of(r, "poisson-log-gp-x");
        const bool hit = first_alone(r.v_t1, gp) && first_alone(r.v_t2, gp) && r.v_t1.at(gp) <= 0.99 &&
                         r.v_t2.at(gp) <= 0.99;
        hits += hit;
        note(fmt("seed %2d: K=%zu P(gp)=%.3f first accepted T1=%s T2=%s %s", s, r.models.size(),
                 r.evidence.model_posterior.at(gp), name_of(r, order_by_v(r.v_t1)[0]).c_str(),
                 name_of(r, order_by_v(r.v_t2)[0]).c_str(), hit ? "hit" : "miss"));
        note("         v(T1): " + v_line(r, r.v_t1));
    }
    return {hits >= 7, fmt("Poisson log-GP is the first and sole accepted null by beta=0.99 in %d/10 seeds (>= 7)", hits)};
}

Outcome criterion5() {
    int hits = 0;
    const int seeds = 10;
    for (int s = 1; s <= seeds; ++s) {
        auto c = desk(static_cast<std::uint64_t>(s));
        c.scenario = Scenario::TwoCovariate;
        const auto r = run_experiment(c);
        const int xz = id_of(r, "poisson-log-linear-xz");
        const std::set<int> singles{id_of(r, "poisson-log-linear-x"), id_of(r, "poisson-log-linear-z")};
        auto ok = [&](const std::map<int, double>& v) {
            const auto ids = order_by_v(v);
            return first_alone(v, xz) && singles.count(ids[1]) && singles.count(ids[2]) && v.at(ids[2]) < v.at(ids[3]);
        };
        const bool hit = ok(r.v_t1) && ok(r.v_t2);
        hits += hit;
        const auto ids = order_by_v(r.v_t1);
        note(fmt("seed %2d: accepted order (T1) %s, %s, %s | P(xz)=%.3f %s", s, name_of(r, ids[0]).c_str(),
                 name_of(r, ids[1]).c_str(), name_of(r, ids[2]).c_str(), r.evidence.model_posterior.at(xz),
                 hit ? "hit" : "miss"));
    }
    return {2 * hits > seeds,
            fmt("XZ first, then the X and Z Poisson log-linear models, in %d/%d seeds (majority required)", hits, seeds)};
}

Outcome criterion6() {
    const std::vector<std::size_t> ns{10, 20, 40};
    const int seeds = 10;
    std::vector<double> mean_p(ns.size(), 0.0);
    double cfdr_t1 = 0.0, cfdr_t2 = 0.0;
    std::size_t K = 0;
    for (std::size_t a = 0; a < ns.size(); ++a) {
        for (int s = 1; s <= seeds; ++s) {
            auto c = desk(static_cast<std::uint64_t>(s));
            c.n = ns[a];
            const auto r = run_experiment(c);
            mean_p[a] += r.evidence.model_posterior.at(*r.truth.true_model_id) / seeds;
            if (ns[a] == 40) {
                K = r.models.size();
                // beta = 0: every null with v > 0 is rejected
                std::vector<double> v1, v2;
                for (const auto& [k, v] : r.v_t1) v1.push_back(v);
                for (const auto& [k, v] : r.v_t2) v2.push_back(v);
                cfdr_t1 += conditional_error_rates(decide(v1, 0.0), v1).cfdr / seeds;
                cfdr_t2 += conditional_error_rates(decide(v2, 0.0), v2).cfdr / seeds;
            }
        }
        note(fmt("n=%zu: mean true-model posterior %.3f over %d seeds", ns[a], mean_p[a], seeds));
    }
    const double target = 1.0 / static_cast<double>(K);
    note(fmt("n=40: mean cFDR at beta=0: T1 %.4f, T2 %.4f; 1/K = %.4f", cfdr_t1, cfdr_t2, target));
    const bool increasing = mean_p[0] < mean_p[1] && mean_p[1] < mean_p[2];
    const bool high = mean_p[2] > 0.9;
    const bool fdr = std::abs(cfdr_t1 - target) <= 0.1 && std::abs(cfdr_t2 - target) <= 0.1;
    return {increasing && high && fdr,
            fmt("posterior %.3f -> %.3f -> %.3f (increasing: %s, > 0.9 at n=40: %s); |cFDR(0) - 1/K| T1 %.3f, T2 %.3f "
                "(<= 0.1: %s)",
                mean_p[0], mean_p[1], mean_p[2], increasing ? "yes" : "no", high ? "yes" : "no",
                std::abs(cfdr_t1 - target), std::abs(cfdr_t2 - target), fdr ? "yes" : "no")};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome criterion7() {
    const auto base = std::filesystem::temp_directory_path() / "invsel_acceptance_determinism";
    std::filesystem::remove_all(base);
    const auto c = desk(7);
    write_run_directory(run_experiment(c), (base / "a").string());
    write_run_directory(run_experiment(c), (base / "b").string());
    bool same = true;
    for (const char* f : {"decisions.csv", "summary.json"}) {
        const auto a = slurp(base / "a" / f), b = slurp(base / "b" / f);
        const bool eq = !a.empty() && a == b;
        note(fmt("%s: %zu bytes, %s", f, a.size(), eq ? "identical" : "DIFFERENT"));
        same = same && eq;
    }
    std::filesystem::remove_all(base);
    return {same, same ? "decisions.csv and summary.json byte-identical across two runs" : "outputs differ"};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                         criterion5, criterion6, criterion7};
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
    int failures = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int number = static_cast<int>(k) + 1;
        if (!selected.empty() && !selected.count(number)) continue;
        std::printf("criterion %d: running\n", number);
        std::fflush(stdout);
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = criteria[k]();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("criterion %d: %s  %s  [%.0f s]\n", number, out.pass ? "PASS" : "FAIL", out.summary.c_str(), secs);
        std::fflush(stdout);
        failures += !out.pass;
    }
    return failures == 0 ? 0 : 1;
}
