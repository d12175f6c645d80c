#include "invsel/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/special_functions/erf.hpp>

#include "invsel/errors.hpp"

namespace invsel {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// FNV-1a over the path, folded with the root seed and finalized by splitmix.
std::uint64_t hash_identity(std::uint64_t root_seed, std::string_view path) {
    std::uint64_t h = 0xCBF29CE484222325ull ^ splitmix64(root_seed);
    for (unsigned char c : path) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return splitmix64(h ^ (static_cast<std::uint64_t>(path.size()) << 56));
}

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(product >> 32);
    lo = static_cast<std::uint32_t>(product);
}

// Philox4x32 with 10 rounds.
std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kM0, ctr[0], hi0, lo0);
        mulhilo(kM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kW0;
        key[1] += kW1;
    }
    return ctr;
}

}  // namespace

SeededStream::SeededStream(std::uint64_t root_seed, std::string path)
    : root_seed_(root_seed), path_(std::move(path)) {
    const std::uint64_t k = hash_identity(root_seed_, path_);
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

void SeededStream::refill() {
    const auto out = philox({static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32), 0u, 0u},
                            key_);
    ++counter_;
    buffer_[0] = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
    buffer_[1] = (static_cast<std::uint64_t>(out[2]) << 32) | out[3];
    buffered_ = 2;
}

SeededStream::result_type SeededStream::operator()() {
    if (buffered_ == 0) refill();
    return buffer_[--buffered_];
}

SeededStream SeededStream::derive(std::string_view label) const {
    if (label.empty()) throw InvalidArgument("derive_stream: label must be nonempty");
    std::string child = path_;
    if (!child.empty()) child += '/';
    child += label;
    return SeededStream(root_seed_, std::move(child));
}

double SeededStream::uniform() {
    // 53 random bits, offset by half a step so 0 and 1 are never returned.
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

double SeededStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double SeededStream::normal() {
    std::normal_distribution<double> dist;
    return dist(*this);
}

double SeededStream::normal(double mean, double sd) { return mean + sd * normal(); }

double SeededStream::gamma(double shape) {
    if (!(shape > 0.0)) throw InvalidArgument("gamma: shape must be positive");
    std::gamma_distribution<double> dist(shape, 1.0);
    return dist(*this);
}

double SeededStream::log_gamma_variate(double shape) {
    if (!(shape > 0.0)) throw InvalidArgument("gamma: shape must be positive");
    if (shape >= 1.0) return std::log(gamma(shape));
    // Gamma(a) = Gamma(a + 1) * U^(1/a), evaluated in log space.
    return std::log(gamma(shape + 1.0)) + std::log(uniform()) / shape;
}

std::int64_t SeededStream::poisson(double mean) {
    if (!(mean >= 0.0)) throw InvalidArgument("poisson: mean must be nonnegative");
    if (mean == 0.0) return 0;
    std::poisson_distribution<std::int64_t> dist(mean);
    return dist(*this);
}

std::int64_t SeededStream::geometric(double p) {
    if (!(p > 0.0 && p <= 1.0)) throw InvalidArgument("geometric: p must lie in (0, 1]");
    if (p == 1.0) return 0;
    std::geometric_distribution<std::int64_t> dist(p);
    return dist(*this);
}

int SeededStream::sign() { return ((*this)() >> 63) ? 1 : -1; }

std::size_t SeededStream::categorical_from_log(std::span<const double> log_weights) {
    if (log_weights.empty()) throw InvalidArgument("categorical: no categories");
    const double top = *std::max_element(log_weights.begin(), log_weights.end());
    if (!std::isfinite(top)) throw InvalidArgument("categorical: no category has positive finite weight");
    double total = 0.0;
    for (double lw : log_weights) total += std::exp(lw - top);
    double target = uniform() * total;
    for (std::size_t k = 0; k < log_weights.size(); ++k) {
        target -= std::exp(log_weights[k] - top);
        if (target <= 0.0) return k;
    }
    // rounding residue: return the last category with positive weight
    for (std::size_t k = log_weights.size(); k-- > 0;)
        if (std::isfinite(log_weights[k])) return k;
    return log_weights.size() - 1;
}

SeededStream derive_stream(const SeededStream& parent, std::string_view label) { return parent.derive(label); }

std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view label) {
    return hash_identity(root_seed, label);
}

std::vector<double> sample_dirichlet(SeededStream& stream, std::span<const double> alpha) {
    if (alpha.empty()) throw InvalidArgument("sample_dirichlet: alpha must be nonempty");
    for (double a : alpha)
        if (!(a > 0.0) || !std::isfinite(a)) throw InvalidArgument("sample_dirichlet: alpha must be positive");
    std::vector<double> logs(alpha.size());
    for (std::size_t k = 0; k < alpha.size(); ++k) logs[k] = stream.log_gamma_variate(alpha[k]);
    const double norm = log_sum_exp(logs);
    std::vector<double> p(alpha.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < alpha.size(); ++k) sum += (p[k] = std::exp(logs[k] - norm));
    for (double& v : p) v /= sum;
    return p;
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double log_std_normal_cdf(double x) {
    if (x > -30.0) return std::log(std_normal_cdf(x));
    // asymptotic Mills-ratio expansion for the far lower tail
    const double x2 = x * x;
    const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

double std_normal_inverse_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("std_normal_inverse_cdf: p must lie in (0, 1)");
    return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double sorted_quantile(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw InvalidArgument("empirical_quantile: samples must be nonempty");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("empirical_quantile: p must lie in [0, 1]");
    if (sorted.size() == 1) return sorted.front();
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lower = static_cast<std::size_t>(std::floor(pos));
    if (lower + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(lower);
    return sorted[lower] + frac * (sorted[lower + 1] - sorted[lower]);
}

double empirical_quantile(std::span<const double> samples, double p) {
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    return sorted_quantile(sorted, p);
}

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) return -std::numeric_limits<double>::infinity();
    const double top = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(top)) return top;
    double sum = 0.0;
    for (double v : values) sum += std::exp(v - top);
    return top + std::log(sum);
}

}  // namespace invsel
