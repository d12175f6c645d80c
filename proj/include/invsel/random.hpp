#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace invsel {

/// A deterministic random stream identified by a root seed and a
/// slash-separated path of labels, e.g. "model=3/site=7/stage=resample".
///
/// The (root_seed, path) pair is hashed into the key of a Philox4x32-10
/// counter-based generator, so a stream's output depends only on its identity
/// and never on how many other streams were created or drawn from before it.
/// That is what lets per-model and per-site work run on any number of worker
/// threads and still reproduce bit for bit.
///
/// Satisfies UniformRandomBitGenerator, so the standard <random>
/// distributions can draw from it directly. A stream is a value: copy it to
/// fork an identical sequence, move it to hand it to a worker. Do not share
/// one instance between threads.
class SeededStream {
public:
    using result_type = std::uint64_t;

    explicit SeededStream(std::uint64_t root_seed, std::string path = {});

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()();

    /// Child stream keyed by this stream's path extended with `label`.
    /// Independent of how much has been drawn from the parent.
    SeededStream derive(std::string_view label) const;

    std::uint64_t root_seed() const { return root_seed_; }
    const std::string& path() const { return path_; }

    /// Uniform on the open interval (0, 1).
    double uniform();
    double uniform(double lo, double hi);
    double normal();
    double normal(double mean, double sd);
    /// Gamma(shape, rate = 1).
    double gamma(double shape);
    /// log of a Gamma(shape, 1) variate; stays finite for very small shapes.
    double log_gamma_variate(double shape);
    std::int64_t poisson(double mean);
    /// Number of failures before the first success, success probability p.
    std::int64_t geometric(double p);
    /// +1 or -1 with equal probability.
    int sign();
    /// Index drawn with probability proportional to exp(log_weights[k]).
    std::size_t categorical_from_log(std::span<const double> log_weights);

private:
    void refill();

    std::uint64_t root_seed_;
    std::string path_;
    std::array<std::uint32_t, 2> key_{};
    std::uint64_t counter_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    int buffered_ = 0;
};

/// Free-function form of SeededStream::derive.
SeededStream derive_stream(const SeededStream& parent, std::string_view label);

/// 64-bit seed derived from a root seed and label; used to seed whole
/// replicate pipelines from one master seed.
std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view label);

/// Draw from Dirichlet(alpha). Throws InvalidArgument for empty or
/// non-positive alpha.
std::vector<double> sample_dirichlet(SeededStream& stream, std::span<const double> alpha);

double std_normal_cdf(double x);
/// log Phi(x), accurate far into the lower tail.
double log_std_normal_cdf(double x);
/// Phi^{-1}(p); throws InvalidArgument unless 0 < p < 1.
double std_normal_inverse_cdf(double p);

/// Linear-interpolation quantile: order statistic k (1-based) sits at
/// probability (k - 1) / (N - 1).
double empirical_quantile(std::span<const double> samples, double p);
/// Same convention on an already sorted sequence; no copy.
double sorted_quantile(std::span<const double> sorted, double p);

double log_sum_exp(std::span<const double> values);

}  // namespace invsel
