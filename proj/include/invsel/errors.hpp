#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace invsel {

/// Bad argument or distribution parameter supplied by the caller.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An operation was asked to continue from a state it cannot handle
/// (e.g. a Markov chain sitting at zero target density).
class InvalidState : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// The regression coefficient of an inverted covariate is numerically zero,
/// so the uniform covariate prior has no finite support.
class DegenerateCoefficient : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A per-site computation failed; carries the offending site index.
class SiteFailure : public std::runtime_error {
public:
    SiteFailure(std::size_t site, const std::string& what)
        : std::runtime_error("site " + std::to_string(site + 1) + ": " + what), site_(site) {}

    std::size_t site() const noexcept { return site_; }

private:
    std::size_t site_;
};

}  // namespace invsel
