#pragma once

#include <stdexcept>
#include <string>

namespace mfb {

/// Violated precondition on a public API (bad dimensions, out-of-range index, ...).
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Invalid or inconsistent configuration (bad strategy tag, unstable step size, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A computation produced a non-finite value; `where` identifies the failing stage.
struct NumericError : std::runtime_error {
    std::string where;
    explicit NumericError(const std::string& where_, const std::string& what_)
        : std::runtime_error(what_ + " [" + where_ + "]"), where(where_) {}
};

/// Optimization diverged; carries the last epoch with a finite loss.
struct TrainingError : std::runtime_error {
    int last_finite_epoch;
    TrainingError(int epoch, const std::string& what_)
        : std::runtime_error(what_), last_finite_epoch(epoch) {}
};

/// The HMC sampler is unhealthy (persistent divergences).
struct SamplerHealthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace mfb
