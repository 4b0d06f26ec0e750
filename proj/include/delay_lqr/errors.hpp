#pragma once

#include <stdexcept>
#include <string>

namespace delay_lqr {

// Thrown on shape/size mismatches between matrices or vectors.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Problem-data validation failures (negative delay, missing h_0 channel, ...).
struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Grid construction / alignment failures (incommensurate delays, off-grid time).
struct GridError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Omega(t) (or the discrete inner matrix) lost strict positive definiteness.
struct SingularityError : std::runtime_error {
    SingularityError(const std::string& what, double at_time)
        : std::runtime_error(what), t(at_time) {}
    double t;
};

// Value iteration did not reach stationarity within the allotted horizon.
struct NonConvergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Stationary Phat failed the strict positive-definiteness gate.
struct DegeneracyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// No stabilizing solution exists even at rate alpha = 0.
struct NotStabilizableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct HistoryError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Augmented oracle exceeded its desk-scale size cap.
struct SizeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Oracle/continuous runs are not configured compatibly.
struct ComparisonError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RateUndefinedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace delay_lqr
