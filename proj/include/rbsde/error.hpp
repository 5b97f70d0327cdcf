#pragma once

#include <stdexcept>
#include <string>

namespace rbsde {

/// Input rejected before any work was done (precondition violated).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure failed mid-run (non-finite values, no convergence,
/// singular regression).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration document could not be turned into a run.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace rbsde
