#pragma once

#include <stdexcept>
#include <string>

namespace cbe {

/// Bad arguments, inconsistent shapes, out-of-range hyperparameters.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value (diverged loss, NaN gradient).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A verified bound did not hold within its slack.
class BoundViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message)
{
    if (!condition) {
        throw ValidationError(message);
    }
}

}  // namespace cbe
