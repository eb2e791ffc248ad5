#pragma once

#include <stdexcept>
#include <string>

namespace ipd {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error
{
public:
    using Error::Error;
};

/// A parameter or a convergence condition is violated. Raised before any
/// iteration starts.
class ValidationError : public Error
{
public:
    using Error::Error;
};

/// An iterative procedure hit its cap. Carries the best value reached.
class ConvergenceError : public Error
{
public:
    ConvergenceError(const std::string& what, double best_estimate)
        : Error(what), best_estimate_(best_estimate)
    {
    }

    double best_estimate() const noexcept { return best_estimate_; }

private:
    double best_estimate_;
};

namespace detail {

inline void require_dims(long expected, long actual, const char* what)
{
    if (expected != actual) {
        throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(expected) +
                             ", got " + std::to_string(actual));
    }
}

} // namespace detail

} // namespace ipd
