#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace qtazrp {

// Short %g rendering for messages (std::to_string is fixed-point).
inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

// Base of every error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
struct DomainError : Error {
    using Error::Error;
};

// Evaluation at (or numerically on top of) a pole.
struct SingularError : Error {
    using Error::Error;
};

// Overflow, NaN, series that would not converge, quadrature that would not settle.
struct NumericFailure : Error {
    using Error::Error;
};

// Bad or infeasible configuration (including contour construction).
struct ConfigError : Error {
    using Error::Error;
};

// A certified property (node doubling, imaginary residue, ...) did not hold.
struct InvariantViolation : Error {
    using Error::Error;
};

}  // namespace qtazrp
