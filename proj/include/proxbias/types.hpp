#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace proxbias {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid spec / unmet operation precondition.
struct PreconditionError : Error {
    using Error::Error;
};

// A population linear system is numerically singular; carries the condition
// number that triggered the failure.
struct SingularSystemError : Error {
    double condition;
    SingularSystemError(const std::string& what, double cond)
        : Error(what + " (condition number " + std::to_string(cond) + ")"), condition(cond) {}
};

// A closed-form bias denominator vanished; the bias is genuinely unbounded
// there, so no finite value is returned.
struct PoleError : Error {
    double denominator;
    PoleError(const std::string& what, double denom)
        : Error(what), denominator(denom) {}
};

}  // namespace proxbias
