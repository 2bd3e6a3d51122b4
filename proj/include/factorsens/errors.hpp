#pragma once

#include <stdexcept>
#include <string>

namespace factorsens {

// Error taxonomy mirrors the CLI exit codes:
//   validation -> 2, infeasible -> 3, numeric -> 4.
class Error : public std::runtime_error {
public:
    enum class Kind { validation, infeasible, numeric };

    Error(Kind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

    int exit_code() const noexcept {
        switch (kind_) {
            case Kind::validation: return 2;
            case Kind::infeasible: return 3;
            case Kind::numeric: return 4;
        }
        return 4;
    }

private:
    Kind kind_;
};

// Bad inputs: malformed files, missing columns, invalid flag combinations,
// preconditions on shapes/ranges.
class ValidationError : public Error {
public:
    explicit ValidationError(std::string msg) : Error(Kind::validation, std::move(msg)) {}
};

// Well-formed inputs whose constraints admit no solution (e.g. null-control
// constraints outside the column space, budget below the feasible minimum).
class InfeasibleError : public Error {
public:
    explicit InfeasibleError(std::string msg) : Error(Kind::infeasible, std::move(msg)) {}
};

// Numerical breakdown: non-convergence, separation, loss of positive
// definiteness, failed brackets.
class NumericError : public Error {
public:
    explicit NumericError(std::string msg) : Error(Kind::numeric, std::move(msg)) {}
};

} // namespace factorsens
