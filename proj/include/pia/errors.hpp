#pragma once

#include <stdexcept>
#include <string>

namespace pia {

// Invalid input or configuration; detected before any numerical work.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A computation produced a non-finite value, lost positivity, or diverged.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Regression design matrix could not be solved even with ridge regularization.
class BasisError : public NumericalError {
public:
    BasisError(std::size_t step, const std::string& what)
        : NumericalError("regression failed at time step " + std::to_string(step) + ": " + what),
          step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

// No grid action lies on the requested volatility level set.
class EmptyLevelSetError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace pia
