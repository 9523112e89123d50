#pragma once

#include <stdexcept>
#include <string>

namespace jmp {

/// Argument outside the mathematical domain of an operation (bad state index,
/// reversed interval, empty state set, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Caller violated an operation precondition (misaligned quadrature grid,
/// non-conservative model handed to the simulator, ...).
class PreconditionError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A jump was requested from a state whose total rate is zero.
class AbsorbingStateError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Model configuration could not be parsed. `path()` names the offending
/// location in the document, e.g. `/transitions/2/profile/values/0`.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string path, const std::string& message)
        : std::runtime_error(path + ": " + message), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Base for failures of the numerical machinery itself.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The Feller series tail bound did not fall below the requested tolerance
/// within the iteration cap.
class SlowConvergenceError : public NumericalError {
public:
    SlowConvergenceError(const std::string& message, double achieved_bound)
        : NumericalError(message), achieved_bound_(achieved_bound) {}

    double achieved_bound() const noexcept { return achieved_bound_; }

private:
    double achieved_bound_;
};

/// Adaptive integrator step size underflowed or the step budget ran out.
class StiffnessError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace jmp
