#pragma once

#include <stdexcept>
#include <string>

namespace mtirl {

/// Raised when a model or configuration fails structural validation.
/// The code identifies the failed check so callers (and tests) can
/// distinguish error cases without parsing the message.
class ValidationError : public std::runtime_error {
public:
    enum class Code {
        shape_mismatch,
        non_stochastic_transition,
        non_stochastic_initial_dist,
        discount_out_of_range,
        non_finite_entry,
        bad_grid,
        bad_config,
        bad_file,
    };

    ValidationError(Code code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    Code code() const noexcept { return code_; }

private:
    Code code_;
};

/// Raised when a fixed-point iteration fails to reach its tolerance
/// within the iteration budget. Carries the last observed residual.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual, long iterations)
        : std::runtime_error(what + " (residual " + std::to_string(residual) +
                             " after " + std::to_string(iterations) + " iterations)"),
          residual_(residual),
          iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    long iterations() const noexcept { return iterations_; }

private:
    double residual_;
    long iterations_;
};

/// Raised when an optimizer detects sustained divergence (the objective
/// decreasing for many consecutive steps under gradient ascent).
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, long iteration)
        : std::runtime_error(what), iteration_(iteration) {}

    long iteration() const noexcept { return iteration_; }

private:
    long iteration_;
};

}  // namespace mtirl
