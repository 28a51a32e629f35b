#ifndef DLQR_ERRORS_HPP
#define DLQR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dlqr {

// Error taxonomy. The CLI maps each family to a distinct exit code, so
// every throw site picks the family by what went wrong, not where.

// Malformed user input: bad dimensions, missing fields, unreadable config.
class input_error : public std::runtime_error {
 public:
  explicit input_error(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failures: non-convergence, singular systems, violated
// preconditions discovered mid-computation.
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

// A gain that must be mean-square stabilizing is not.
class not_stabilizing_error : public numerical_error {
 public:
  explicit not_stabilizing_error(const std::string& what) : numerical_error(what) {}
};

// Regression data cannot identify the unknowns (rank deficiency).
class insufficient_excitation_error : public numerical_error {
 public:
  explicit insufficient_excitation_error(const std::string& what) : numerical_error(what) {}
};

// A state trajectory left the finite range the simulator guards.
class divergence_error : public numerical_error {
 public:
  explicit divergence_error(const std::string& what) : numerical_error(what) {}
};

// An estimated or supplied quadratic form lost the definiteness the
// algorithm relies on (e.g. R + N not positive definite).
class degenerate_error : public numerical_error {
 public:
  explicit degenerate_error(const std::string& what) : numerical_error(what) {}
};

// Iteration cap reached before the convergence test passed.
class nonconvergence_error : public numerical_error {
 public:
  explicit nonconvergence_error(const std::string& what) : numerical_error(what) {}
};

// Filesystem trouble while emitting artifacts.
class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dlqr

#endif  // DLQR_ERRORS_HPP
