#pragma once

#include <stdexcept>
#include <string>

namespace fsgl {

// Bad user-supplied data or configuration: malformed CSV, inconsistent
// dimensions, labels outside 1..L, and so on.  The CLI maps this to exit
// code 2.
class input_error : public std::runtime_error {
 public:
  explicit input_error(const std::string& what) : std::runtime_error(what) {}
};

// A computation that cannot proceed numerically: rank-deficient weighted
// design, ill-posed smoothing without ridge, singular systems.  Exit code 3.
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

// Raised only where non-convergence is configured to be fatal (CLI flag);
// solvers normally report `converged = false` instead of throwing.  Exit
// code 4.
class convergence_error : public std::runtime_error {
 public:
  explicit convergence_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fsgl
