#pragma once

#include <stdexcept>
#include <string>

namespace eigfree {

// Caller broke a documented precondition (shape, symmetry, finiteness).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Two eigenvalues closer than the gap threshold; the analytic eigenvector
// gradient is unbounded there.
class DegenerateSpectrum : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Jacobi sweeps exhausted without reaching the off-diagonal tolerance.
class ConvergenceFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Geometric configuration admits no well-defined answer (identical points,
// zero baseline, zero weights, rank-deficient rotation block, ...).
class DegenerateConfiguration : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eigfree
