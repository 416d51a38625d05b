#pragma once

#include <stdexcept>
#include <string>

namespace rldp {

// Input violates an operation's precondition (bad dimensions, off-simplex
// vectors, kernels with zero entries, kappa too large, ...).
class PreconditionError : public std::invalid_argument {
 public:
  explicit PreconditionError(const std::string& what) : std::invalid_argument(what) {}
};

// A configurable resource cap (memory budget of the exact law) was exceeded.
class ResourceLimitError : public std::runtime_error {
 public:
  explicit ResourceLimitError(const std::string& what) : std::runtime_error(what) {}
};

// A numerical routine failed in a way that indicates ill-conditioned input or
// a bug (singular solve, non-finite objective).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace rldp
