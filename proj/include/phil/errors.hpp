#pragma once

#include <stdexcept>
#include <string>

namespace phil {

/// Invalid configuration values (layer sizes, hyperparameters, files).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or vector dimensions do not line up.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite loss or gradient; the step that produced it is not applied.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class PriorityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace phil
