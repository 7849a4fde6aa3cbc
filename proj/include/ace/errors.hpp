#pragma once

#include <stdexcept>
#include <string>

namespace ace {

/// Bad shapes, out-of-range parameters, unknown enum names.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Factorization or solve that still fails after jitter escalation.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation called on a model that is not ready for it (e.g. an arm without data).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// No available candidates left in a pool.
class PoolExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Weight function is zero on the whole test set.
class EmptyTarget : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ace
