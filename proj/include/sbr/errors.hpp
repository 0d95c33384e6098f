#pragma once

#include <stdexcept>
#include <string>

namespace sbr {

// Shape/length disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced by a numeric op, or a diverging computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value (temperature <= 0, bad fractions, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input value outside its documented domain (labels not in {0,1}, ...).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse (backward on a non-scalar, predicting with an untrained model).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// File-level failures: missing files, schema violations, corrupt payloads.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sbr
