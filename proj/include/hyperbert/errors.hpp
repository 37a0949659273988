#pragma once

#include <stdexcept>
#include <string>

namespace hyperbert {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN input or another non-finite value where a finite one is required.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// API misuse: backward on a non-scalar, double backward, and so on.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Out-of-range or inconsistent hyperparameters.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input files, with the offending line when known.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Labels or splits that violate dataset invariants.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hyperbert
