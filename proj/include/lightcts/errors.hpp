#pragma once

#include <stdexcept>
#include <string>

namespace lightcts {

// Incompatible tensor or matrix shapes. Messages name the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Misuse of the differentiation machinery (non-scalar loss, foreign tape).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A softmax row in which every entry is masked out.
class DegenerateMaskError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed dataset, checkpoint or CSV input.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Series too short for the requested windowing or split.
class InsufficientLengthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An invalid hyperparameter combination or run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Training diverged (non-finite loss).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// RRSE or CORR requested on data for which they are not defined.
class MetricUndefinedError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace lightcts
