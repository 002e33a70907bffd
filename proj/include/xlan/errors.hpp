#pragma once

#include <stdexcept>

namespace xlan {

// Operand shapes do not fit the operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A precondition of the call was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A file is missing, truncated, or carries the wrong magic/version.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A configuration file or command-line value is malformed or unknown.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace xlan
