#pragma once

#include <stdexcept>
#include <string>

namespace mlpmatch {

// Bad configuration value or an operation invoked with settings that make it
// impossible (e.g. perturbation requested with an empty eligible set).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Problems with data on disk: missing files, out-of-range mask values,
// unreadable or corrupt checkpoints.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: mismatched shapes, missing labels, calls that violate a
// documented precondition.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss. The message carries a dump of the
// individual loss terms so the failing run can be diagnosed post mortem.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mlpmatch
