#pragma once

#include <stdexcept>

namespace resflow {

/// Malformed or inconsistent input data (files, records, metadata).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or command-line usage.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace resflow
