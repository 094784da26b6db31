#pragma once

#include <stdexcept>
#include <string>

namespace lvp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or inputs that cannot satisfy an operation's preconditions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class IndexError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class UsageError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class CapacityError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class VocabularyError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class IoError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

// CLI exit codes.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const CheckpointMismatch*>(&e)) return 4;
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  return 1;
}

}  // namespace lvp
