#pragma once

#include <stdexcept>
#include <string>

namespace sfad {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (CSV, sidecar, edge list).
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Optimizer or model state that no longer matches its parameters.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Index outside of an embedding table.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// File system failures and malformed checkpoint files.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sfad
