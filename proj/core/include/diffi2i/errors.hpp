#pragma once

#include <stdexcept>
#include <string>

namespace diffi2i {

// Base for every error raised by the library. Subclasses map onto CLI exit
// codes (see tools/commands.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape or vector length does not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller violated a precondition (non-scalar loss, step index out of range).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Object used in a state that no longer permits the call (released graph).
class StateError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated, corrupted or incompatible checkpoint.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or parameter during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace diffi2i
