#pragma once

#include <stdexcept>
#include <string>

namespace mtdqn {

// Base for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Operand shapes are incompatible with the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A structural configuration value is invalid (e.g. D not divisible by H).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller violated an API contract (non-scalar loss, empty action set, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// An object was used in a state that forbids the operation (spent tape, dead user).
class StateError : public Error {
 public:
  using Error::Error;
};

// Input data failed validation (out-of-range ids, inverted intervals, bad files).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Input too small/empty for the operation to be meaningful.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Filesystem / stream failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Persisted data does not match the expected binary/text layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtdqn
