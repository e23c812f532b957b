// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace seggroup {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or usage (bad dimensions, unknown keys, missing files).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition (shape mismatch, empty input).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Input data could not be used (corrupt image, inconsistent dataset).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file, or contents failing validation.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace seggroup
