#pragma once

#include <stdexcept>
#include <string>

namespace phaserec {

/// Base class for every error raised by the toolkit. The exit code is what
/// the command-line front end returns when the error escapes a command.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Inconsistent or unsupported configuration (grid sizes, strategy/dataset
/// mismatch, missing optics metadata).
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Invalid input values: NaN, empty images, out-of-range parameters.
class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// File system and container failures.
class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Truncated, corrupt or version-mismatched checkpoint.
class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

/// Non-finite loss or diverged optimization.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace phaserec
