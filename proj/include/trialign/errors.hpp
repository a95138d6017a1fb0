#pragma once

#include <stdexcept>
#include <string>

namespace trialign {

/// Root of every error raised by the library. `exit_code()` maps the error
/// family onto the CLI's process exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  [[nodiscard]] virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

class DataError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 3; }
};

/// Malformed or truncated file contents.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// An embedding file whose ids are not unique.
class DuplicateIdError : public DataError {
 public:
  using DataError::DataError;
};

/// Modalities that cannot be row-aligned.
class JoinError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// A forward cache used against a head it no longer matches.
class StateError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 4; }
};

class NumericsError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 4; }
};

class TrainError : public NumericsError {
 public:
  using NumericsError::NumericsError;
};

/// Statistic undefined for the input (e.g. correlation of a constant series).
class DegenerateError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace trialign
