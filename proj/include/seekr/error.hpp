#pragma once

#include <stdexcept>
#include <string>

namespace seekr {

// Every failure raised by the library derives from Error so callers can catch
// one type and still tell the categories apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Broken precondition on shapes or values inside the numeric kernels.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad user-supplied data (tokens, sequences, datasets).
class InputError : public Error {
 public:
  using Error::Error;
};

// API used in the wrong order (e.g. backward before forward).
class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error("line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A selected head has no stored teacher row for a replay entry.
class SignalCoverageError : public Error {
 public:
  using Error::Error;
};

class OrchestrationError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace seekr
