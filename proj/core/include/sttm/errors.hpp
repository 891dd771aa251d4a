#pragma once

#include <stdexcept>
#include <string>

namespace sttm {

/// Base of every error raised by the library. CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller-side mistakes (bad input, bad config, mismatched artifacts): exit code 1.
class UserError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public UserError {
 public:
  using UserError::UserError;
};

class ParseError : public UserError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : UserError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class CompatibilityError : public UserError {
 public:
  using UserError::UserError;
};

class DomainError : public UserError {
 public:
  using UserError::UserError;
};

class RangeError : public UserError {
 public:
  using UserError::UserError;
};

// Violated internal contracts: exit code 2.
class ContractError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

class IndexError : public ContractError {
 public:
  using ContractError::ContractError;
};

class NumericError : public ContractError {
 public:
  using ContractError::ContractError;
};

}  // namespace sttm
