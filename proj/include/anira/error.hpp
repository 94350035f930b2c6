// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace anira {

/// Exit-code classes used by the command-line front end.
enum class ErrorKind { usage = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Malformed or inconsistent input data (datasets, grammars, checkpoints).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite values or a diverged computation.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

#define ANIRA_REQUIRE(cond, msg)                  \
  do {                                            \
    if (!(cond)) throw ::anira::ContractError(msg); \
  } while (0)

}  // namespace anira
