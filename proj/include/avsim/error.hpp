#pragma once

#include <stdexcept>
#include <string>

namespace avsim {

/// Error categories, mapped one-to-one onto CLI exit codes.
enum class ErrorKind {
  kUser = 1,       // bad arguments, unknown tags, contract violations
  kIntegrity = 2,  // malformed or inconsistent data on disk
  kInternal = 3,   // numerical divergence, invariant breakage
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class UserError : public Error {
 public:
  explicit UserError(const std::string& message) : Error(ErrorKind::kUser, message) {}
};

class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& message)
      : Error(ErrorKind::kIntegrity, message) {}
};

/// A required file is absent or unreadable.
class LoadError : public IntegrityError {
 public:
  explicit LoadError(const std::string& message) : IntegrityError(message) {}
};

/// A record could not be parsed; the message carries the record index.
class ParseError : public IntegrityError {
 public:
  explicit ParseError(const std::string& message) : IntegrityError(message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorKind::kUser, message) {}
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& message)
      : Error(ErrorKind::kInternal, message) {}
};

/// Caller broke an operation's precondition (e.g. stepping a finished episode).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& message) : Error(ErrorKind::kUser, message) {}
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUser:
      return "user";
    case ErrorKind::kIntegrity:
      return "integrity";
    case ErrorKind::kInternal:
      return "internal";
  }
  return "internal";
}

}  // namespace avsim
