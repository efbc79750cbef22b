#pragma once

#include <stdexcept>
#include <string>

namespace dbfed {

/// Broad failure classes. Each maps onto one process exit status in the CLI.
enum class ErrorKind {
  Config,     // inconsistent or invalid configuration
  Data,       // malformed input data, rejected input values
  Runtime,    // numeric failure, protocol violation, undefined metric
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  int exit_status() const noexcept {
    switch (kind_) {
      case ErrorKind::Config: return 1;
      case ErrorKind::Data: return 2;
      case ErrorKind::Runtime: return 3;
    }
    return 3;
  }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

struct ParseError : Error {
  ParseError(const std::string& what, std::size_t line)
      : Error(ErrorKind::Data, "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A value passed across an API boundary fails its precondition
/// (wrong dimension, index out of range).
struct RejectedInput : Error {
  explicit RejectedInput(const std::string& what) : Error(ErrorKind::Data, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::Runtime, what) {}
};

struct ProtocolError : Error {
  explicit ProtocolError(const std::string& what) : Error(ErrorKind::Runtime, what) {}
};

/// A metric's defining denominator or eligible set is empty.
struct UndefinedMetric : Error {
  explicit UndefinedMetric(const std::string& what) : Error(ErrorKind::Runtime, what) {}
};

}  // namespace dbfed
