#pragma once

#include <stdexcept>
#include <string>

namespace oisa {

// Failure classes map one-to-one onto CLI exit codes.
enum class ErrorKind { config = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

}  // namespace oisa
