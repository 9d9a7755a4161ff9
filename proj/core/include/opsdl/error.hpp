#pragma once

#include <stdexcept>
#include <string>

namespace opsdl {

// Every error carries the process exit code the CLI reports for it.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }
  virtual const char* kind() const noexcept = 0;

 private:
  int exit_code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, 2) {}
  const char* kind() const noexcept override { return "config"; }
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, 3) {}
  const char* kind() const noexcept override { return "data"; }
};

// Sequence longer than a model or corpus budget allows.
class LengthError : public DataError {
 public:
  LengthError(const std::string& what, std::size_t limit)
      : DataError(what + " (limit " + std::to_string(limit) + ")"), limit_(limit) {}
  std::size_t limit() const noexcept { return limit_; }
  const char* kind() const noexcept override { return "length"; }

 private:
  std::size_t limit_;
};

class ShapeError : public DataError {
 public:
  explicit ShapeError(const std::string& what) : DataError(what) {}
  const char* kind() const noexcept override { return "shape"; }
};

class IoError : public DataError {
 public:
  explicit IoError(const std::string& what) : DataError(what) {}
  const char* kind() const noexcept override { return "io"; }
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, 4) {}
  const char* kind() const noexcept override { return "numeric"; }
};

}  // namespace opsdl
