#pragma once

#include <stdexcept>
#include <string>

namespace crossalign {

/// Base of every error thrown by the library. Carries the process exit code
/// the CLI reports for it.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

/// Rejected input: malformed files, invalid spans, unknown labels.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(what, 1) {}
};

/// Tensor dimensions do not agree.
class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& what) : ValidationError(what) {}
};

/// An operation was invoked out of order (e.g. backward before forward).
class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error(what, 1) {}
};

/// NaN or Inf appeared where a finite value is required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, 2) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, 3) {}
};

}  // namespace crossalign
