#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ortha {

// Categories map one-to-one onto CLI exit codes.
enum class ErrorKind { validation = 1, numerical = 2, io = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class RankDeficientError : public NumericalError {
 public:
  RankDeficientError(std::size_t column, double pivot, double tolerance);
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t column_;
};

class CholeskyError : public NumericalError {
 public:
  CholeskyError(std::size_t row, double pivot);
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(std::size_t step, double loss, double initial_loss);
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class CorruptLengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace ortha
