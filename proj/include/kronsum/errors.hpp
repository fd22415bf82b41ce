#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kronsum {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: wrong shape, out-of-range parameter, violated precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A computation that started from valid input but could not finish.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NotPositiveDefinite : public ValidationError {
 public:
  NotPositiveDefinite(const std::string& what, double lambda_min)
      : ValidationError(what + " (lambda_min = " + std::to_string(lambda_min) + ")"),
        lambda_min_(lambda_min) {}

  double lambda_min() const noexcept { return lambda_min_; }

 private:
  double lambda_min_;
};

class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, double residual)
      : NumericalError(what + " (residual = " + std::to_string(residual) + ")"),
        residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, double iterate_norm)
      : NumericalError(what + " (iterate norm = " + std::to_string(iterate_norm) + ")"),
        iterate_norm_(iterate_norm) {}

  double iterate_norm() const noexcept { return iterate_norm_; }

 private:
  double iterate_norm_;
};

/// Raised when the nodewise residual variance of a column is not safely positive.
class DegenerateDiagonal : public NumericalError {
 public:
  DegenerateDiagonal(std::ptrdiff_t column, double value)
      : NumericalError("degenerate diagonal in column " + std::to_string(column) +
                       ": residual variance " + std::to_string(value) + " is below the floor"),
        column_(column),
        value_(value) {}

  std::ptrdiff_t column() const noexcept { return column_; }
  double value() const noexcept { return value_; }

 private:
  std::ptrdiff_t column_;
  double value_;
};

}  // namespace kronsum
