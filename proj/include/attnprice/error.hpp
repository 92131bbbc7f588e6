#pragma once

#include <stdexcept>
#include <string>

namespace attnprice {

// Error hierarchy. The CLI maps each family onto a process exit code:
// ConfigError -> 2, DataError -> 3, NumericError -> 4.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unparseable CSV cell; carries the 1-based file row and column.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::size_t row, std::size_t col)
      : DataError(what + " (row " + std::to_string(row) + ", column " + std::to_string(col) + ")"),
        row_(row),
        col_(col) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metric whose definition divides by zero (zero variance, zero denominator).
class UndefinedMetricError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace attnprice
