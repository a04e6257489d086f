#pragma once

#include <stdexcept>
#include <string>

namespace prime {

/// Bad user-supplied parameters (CLI exit code 2, HTTP 422).
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string field, const std::string& message)
      : std::runtime_error(message), field_(std::move(field)) {}
  explicit ValidationError(const std::string& message) : ValidationError("", message) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Input data that cannot be used as-is (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or unmappable columns in an input table.
class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

/// A numerical routine failed to produce a usable answer.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace prime
