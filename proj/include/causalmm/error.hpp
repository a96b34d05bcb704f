#pragma once

#include <stdexcept>
#include <string>

namespace causalmm {

// Base of every error the library raises. The CLI maps ValidationError
// subclasses to exit code 1 and InvariantError to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class AllMaskedError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class VocabError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ModalityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IndexError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConditioningError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class InputError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class GenerationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Carries the JSON path of the offending field, e.g. "decode.gamma".
class ConfigError : public ValidationError {
 public:
  ConfigError(std::string field, const std::string& message)
      : ValidationError(field.empty() ? message : field + ": " + message),
        field_(std::move(field)),
        message_(message) {}

  const std::string& field() const noexcept { return field_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string field_;
  std::string message_;
};

class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace causalmm
