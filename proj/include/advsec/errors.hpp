#pragma once

#include <stdexcept>
#include <string>

namespace advsec {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration, hyperparameters or unsupported combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Incompatible tensor shapes handed to a primitive or a model.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A primitive produced a non-finite value from finite inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures: missing files, unreadable directories.
class IoError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorKind {
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kShapeMismatch,
  kCountMismatch,
  kBadRecord,
};

const char* to_string(FormatErrorKind kind);

// A file was readable but its contents do not follow the expected layout.
class FormatError : public IoError {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : IoError(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  FormatErrorKind kind() const { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace advsec
