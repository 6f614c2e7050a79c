#pragma once

#include <stdexcept>
#include <string>

namespace nbed {

// Base of every error the library throws. The CLI maps ConfigError to exit
// code 2 and everything else to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public IoError {
 public:
  using IoError::IoError;
};

class VersionError : public IoError {
 public:
  using IoError::IoError;
};

class IntegrityError : public IoError {
 public:
  using IoError::IoError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace nbed
