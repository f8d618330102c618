#pragma once

#include <stdexcept>
#include <string>

namespace tmatch {

// Every failure raised by the library derives from Error; the CLI maps the
// kind onto an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

// Non-finite value in a forward pass, an integration or a chain. `index`
// identifies the offending batch element / step where one is known.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long index = -1)
      : Error(index >= 0 ? what + " (index " + std::to_string(index) + ")" : what),
        index_(index) {}
  long index() const { return index_; }

 private:
  long index_;
};

}  // namespace tmatch
