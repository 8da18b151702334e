#pragma once

#include <stdexcept>
#include <string>

namespace aggnn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN / Inf where a finite value is required.
class InvalidValueError : public Error {
 public:
  using Error::Error;
};

// Calls made in the wrong order, e.g. backward without a cached forward.
class StateError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing files.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace aggnn
