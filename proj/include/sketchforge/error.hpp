#pragma once

#include <stdexcept>
#include <string>

namespace sketchforge {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or argument contract violated by the caller.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or incompatible weight/store/checkpoint/image files.
class FormatError : public Error {
 public:
  enum class Kind { BadMagic, BadVersion, ShapeMismatch, Truncated, Malformed, Io };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace sketchforge
