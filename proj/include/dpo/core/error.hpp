#pragma once

#include <stdexcept>
#include <string>

namespace dpo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A network, ontology or experiment specification is malformed.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Vector or matrix dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An operation was called in a state that does not allow it
/// (stepping a finished episode, pushing to a frozen pool, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine could not produce a valid result.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed.
class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw SpecError(message);
}

inline void require_shape(bool condition, const std::string& message) {
  if (!condition) throw ShapeError(message);
}

}  // namespace detail
}  // namespace dpo
