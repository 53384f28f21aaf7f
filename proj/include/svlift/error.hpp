#pragma once

#include <stdexcept>
#include <string>

namespace svlift {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad parameter, wrong shape).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Two objects that must live on the same discrete measure do not.
class MeasureMismatch : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure could not complete (factorization, blow-up).
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace detail
}  // namespace svlift
