#pragma once

#include <stdexcept>
#include <string>

namespace apgcn {

/// Contract violation on inputs (shapes, ranges, malformed data).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or divergence during a numerical computation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

[[noreturn]] inline void throw_shape(const char* where, const std::string& what) {
  throw InvalidArgument(std::string(where) + ": " + what);
}

}  // namespace detail
}  // namespace apgcn
