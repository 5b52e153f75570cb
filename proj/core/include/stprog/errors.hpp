#pragma once

#include <stdexcept>
#include <string>

namespace stprog {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform (messages name the operation and shapes).
struct ShapeError : Error {
  using Error::Error;
};

/// Domain violation on values (zero-norm vector, out-of-range label, ...).
struct ValueError : Error {
  using Error::Error;
};

/// Non-finite value where finiteness is required (diverged loss, ...).
struct NumericError : Error {
  using Error::Error;
};

/// File or directory problem.
struct IoError : Error {
  using Error::Error;
};

/// Bad configuration or command-line usage.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace stprog
