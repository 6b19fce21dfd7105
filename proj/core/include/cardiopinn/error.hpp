#pragma once

#include <stdexcept>
#include <string>

namespace cardiopinn {

// Base of everything the library throws. Categories map onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid arguments, violated invariants, malformed configuration.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Non-convergence, singular Jacobians, non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// File system and format errors.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cardiopinn
