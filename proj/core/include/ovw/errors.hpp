#pragma once

#include <stdexcept>
#include <string>

namespace ovw {

// Base of every error raised by the library. The CLI maps these onto exit
// codes, so each subclass corresponds to one class of caller mistake.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extents that do not line up (matmul inner dims, pyramid strides, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Inputs for which the math is undefined, e.g. normalizing a zero vector.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Precondition violations on values (duplicates, out-of-range scores, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf was produced or supplied.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Malformed or schema-violating file content.
class LoadError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage was invoked out of order or a plug-in misbehaved.
class PipelineError : public Error {
 public:
  using Error::Error;
};

}  // namespace ovw
