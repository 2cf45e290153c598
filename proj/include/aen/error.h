#pragma once

#include <stdexcept>
#include <string>

namespace aen {

// Base class for everything this library throws on purpose. Catching
// aen::Error at the top level is enough to distinguish "our" failures
// from genuine bugs (std::logic_error, bad_alloc, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// A file was read but its contents are malformed: bad magic, truncated
// payload, checksum mismatch, unparseable text.
class FormatError : public Error {
 public:
  using Error::Error;
};

// The file is well-formed but uses a feature we deliberately do not
// handle (e.g. a compressed WAV codec).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// Tensor dimensions do not line up for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An argument value is out of its valid range (negative size, probability
// outside [0,1], even kernel width, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// A run configuration is invalid: unknown key, wrong type, inconsistent
// combination of settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// The dataset itself is unusable: empty manifest, class with too few
// members for the requested split, label mismatch.
class DataError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite value. The message records where.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace aen
