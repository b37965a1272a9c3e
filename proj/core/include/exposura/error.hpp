#pragma once

#include <stdexcept>
#include <string>

namespace exposura {

/// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or configurations that cannot be combined.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or foreign files.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Missing files, unpaired datasets, incomplete manifests.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or failed numerical checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace exposura
