#pragma once

#include <stdexcept>
#include <string>

namespace sdpoint {

// Every error thrown by the library derives from Error. The CLI maps the
// three families below onto its exit codes (1, 2, 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments, malformed config files, invalid shapes or instances.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Missing or corrupt input files (datasets, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or other numerical breakdown during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace sdpoint
