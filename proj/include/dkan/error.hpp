#pragma once

#include <stdexcept>
#include <string>

namespace dkan {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments or an unknown option value. CLI exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Missing or malformed inputs: files, annotations, shortfalls. CLI exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during training. CLI exit code 3.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace dkan
