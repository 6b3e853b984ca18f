#pragma once

#include <stdexcept>
#include <string>

namespace drivestyle {

// Base class for all library errors. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (trajectory files, databases, configs).
class DataError : public Error {
 public:
  using Error::Error;
};

// Misuse of an API: violated precondition on arguments.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace drivestyle
