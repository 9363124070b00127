#pragma once

#include <stdexcept>
#include <string>

namespace mdcn {

// Base of every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes, specs or configs that do not fit together.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable input data (files, labels, clips).
class DataError : public Error {
 public:
  using Error::Error;
};

// Caller asked for something the interface does not support.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace mdcn
