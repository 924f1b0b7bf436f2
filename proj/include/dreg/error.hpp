#pragma once

#include <stdexcept>
#include <string>

namespace dreg {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or unreadable experiment configuration (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dreg
