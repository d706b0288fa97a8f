#pragma once

#include <stdexcept>
#include <string>

namespace hens {

/// Bad invocation or invalid argument combination. CLI exit code 1.
class UsageError : public std::invalid_argument {
 public:
  explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

/// Unreadable, malformed or inconsistent input data. CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// A numerical procedure could not produce a trustworthy value
/// (non-convergence, overflow, degenerate sample). CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hens
