#pragma once

#include <stdexcept>
#include <string>

namespace pdon {

/// Invalid input, configuration, or file content. CLI exit status 1.
class UserError : public std::runtime_error {
 public:
  explicit UserError(const std::string& what) : std::runtime_error(what) {}
};

/// Blow-up, non-finite loss or gradient. CLI exit status 2.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or corrupted on-disk artifact.
class FormatError : public UserError {
 public:
  explicit FormatError(const std::string& what) : UserError(what) {}
};

}  // namespace pdon
