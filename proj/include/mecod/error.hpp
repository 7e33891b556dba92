#pragma once

#include <stdexcept>
#include <string>

namespace mecod {

enum class ErrorKind {
  invalid_argument,
  unknown_symbol,
  out_of_range,
  parse,
  io,
  numeric,
};

/// Single exception type for the library; `kind()` distinguishes the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace mecod
