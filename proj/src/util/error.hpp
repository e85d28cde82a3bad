// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rdet {

enum class ErrorKind {
  Parameter,
  Io,
  Validation,
  AttackInapplicable,
  Numeric,
  Version,
  Integrity,
  UndefinedRatio,
};

const char* error_kind_name(ErrorKind kind) noexcept;

/// Base of every error thrown by the library. The C API maps `kind()` onto
/// its status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

}  // namespace rdet
