// SPDX-License-Identifier: Apache-2.0
#include "util/error.hpp"

namespace rdet {

const char* error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Parameter: return "parameter error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::AttackInapplicable: return "attack-inapplicable error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Version: return "version error";
    case ErrorKind::Integrity: return "integrity error";
    case ErrorKind::UndefinedRatio: return "undefined-ratio error";
  }
  return "error";
}

}  // namespace rdet
