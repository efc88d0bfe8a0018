#include "advsec/errors.hpp"

namespace advsec {

const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kBadMagic: return "bad magic";
    case FormatErrorKind::kVersionMismatch: return "version mismatch";
    case FormatErrorKind::kTruncated: return "truncated";
    case FormatErrorKind::kShapeMismatch: return "shape mismatch";
    case FormatErrorKind::kCountMismatch: return "count mismatch";
    case FormatErrorKind::kBadRecord: return "bad record";
  }
  return "format error";
}

}  // namespace advsec
