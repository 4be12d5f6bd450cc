#include "prunelab/error.hpp"

namespace prunelab {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::ShapeMismatch: return "shape_mismatch";
    case ErrorKind::InvalidSpec: return "invalid_spec";
    case ErrorKind::InvalidState: return "invalid_state";
    case ErrorKind::BadMagic: return "bad_magic";
    case ErrorKind::UnsupportedVersion: return "unsupported_version";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::CorruptData: return "corrupt_data";
    case ErrorKind::FormatError: return "format_error";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace prunelab
