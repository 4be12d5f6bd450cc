#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prunelab {

enum class ErrorKind {
  InvalidArgument,
  ShapeMismatch,
  InvalidSpec,
  InvalidState,
  BadMagic,
  UnsupportedVersion,
  Truncated,
  CorruptData,
  FormatError,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (and the CLI)
/// can report it without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace prunelab
