#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stackdenoise {

enum class ErrorKind {
  invalid_argument,
  index_out_of_range,
  shape_mismatch,
  non_finite,
  format,
  truncated,
  unsupported,
  hash_mismatch,
  degenerate,
  io,
  state,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::index_out_of_range: return "index_out_of_range";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::format: return "format";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::hash_mismatch: return "hash_mismatch";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::io: return "io";
    case ErrorKind::state: return "state";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so that callers (and
/// the CLI exit path) can report a stable error name.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

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

}  // namespace stackdenoise
