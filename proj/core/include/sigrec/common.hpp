#pragma once

#include <stdexcept>
#include <string>

namespace sigrec {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input text (disassembly listings, label records, ...).
struct ParseError : Error {
  ParseError(const std::string& msg, std::size_t line)
      : Error(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
  explicit ParseError(const std::string& msg) : Error(msg), line_number(0) {}
  std::size_t line_number;
};

/// Unreadable/unwritable files or missing inputs.
struct IoError : Error {
  using Error::Error;
};

/// Corrupt or incompatible serialized artifacts (checkpoints, vocab files, ...).
struct FormatError : Error {
  using Error::Error;
};

/// Contract violations on in-memory values (bad shapes, empty inputs, ...).
struct InvalidArgument : Error {
  using Error::Error;
};

inline constexpr const char* kToolName = "sigrec";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace sigrec
