#pragma once

#include <stdexcept>
#include <string>

namespace recap {

// Base class for every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or rank mismatch; the message names the offending operation.
struct DimError : Error {
  using Error::Error;
};

// Non-finite values, zero norms, numeric domain violations.
struct NumericError : Error {
  using Error::Error;
};

// API misuse: non-scalar backward target, empty sequences, batch too small.
struct UsageError : Error {
  using Error::Error;
};

// Malformed input file. line_no is 1-based, -1 when unknown.
struct ParseError : Error {
  ParseError(const std::string& msg, int line)
      : Error(msg + " (line " + std::to_string(line) + ")"), line_no(line) {}
  explicit ParseError(const std::string& msg) : Error(msg), line_no(-1) {}
  int line_no;
};

// Invalid configuration: CLI flags, synthetic-dataset parameters.
struct ConfigError : Error {
  using Error::Error;
};

// Unreadable, wrong-magic or wrong-version checkpoint file.
struct CheckpointError : Error {
  using Error::Error;
};

}  // namespace recap
