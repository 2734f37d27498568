#pragma once

#include <stdexcept>
#include <string>

namespace isearle {

// Base for every error raised by the library. The CLI maps the kind onto a
// structured error object and a nonzero exit code.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

// Caller supplied something that violates an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "input_error"; }
};

// Cosine similarity (or another normalized quantity) is undefined.
class DegenerateInputError : public InputError {
 public:
  using InputError::InputError;
  const char* kind() const noexcept override { return "degenerate_input"; }
};

// Tokenized prompt exceeds the backbone context window.
class TruncationError : public InputError {
 public:
  using InputError::InputError;
  const char* kind() const noexcept override { return "truncation_error"; }
};

class LookupError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "lookup_error"; }
};

// Malformed file content. `line` is 1-based, 0 when not line-addressable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }
  const char* kind() const noexcept override { return "parse_error"; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "validation_error"; }
};

// Optimization produced NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric_error"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io_error"; }
};

// Broken internal contract, e.g. an encoder returning the wrong width.
class InvariantError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "invariant_failure"; }
};

// Phase mismatch or stale version in the annotation workflow.
class ConflictError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "conflict"; }
};

}  // namespace isearle
