#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cvdiscord {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input that does not have the required shape or contains non-finite values.
class MalformedInputError : public Error {
 public:
  using Error::Error;
};

/// Parameter outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Singular matrices, failed root brackets, vanishing probabilities.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Fock-space truncation too small for the requested state.
class TruncationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A threshold split left one side empty.
class DegenerateSplitError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class IncompleteInputError : public Error {
 public:
  using Error::Error;
};

}  // namespace cvdiscord
