#ifndef SCHEMA_FORGE_ERROR_HPP
#define SCHEMA_FORGE_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace schema_forge {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A referenced file could not be opened.
class MissingFile : public Error {
 public:
  explicit MissingFile(const std::string& path)
      : Error("cannot open file: " + path), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// A write was issued against a snapshot that has since changed the same data.
class Conflict : public Error {
 public:
  using Error::Error;
};

}  // namespace schema_forge

#endif
