#pragma once

#include <stdexcept>
#include <string>

namespace sslface {

/// Base of every error thrown by the library. The category decides the CLI
/// exit code: usage errors exit 2, data errors 3, numeric failures 4.
class Error : public std::runtime_error {
 public:
  enum class Category { kUsage, kData, kNumeric };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

/// Bad argument or configuration supplied by the caller.
class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what) : Error(Category::kUsage, what) {}
};

/// Malformed or missing input data (files, protocols, containers).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(Category::kData, what) {}
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class LoadError : public DataError {
 public:
  enum class Reason { kIo, kMagic, kVersion, kChecksum, kTruncated, kFormat };

  LoadError(Reason reason, const std::string& what) : DataError(what), reason_(reason) {}
  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

/// A numerical procedure (transform fit, classifier training) could not run.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(Category::kNumeric, what) {}
};

}  // namespace sslface
