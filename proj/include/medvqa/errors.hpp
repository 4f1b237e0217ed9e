#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace medvqa {

// Base for every error the toolkit raises on purpose. Callers that only care
// whether an operation failed catch this; the subclasses carry the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorpusNotFoundError : public Error {
 public:
  using Error::Error;
};

// Malformed input record. `line()` is 1-based; 0 when not line oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }
  const std::string& file() const noexcept { return file_; }

 private:
  std::string file_;
  std::size_t line_;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ImageDecodeError : public Error {
 public:
  using Error::Error;
};

}  // namespace medvqa
