#include "medvqa/errors.hpp"

namespace medvqa {

ParseError::ParseError(const std::string& file, std::size_t line, const std::string& what)
    : Error(file + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what),
      file_(file),
      line_(line) {}

}  // namespace medvqa
