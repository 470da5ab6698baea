#pragma once

#include <string>
#include <string_view>

#include "vidq/dsl/ast.hpp"
#include "vidq/error.hpp"

namespace vidq::dsl {

/// Syntax error or duplicate declaration, positioned in the source.
class SyntaxError : public ParseError {
 public:
  SyntaxError(const std::string& file, std::size_t line, std::size_t col, const std::string& message)
      : ParseError(file + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + message, line, col),
        message_(message) {}
  const std::string& message() const { return message_; }

 private:
  std::string message_;
};

Program parse(std::string_view source, const std::string& filename = "<input>");

Program parse_file(const std::string& path);

/// Parses a standalone predicate expression (used by plan files).
PredicateExpr parse_predicate(std::string_view source);

}  // namespace vidq::dsl
