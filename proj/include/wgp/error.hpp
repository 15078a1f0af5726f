#pragma once

#include <stdexcept>
#include <string>

namespace wgp {

/// Malformed input text. `line` is 1-based, 0 when unknown.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Structurally invalid word graph (cycle, no accepting path, bad cost).
class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration, descriptor or parameter value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A derivation whose semantics cannot be computed (missing rule, arity).
class SemanticError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace wgp
