#pragma once

#include <memory>
#include <string>

#include "core/common.hpp"

namespace ctalab {

/// Scalar expression in the variables (x1, y1, y2).
///
/// Grammar: numbers, `pi`, `x1`, `y1`, `y2`, unary minus, + - * / ^,
/// sin cos exp tanh, parentheses. Parsed by a small recursive-descent
/// parser; supports exact symbolic differentiation so metric and
/// potential derivatives never rely on finite differences.
class Expr {
 public:
  Expr();  // constant 0
  static Expr parse(const std::string& text);
  static Expr constant(double v);

  double eval(double x1, double y1, double y2) const;
  /// d/dvar, var in {"x1","y1","y2"}.
  Expr derivative(const std::string& var) const;
  bool is_zero() const;
  const std::string& text() const { return text_; }

  struct Node;
  using NodePtr = std::shared_ptr<const Node>;

 private:
  explicit Expr(NodePtr root, std::string text);
  NodePtr root_;
  std::string text_;
};

}  // namespace ctalab
