#include "core/expr.hpp"

#include <cctype>
#include <cmath>

namespace ctalab {

enum class Op { Const, Var, Add, Sub, Mul, Div, Pow, Neg, Sin, Cos, Exp, Tanh };

struct Expr::Node {
  Op op = Op::Const;
  double value = 0.0;  // Const
  int var = 0;         // Var: 0=x1, 1=y1, 2=y2
  NodePtr a, b;
};

namespace {

using Node = Expr::Node;
using NodePtr = Expr::NodePtr;

NodePtr make_const(double v) {
  auto n = std::make_shared<Node>();
  n->op = Op::Const;
  n->value = v;
  return n;
}

NodePtr make_var(int idx) {
  auto n = std::make_shared<Node>();
  n->op = Op::Var;
  n->var = idx;
  return n;
}

NodePtr make(Op op, NodePtr a, NodePtr b = nullptr) {
  // Light constant folding keeps derivative trees small.
  auto cval = [](const NodePtr& p) { return p && p->op == Op::Const; };
  if (op == Op::Add && cval(a) && a->value == 0.0) return b;
  if (op == Op::Add && cval(b) && b->value == 0.0) return a;
  if (op == Op::Sub && cval(b) && b->value == 0.0) return a;
  if (op == Op::Mul && ((cval(a) && a->value == 0.0) || (cval(b) && b->value == 0.0)))
    return make_const(0.0);
  if (op == Op::Mul && cval(a) && a->value == 1.0) return b;
  if (op == Op::Mul && cval(b) && b->value == 1.0) return a;
  if (op == Op::Neg && cval(a)) return make_const(-a->value);
  if (a && b && cval(a) && cval(b)) {
    switch (op) {
      case Op::Add: return make_const(a->value + b->value);
      case Op::Sub: return make_const(a->value - b->value);
      case Op::Mul: return make_const(a->value * b->value);
      case Op::Div: return make_const(a->value / b->value);
      case Op::Pow: return make_const(std::pow(a->value, b->value));
      default: break;
    }
  }
  auto n = std::make_shared<Node>();
  n->op = op;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

double eval_node(const Node* n, double x1, double y1, double y2) {
  switch (n->op) {
    case Op::Const: return n->value;
    case Op::Var: return n->var == 0 ? x1 : (n->var == 1 ? y1 : y2);
    case Op::Add: return eval_node(n->a.get(), x1, y1, y2) + eval_node(n->b.get(), x1, y1, y2);
    case Op::Sub: return eval_node(n->a.get(), x1, y1, y2) - eval_node(n->b.get(), x1, y1, y2);
    case Op::Mul: return eval_node(n->a.get(), x1, y1, y2) * eval_node(n->b.get(), x1, y1, y2);
    case Op::Div: return eval_node(n->a.get(), x1, y1, y2) / eval_node(n->b.get(), x1, y1, y2);
    case Op::Pow: return std::pow(eval_node(n->a.get(), x1, y1, y2), eval_node(n->b.get(), x1, y1, y2));
    case Op::Neg: return -eval_node(n->a.get(), x1, y1, y2);
    case Op::Sin: return std::sin(eval_node(n->a.get(), x1, y1, y2));
    case Op::Cos: return std::cos(eval_node(n->a.get(), x1, y1, y2));
    case Op::Exp: return std::exp(eval_node(n->a.get(), x1, y1, y2));
    case Op::Tanh: return std::tanh(eval_node(n->a.get(), x1, y1, y2));
  }
  return 0.0;
}

NodePtr diff_node(const NodePtr& n, int var) {
  switch (n->op) {
    case Op::Const: return make_const(0.0);
    case Op::Var: return make_const(n->var == var ? 1.0 : 0.0);
    case Op::Add: return make(Op::Add, diff_node(n->a, var), diff_node(n->b, var));
    case Op::Sub: return make(Op::Sub, diff_node(n->a, var), diff_node(n->b, var));
    case Op::Mul:
      return make(Op::Add, make(Op::Mul, diff_node(n->a, var), n->b),
                  make(Op::Mul, n->a, diff_node(n->b, var)));
    case Op::Div:
      return make(Op::Div,
                  make(Op::Sub, make(Op::Mul, diff_node(n->a, var), n->b),
                       make(Op::Mul, n->a, diff_node(n->b, var))),
                  make(Op::Mul, n->b, n->b));
    case Op::Pow: {
      if (n->b->op == Op::Const) {
        double p = n->b->value;
        return make(Op::Mul, make(Op::Mul, make_const(p), make(Op::Pow, n->a, make_const(p - 1.0))),
                    diff_node(n->a, var));
      }
      // ln is not in the language, so differentiation requires constant exponents.
      fail_config("expression: derivative of non-constant exponent is not supported");
    }
    case Op::Neg: return make(Op::Neg, diff_node(n->a, var));
    case Op::Sin: return make(Op::Mul, make(Op::Cos, n->a), diff_node(n->a, var));
    case Op::Cos: return make(Op::Neg, make(Op::Mul, make(Op::Sin, n->a), diff_node(n->a, var)));
    case Op::Exp: return make(Op::Mul, make(Op::Exp, n->a), diff_node(n->a, var));
    case Op::Tanh: {
      NodePtr t = make(Op::Tanh, n->a);
      NodePtr sech2 = make(Op::Sub, make_const(1.0), make(Op::Mul, t, t));
      return make(Op::Mul, sech2, diff_node(n->a, var));
    }
  }
  return make_const(0.0);
}

class Parser {
 public:
  explicit Parser(const std::string& s) : s_(s) {}

  NodePtr parse() {
    NodePtr e = expr();
    skip_ws();
    if (pos_ != s_.size()) fail_config("expression: unexpected character at position " + std::to_string(pos_) + " in '" + s_ + "'");
    return e;
  }

 private:
  NodePtr expr() {
    NodePtr lhs = term();
    for (;;) {
      skip_ws();
      if (match('+')) lhs = make(Op::Add, lhs, term());
      else if (match('-')) lhs = make(Op::Sub, lhs, term());
      else return lhs;
    }
  }

  NodePtr term() {
    NodePtr lhs = factor();
    for (;;) {
      skip_ws();
      if (match('*')) lhs = make(Op::Mul, lhs, factor());
      else if (match('/')) lhs = make(Op::Div, lhs, factor());
      else return lhs;
    }
  }

  NodePtr factor() {
    skip_ws();
    if (match('-')) return make(Op::Neg, factor());
    if (match('+')) return factor();
    NodePtr base = atom();
    skip_ws();
    if (match('^')) {
      // Right associative.
      NodePtr exp = factor();
      return make(Op::Pow, base, exp);
    }
    return base;
  }

  NodePtr atom() {
    skip_ws();
    if (pos_ >= s_.size()) fail_config("expression: unexpected end of input in '" + s_ + "'");
    char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr e = expr();
      skip_ws();
      if (!match(')')) fail_config("expression: missing ')' in '" + s_ + "'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c))) return ident();
    fail_config(std::string("expression: unexpected character '") + c + "' in '" + s_ + "'");
  }

  NodePtr number() {
    size_t start = pos_;
    while (pos_ < s_.size() &&
           (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' || s_[pos_] == 'e' ||
            s_[pos_] == 'E' ||
            ((s_[pos_] == '+' || s_[pos_] == '-') && (s_[pos_ - 1] == 'e' || s_[pos_ - 1] == 'E'))))
      ++pos_;
    return make_const(std::stod(s_.substr(start, pos_ - start)));
  }

  NodePtr ident() {
    size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    std::string name = s_.substr(start, pos_ - start);
    if (name == "x1") return make_var(0);
    if (name == "y1") return make_var(1);
    if (name == "y2") return make_var(2);
    if (name == "pi") return make_const(kPi);
    if (name == "sin" || name == "cos" || name == "exp" || name == "tanh") {
      skip_ws();
      if (!match('(')) fail_config("expression: expected '(' after " + name);
      NodePtr arg = expr();
      skip_ws();
      if (!match(')')) fail_config("expression: missing ')' after " + name + "(...");
      Op op = name == "sin" ? Op::Sin : name == "cos" ? Op::Cos : name == "exp" ? Op::Exp : Op::Tanh;
      return make(op, arg);
    }
    fail_config("expression: unknown symbol '" + name + "' in '" + s_ + "'");
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool match(char c) {
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  const std::string& s_;
  size_t pos_ = 0;
};

}  // namespace

Expr::Expr() : root_(make_const(0.0)), text_("0") {}
Expr::Expr(NodePtr root, std::string text) : root_(std::move(root)), text_(std::move(text)) {}

Expr Expr::parse(const std::string& text) {
  Parser p(text);
  return Expr(p.parse(), text);
}

Expr Expr::constant(double v) { return Expr(make_const(v), std::to_string(v)); }

double Expr::eval(double x1, double y1, double y2) const {
  double v = eval_node(root_.get(), x1, y1, y2);
  if (!std::isfinite(v)) fail_numeric("expression '" + text_ + "' evaluated non-finite at (" +
                                      std::to_string(x1) + "," + std::to_string(y1) + "," + std::to_string(y2) + ")");
  return v;
}

Expr Expr::derivative(const std::string& var) const {
  int idx = var == "x1" ? 0 : var == "y1" ? 1 : var == "y2" ? 2 : -1;
  if (idx < 0) fail_invalid("derivative: unknown variable " + var);
  return Expr(diff_node(root_, idx), "d/d" + var + "(" + text_ + ")");
}

bool Expr::is_zero() const { return root_->op == Op::Const && root_->value == 0.0; }

}  // namespace ctalab
