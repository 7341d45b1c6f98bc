#include "steerkit/expression.hpp"

#include <cctype>
#include <cmath>
#include <numbers>

#include "steerkit/errors.hpp"

namespace steerkit {

struct Expression::Node {
  enum Kind { Const, Var, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Exp } kind;
  double value = 0.0;
  int var = 0;
  std::shared_ptr<const Node> a, b;
};

namespace {

using NodePtr = std::shared_ptr<const Expression::Node>;
using Node = Expression::Node;

NodePtr make(Node::Kind k, NodePtr a = nullptr, NodePtr b = nullptr) {
  auto n = std::make_shared<Node>();
  n->kind = k;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

class Parser {
 public:
  Parser(const std::string& s, const std::map<std::string, double>& params) : s_(s), params_(params) {}

  NodePtr parse_all() {
    NodePtr e = expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected character '" + std::string(1, s_[pos_]) + "'");
    return e;
  }

  int max_var = -1;

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw Error(ErrorCode::ConfigError, "expression '" + s_ + "': " + why, {{"position", pos_}});
  }

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  NodePtr expr() {
    NodePtr lhs = term();
    for (;;) {
      if (eat('+')) lhs = make(Node::Add, lhs, term());
      else if (eat('-')) lhs = make(Node::Sub, lhs, term());
      else return lhs;
    }
  }

  NodePtr term() {
    NodePtr lhs = unary();
    for (;;) {
      if (eat('*')) lhs = make(Node::Mul, lhs, unary());
      else if (eat('/')) lhs = make(Node::Div, lhs, unary());
      else return lhs;
    }
  }

  NodePtr unary() {
    if (eat('-')) return make(Node::Neg, unary());
    if (eat('+')) return unary();
    return power();
  }

  // Right associative, binds tighter than unary minus on its left operand.
  NodePtr power() {
    NodePtr base = primary();
    if (eat('^')) return make(Node::Pow, base, unary());
    return base;
  }

  NodePtr primary() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end of input");
    char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr e = expr();
      if (!eat(')')) fail("missing ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    fail("unexpected character '" + std::string(1, c) + "'");
  }

  NodePtr number() {
    const char* begin = s_.c_str() + pos_;
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin) fail("bad number");
    pos_ += static_cast<size_t>(end - begin);
    auto n = std::make_shared<Node>();
    n->kind = Node::Const;
    n->value = v;
    return n;
  }

  NodePtr identifier() {
    size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    std::string id = s_.substr(start, pos_ - start);
    if (id == "sin" || id == "cos" || id == "exp") {
      if (!eat('(')) fail("expected '(' after " + id);
      NodePtr arg = expr();
      if (!eat(')')) fail("missing ')'");
      return make(id == "sin" ? Node::Sin : id == "cos" ? Node::Cos : Node::Exp, arg);
    }
    auto n = std::make_shared<Node>();
    if (id == "pi") {
      n->kind = Node::Const;
      n->value = std::numbers::pi;
      return n;
    }
    int var = -1;
    if (id == "x") var = 0;
    else if (id == "y") var = 1;
    else if (id == "z") var = 2;
    else if (id.size() == 2 && id[0] == 'x' && id[1] >= '1' && id[1] <= '4') var = id[1] - '1';
    if (var >= 0) {
      n->kind = Node::Var;
      n->var = var;
      max_var = std::max(max_var, var);
      return n;
    }
    auto it = params_.find(id);
    if (it == params_.end()) fail("unknown identifier '" + id + "'");
    n->kind = Node::Const;
    n->value = it->second;
    return n;
  }

  const std::string& s_;
  const std::map<std::string, double>& params_;
  size_t pos_ = 0;
};

double eval_node(const Node& n, const double* v) {
  switch (n.kind) {
    case Node::Const: return n.value;
    case Node::Var: return v[n.var];
    case Node::Neg: return -eval_node(*n.a, v);
    case Node::Add: return eval_node(*n.a, v) + eval_node(*n.b, v);
    case Node::Sub: return eval_node(*n.a, v) - eval_node(*n.b, v);
    case Node::Mul: return eval_node(*n.a, v) * eval_node(*n.b, v);
    case Node::Div: return eval_node(*n.a, v) / eval_node(*n.b, v);
    case Node::Pow: return std::pow(eval_node(*n.a, v), eval_node(*n.b, v));
    case Node::Sin: return std::sin(eval_node(*n.a, v));
    case Node::Cos: return std::cos(eval_node(*n.a, v));
    case Node::Exp: return std::exp(eval_node(*n.a, v));
  }
  return 0.0;
}

}  // namespace

Expression Expression::parse(const std::string& text, const std::map<std::string, double>& params) {
  Parser p(text, params);
  Expression e;
  e.root_ = p.parse_all();
  e.text_ = text;
  e.max_var_ = p.max_var;
  return e;
}

double Expression::operator()(const double* vars) const { return eval_node(*root_, vars); }

}  // namespace steerkit
