#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace steerkit {

// Scalar arithmetic expressions over the variables x, y, z (or x1..x4) with
// + - * / ^, unary minus, sin, cos, exp, the constant pi and named parameters.
class Expression {
 public:
  struct Node;

  static Expression parse(const std::string& text, const std::map<std::string, double>& params = {});

  double operator()(const double* vars) const;
  const std::string& text() const { return text_; }
  int max_variable() const { return max_var_; }

 private:
  std::shared_ptr<const Node> root_;
  std::string text_;
  int max_var_ = -1;
};

}  // namespace steerkit
