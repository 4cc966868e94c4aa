#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "semiq/jet.hpp"

namespace semiq {

/// Error from parse_expression, carrying the byte offset of the offending
/// token in the source text.
struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, std::size_t position)
      : std::runtime_error(msg + " at position " + std::to_string(position)),
        pos(position) {}
  std::size_t pos;
};

/// Evaluation-time domain error (division by zero, sqrt of a negative, ...)
/// annotated with the offending subexpression.
struct EvalError : std::runtime_error {
  explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class ExprOp {
  kConst,
  kVar,   // state variable x_{index+1}
  kAdd,
  kSub,
  kMul,
  kDiv,
  kPow,
  kNeg,
  kSin,
  kCos,
  kExp,
  kSqrt,
  kTanh,
};

/// Immutable expression tree over x1..xn. Nodes are shared and never mutated
/// after parsing, so evaluation is reentrant from any number of threads.
struct ExprNode {
  ExprOp op = ExprOp::kConst;
  double value = 0.0;  // kConst
  int index = 0;       // kVar (0-based)
  std::shared_ptr<const ExprNode> a, b;
};

using Expr = std::shared_ptr<const ExprNode>;

/// Parses `source` over variables x1..xn (standard precedence; ^ binds
/// tightest and associates to the right). Throws ParseError on malformed
/// input, unknown identifiers, or variable indices above n.
Expr parse_expression(const std::string& source, int n);

/// Canonical fully parenthesized form; parsing the result reproduces the
/// exact tree (and therefore bit-identical evaluation).
std::string to_string(const Expr& e);

double eval(const Expr& e, std::span<const double> x);

/// Value, gradient and Hessian of `e` at x via forward-mode jets.
Jet2 eval_jet2(const Expr& e, const Eigen::VectorXd& x);

}  // namespace semiq
