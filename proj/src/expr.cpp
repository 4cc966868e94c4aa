#include "semiq/expr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace semiq {
namespace {

struct Parser {
  const std::string& src;
  std::size_t pos = 0;
  int n;

  explicit Parser(const std::string& s, int n_) : src(s), n(n_) {}

  void skip_ws() {
    while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
  }

  bool eof() {
    skip_ws();
    return pos >= src.size();
  }

  char peek() {
    skip_ws();
    return pos < src.size() ? src[pos] : '\0';
  }

  bool consume(char c) {
    skip_ws();
    if (pos < src.size() && src[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& msg) { throw ParseError(msg, pos); }

  Expr make(ExprOp op, Expr a = nullptr, Expr b = nullptr) {
    auto node = std::make_shared<ExprNode>();
    node->op = op;
    node->a = std::move(a);
    node->b = std::move(b);
    return node;
  }

  // expr := term (('+'|'-') term)*
  Expr parse_expr() {
    Expr acc = parse_term();
    for (;;) {
      if (consume('+')) {
        acc = make(ExprOp::kAdd, acc, parse_term());
      } else if (consume('-')) {
        acc = make(ExprOp::kSub, acc, parse_term());
      } else {
        return acc;
      }
    }
  }

  // term := unary (('*'|'/') unary)*
  Expr parse_term() {
    Expr acc = parse_unary();
    for (;;) {
      if (consume('*')) {
        acc = make(ExprOp::kMul, acc, parse_unary());
      } else if (consume('/')) {
        acc = make(ExprOp::kDiv, acc, parse_unary());
      } else {
        return acc;
      }
    }
  }

  // unary := '-' unary | power
  Expr parse_unary() {
    if (consume('-')) return make(ExprOp::kNeg, parse_unary());
    if (consume('+')) return parse_unary();
    return parse_power();
  }

  // power := atom ('^' unary)?   (right associative, unary minus allowed in exponent)
  Expr parse_power() {
    Expr base = parse_atom();
    if (consume('^')) return make(ExprOp::kPow, base, parse_unary());
    return base;
  }

  Expr parse_atom() {
    skip_ws();
    if (pos >= src.size()) fail("unexpected end of expression");
    const char c = src[pos];
    if (c == '(') {
      ++pos;
      Expr e = parse_expr();
      if (!consume(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
    fail(std::string("unexpected character '") + c + "'");
  }

  Expr parse_number() {
    const char* begin = src.data() + pos;
    const char* end = src.data() + src.size();
    double value = 0.0;
    auto res = std::from_chars(begin, end, value);
    if (res.ec != std::errc()) fail("malformed number");
    pos = static_cast<std::size_t>(res.ptr - src.data());
    auto node = std::make_shared<ExprNode>();
    node->op = ExprOp::kConst;
    node->value = value;
    return node;
  }

  Expr parse_identifier() {
    const std::size_t start = pos;
    while (pos < src.size() &&
           (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_'))
      ++pos;
    const std::string name = src.substr(start, pos - start);
    if (name.size() >= 2 && name[0] == 'x' &&
        std::all_of(name.begin() + 1, name.end(),
                    [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
      const int idx = std::stoi(name.substr(1));
      if (idx < 1 || idx > n) {
        pos = start;
        fail("state index out of range: " + name + " (n=" + std::to_string(n) + ")");
      }
      auto node = std::make_shared<ExprNode>();
      node->op = ExprOp::kVar;
      node->index = idx - 1;
      return node;
    }
    ExprOp op;
    if (name == "sin") op = ExprOp::kSin;
    else if (name == "cos") op = ExprOp::kCos;
    else if (name == "exp") op = ExprOp::kExp;
    else if (name == "sqrt") op = ExprOp::kSqrt;
    else if (name == "tanh") op = ExprOp::kTanh;
    else {
      pos = start;
      fail("unknown symbol '" + name + "'");
    }
    if (!consume('(')) fail("expected '(' after " + name);
    Expr arg = parse_expr();
    if (!consume(')')) fail("expected ')'");
    return make(op, arg);
  }
};

void print(const Expr& e, std::string& out) {
  char buf[40];
  switch (e->op) {
    case ExprOp::kConst:
      std::snprintf(buf, sizeof buf, "%.17g", e->value);
      out += buf;
      return;
    case ExprOp::kVar:
      out += "x" + std::to_string(e->index + 1);
      return;
    case ExprOp::kAdd:
    case ExprOp::kSub:
    case ExprOp::kMul:
    case ExprOp::kDiv:
    case ExprOp::kPow: {
      const char* sym = e->op == ExprOp::kAdd ? "+"
                        : e->op == ExprOp::kSub ? "-"
                        : e->op == ExprOp::kMul ? "*"
                        : e->op == ExprOp::kDiv ? "/"
                                                : "^";
      out += "(";
      print(e->a, out);
      out += sym;
      print(e->b, out);
      out += ")";
      return;
    }
    case ExprOp::kNeg:
      out += "(-";
      print(e->a, out);
      out += ")";
      return;
    case ExprOp::kSin: out += "sin("; print(e->a, out); out += ")"; return;
    case ExprOp::kCos: out += "cos("; print(e->a, out); out += ")"; return;
    case ExprOp::kExp: out += "exp("; print(e->a, out); out += ")"; return;
    case ExprOp::kSqrt: out += "sqrt("; print(e->a, out); out += ")"; return;
    case ExprOp::kTanh: out += "tanh("; print(e->a, out); out += ")"; return;
  }
}

template <class T, class MakeConst, class MakeVar>
T eval_generic(const Expr& e, const MakeConst& mk_const, const MakeVar& mk_var) {
  switch (e->op) {
    case ExprOp::kConst: return mk_const(e->value);
    case ExprOp::kVar: return mk_var(e->index);
    case ExprOp::kAdd: return eval_generic<T>(e->a, mk_const, mk_var) + eval_generic<T>(e->b, mk_const, mk_var);
    case ExprOp::kSub: return eval_generic<T>(e->a, mk_const, mk_var) - eval_generic<T>(e->b, mk_const, mk_var);
    case ExprOp::kMul: return eval_generic<T>(e->a, mk_const, mk_var) * eval_generic<T>(e->b, mk_const, mk_var);
    case ExprOp::kNeg: return -eval_generic<T>(e->a, mk_const, mk_var);
    case ExprOp::kDiv:
    case ExprOp::kPow:
    case ExprOp::kSin:
    case ExprOp::kCos:
    case ExprOp::kExp:
    case ExprOp::kSqrt:
    case ExprOp::kTanh:
      break;
  }
  try {
    switch (e->op) {
      case ExprOp::kDiv: {
        T num = eval_generic<T>(e->a, mk_const, mk_var);
        T den = eval_generic<T>(e->b, mk_const, mk_var);
        return num / den;
      }
      case ExprOp::kPow: {
        T base = eval_generic<T>(e->a, mk_const, mk_var);
        T ex = eval_generic<T>(e->b, mk_const, mk_var);
        using std::pow;
        return pow(base, ex);
      }
      case ExprOp::kSin: { using std::sin; return sin(eval_generic<T>(e->a, mk_const, mk_var)); }
      case ExprOp::kCos: { using std::cos; return cos(eval_generic<T>(e->a, mk_const, mk_var)); }
      case ExprOp::kExp: { using std::exp; return exp(eval_generic<T>(e->a, mk_const, mk_var)); }
      case ExprOp::kSqrt: { using std::sqrt; return sqrt(eval_generic<T>(e->a, mk_const, mk_var)); }
      case ExprOp::kTanh: { using std::tanh; return tanh(eval_generic<T>(e->a, mk_const, mk_var)); }
      default: break;
    }
  } catch (const std::domain_error& err) {
    throw EvalError(std::string(err.what()) + " in subexpression " + to_string(e));
  }
  throw std::logic_error("unreachable expression op");
}

// double needs the same domain guards the Jet2 operators enforce.
struct Checked {
  double v;
  Checked operator+(Checked o) const { return {v + o.v}; }
  Checked operator-(Checked o) const { return {v - o.v}; }
  Checked operator-() const { return {-v}; }
  Checked operator*(Checked o) const { return {v * o.v}; }
  Checked operator/(Checked o) const {
    if (o.v == 0.0) throw std::domain_error("division by zero");
    return {v / o.v};
  }
};
Checked sin(Checked a) { return {std::sin(a.v)}; }
Checked cos(Checked a) { return {std::cos(a.v)}; }
Checked exp(Checked a) { return {std::exp(a.v)}; }
Checked tanh(Checked a) { return {std::tanh(a.v)}; }
Checked sqrt(Checked a) {
  if (a.v < 0.0) throw std::domain_error("sqrt of negative value");
  return {std::sqrt(a.v)};
}
Checked pow(Checked a, Checked b) {
  const double er = std::round(b.v);
  if (b.v != er && a.v <= 0.0)
    throw std::domain_error("pow with non-integer exponent needs positive base");
  if (a.v == 0.0 && b.v < 0.0) throw std::domain_error("division by zero");
  return {std::pow(a.v, b.v)};
}

}  // namespace

Expr parse_expression(const std::string& source, int n) {
  Parser p(source, n);
  Expr e = p.parse_expr();
  if (!p.eof()) p.fail("trailing input");
  return e;
}

std::string to_string(const Expr& e) {
  std::string out;
  print(e, out);
  return out;
}

double eval(const Expr& e, std::span<const double> x) {
  return eval_generic<Checked>(
             e, [](double c) { return Checked{c}; },
             [&](int i) { return Checked{x[static_cast<std::size_t>(i)]}; })
      .v;
}

Jet2 eval_jet2(const Expr& e, const Eigen::VectorXd& x) {
  const int n = static_cast<int>(x.size());
  return eval_generic<Jet2>(
      e, [n](double c) { return Jet2::constant(c, n); },
      [&](int i) { return Jet2::variable(x[i], i, n); });
}

}  // namespace semiq
