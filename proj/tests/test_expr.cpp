#include <doctest.h>

#include <random>

#include "semiq/expr.hpp"
#include "semiq/system.hpp"

using namespace semiq;

namespace {

double fd_gradient(const Expr& e, Eigen::VectorXd x, int i, double h) {
  x[i] += h;
  const double up = eval(e, {x.data(), static_cast<std::size_t>(x.size())});
  x[i] -= 2 * h;
  const double dn = eval(e, {x.data(), static_cast<std::size_t>(x.size())});
  return (up - dn) / (2 * h);
}

double fd_hessian(const Expr& e, Eigen::VectorXd x, int i, int j, double h) {
  auto f = [&](double di, double dj) {
    Eigen::VectorXd y = x;
    y[i] += di;
    y[j] += dj;
    return eval(e, {y.data(), static_cast<std::size_t>(y.size())});
  };
  if (i == j)
    return (f(h, 0) - 2 * f(0, 0) + f(-h, 0)) / (h * h);
  return (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h * h);
}

}  // namespace

TEST_CASE("parse_expression evaluates with standard precedence") {
  auto e = parse_expression("x1^2 + x2^2", 2);
  const double x[] = {1.0, 2.0};
  CHECK(eval(e, x) == 5.0);

  auto s = parse_expression("sin(x1)", 1);
  const double z[] = {0.0};
  CHECK(eval(s, z) == 0.0);

  auto m = parse_expression("x1*x2 - x2", 2);
  const double y[] = {3.0, 2.0};
  CHECK(eval(m, y) == 4.0);

  // precedence and right-associative powers
  auto p = parse_expression("2*x1^3", 1);
  const double w[] = {2.0};
  CHECK(eval(p, w) == 16.0);
  auto q = parse_expression("2^x1^2", 1);  // 2^(x1^2)
  CHECK(eval(q, w) == 16.0);
}

TEST_CASE("parse_expression rejects malformed input with positions") {
  CHECK_THROWS_AS(parse_expression("x1 + ", 1), ParseError);
  CHECK_THROWS_AS(parse_expression("foo(x1)", 1), ParseError);
  CHECK_THROWS_AS(parse_expression("x3", 2), ParseError);
  CHECK_THROWS_AS(parse_expression("x1)", 1), ParseError);
  CHECK_THROWS_AS(parse_expression("sin x1", 1), ParseError);
  try {
    parse_expression("x1 + @", 1);
    FAIL("expected ParseError");
  } catch (const ParseError& err) {
    CHECK(err.pos == 5);
  }
}

TEST_CASE("eval reports domain errors with the offending subexpression") {
  auto e = parse_expression("1/(x1-1)", 1);
  const double x[] = {1.0};
  CHECK_THROWS_WITH_AS(eval(e, x), doctest::Contains("division by zero"), EvalError);
  auto s = parse_expression("sqrt(x1)", 1);
  const double neg[] = {-2.0};
  CHECK_THROWS_AS(eval(s, neg), EvalError);
}

TEST_CASE("eval_jet2 matches analytic derivatives") {
  {
    auto e = parse_expression("x1^2", 1);
    const Jet2 j = eval_jet2(e, Eigen::VectorXd::Constant(1, 3.0));
    CHECK(j.v == 9.0);
    CHECK(j.g[0] == 6.0);
    CHECK(j.h(0, 0) == 2.0);
  }
  {
    auto e = parse_expression("sin(x1)", 1);
    const Jet2 j = eval_jet2(e, Eigen::VectorXd::Zero(1));
    CHECK(j.v == 0.0);
    CHECK(j.g[0] == 1.0);
    CHECK(j.h(0, 0) == 0.0);
  }
  {
    auto e = parse_expression("x1^2*x2", 2);
    Eigen::VectorXd x(2);
    x << 1.0, 2.0;
    const Jet2 j = eval_jet2(e, x);
    CHECK(j.v == doctest::Approx(2.0));
    CHECK(j.g[0] == doctest::Approx(4.0));
    CHECK(j.g[1] == doctest::Approx(1.0));
    CHECK(j.h(0, 0) == doctest::Approx(4.0));
    CHECK(j.h(0, 1) == doctest::Approx(2.0));
    CHECK(j.h(1, 0) == doctest::Approx(2.0));
    CHECK(j.h(1, 1) == doctest::Approx(0.0));
    // independent finite-difference oracle, step 1e-5
    for (int a = 0; a < 2; ++a)
      CHECK(j.g[a] == doctest::Approx(fd_gradient(e, x, a, 1e-5)).epsilon(1e-6));
  }
}

TEST_CASE("jet derivatives match central differences for every builtin") {
  const std::vector<std::string> exprs = {
      "sin(x1)*cos(x2)",
      "exp(x1*x2/4)",
      "sqrt(x1+3)",
      "tanh(x1-x2)",
      "x1^3 - 2*x2^2 + x1*x2",
      "(x1+2)^(x2/2+1)",
      "1/(x1+4) + x2/(x1+2)",
      "-x1 + (-(x2))*2",
  };
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uni(0.2, 1.4);
  for (const auto& src : exprs) {
    auto e = parse_expression(src, 2);
    for (int rep = 0; rep < 8; ++rep) {
      Eigen::VectorXd x(2);
      x << uni(rng), uni(rng);
      const Jet2 j = eval_jet2(e, x);
      for (int a = 0; a < 2; ++a) {
        const double fd = fd_gradient(e, x, a, 1e-5);
        CHECK(j.g[a] == doctest::Approx(fd).epsilon(1e-6));
        for (int b = 0; b < 2; ++b) {
          const double fdh = fd_hessian(e, x, a, b, 1e-4);
          CHECK(j.h(a, b) == doctest::Approx(fdh).epsilon(1e-5).scale(1.0));
        }
      }
      CHECK((j.h - j.h.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
    }
  }
}

TEST_CASE("print/parse round-trip evaluates identically") {
  const std::vector<std::string> exprs = {
      "x1^2 + x2^2",
      "sin(x1)*cos(x2) - exp(x1/8)",
      "-x1^3/(2+x2) + sqrt(x1+5)",
      "tanh(x1)*(x2-0.125)^2",
  };
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uni(-1.5, 1.5);
  for (const auto& src : exprs) {
    auto e = parse_expression(src, 2);
    auto round = parse_expression(to_string(e), 2);
    CHECK(to_string(round) == to_string(e));
    for (int rep = 0; rep < 16; ++rep) {
      double x[2] = {uni(rng), uni(rng)};
      CHECK(eval(e, x) == eval(round, x));  // tolerance 0
    }
  }
}

TEST_CASE("validate_system on fixtures") {
  // SYS-A on a [-2,2] grid
  SystemSpec sys_a(1, 1, {"0"}, {{"1"}}, "x1^2", {{"1"}});
  std::vector<Eigen::VectorXd> grid;
  for (int i = -8; i <= 8; ++i) grid.push_back(Eigen::VectorXd::Constant(1, i / 4.0));
  auto rep = validate_system(sys_a, grid);
  CHECK(rep.ok());
  CHECK_FALSE(rep.hard_failure());

  SystemSpec shifted(1, 1, {"x1+1"}, {{"1"}}, "x1^2", {{"1"}});
  auto rep2 = validate_system(shifted, grid);
  CHECK(rep2.hard_failure());
  bool found = false;
  for (const auto& c : rep2.checks)
    if (c.name == "f(0) = 0" && !c.pass) found = true;
  CHECK(found);

  SystemSpec bad_q(1, 1, {"0"}, {{"1"}}, "x1^2", {{"-1"}});
  auto rep3 = validate_system(bad_q, grid);
  CHECK_FALSE(rep3.ok());
  bool q_fail = false;
  for (const auto& c : rep3.checks)
    if (c.name == "Q(x) positive definite" && !c.pass) q_fail = true;
  CHECK(q_fail);
}

TEST_CASE("SystemSpec mirrors Q and computes R") {
  SystemSpec s(2, 2, {"x2", "sin(x1)"}, {{"0", "1"}, {"1", "0"}}, "x1^2+x2^2",
               {{"2", "x1"}, {"3"}});
  Eigen::VectorXd x(2);
  x << 0.5, -0.25;
  const Eigen::MatrixXd q = s.Q(x);
  CHECK(q(0, 1) == q(1, 0));
  CHECK(q(0, 1) == 0.5);
  const Eigen::MatrixXd r = s.R(x);
  CHECK((r - r.transpose()).lpNorm<Eigen::Infinity>() < 1e-14);
  // jets agree with the double path
  const SystemJets jets = eval_system_jets(s, x);
  CHECK((jets.R_value() - r).lpNorm<Eigen::Infinity>() < 1e-12);
}
