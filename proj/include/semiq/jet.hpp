#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace semiq {

/// Second-order truncated Taylor carrier: value, gradient and symmetric
/// Hessian with respect to a fixed set of n independent variables. All
/// arithmetic propagates derivatives exactly (forward mode), so evaluating an
/// expression on Jet2 inputs yields machine-precision first and second
/// derivatives of the expression.
struct Jet2 {
  double v = 0.0;
  Eigen::VectorXd g;   // n
  Eigen::MatrixXd h;   // n x n, symmetric

  Jet2() = default;
  explicit Jet2(int n)
      : v(0.0), g(Eigen::VectorXd::Zero(n)), h(Eigen::MatrixXd::Zero(n, n)) {}
  Jet2(double value, int n)
      : v(value), g(Eigen::VectorXd::Zero(n)), h(Eigen::MatrixXd::Zero(n, n)) {}

  int dim() const { return static_cast<int>(g.size()); }

  static Jet2 constant(double value, int n) { return Jet2(value, n); }

  /// The i-th independent variable with value `value`.
  static Jet2 variable(double value, int i, int n) {
    Jet2 j(value, n);
    j.g[i] = 1.0;
    return j;
  }
};

inline Jet2 operator+(const Jet2& a, const Jet2& b) {
  Jet2 r(a.dim());
  r.v = a.v + b.v;
  r.g = a.g + b.g;
  r.h = a.h + b.h;
  return r;
}

inline Jet2 operator-(const Jet2& a, const Jet2& b) {
  Jet2 r(a.dim());
  r.v = a.v - b.v;
  r.g = a.g - b.g;
  r.h = a.h - b.h;
  return r;
}

inline Jet2 operator-(const Jet2& a) {
  Jet2 r(a.dim());
  r.v = -a.v;
  r.g = -a.g;
  r.h = -a.h;
  return r;
}

inline Jet2 operator*(const Jet2& a, const Jet2& b) {
  Jet2 r(a.dim());
  r.v = a.v * b.v;
  r.g = a.g * b.v + b.g * a.v;
  // upper triangle mirrored so the Hessian stays exactly symmetric
  const int n = r.dim();
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const double v =
          a.h(i, j) * b.v + b.h(i, j) * a.v + a.g[i] * b.g[j] + b.g[i] * a.g[j];
      r.h(i, j) = r.h(j, i) = v;
    }
  return r;
}

inline Jet2 operator*(double s, const Jet2& a) {
  Jet2 r(a.dim());
  r.v = s * a.v;
  r.g = s * a.g;
  r.h = s * a.h;
  return r;
}
inline Jet2 operator*(const Jet2& a, double s) { return s * a; }
inline Jet2 operator+(const Jet2& a, double s) {
  Jet2 r = a;
  r.v += s;
  return r;
}
inline Jet2 operator+(double s, const Jet2& a) { return a + s; }
inline Jet2 operator-(const Jet2& a, double s) { return a + (-s); }
inline Jet2 operator-(double s, const Jet2& a) { return (-a) + s; }

/// Chain rule for a scalar function f applied to jet u:
///   value f(u), gradient f'(u)·∇u, Hessian f'(u)·∇²u + f''(u)·∇u∇uᵀ.
inline Jet2 apply_unary(const Jet2& u, double f, double df, double ddf) {
  Jet2 r(u.dim());
  r.v = f;
  r.g = df * u.g;
  const int n = r.dim();
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const double v = df * u.h(i, j) + ddf * (u.g[i] * u.g[j]);
      r.h(i, j) = r.h(j, i) = v;
    }
  return r;
}

inline Jet2 inverse(const Jet2& b) {
  if (b.v == 0.0) throw std::domain_error("division by zero");
  const double iv = 1.0 / b.v;
  return apply_unary(b, iv, -iv * iv, 2.0 * iv * iv * iv);
}

inline Jet2 operator/(const Jet2& a, const Jet2& b) { return a * inverse(b); }
inline Jet2 operator/(const Jet2& a, double s) { return a * (1.0 / s); }
inline Jet2 operator/(double s, const Jet2& b) { return s * inverse(b); }

inline Jet2 sin(const Jet2& u) {
  return apply_unary(u, std::sin(u.v), std::cos(u.v), -std::sin(u.v));
}
inline Jet2 cos(const Jet2& u) {
  return apply_unary(u, std::cos(u.v), -std::sin(u.v), -std::cos(u.v));
}
inline Jet2 exp(const Jet2& u) {
  const double e = std::exp(u.v);
  return apply_unary(u, e, e, e);
}
inline Jet2 sqrt(const Jet2& u) {
  if (u.v < 0.0) throw std::domain_error("sqrt of negative value");
  if (u.v == 0.0) throw std::domain_error("sqrt derivative singular at zero");
  const double s = std::sqrt(u.v);
  return apply_unary(u, s, 0.5 / s, -0.25 / (s * u.v));
}
inline Jet2 tanh(const Jet2& u) {
  const double t = std::tanh(u.v);
  const double sech2 = 1.0 - t * t;
  return apply_unary(u, t, sech2, -2.0 * t * sech2);
}
inline Jet2 log(const Jet2& u) {
  if (u.v <= 0.0) throw std::domain_error("log of non-positive value");
  const double iv = 1.0 / u.v;
  return apply_unary(u, std::log(u.v), iv, -iv * iv);
}

/// a^b. Integer constant exponents use repeated multiplication and are valid
/// for any base; other exponents go through exp(b·log a) and require a > 0.
inline Jet2 pow(const Jet2& a, const Jet2& b) {
  const bool const_exp = (b.g.lpNorm<Eigen::Infinity>() == 0.0 &&
                          b.h.lpNorm<Eigen::Infinity>() == 0.0);
  if (const_exp) {
    const double e = b.v;
    const double er = std::round(e);
    if (e == er && std::abs(e) <= 64) {
      long k = static_cast<long>(er);
      if (k == 0) return Jet2::constant(1.0, a.dim());
      Jet2 base = k > 0 ? a : inverse(a);
      long m = std::labs(k);
      Jet2 acc = base;
      for (long i = 1; i < m; ++i) acc = acc * base;
      return acc;
    }
    if (a.v <= 0.0) throw std::domain_error("pow with non-integer exponent needs positive base");
    const double f = std::pow(a.v, e);
    return apply_unary(a, f, e * f / a.v, e * (e - 1.0) * f / (a.v * a.v));
  }
  return exp(b * log(a));
}

}  // namespace semiq
