#include "semiq/localsolve.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "semiq/linalg.hpp"

namespace semiq {

Linearization linearize(const SystemSpec& s) {
  const int n = s.n(), m = s.m();
  const Eigen::VectorXd origin = Eigen::VectorXd::Zero(n);
  const SystemJets jets = eval_system_jets(s, origin);

  Linearization l;
  l.A = jets.f_jacobian();
  l.Bmat = jets.g_value();
  l.E = 0.5 * jets.eps.h;
  l.E = 0.5 * (l.E + l.E.transpose().eval());
  l.Q0.resize(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) l.Q0(i, j) = jets.Q[i][j].v;

  Eigen::LLT<Eigen::MatrixXd> llt_e(l.E);
  Eigen::LLT<Eigen::MatrixXd> llt_q(l.Q0);
  if (llt_e.info() != Eigen::Success || llt_q.info() != Eigen::Success)
    throw std::runtime_error(
        "linearized problem unsolvable: E = (1/2) Hess eps(0) and Q(0) must be positive definite");
  return l;
}

Eigen::MatrixXd solve_riccati(const Linearization& l) {
  const Eigen::Index n = l.A.rows();
  Eigen::LLT<Eigen::MatrixXd> q0(l.Q0);
  const Eigen::MatrixXd G = l.Bmat * q0.solve(l.Bmat.transpose());

  // Hamiltonian matrix whose stable invariant subspace is spanned by [I; P].
  Eigen::MatrixXd H(2 * n, 2 * n);
  H.topLeftCorner(n, n) = l.A;
  H.topRightCorner(n, n) = -G;
  H.bottomLeftCorner(n, n) = -l.E;
  H.bottomRightCorner(n, n) = -l.A.transpose();

  const SignResult sr = matrix_sign(H);
  if (!sr.converged)
    throw std::runtime_error("solve_riccati: (A,B) not stabilizable or ill-conditioned");
  const Eigen::MatrixXd& W = sr.sign;

  // sign(H)·[I;P] = −[I;P]  ⇒  [W12; W22+I]·P = −[W11+I; W21].
  Eigen::MatrixXd lhs(2 * n, n), rhs(2 * n, n);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  lhs.topRows(n) = W.topRightCorner(n, n);
  lhs.bottomRows(n) = W.bottomRightCorner(n, n) + eye;
  rhs.topRows(n) = -(W.topLeftCorner(n, n) + eye);
  rhs.bottomRows(n) = -W.bottomLeftCorner(n, n);

  Eigen::MatrixXd P = lhs.colPivHouseholderQr().solve(rhs);
  P = 0.5 * (P + P.transpose().eval());

  const Eigen::MatrixXd residual =
      l.A.transpose() * P + P * l.A - P * G * P + l.E;
  if (residual.norm() > 1e-10 * (1.0 + P.norm()))
    throw std::runtime_error("solve_riccati: residual too large; (A,B) not stabilizable or ill-conditioned");
  Eigen::LLT<Eigen::MatrixXd> pd(P);
  if (pd.info() != Eigen::Success)
    throw std::runtime_error("solve_riccati: solution not positive definite");
  if (!is_hurwitz(l.A - G * P))
    throw std::runtime_error("solve_riccati: closed loop not certified Hurwitz");
  return P;
}

Eigen::MatrixXd local_gain(const Linearization& l, const Eigen::MatrixXd& P) {
  Eigen::LLT<Eigen::MatrixXd> q0(l.Q0);
  return -q0.solve(l.Bmat.transpose() * P);
}

std::vector<Eigen::VectorXd> unit_directions(int n, int minimum_count) {
  int count = std::max(minimum_count, (1 << n) * 64);
  std::vector<Eigen::VectorXd> dirs;
  if (n == 1) {
    dirs.push_back(Eigen::VectorXd::Constant(1, 1.0));
    dirs.push_back(Eigen::VectorXd::Constant(1, -1.0));
    return dirs;
  }
  if (n == 2) {
    dirs.reserve(count);
    for (int i = 0; i < count; ++i) {
      const double th = 2.0 * std::numbers::pi * i / count;
      Eigen::VectorXd d(2);
      d << std::cos(th), std::sin(th);
      dirs.push_back(d);
    }
    return dirs;
  }
  // n >= 3: generalized Fibonacci / Kronecker lattice on angles, mapped
  // through the inverse-CDF-free normalized Gaussian-like construction is
  // overkill here; a Kronecker sequence on the sphere parameters is
  // deterministic and evenly spread.
  dirs.reserve(count);
  const double phi = 1.32471795724474602596;  // plastic number, d-dim Kronecker base
  std::vector<double> alpha(n - 1);
  double p = phi;
  for (int i = 0; i < n - 1; ++i) {
    alpha[i] = 1.0 / p;
    p *= phi;
  }
  for (int i = 0; i < count; ++i) {
    // angles: theta_j in [0,pi] for j<n-2, last in [0,2pi)
    Eigen::VectorXd d = Eigen::VectorXd::Ones(n);
    double sprod = 1.0;
    for (int j = 0; j < n - 1; ++j) {
      double u = std::fmod(0.5 + (i + 1) * alpha[j], 1.0);
      const double ang = (j == n - 2) ? 2.0 * std::numbers::pi * u
                                      : std::acos(1.0 - 2.0 * u);
      d[j] = sprod * std::cos(ang);
      sprod *= std::sin(ang);
    }
    d[n - 1] = sprod;
    d /= d.norm();
    dirs.push_back(d);
  }
  return dirs;
}

LocalSolution choose_delta(const SystemSpec& s, const Eigen::MatrixXd& P,
                           const Eigen::MatrixXd& K, const std::vector<double>& candidates,
                           int samples_per_level) {
  if (candidates.empty()) throw std::invalid_argument("choose_delta: no candidates supplied");
  const SpdRoots roots = spd_sqrt(P);
  const auto dirs = unit_directions(s.n(), samples_per_level);

  auto margin_at = [&](double delta) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& w : dirs) {
      const Eigen::VectorXd x = std::sqrt(delta) * (roots.inv_sqrt * w);
      const Eigen::VectorXd u = K * x;
      const Eigen::VectorXd grad_v = 2.0 * (P * x);
      const double lhs = grad_v.dot(s.f(x) + s.g(x) * u) + u.dot(s.Q(x) * u);
      worst = std::max(worst, lhs);
    }
    return worst;
  };

  for (double delta : candidates) {
    if (!(delta > 0.0)) throw std::invalid_argument("choose_delta: candidates must be positive");
    const double m = margin_at(delta);
    if (m < 0.0) {
      LocalSolution sol;
      sol.P = P;
      sol.K = K;
      sol.delta = delta;
      sol.margin = m;
      return sol;
    }
  }
  throw std::runtime_error("choose_delta: no valid level found; supply smaller candidates");
}

std::vector<double> default_delta_candidates(const Eigen::MatrixXd& P) {
  std::vector<double> out;
  const double scale = P.norm();
  for (int k = 0; k <= 20; ++k) out.push_back(scale * std::ldexp(1.0, -k));
  return out;
}

}  // namespace semiq
