#include "semiq/hamflow.hpp"

namespace semiq {

HamDerivs ham_derivs(const SystemSpec& s, const Eigen::VectorXd& x, const Eigen::VectorXd& p,
                     bool second_order) {
  const int n = s.n();
  const SystemJets jets = eval_system_jets(s, x);

  HamDerivs d;
  d.Hx = jets.eps.g;
  d.H = jets.eps.v;
  double prp = 0.0;  // ⟨p, Rp⟩
  Eigen::VectorXd prp_grad = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    d.H += p[i] * jets.f[i].v;
    d.Hx += p[i] * jets.f[i].g;
    for (int k = 0; k < n; ++k) {
      prp += p[i] * p[k] * jets.R[i][k].v;
      prp_grad += (p[i] * p[k]) * jets.R[i][k].g;
    }
  }
  d.H -= 0.25 * prp;
  d.Hx -= 0.25 * prp_grad;
  d.Sdot = jets.eps.v + 0.25 * prp;
  d.Sdot_x = jets.eps.g + 0.25 * prp_grad;

  const Eigen::MatrixXd r = jets.R_value();
  d.Hp = jets.f_value() - 0.5 * (r * p);
  d.Sdot_p = 0.5 * (r * p);

  if (second_order) {
    d.Hxx = jets.eps.h;
    for (int i = 0; i < n; ++i) d.Hxx += p[i] * jets.f[i].h;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) d.Hxx -= 0.25 * (p[i] * p[k]) * jets.R[i][k].h;
    d.Hpx.resize(n, n);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd row = jets.f[i].g;
      for (int k = 0; k < n; ++k) row -= 0.5 * p[k] * jets.R[i][k].g;
      d.Hpx.row(i) = row.transpose();
    }
    d.Hpp = -0.5 * r;
  }
  return d;
}

double hamiltonian(const SystemSpec& s, const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
  const double eps = s.epsilon(x);
  const Eigen::VectorXd f = s.f(x);
  const Eigen::MatrixXd r = s.R(x);
  return eps + p.dot(f) - 0.25 * p.dot(r * p);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> ham_rhs(const SystemSpec& s,
                                                    const Eigen::VectorXd& x,
                                                    const Eigen::VectorXd& p) {
  const HamDerivs d = ham_derivs(s, x, p, false);
  return {-d.Hp, d.Hx};
}

VariationalFrame BicharTrajectory::frame_at(const SystemSpec& s, int i) const {
  const TrajectorySample& smp = samples.at(static_cast<std::size_t>(i));
  const int n = static_cast<int>(smp.x.size());
  VariationalFrame f;
  f.M.resize(2 * n, n);
  const auto [xdot, pdot] = ham_rhs(s, smp.x, smp.p);
  f.M.col(0).head(n) = xdot;
  f.M.col(0).tail(n) = pdot;
  if (smp.xi_columns.cols() > 0) f.M.rightCols(n - 1) = smp.xi_columns;
  return f;
}

BicharTrajectory integrate_bicharacteristic(const SystemSpec& s, const PhasePoint& seed,
                                            const Eigen::MatrixXd& seed_xi_columns,
                                            const std::vector<double>& tau_grid,
                                            const OdeOptions& opts, double escape_radius) {
  const int n = s.n();
  const int k = static_cast<int>(seed_xi_columns.cols());
  if (k > 0 && seed_xi_columns.rows() != 2 * n)
    throw std::invalid_argument("seed frame columns must have 2n rows");

  // Packed state: x (n), p (n), S (1), ξ-columns (2n·k, column-major).
  const Eigen::Index dim = 2 * n + 1 + 2 * n * k;
  Eigen::VectorXd y0(dim);
  y0.head(n) = seed.x;
  y0.segment(n, n) = seed.p;
  y0[2 * n] = seed.S;
  for (int c = 0; c < k; ++c) y0.segment(2 * n + 1 + 2 * n * c, 2 * n) = seed_xi_columns.col(c);

  auto rhs = [&s, n, k](double, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
    const Eigen::VectorXd x = y.head(n);
    const Eigen::VectorXd p = y.segment(n, n);
    const HamDerivs d = ham_derivs(s, x, p, k > 0);
    dy.resize(y.size());
    dy.head(n) = -d.Hp;
    dy.segment(n, n) = d.Hx;
    dy[2 * n] = d.Sdot;
    for (int c = 0; c < k; ++c) {
      const auto u = y.segment(2 * n + 1 + 2 * n * c, n);       // ∂x/∂ξ_c
      const auto w = y.segment(2 * n + 1 + 2 * n * c + n, n);   // ∂p/∂ξ_c
      dy.segment(2 * n + 1 + 2 * n * c, n) = -(d.Hpx * u) - d.Hpp * w;
      dy.segment(2 * n + 1 + 2 * n * c + n, n) = d.Hxx * u + d.Hpx.transpose() * w;
    }
  };

  BicharTrajectory out;
  out.samples.reserve(tau_grid.size());
  auto record = [&](double tau, const Eigen::VectorXd& y, bool valid) {
    TrajectorySample smp;
    smp.tau = tau;
    smp.x = y.head(n);
    smp.p = y.segment(n, n);
    smp.S = y[2 * n];
    smp.xi_columns.resize(2 * n, k);
    for (int c = 0; c < k; ++c)
      smp.xi_columns.col(c) = y.segment(2 * n + 1 + 2 * n * c, 2 * n);
    smp.valid = valid;
    out.samples.push_back(std::move(smp));
  };

  Dopri5 stepper(rhs, seed.tau, y0, opts);
  std::size_t i = 0;
  if (!tau_grid.empty() && tau_grid.front() == seed.tau) {
    record(seed.tau, y0, true);
    ++i;
  }
  for (; i < tau_grid.size(); ++i) {
    try {
      stepper.integrate_to(tau_grid[i]);
    } catch (const std::exception& err) {
      out.truncated = true;
      out.error = err.what();
      break;
    }
    if (stepper.state().head(n).norm() > escape_radius) {
      out.truncated = true;
      out.error = "trajectory left the escape radius";
      break;
    }
    record(tau_grid[i], stepper.state(), true);
  }
  for (; i < tau_grid.size(); ++i) record(tau_grid[i], Eigen::VectorXd::Zero(dim), false);
  return out;
}

}  // namespace semiq
