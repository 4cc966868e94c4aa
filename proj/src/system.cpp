#include "semiq/system.hpp"

#include <Eigen/Cholesky>
#include <sstream>

namespace semiq {
namespace {

// LU with partial pivoting on jet scalars (pivot chosen by |value|). Jets form
// a commutative ring with division defined wherever the value part is nonzero,
// which Q's positive definiteness guarantees.
std::vector<std::vector<Jet2>> jet_matrix_inverse(std::vector<std::vector<Jet2>> a, int n_dim) {
  const int m = static_cast<int>(a.size());
  std::vector<std::vector<Jet2>> inv(m, std::vector<Jet2>(m, Jet2(n_dim)));
  for (int i = 0; i < m; ++i) inv[i][i] = Jet2::constant(1.0, n_dim);
  for (int col = 0; col < m; ++col) {
    int piv = col;
    for (int r = col + 1; r < m; ++r)
      if (std::abs(a[r][col].v) > std::abs(a[piv][col].v)) piv = r;
    if (a[piv][col].v == 0.0) throw EvalError("Q(x) is singular");
    std::swap(a[piv], a[col]);
    std::swap(inv[piv], inv[col]);
    const Jet2 d = inverse(a[col][col]);
    for (int c = 0; c < m; ++c) {
      a[col][c] = a[col][c] * d;
      inv[col][c] = inv[col][c] * d;
    }
    for (int r = 0; r < m; ++r) {
      if (r == col) continue;
      const Jet2 factor = a[r][col];
      if (factor.v == 0.0 && factor.g.lpNorm<Eigen::Infinity>() == 0.0 &&
          factor.h.lpNorm<Eigen::Infinity>() == 0.0)
        continue;
      for (int c = 0; c < m; ++c) {
        a[r][c] = a[r][c] - factor * a[col][c];
        inv[r][c] = inv[r][c] - factor * inv[col][c];
      }
    }
  }
  return inv;
}

}  // namespace

SystemSpec::SystemSpec(int n, int m, std::vector<std::string> f_src,
                       std::vector<std::vector<std::string>> g_src, std::string epsilon_src,
                       std::vector<std::vector<std::string>> q_upper_src)
    : n_(n), m_(m), f_src_(std::move(f_src)), g_src_(std::move(g_src)),
      eps_src_(std::move(epsilon_src)) {
  if (n_ < 1 || m_ < 1) throw std::invalid_argument("dimensions must be positive");
  if (static_cast<int>(f_src_.size()) != n_)
    throw std::invalid_argument("f needs exactly n component expressions");
  if (static_cast<int>(g_src_.size()) != n_)
    throw std::invalid_argument("g needs exactly n rows");
  for (const auto& row : g_src_)
    if (static_cast<int>(row.size()) != m_)
      throw std::invalid_argument("g rows need exactly m entries");
  if (static_cast<int>(q_upper_src.size()) != m_)
    throw std::invalid_argument("Q needs exactly m rows");

  // Mirror the upper triangle; entries below the diagonal are ignored if present.
  q_src_.assign(m_, std::vector<std::string>(m_));
  for (int i = 0; i < m_; ++i) {
    if (static_cast<int>(q_upper_src[i].size()) < m_ - i)
      throw std::invalid_argument("Q row " + std::to_string(i + 1) + " is too short");
    for (int j = i; j < m_; ++j) {
      const auto& row = q_upper_src[i];
      const std::string& src =
          static_cast<int>(row.size()) == m_ - i ? row[j - i] : row[j];
      q_src_[i][j] = src;
      q_src_[j][i] = src;
    }
  }

  f_.reserve(n_);
  for (const auto& s : f_src_) f_.push_back(parse_expression(s, n_));
  g_.resize(n_);
  for (int i = 0; i < n_; ++i)
    for (const auto& s : g_src_[i]) g_[i].push_back(parse_expression(s, n_));
  eps_ = parse_expression(eps_src_, n_);
  q_.resize(m_);
  for (int i = 0; i < m_; ++i)
    for (const auto& s : q_src_[i]) q_[i].push_back(parse_expression(s, n_));
}

Eigen::VectorXd SystemSpec::f(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(n_);
  std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
  for (int i = 0; i < n_; ++i) out[i] = eval(f_[i], xs);
  return out;
}

Eigen::MatrixXd SystemSpec::g(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd out(n_, m_);
  std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < m_; ++j) out(i, j) = eval(g_[i][j], xs);
  return out;
}

double SystemSpec::epsilon(const Eigen::VectorXd& x) const {
  std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
  return eval(eps_, xs);
}

Eigen::MatrixXd SystemSpec::Q(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd out(m_, m_);
  std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
  for (int i = 0; i < m_; ++i)
    for (int j = i; j < m_; ++j) out(i, j) = out(j, i) = eval(q_[i][j], xs);
  return out;
}

Eigen::MatrixXd SystemSpec::R(const Eigen::VectorXd& x) const {
  const Eigen::MatrixXd gx = g(x);
  const Eigen::MatrixXd qx = Q(x);
  Eigen::LLT<Eigen::MatrixXd> llt(qx);
  if (llt.info() != Eigen::Success)
    throw EvalError("Q(x) is not positive definite at the evaluation point");
  return gx * llt.solve(gx.transpose());
}

Eigen::VectorXd SystemJets::f_value() const {
  Eigen::VectorXd out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[static_cast<Eigen::Index>(i)] = f[i].v;
  return out;
}

Eigen::MatrixXd SystemJets::f_jacobian() const {
  const int n = static_cast<int>(f.size());
  Eigen::MatrixXd out(n, n);
  for (int i = 0; i < n; ++i) out.row(i) = f[i].g.transpose();
  return out;
}

Eigen::MatrixXd SystemJets::g_value() const {
  const int n = static_cast<int>(g.size());
  const int m = n > 0 ? static_cast<int>(g[0].size()) : 0;
  Eigen::MatrixXd out(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out(i, j) = g[i][j].v;
  return out;
}

Eigen::MatrixXd SystemJets::R_value() const {
  const int n = static_cast<int>(R.size());
  Eigen::MatrixXd out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = R[i][j].v;
  return out;
}

SystemJets eval_system_jets(const SystemSpec& s, const Eigen::VectorXd& x) {
  const int n = s.n(), m = s.m();
  SystemJets out;
  out.eps = eval_jet2(s.epsilon_expr(), x);
  out.f.reserve(n);
  for (int i = 0; i < n; ++i) out.f.push_back(eval_jet2(s.f_expr(i), x));
  out.g.assign(n, {});
  for (int i = 0; i < n; ++i) {
    out.g[i].reserve(m);
    for (int j = 0; j < m; ++j) out.g[i].push_back(eval_jet2(s.g_expr(i, j), x));
  }
  out.Q.assign(m, {});
  for (int i = 0; i < m; ++i) {
    out.Q[i].reserve(m);
    for (int j = 0; j < m; ++j) out.Q[i].push_back(eval_jet2(s.q_expr(i, j), x));
  }

  const auto qinv = jet_matrix_inverse(out.Q, n);
  // R = g Q⁻¹ gᵀ, built via W = g Q⁻¹ and symmetrized product.
  std::vector<std::vector<Jet2>> w(n, std::vector<Jet2>(m, Jet2(n)));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      Jet2 acc(n);
      for (int k = 0; k < m; ++k) acc = acc + out.g[i][k] * qinv[k][j];
      w[i][j] = acc;
    }
  out.R.assign(n, std::vector<Jet2>(n, Jet2(n)));
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      Jet2 acc(n);
      for (int k = 0; k < m; ++k) acc = acc + w[i][k] * out.g[j][k];
      out.R[i][j] = acc;
      out.R[j][i] = acc;
    }
  return out;
}

bool ValidationReport::ok() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

bool ValidationReport::hard_failure() const {
  for (const auto& c : checks)
    if (!c.pass && c.hard) return true;
  return false;
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    os << (c.pass ? "pass" : (c.hard ? "FAIL(hard)" : "FAIL")) << "  " << c.name;
    if (!c.pass) {
      os << "  worst=" << c.worst;
      if (c.witness) {
        os << "  witness=(";
        for (int i = 0; i < c.witness->size(); ++i)
          os << (i ? "," : "") << (*c.witness)[i];
        os << ")";
      }
      if (!c.detail.empty()) os << "  " << c.detail;
    }
    os << "\n";
  }
  return os.str();
}

ValidationReport validate_system(const SystemSpec& s, const std::vector<Eigen::VectorXd>& samples,
                                 int extra_random, std::uint64_t seed, double random_radius) {
  ValidationReport report;
  const int n = s.n();
  const Eigen::VectorXd origin = Eigen::VectorXd::Zero(n);

  std::vector<Eigen::VectorXd> pts = samples;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-random_radius, random_radius);
  for (int k = 0; k < extra_random; ++k) {
    Eigen::VectorXd p(n);
    for (int i = 0; i < n; ++i) p[i] = uni(rng);
    if (p.norm() > 0) pts.push_back(p);
  }

  {
    ValidationCheck c{.name = "f(0) = 0", .hard = true};
    const Eigen::VectorXd f0 = s.f(origin);
    if (f0.lpNorm<Eigen::Infinity>() != 0.0) {
      c.pass = false;
      c.worst = f0.lpNorm<Eigen::Infinity>();
      c.witness = origin;
      c.detail = "f(0) != 0";
    }
    report.checks.push_back(std::move(c));
  }
  {
    ValidationCheck c{.name = "epsilon(0) = 0", .hard = true};
    const double e0 = s.epsilon(origin);
    if (e0 != 0.0) {
      c.pass = false;
      c.worst = e0;
      c.witness = origin;
      c.detail = "epsilon(0) != 0";
    }
    report.checks.push_back(std::move(c));
  }
  {
    ValidationCheck c{.name = "epsilon(x) > 0 for x != 0"};
    for (const auto& p : pts) {
      if (p.norm() == 0.0) continue;
      const double e = s.epsilon(p);
      if (e <= 0.0 && (!c.witness || e < c.worst)) {
        c.pass = false;
        c.worst = e;
        c.witness = p;
      }
    }
    report.checks.push_back(std::move(c));
  }
  {
    ValidationCheck c{.name = "Q(x) positive definite"};
    auto probe = [&](const Eigen::VectorXd& p) {
      Eigen::MatrixXd q = s.Q(p);
      Eigen::LLT<Eigen::MatrixXd> llt(q);
      if (llt.info() != Eigen::Success) {
        // smallest diagonal pivot as the reported magnitude
        double w = q.diagonal().minCoeff();
        if (!c.witness || w < c.worst) {
          c.pass = false;
          c.worst = w;
          c.witness = p;
          c.detail = "Q not positive definite";
        }
      }
    };
    probe(origin);
    for (const auto& p : pts) probe(p);
    report.checks.push_back(std::move(c));
  }
  return report;
}

}  // namespace semiq
