#pragma once

#include <Eigen/Dense>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "semiq/expr.hpp"

namespace semiq {

/// The control-affine plant ẋ = f(x) + g(x)u with running cost
/// ε(x) + ⟨u, Q(x)u⟩. Expressions are immutable after construction; all
/// evaluation entry points are const and thread-safe.
///
/// Q is entered as its upper triangle and mirrored, so Q = Qᵀ holds by
/// construction.
class SystemSpec {
 public:
  SystemSpec(int n, int m, std::vector<std::string> f_src,
             std::vector<std::vector<std::string>> g_src, std::string epsilon_src,
             std::vector<std::vector<std::string>> q_upper_src);

  int n() const { return n_; }
  int m() const { return m_; }

  const std::vector<std::string>& f_source() const { return f_src_; }
  const std::vector<std::vector<std::string>>& g_source() const { return g_src_; }
  const std::string& epsilon_source() const { return eps_src_; }
  const std::vector<std::vector<std::string>>& q_source() const { return q_src_; }

  Eigen::VectorXd f(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd g(const Eigen::VectorXd& x) const;
  double epsilon(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd Q(const Eigen::VectorXd& x) const;
  /// R(x) = g(x) Q(x)⁻¹ g(x)ᵀ.
  Eigen::MatrixXd R(const Eigen::VectorXd& x) const;

  const Expr& f_expr(int i) const { return f_[i]; }
  const Expr& g_expr(int i, int j) const { return g_[i][j]; }
  const Expr& epsilon_expr() const { return eps_; }
  const Expr& q_expr(int i, int j) const { return q_[i][j]; }

 private:
  int n_, m_;
  std::vector<std::string> f_src_;
  std::vector<std::vector<std::string>> g_src_;
  std::string eps_src_;
  std::vector<std::vector<std::string>> q_src_;  // full matrix, mirrored
  std::vector<Expr> f_;
  std::vector<std::vector<Expr>> g_;
  Expr eps_;
  std::vector<std::vector<Expr>> q_;
};

/// Jets of every system quantity at one state, including the derived
/// R(x) = gQ⁻¹gᵀ entries (Q inverted in jet arithmetic, so R carries exact
/// first and second x-derivatives).
struct SystemJets {
  Jet2 eps;
  std::vector<Jet2> f;                  // n
  std::vector<std::vector<Jet2>> g;     // n x m
  std::vector<std::vector<Jet2>> Q;     // m x m
  std::vector<std::vector<Jet2>> R;     // n x n, symmetric

  Eigen::VectorXd f_value() const;
  Eigen::MatrixXd f_jacobian() const;
  Eigen::MatrixXd g_value() const;
  Eigen::MatrixXd R_value() const;
};

SystemJets eval_system_jets(const SystemSpec& s, const Eigen::VectorXd& x);

struct ValidationCheck {
  std::string name;
  bool pass = true;
  bool hard = false;               // failure invalidates the system outright
  double worst = 0.0;              // worst offending value
  std::optional<Eigen::VectorXd> witness;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  bool ok() const;
  bool hard_failure() const;
  std::string summary() const;
};

/// Checks the standing assumptions (f(0)=0, ε(0)=0, ε>0 off the origin,
/// Q symmetric positive definite) at the supplied samples plus `extra_random`
/// seeded random points. Samples at the origin are skipped for the positivity
/// tests.
ValidationReport validate_system(const SystemSpec& s,
                                 const std::vector<Eigen::VectorXd>& samples,
                                 int extra_random = 64, std::uint64_t seed = 12345,
                                 double random_radius = 2.0);

}  // namespace semiq
