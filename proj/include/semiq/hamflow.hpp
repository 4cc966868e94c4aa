#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "semiq/ode.hpp"
#include "semiq/system.hpp"

namespace semiq {

/// Point on a bicharacteristic: parameter τ, state, costate, and the action
///   S(τ) = ∫₀^τ ε(x) + ¼⟨p, R(x)p⟩ dτ'
/// accumulated along the flow of ẋ = −∂H/∂p, ṗ = ∂H/∂x. With seeds on H = 0
/// this equals the running optimal cost between the point and the level set,
/// and dS = ⟨p, dx⟩ holds on the resulting manifold.
struct PhasePoint {
  double tau = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd p;
  double S = 0.0;
};

/// Total-derivative data of the flow with respect to (τ, ξ): a 2n×n matrix
/// whose column 0 is ∂(x,p)/∂τ (= the Hamiltonian RHS) and whose remaining
/// columns are ∂(x,p)/∂ξ_l, integrated with the linearized flow. At τ=0 the
/// x-rows of the ξ-columns are the seed-chart tangents.
struct VariationalFrame {
  Eigen::MatrixXd M;  // 2n x n

  int n() const { return static_cast<int>(M.rows()) / 2; }
  Eigen::MatrixXd dx() const { return M.topRows(n()); }     // ∂x/∂(τ,ξ)
  Eigen::MatrixXd dp() const { return M.bottomRows(n()); }  // ∂p/∂(τ,ξ)
  double detX() const { return dx().determinant(); }
};

/// H and its derivatives at (x,p) for H = ε + ⟨p,f⟩ − ¼⟨p,Rp⟩, R = gQ⁻¹gᵀ.
struct HamDerivs {
  double H = 0.0;
  Eigen::VectorXd Hx, Hp;
  Eigen::MatrixXd Hxx, Hpx, Hpp;  // Hpx(i,j) = ∂²H/∂p_i∂x_j
  double Sdot = 0.0;              // ε + ¼⟨p,Rp⟩
  Eigen::VectorXd Sdot_x, Sdot_p;  // its x- and p-gradients
};

double hamiltonian(const SystemSpec& s, const Eigen::VectorXd& x, const Eigen::VectorXd& p);

/// (ẋ, ṗ) of the bicharacteristic system ẋ = −∂H/∂p, ṗ = ∂H/∂x.
std::pair<Eigen::VectorXd, Eigen::VectorXd> ham_rhs(const SystemSpec& s,
                                                    const Eigen::VectorXd& x,
                                                    const Eigen::VectorXd& p);

HamDerivs ham_derivs(const SystemSpec& s, const Eigen::VectorXd& x, const Eigen::VectorXd& p,
                     bool second_order);

struct TrajectorySample {
  double tau = 0.0;
  Eigen::VectorXd x, p;
  double S = 0.0;
  Eigen::MatrixXd xi_columns;  // 2n x k, ∂(x,p)/∂ξ
  bool valid = false;
};

struct BicharTrajectory {
  std::vector<TrajectorySample> samples;  // at the requested τ grid
  bool truncated = false;
  std::string error;  // nonempty when truncated

  /// Assembles the full frame (τ-column first) at sample i.
  VariationalFrame frame_at(const SystemSpec& s, int i) const;
};

/// Integrates Eq.-(10) bicharacteristics with the action and the ξ-columns of
/// the variational frame, sampling exactly at the given τ grid (adaptive
/// RK5(4) internally; steps land on grid points). τ values may also decrease
/// for reverse integration. Trajectories leaving `escape_radius` are truncated
/// and the remaining samples flagged invalid.
BicharTrajectory integrate_bicharacteristic(const SystemSpec& s, const PhasePoint& seed,
                                            const Eigen::MatrixXd& seed_xi_columns,
                                            const std::vector<double>& tau_grid,
                                            const OdeOptions& opts,
                                            double escape_radius);

}  // namespace semiq
