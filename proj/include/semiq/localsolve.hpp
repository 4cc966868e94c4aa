#pragma once

#include <Eigen/Dense>
#include <vector>

#include "semiq/system.hpp"

namespace semiq {

/// Data of the problem linearized at the origin: ẋ = Ax + Bu with cost
/// ∫ ⟨x,Ex⟩ + ⟨u,Q₀u⟩ dt, E = ½∇²ε(0).
struct Linearization {
  Eigen::MatrixXd A;     // n x n
  Eigen::MatrixXd Bmat;  // n x m, = g(0)
  Eigen::MatrixXd E;     // n x n, SPD
  Eigen::MatrixXd Q0;    // m x m, SPD
};

/// Local solution near the origin: V(x) = ⟨x,Px⟩, w(x) = Kx, and the level
/// value δ for which the descent inequality holds strictly on {V = δ}.
/// `margin` is the worst (largest) value of
///   ⟨∂V/∂x, f(x)+g(x)Kx⟩ + ⟨Kx, Q(x)Kx⟩
/// over the sampled level set; a valid solution has margin < 0.
struct LocalSolution {
  Eigen::MatrixXd P;
  Eigen::MatrixXd K;
  double delta = 0.0;
  double margin = 0.0;
};

Linearization linearize(const SystemSpec& s);

/// Stabilizing solution of AᵀP + PA − P·B·Q₀⁻¹·Bᵀ·P + E = 0 by the matrix
/// sign iteration on the 2n×2n Hamiltonian matrix. Throws if the iteration
/// fails to converge or the residual/Hurwitz checks fail.
Eigen::MatrixXd solve_riccati(const Linearization& l);

/// K = −Q₀⁻¹ Bᵀ P.
Eigen::MatrixXd local_gain(const Linearization& l, const Eigen::MatrixXd& P);

/// Deterministic low-discrepancy unit directions for level-set sampling
/// (at least 2ⁿ·64 points; n = 1 gives exactly {+1, −1}).
std::vector<Eigen::VectorXd> unit_directions(int n, int minimum_count = 0);

/// Largest candidate δ (candidates must be decreasing) for which the
/// inequality margin over the sampled level set {V = δ} is negative.
/// Throws when no candidate passes.
LocalSolution choose_delta(const SystemSpec& s, const Eigen::MatrixXd& P,
                           const Eigen::MatrixXd& K, const std::vector<double>& candidates,
                           int samples_per_level = 0);

/// Default candidate ladder: ‖P‖_F · (1, ½, ¼, …, 2⁻²⁰).
std::vector<double> default_delta_candidates(const Eigen::MatrixXd& P);

}  // namespace semiq
