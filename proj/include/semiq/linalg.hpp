#pragma once

#include <Eigen/Dense>

namespace semiq {

struct SignResult {
  Eigen::MatrixXd sign;
  bool converged = false;
  int iterations = 0;
};

/// Matrix sign function by the scaled Newton iteration Z ← ½(cZ + (cZ)⁻¹)
/// with determinant scaling. Requires no eigenvalues on the imaginary axis.
SignResult matrix_sign(const Eigen::MatrixXd& a, int max_iter = 128, double tol = 1e-14);

/// True when all eigenvalues of `a` have negative real part, certified by
/// convergence of the sign iteration to -I.
bool is_hurwitz(const Eigen::MatrixXd& a, double tol = 1e-8);

struct SpdRoots {
  Eigen::MatrixXd sqrt;      // P^{1/2}
  Eigen::MatrixXd inv_sqrt;  // P^{-1/2}
};

/// Symmetric square root and inverse square root of an SPD matrix via the
/// Denman–Beavers iteration (linear solves only).
SpdRoots spd_sqrt(const Eigen::MatrixXd& p, int max_iter = 128, double tol = 1e-15);

}  // namespace semiq
