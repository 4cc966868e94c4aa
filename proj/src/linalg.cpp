#include "semiq/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace semiq {

SignResult matrix_sign(const Eigen::MatrixXd& a, int max_iter, double tol) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("matrix_sign needs a square matrix");
  SignResult res;
  Eigen::MatrixXd z = a;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(z);
    const double det = std::abs(lu.determinant());
    if (!(det > 0.0) || !std::isfinite(det)) return res;  // singular: no sign
    const double c = std::pow(det, -1.0 / static_cast<double>(n));
    Eigen::MatrixXd zinv_over_c = lu.inverse() / c;
    Eigen::MatrixXd znext = 0.5 * (c * z + zinv_over_c);
    const double delta = (znext - z).norm();
    z = std::move(znext);
    res.iterations = it + 1;
    if (delta <= tol * (1.0 + z.norm())) {
      res.converged = true;
      break;
    }
  }
  res.sign = z;
  return res;
}

bool is_hurwitz(const Eigen::MatrixXd& a, double tol) {
  const SignResult s = matrix_sign(a);
  if (!s.converged) return false;
  return (s.sign + Eigen::MatrixXd::Identity(a.rows(), a.cols())).norm() <=
         tol * (1.0 + s.sign.norm());
}

SpdRoots spd_sqrt(const Eigen::MatrixXd& p, int max_iter, double tol) {
  const Eigen::Index n = p.rows();
  if (p.cols() != n) throw std::invalid_argument("spd_sqrt needs a square matrix");
  Eigen::MatrixXd y = p;
  Eigen::MatrixXd z = Eigen::MatrixXd::Identity(n, n);
  for (int it = 0; it < max_iter; ++it) {
    // Determinant scaling keeps the iteration well conditioned.
    Eigen::PartialPivLU<Eigen::MatrixXd> luy(y);
    Eigen::PartialPivLU<Eigen::MatrixXd> luz(z);
    const double dety = std::abs(luy.determinant());
    const double detz = std::abs(luz.determinant());
    if (!(dety > 0.0) || !(detz > 0.0))
      throw std::runtime_error("spd_sqrt: singular iterate (matrix not SPD?)");
    const double c = std::pow(1.0 / (dety * detz), 1.0 / (2.0 * static_cast<double>(n)));
    Eigen::MatrixXd ynext = 0.5 * (c * y + luz.inverse() / c);
    Eigen::MatrixXd znext = 0.5 * (c * z + luy.inverse() / c);
    const double delta = (ynext - y).norm();
    y = std::move(ynext);
    z = std::move(znext);
    if (delta <= tol * (1.0 + y.norm())) break;
    if (it + 1 == max_iter) throw std::runtime_error("spd_sqrt did not converge");
  }
  y = 0.5 * (y + y.transpose().eval());
  z = 0.5 * (z + z.transpose().eval());
  if ((z * p * z - Eigen::MatrixXd::Identity(n, n)).norm() > 1e-10 * (1.0 + p.norm()))
    throw std::runtime_error("spd_sqrt residual too large (matrix not SPD?)");
  return {y, z};
}

}  // namespace semiq
