#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

namespace semiq {

struct OdeOptions {
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  double max_step = std::numeric_limits<double>::infinity();
  double initial_step = 0.0;  // 0 = choose automatically
  long max_steps = 20'000'000;
};

struct OdeStepRecord {
  double t0 = 0, t1 = 0;
  Eigen::VectorXd y0, y1;
  Eigen::VectorXd f0, f1;

  /// Cubic Hermite interpolation on the accepted step.
  Eigen::VectorXd interpolate(double t) const {
    const double h = t1 - t0;
    const double s = (t - t0) / h;
    const double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * f0 +
           (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * f1;
  }
};

struct OdeStepUnderflow : std::runtime_error {
  explicit OdeStepUnderflow(double t)
      : std::runtime_error("ODE step size underflow at t=" + std::to_string(t)) {}
};

/// Embedded Dormand–Prince 5(4) with PI step-size control and FSAL. The
/// caller drives it toward explicit target times; every accepted step is
/// reported (dense output by cubic Hermite on those records).
class Dopri5 {
 public:
  using Rhs = std::function<void(double, const Eigen::VectorXd&, Eigen::VectorXd&)>;

  Dopri5(Rhs rhs, double t0, Eigen::VectorXd y0, OdeOptions opts = {})
      : rhs_(std::move(rhs)), opts_(opts), t_(t0), y_(std::move(y0)) {
    k1_.resize(y_.size());
    rhs_(t_, y_, k1_);
    work_.assign(7, Eigen::VectorXd(y_.size()));
  }

  double time() const { return t_; }
  const Eigen::VectorXd& state() const { return y_; }
  const Eigen::VectorXd& derivative() const { return k1_; }
  long steps_taken() const { return n_steps_; }

  /// Advances to exactly t_target (clamping the adaptive step at the
  /// boundary), invoking `on_step` for every accepted step if provided.
  void integrate_to(double t_target,
                    const std::function<void(const OdeStepRecord&)>& on_step = nullptr) {
    const double dir = t_target >= t_ ? 1.0 : -1.0;
    if (t_target == t_) return;
    if (h_ == 0.0) h_ = initial_step_guess(t_target);
    for (;;) {
      const double remaining = t_target - t_;
      if (dir * remaining <= 0.0) break;
      double h = dir * std::min({std::abs(h_), opts_.max_step, std::abs(remaining)});
      bool clipped = std::abs(h) >= std::abs(remaining) * (1.0 - 1e-14);
      if (clipped) h = remaining;
      OdeStepRecord rec;
      if (attempt_step(h, rec)) {
        if (clipped) t_ = t_target;  // avoid drift at the boundary
        rec.t1 = t_;
        if (on_step) on_step(rec);
      }
      if (++n_steps_ > opts_.max_steps)
        throw std::runtime_error("ODE step budget exhausted");
    }
  }

 private:
  double initial_step_guess(double t_target) const {
    const double scale = opts_.abs_tol + opts_.rel_tol * y_.norm();
    const double d0 = y_.norm() / scale;
    const double d1 = k1_.norm() / scale;
    double h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * (d0 / d1);
    return std::min({h, std::abs(t_target - t_), opts_.max_step});
  }

  bool attempt_step(double h, OdeStepRecord& rec) {
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                            a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;

    auto& k2 = work_[1];
    auto& k3 = work_[2];
    auto& k4 = work_[3];
    auto& k5 = work_[4];
    auto& k6 = work_[5];
    auto& k7 = work_[6];
    auto& tmp = work_[0];

    tmp = y_ + h * (a21 * k1_);
    rhs_(t_ + c2 * h, tmp, k2);
    tmp = y_ + h * (a31 * k1_ + a32 * k2);
    rhs_(t_ + c3 * h, tmp, k3);
    tmp = y_ + h * (a41 * k1_ + a42 * k2 + a43 * k3);
    rhs_(t_ + c4 * h, tmp, k4);
    tmp = y_ + h * (a51 * k1_ + a52 * k2 + a53 * k3 + a54 * k4);
    rhs_(t_ + c5 * h, tmp, k5);
    tmp = y_ + h * (a61 * k1_ + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    rhs_(t_ + h, tmp, k6);
    Eigen::VectorXd y_new = y_ + h * (b1 * k1_ + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    rhs_(t_ + h, y_new, k7);  // FSAL

    double err = 0.0;
    for (Eigen::Index i = 0; i < y_.size(); ++i) {
      const double e = h * (e1 * k1_[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] +
                            e6 * k6[i] + e7 * k7[i]);
      const double sc =
          opts_.abs_tol + opts_.rel_tol * std::max(std::abs(y_[i]), std::abs(y_new[i]));
      err += (e / sc) * (e / sc);
    }
    err = std::sqrt(err / static_cast<double>(y_.size()));

    const double expo = 0.2, beta = 0.08;
    double fac = 0.9 * std::pow(std::max(err, 1e-32), -expo) *
                 std::pow(std::max(err_prev_, 1e-32), beta);
    fac = std::min(rejected_ ? 1.0 : 5.0, std::max(0.2, fac));

    if (err <= 1.0) {
      rec.t0 = t_;
      rec.y0 = y_;
      rec.f0 = k1_;
      t_ += h;
      y_.swap(y_new);
      k1_ = k7;
      rec.t1 = t_;
      rec.y1 = y_;
      rec.f1 = k1_;
      err_prev_ = std::max(err, 1e-32);
      rejected_ = false;
      h_ = h * fac;
      return true;
    }
    rejected_ = true;
    h_ = h * fac;
    if (std::abs(h_) < 1e-14 * (1.0 + std::abs(t_))) throw OdeStepUnderflow(t_);
    return false;
  }

  Rhs rhs_;
  OdeOptions opts_;
  double t_;
  Eigen::VectorXd y_;
  Eigen::VectorXd k1_;
  std::vector<Eigen::VectorXd> work_;
  double h_ = 0.0;
  double err_prev_ = 1.0;
  bool rejected_ = false;
  long n_steps_ = 0;
};

}  // namespace semiq
