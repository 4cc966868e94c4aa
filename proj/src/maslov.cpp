#include "semiq/maslov.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace semiq {

namespace {

constexpr double kPi = std::numbers::pi;

// One-sided C-infinity factor built from the bump exp(-1/(1-t^2)):
// rho(u-1) = exp(-1/(u(2-u))), zero for u <= 0.
double bump_shifted(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 2.0) return 1.0;  // irrelevant range guard
  return std::exp(-1.0 / (u * (2.0 - u)));
}

// C-infinity step: 0 for u <= 0, 1 for u >= 1.
double step01(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  const double a = bump_shifted(u);
  const double b = bump_shifted(1.0 - u);
  return a / (a + b);
}

// Chart coordinate matrix T = ∂(x_α, p̃_β)/∂(τ,ξ) at a node (rows ordered
// x_α ascending then p̃_β ascending; p̃ = −p).
Eigen::MatrixXd chart_matrix(const Atlas& a, const std::vector<int>& beta, int r, int s) {
  const int n = a.n();
  const auto fr = a.frame(r, s);
  Eigen::MatrixXd t(n, n);
  int row = 0;
  for (int i = 0; i < n; ++i)
    if (std::find(beta.begin(), beta.end(), i) == beta.end())
      t.row(row++) = fr.row(i);
  for (int b : beta) t.row(row++) = -fr.row(n + b);
  return t;
}

double hadamard_scale(const Eigen::MatrixXd& m) {
  double s = 1.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) s *= std::max(m.row(i).norm(), 1e-30);
  return s;
}

}  // namespace

ChartSpec choose_lagrangian_coords(const Atlas& atlas, const ChartWindow& window) {
  const int n = atlas.n();
  std::vector<std::vector<int>> candidates;
  candidates.push_back({});
  for (int i = 0; i < n; ++i) candidates.push_back({i});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) candidates.push_back({i, j});

  for (const auto& beta : candidates) {
    if (beta.size() > 2) continue;
    bool ok = true;
    int sign = 0;  // the determinant may not vanish anywhere on the connected
                   // window, so all node values must share one sign
    for (int r = window.r0; r <= window.r1 && ok; ++r)
      for (int s = window.s0; s <= window.s1 && ok; ++s) {
        if (!atlas.valid(r, s)) {
          ok = false;
          break;
        }
        const Eigen::MatrixXd t = chart_matrix(atlas, beta, r, s);
        const double det = t.determinant();
        if (std::abs(det) <= 1e-8 * hadamard_scale(t)) {
          ok = false;
          break;
        }
        const int this_sign = det > 0.0 ? 1 : -1;
        if (sign == 0) sign = this_sign;
        else if (sign != this_sign) ok = false;
      }
    if (ok) {
      ChartSpec chart;
      chart.window = window;
      chart.beta = beta;
      return chart;
    }
  }
  throw std::runtime_error("choose_lagrangian_coords: chart too folded; refine grid");
}

double generating_function(const Atlas& atlas, const ChartSpec& chart, int r, int s) {
  // S_j = −⟨x_β, p̃_β⟩ + A with A = ∫⟨p̃,dx⟩ = −S and p̃ = −p,
  // hence S_j = Σ_β x_b p_b − S.
  double sj = -atlas.S(r, s);
  const auto xv = atlas.x(r, s);
  const auto pv = atlas.p(r, s);
  for (int b : chart.beta) sj += xv[b] * pv[b];
  return sj;
}

Eigen::MatrixXd dxbeta_dpbeta(const Atlas& atlas, const ChartSpec& chart, int r, int s) {
  const int n = atlas.n();
  const int nb = static_cast<int>(chart.beta.size());
  if (nb == 0) return Eigen::MatrixXd(0, 0);
  const Eigen::MatrixXd t = chart_matrix(atlas, chart.beta, r, s);
  const auto fr = atlas.frame(r, s);
  Eigen::MatrixXd w(nb, n);
  for (int i = 0; i < nb; ++i) w.row(i) = fr.row(chart.beta[static_cast<std::size_t>(i)]);
  const Eigen::MatrixXd d = t.transpose().fullPivLu().solve(w.transpose()).transpose();
  Eigen::MatrixXd block = d.rightCols(nb);  // ∂x_β/∂p̃_β
  return 0.5 * (block + block.transpose().eval());
}

int negative_eigenvalue_count(const Eigen::MatrixXd& sym) {
  if (sym.rows() == 0) return 0;
  if (sym.rows() == 1) return sym(0, 0) < 0.0 ? 1 : 0;
  if (sym.rows() == 2) {
    const double tr = sym.trace();
    const double det = sym.determinant();
    if (det > 0.0) return tr < 0.0 ? 2 : 0;
    if (det < 0.0) return 1;
    return tr < 0.0 ? 1 : 0;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  return static_cast<int>((es.eigenvalues().array() < 0.0).count());
}

int chart_index(const Atlas& atlas, const ChartSpec& a, const ChartSpec& b, int r, int s) {
  const int na = negative_eigenvalue_count(dxbeta_dpbeta(atlas, a, r, s));
  const int nb = negative_eigenvalue_count(dxbeta_dpbeta(atlas, b, r, s));
  return ((na - nb) % 4 + 4) % 4;
}

// ---------------------------------------------------------------------------
// oscillatory quadrature

namespace {

// Natural cubic spline over ascending knots.
class CubicSpline {
 public:
  CubicSpline(std::vector<double> xs, std::vector<double> ys)
      : x_(std::move(xs)), y_(std::move(ys)) {
    const std::size_t n = x_.size();
    m_.assign(n, 0.0);
    if (n < 3) return;
    std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
    b[0] = 1.0;
    b[n - 1] = 1.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h0 = x_[i] - x_[i - 1];
      const double h1 = x_[i + 1] - x_[i];
      a[i] = h0 / 6.0;
      b[i] = (h0 + h1) / 3.0;
      c[i] = h1 / 6.0;
      d[i] = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
    }
    // Thomas solve
    for (std::size_t i = 1; i < n; ++i) {
      const double w = a[i] / b[i - 1];
      b[i] -= w * c[i - 1];
      d[i] -= w * d[i - 1];
    }
    m_[n - 1] = d[n - 1] / b[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) m_[i] = (d[i] - c[i] * m_[i + 1]) / b[i];
  }

  double operator()(double x) const {
    const std::size_t i = interval(x);
    const double h = x_[i + 1] - x_[i];
    const double t0 = (x_[i + 1] - x) / h, t1 = (x - x_[i]) / h;
    return t0 * y_[i] + t1 * y_[i + 1] +
           ((t0 * t0 * t0 - t0) * m_[i] + (t1 * t1 * t1 - t1) * m_[i + 1]) * h * h / 6.0;
  }

  double min_x() const { return x_.front(); }
  double max_x() const { return x_.back(); }
  const std::vector<double>& knots() const { return x_; }

 private:
  std::size_t interval(double x) const {
    auto it = std::upper_bound(x_.begin(), x_.end(), x);
    std::size_t i = static_cast<std::size_t>(std::distance(x_.begin(), it));
    if (i == 0) return 0;
    if (i >= x_.size()) return x_.size() - 2;
    return i - 1;
  }
  std::vector<double> x_, y_, m_;
};

// Gauss-7 / Kronrod-15 on [-1, 1].
constexpr double kKronrodX[15] = {
    -0.991455371120813, -0.949107912342759, -0.864864423359769, -0.741531185599394,
    -0.586087235467691, -0.405845151377397, -0.207784955007898, 0.0,
    0.207784955007898,  0.405845151377397,  0.586087235467691,  0.741531185599394,
    0.864864423359769,  0.949107912342759,  0.991455371120813};
constexpr double kKronrodW[15] = {
    0.022935322010529, 0.063092092629979, 0.104790010322250, 0.140653259715525,
    0.169004726639267, 0.190350578064785, 0.204432940075298, 0.209482141084728,
    0.204432940075298, 0.190350578064785, 0.169004726639267, 0.140653259715525,
    0.104790010322250, 0.063092092629979, 0.022935322010529};
constexpr double kGaussW[7] = {0.129484966168870, 0.279705391489277, 0.381830050505119,
                               0.417959183673469, 0.381830050505119, 0.279705391489277,
                               0.129484966168870};

struct Panel {
  double a, b;
  std::complex<double> value{0, 0};
  double error = 0;
};

template <class F>
void gk15(const F& f, Panel& p) {
  const double mid = 0.5 * (p.a + p.b), half = 0.5 * (p.b - p.a);
  std::complex<double> acc_k(0, 0), acc_g(0, 0);
  for (int i = 0; i < 15; ++i) {
    const std::complex<double> v = f(mid + half * kKronrodX[i]);
    acc_k += kKronrodW[i] * v;
    if (i % 2 == 1) acc_g += kGaussW[i / 2] * v;
  }
  p.value = acc_k * half;
  p.error = std::abs(acc_k - acc_g) * half;
}

}  // namespace

std::complex<double> oscillatory_slice_integral(const std::vector<SliceSample>& slice,
                                                double xbeta_query, double k) {
  if (slice.size() < 4) return {0.0, 0.0};
  std::vector<double> ps, amp, sj;
  ps.reserve(slice.size());
  for (const auto& s : slice) {
    if (!(s.J > 0.0)) continue;
    ps.push_back(s.p);
    amp.push_back(s.weight / std::sqrt(s.J));
    sj.push_back(s.Sj);
  }
  if (ps.size() < 4) return {0.0, 0.0};
  const CubicSpline amp_sp(ps, amp);
  const CubicSpline sj_sp(ps, sj);

  auto integrand = [&](double p) -> std::complex<double> {
    const double a = amp_sp(p);
    const double phase = k * (sj_sp(p) + xbeta_query * p);
    return std::polar(a, phase);
  };

  // panels sized for >= 20 points per oscillation period
  std::vector<Panel> panels;
  for (std::size_t i = 0; i + 1 < ps.size(); ++i) {
    const double a = ps[i], b = ps[i + 1];
    const double dphi = k * std::abs((sj_sp(b) + xbeta_query * b) - (sj_sp(a) + xbeta_query * a));
    const int m = std::max(1, static_cast<int>(std::ceil(dphi / (2.0 * kPi) * 20.0 / 15.0)));
    for (int j = 0; j < m; ++j) {
      Panel p;
      p.a = a + (b - a) * j / m;
      p.b = a + (b - a) * (j + 1) / m;
      gk15(integrand, p);
      panels.push_back(p);
    }
  }
  // one refinement sweep on the worst panels
  for (int sweep = 0; sweep < 3; ++sweep) {
    double total_err = 0, total_mag = 0;
    for (const auto& p : panels) {
      total_err += p.error;
      total_mag += std::abs(p.value);
    }
    if (total_err <= 1e-10 * (1.0 + total_mag)) break;
    std::vector<Panel> next;
    next.reserve(panels.size() * 2);
    const double cut = total_err / static_cast<double>(panels.size()) * 4.0;
    for (const auto& p : panels) {
      if (p.error > cut) {
        Panel l{p.a, 0.5 * (p.a + p.b)}, r{0.5 * (p.a + p.b), p.b};
        gk15(integrand, l);
        gk15(integrand, r);
        next.push_back(l);
        next.push_back(r);
      } else {
        next.push_back(p);
      }
    }
    panels.swap(next);
  }
  std::complex<double> acc(0, 0);
  for (const auto& p : panels) acc += p.value;
  // (k/(−2πi))^{1/2} = sqrt(k/2π)·e^{iπ/4}
  return acc * std::sqrt(k / (2.0 * kPi)) * std::polar(1.0, kPi / 4.0);
}

// ---------------------------------------------------------------------------
// chart slices

namespace {

double window_taper(const ChartWindow& w, double r, double s) {
  const double fr = (r - w.r0) / std::max(1.0, double(w.r1 - w.r0));
  const double fs = (s - w.s0) / std::max(1.0, double(w.s1 - w.s0));
  const double edge = 0.15;
  return step01(fr / edge) * step01((1.0 - fr) / edge) * step01(fs / edge) *
         step01((1.0 - fs) / edge);
}

}  // namespace

std::vector<SliceSample> chart_slice(const Atlas& atlas, const ChartSpec& chart,
                                     const Eigen::VectorXd& xq, const ManifoldFn& weight) {
  if (atlas.n() != 2 || chart.beta.size() != 1)
    throw std::runtime_error("chart_slice supports |beta|=1 charts on n=2 atlases");
  const int b = chart.beta[0];
  const int alpha = 1 - b;
  const double q = xq[alpha];
  const ChartWindow& w = chart.window;

  struct Crossing {
    double u, v;
  };
  std::vector<SliceSample> out;

  auto corner_f = [&](int r, int s) { return atlas.x(r, s)[alpha] - q; };

  for (int r = w.r0; r < w.r1; ++r) {
    for (int s = w.s0; s < w.s1; ++s) {
      const int ci = atlas.cell_index(r, s);
      if (ci < 0) continue;
      const double f00 = corner_f(r, s);
      const double f01 = corner_f(r, s + 1);
      const double f10 = corner_f(atlas.ray_after(r), s);
      const double f11 = corner_f(atlas.ray_after(r), s + 1);
      std::vector<Crossing> cross;
      auto edge = [&](double fa, double fb, double ua, double va, double ub, double vb) {
        if ((fa < 0) == (fb < 0)) return;
        const double t = fa / (fa - fb);
        cross.push_back({ua + t * (ub - ua), va + t * (vb - va)});
      };
      edge(f00, f01, 0, 0, 1, 0);  // v = 0
      edge(f10, f11, 0, 1, 1, 1);  // v = 1
      edge(f00, f10, 0, 0, 0, 1);  // u = 0
      edge(f01, f11, 1, 0, 1, 1);  // u = 1
      if (cross.empty()) continue;
      if (cross.size() == 2)
        cross.push_back({0.5 * (cross[0].u + cross[1].u), 0.5 * (cross[0].v + cross[1].v)});

      for (const Crossing& c0 : cross) {
        double u = c0.u, v = c0.v;
        // polish the contour point in the gradient direction of x_alpha
        for (int it = 0; it < 4; ++it) {
          const CellPointData d = cell_eval(atlas, ci, u, v);
          const double g = d.x[alpha] - q;
          const double du_scale = atlas.tau_step();
          double dxi = (atlas.xi(atlas.ray_after(r)) - atlas.xi(r)).value();
          if (dxi <= 0.0) dxi += 2.0 * kPi;
          const double gu = d.dx(alpha, 0) * du_scale;
          const double gv = d.dx(alpha, 1) * dxi;
          const double norm2 = gu * gu + gv * gv;
          if (norm2 < 1e-300) break;
          u -= g * gu / norm2;
          v -= g * gv / norm2;
          u = std::clamp(u, 0.0, 1.0);
          v = std::clamp(v, 0.0, 1.0);
        }
        const CellPointData d = cell_eval(atlas, ci, u, v);
        Eigen::MatrixXd t(2, 2);
        t.row(0) = d.dx.row(alpha);
        t.row(1) = -d.dp.row(b);
        const double jac = std::abs(t.determinant());
        if (!(jac > 0.0)) continue;
        SliceSample smp;
        smp.p = -d.p[b];
        smp.Sj = d.x[b] * d.p[b] - d.S;
        smp.J = jac;
        smp.xbeta = d.x[b];
        double dxi = (atlas.xi(atlas.ray_after(r)) - atlas.xi(r)).value();
        if (dxi <= 0.0) dxi += 2.0 * kPi;
        const double tau = atlas.tau(s) + u * atlas.tau_step();
        const double xi = atlas.xi(r).value() + v * dxi;
        const double rf = r + v, sf = s + u;
        smp.weight = window_taper(w, rf, sf) * (weight ? weight(tau, xi) : 1.0);
        out.push_back(smp);
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const SliceSample& a, const SliceSample& b) { return a.p < b.p; });
  // drop duplicate edge crossings shared between neighboring cells
  std::vector<SliceSample> dedup;
  for (const auto& s : out) {
    if (!dedup.empty() && std::abs(s.p - dedup.back().p) <
                              1e-9 * (1.0 + std::abs(s.p)))
      continue;
    dedup.push_back(s);
  }
  return dedup;
}

MasValue subcanonical_apply(const Atlas& atlas, const ChartSpec& chart, const ManifoldFn& phi,
                            const Eigen::VectorXd& x, double k) {
  MasValue out;
  if (chart.beta.empty()) {
    // branch of P^{-1}(x) inside the chart window
    std::vector<Branch> branches;
    try {
      branches = enumerate_branches(atlas, x);
    } catch (const std::exception&) {
      return out;  // outside the projection: zero (weight support vanishes)
    }
    const double tau0 = atlas.tau(chart.window.s0), tau1 = atlas.tau(chart.window.s1);
    const double xi0 = atlas.xi(chart.window.r0).value();
    const double xi1 = atlas.xi(chart.window.r1).value();
    for (const Branch& br : branches) {
      if (br.tau < tau0 - 1e-12 || br.tau > tau1 + 1e-12) continue;
      if (atlas.xi_dim() == 1 && (br.xi < xi0 - 1e-12 || br.xi > xi1 + 1e-12)) continue;
      const double weight =
          (phi ? phi(br.tau, br.xi) : 1.0) *
          window_taper(chart.window,
                       chart.window.r0 +
                           (br.xi - xi0) / std::max(xi1 - xi0, 1e-300) *
                               (chart.window.r1 - chart.window.r0),
                       chart.window.s0 +
                           (br.tau - tau0) / std::max(tau1 - tau0, 1e-300) *
                               (chart.window.s1 - chart.window.s0));
      const double jac = std::abs(br.detX);
      if (!(jac > 0.0)) continue;
      out.phase = k * (-br.S);
      out.magnitude = weight / std::sqrt(jac);
      out.exact_phase = true;
      out.value = std::polar(out.magnitude, out.phase);
      return out;
    }
    return out;
  }
  if (chart.beta.size() == 1) {
    const int b = chart.beta[0];
    const std::vector<SliceSample> slice = chart_slice(atlas, chart, x, phi);
    if (slice.size() < 4)
      throw std::runtime_error(
          "subcanonical_apply: slice too sparse; increase sample density or reduce k");
    out.value = oscillatory_slice_integral(slice, x[b], k);
    out.magnitude = std::abs(out.value);
    out.phase = std::arg(out.value);
    out.exact_phase = false;
    return out;
  }
  throw std::runtime_error("subcanonical_apply: atlas charts support |beta| <= 1");
}

MasValue canonical_apply(const Atlas& atlas, const std::vector<WeightedChart>& charts,
                         const ManifoldFn& phi, const Eigen::VectorXd& x, double k) {
  MasValue out;
  bool all_exact = true;
  double exact_phase = 0.0;
  std::complex<double> acc(0, 0);
  bool first = true;
  for (const auto& wc : charts) {
    ManifoldFn weighted = [&](double tau, double xi) {
      const double e = wc.e ? wc.e(tau, xi) : 1.0;
      return e * (phi ? phi(tau, xi) : 1.0);
    };
    const MasValue v = subcanonical_apply(atlas, wc.chart, weighted, x, k);
    const double cphase = -0.5 * kPi * wc.chart.nu;
    acc += v.value * std::polar(1.0, cphase);
    if (std::abs(v.value) > 0.0) {
      if (!v.exact_phase) all_exact = false;
      if (first) {
        exact_phase = v.phase + cphase;
        first = false;
      } else if (std::abs((v.phase + cphase) - exact_phase) > 1e-9) {
        all_exact = false;  // distinct phases: no single closed-form phase
      }
    }
  }
  out.value = acc;
  out.magnitude = std::abs(acc);
  if (all_exact && !first) {
    out.exact_phase = true;
    out.phase = exact_phase;
  } else {
    out.phase = std::arg(acc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// bump cover

namespace {

double wv_pair_v(double r, double radius) {
  // 0 inside r <= radius/2, 1 outside r >= radius
  return step01((r - 0.5 * radius) / (0.5 * radius));
}

}  // namespace

double BumpCover::w(int mu, const Eigen::VectorXd& x) const {
  const Bump& b = bumps_[static_cast<std::size_t>(mu)];
  const double r = (x - b.center).norm();
  return (1.0 - wv_pair_v(r, b.radius)) / static_cast<double>(bumps_.size());
}

double BumpCover::v(int mu, const Eigen::VectorXd& x) const {
  const Bump& b = bumps_[static_cast<std::size_t>(mu)];
  const double r = (x - b.center).norm();
  return wv_pair_v(r, b.radius) / static_cast<double>(bumps_.size());
}

double BumpCover::sum_w(const Eigen::VectorXd& x) const {
  double acc = 0.0;
  for (std::size_t mu = 0; mu < bumps_.size(); ++mu)
    acc += 1.0 - wv_pair_v((x - bumps_[mu].center).norm(), bumps_[mu].radius);
  return acc / static_cast<double>(bumps_.size());
}

double BumpCover::sum_v(const Eigen::VectorXd& x) const {
  double acc = 0.0;
  for (std::size_t mu = 0; mu < bumps_.size(); ++mu)
    acc += wv_pair_v((x - bumps_[mu].center).norm(), bumps_[mu].radius);
  return acc / static_cast<double>(bumps_.size());
}

double BumpCover::sum_w_component(int component, const Eigen::VectorXd& x) const {
  double acc = 0.0;
  for (std::size_t mu = 0; mu < bumps_.size(); ++mu)
    if (bumps_[mu].component == component)
      acc += 1.0 - wv_pair_v((x - bumps_[mu].center).norm(), bumps_[mu].radius);
  return acc / static_cast<double>(bumps_.size());
}

// ---------------------------------------------------------------------------
// field construction

namespace {

// The ball is served by the chart when every x_α-slice through it carries
// enough samples and the β-coordinate range reaches past the ball (rim folds
// legitimately have no manifold data on the shadow side, so containment is
// tested against the slice data, not the projected hull).
bool chart_serves_ball(const Atlas& atlas, const ChartSpec& chart,
                       const Eigen::VectorXd& center, double radius) {
  if (chart.beta.size() != 1 || atlas.n() != 2) return false;
  const int b = chart.beta[0];
  const int alpha = 1 - b;
  bool lit_reach = false;
  for (double off : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    Eigen::VectorXd probe = center;
    probe[alpha] += off * radius;
    std::vector<SliceSample> slice;
    try {
      slice = chart_slice(atlas, chart, probe, nullptr);
    } catch (const std::exception&) {
      return false;
    }
    if (slice.size() < 12) return false;
    double lo = slice.front().xbeta, hi = lo;
    for (const auto& smp : slice) {
      lo = std::min(lo, smp.xbeta);
      hi = std::max(hi, smp.xbeta);
    }
    // the slice's β-range must extend ≥ radius beyond the center on the lit
    // side at least at the central slices
    if (std::abs(off) <= 0.5 &&
        (hi - center[b] >= radius || center[b] - lo >= radius))
      lit_reach = true;
  }
  return lit_reach;
}

}  // namespace

RegularizedField build_regularized_field(const Atlas& atlas, const CausticCloud& cloud,
                                         double k, const BumpCoverPolicy& policy) {
  RegularizedField field;
  field.k = k;
  field.atlas = &atlas;

  std::vector<const CausticPoint*> members = cloud.crb_members();
  std::sort(members.begin(), members.end(), [](const CausticPoint* a, const CausticPoint* b) {
    return a->xi != b->xi ? a->xi < b->xi : a->tau < b->tau;
  });

  std::vector<bool> covered(members.size(), false);
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (covered[i]) continue;
    const CausticPoint& cp = *members[i];
    double radius = policy.radius_scale * cp.node_spacing;
    const double floor_radius = radius * policy.min_radius_factor;

    ChartSpec chart;
    bool built = false;
    while (radius > floor_radius) {
      // window around the caustic node, grown until its slices serve the ball
      int half_r = 6, half_s = 6;
      for (int grow = 0; grow < 10 && !built; ++grow) {
        ChartWindow w;
        w.r0 = std::max(0, cp.ray - half_r);
        w.r1 = std::min(atlas.ray_count() - 1, cp.ray + half_r);
        w.s0 = std::max(0, cp.sample - half_s);
        w.s1 = std::min(atlas.sample_count() - 1, cp.sample + half_s);
        try {
          ChartSpec cand = choose_lagrangian_coords(atlas, w);
          if (!cand.beta.empty() && chart_serves_ball(atlas, cand, cp.x, radius)) {
            chart = cand;
            built = true;
            break;
          }
        } catch (const std::exception&) {
          // window too folded for any β; resize and retry
        }
        half_r = std::min(half_r * 2, atlas.ray_count());
        half_s = std::min(half_s * 2, atlas.sample_count());
      }
      if (built) break;
      radius *= 0.7;
    }
    if (!built)
      throw std::runtime_error("build_regularized_field: refine atlas near caustic");

    // reference β=∅ chart: a window inward in τ overlapping the fold chart
    RegularizedField::Component comp;
    comp.fold_chart = chart;
    bool have_ref = false;
    for (int back = (chart.window.s1 - chart.window.s0); back >= 2 && !have_ref; back /= 2) {
      ChartWindow rw;
      rw.r0 = chart.window.r0;
      rw.r1 = chart.window.r1;
      rw.s1 = std::max(2, chart.window.s0 + 2);
      rw.s0 = std::max(0, rw.s1 - back);
      try {
        ChartSpec ref = choose_lagrangian_coords(atlas, rw);
        if (!ref.beta.empty()) continue;  // must be an identity chart
        // shared node: overlap row with the largest |detX|
        int best_r = -1, best_s = -1;
        double best = 0.0;
        for (int r = rw.r0; r <= rw.r1; ++r)
          for (int s = std::max(rw.s0, chart.window.s0); s <= rw.s1 && s <= chart.window.s1;
               ++s) {
            if (!atlas.valid(r, s)) continue;
            const double d = std::abs(atlas.detX(r, s));
            if (d > best) {
              best = d;
              best_r = r;
              best_s = s;
            }
          }
        if (best_r < 0) continue;
        comp.reference = ref;
        comp.nu = chart_index(atlas, comp.fold_chart, comp.reference, best_r, best_s);
        comp.fold_chart.nu = comp.nu;
        have_ref = true;
      } catch (const std::exception&) {
      }
    }
    // without a reference overlap the chain index stays 0 (phase-offset only)
    field.components_.push_back(comp);

    BumpCover::Bump bump;
    bump.center = cp.x;
    bump.radius = radius;
    bump.component = static_cast<int>(field.components_.size()) - 1;
    field.cover_.bumps_.push_back(std::move(bump));

    for (std::size_t j = 0; j < members.size(); ++j)
      if (!covered[j] && (members[j]->x - cp.x).norm() < 0.5 * radius) covered[j] = true;
  }
  return field;
}

// ---------------------------------------------------------------------------
// field evaluation

double RegularizedField::log_mas_real(int component, const Eigen::VectorXd& x,
                                      double B_anchor) const {
  const Component& comp = components_[static_cast<std::size_t>(component)];
  const MasValue mas = subcanonical_apply(*atlas, comp.fold_chart, nullptr, x, k);
  const double cphase = -0.5 * kPi * comp.fold_chart.nu;
  if (mas.exact_phase) return (mas.phase + cphase) / k;
  const double mag = std::abs(mas.value);
  if (mag < 1e-300)
    throw std::runtime_error("regularized_bellman: k too large for chart sampling");
  const double arg_principal = std::arg(mas.value * std::polar(1.0, cphase));
  const double m = std::round((-k * B_anchor - arg_principal) / (2.0 * kPi));
  return (arg_principal + 2.0 * kPi * m) / k;
}

RegularizedField::Value RegularizedField::evaluate_value(const Eigen::VectorXd& x,
                                                         const QueryOptions& opts) const {
  Value out;
  if (cover_.empty()) {
    const BellmanResult q = bellman_query(*atlas, x, opts);
    out.B = q.value;
    out.gradB = q.gradient;
    out.Bk = q.value;
    out.critical = q.minimizer_critical;
    return out;
  }
  const double sw = cover_.sum_w(x);
  if (sw == 0.0) {
    const BellmanResult q = bellman_query(*atlas, x, opts);
    out.B = q.value;
    out.gradB = q.gradient;
    out.Bk = q.value;  // bit-exact off the bumps
    out.critical = q.minimizer_critical;
    return out;
  }
  out.in_bump = true;
  const double sv = cover_.sum_v(x);

  double B = 0.0;
  bool have_b = false;
  try {
    const BellmanResult q = bellman_query(*atlas, x, opts);
    B = q.value;
    out.gradB = q.gradient;
    out.critical = q.minimizer_critical;
    have_b = true;
  } catch (const OutsideRegionError&) {
    if (sv > 1e-15) throw;  // B(x) genuinely needed
  }
  out.B = have_b ? B : std::numeric_limits<double>::quiet_NaN();

  double value = have_b ? B * sv : 0.0;
  double best_w = 0.0;
  for (std::size_t j = 0; j < components_.size(); ++j) {
    const double swj = cover_.sum_w_component(static_cast<int>(j), x);
    if (swj <= 0.0) continue;
    double anchor = B;
    if (!have_b) {
      // dark side of a rim fold: anchor at the nearest bump centre of this
      // component (the caustic value, where the query still works)
      const BumpCover::Bump* nearest = nullptr;
      for (const auto& bump : cover_.bumps_)
        if (bump.component == static_cast<int>(j) &&
            (!nearest || (x - bump.center).norm() < (x - nearest->center).norm()))
          nearest = &bump;
      anchor = bellman_query(*atlas, nearest->center, opts).value;
    }
    value -= log_mas_real(static_cast<int>(j), x, anchor) * swj;
    if (swj > best_w) {
      best_w = swj;
      out.chart_id = static_cast<int>(j);
    }
  }
  out.Bk = value;
  return out;
}

RegularizedField::Value RegularizedField::evaluate(const Eigen::VectorXd& x,
                                                   const QueryOptions& opts) const {
  Value out = evaluate_value(x, opts);
  if (!out.in_bump) {
    out.gradBk = out.gradB;
    return out;
  }
  const double h = 1e-5;
  out.gradBk.resize(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    out.gradBk[i] =
        (evaluate_value(xp, opts).Bk - evaluate_value(xm, opts).Bk) / (2.0 * h);
  }
  return out;
}

}  // namespace semiq
