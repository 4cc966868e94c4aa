#include "semiq/lpmanifold.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "semiq/linalg.hpp"
#include "semiq/parallel.hpp"

namespace semiq {

using nlohmann::json;

// ---------------------------------------------------------------------------
// SeedChart

SeedChart::SeedChart(int n, const Eigen::MatrixXd& P, double delta,
                     const std::vector<int>& xi_counts)
    : n_(n), delta_(delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("SeedChart: delta must be positive");
  p_inv_sqrt_ = spd_sqrt(P).inv_sqrt;
  switch (n) {
    case 1:
      xi_dim_ = 0;
      shape_ = {2};
      periodic_ = {false};
      break;
    case 2: {
      xi_dim_ = 1;
      const int count = xi_counts.empty() ? 64 : xi_counts[0];
      if (count < 3) throw std::invalid_argument("SeedChart: need at least 3 angular seeds");
      shape_ = {count};
      periodic_ = {true};
      break;
    }
    case 3: {
      xi_dim_ = 2;
      if (xi_counts.size() != 2)
        throw std::invalid_argument("SeedChart: n=3 needs two xi counts (azimuth, polar)");
      shape_ = xi_counts;
      periodic_ = {true, false};
      break;
    }
    default:
      throw std::invalid_argument(
          "SeedChart: grid seeding supports n <= 3; pass explicit seed lists instead");
  }
}

int SeedChart::ray_count() const {
  int c = 1;
  for (int s : shape_) c *= s;
  return c;
}

Eigen::VectorXd SeedChart::xi_of_ray(int ray) const {
  if (n_ == 1) return Eigen::VectorXd::Constant(1, ray == 0 ? 1.0 : -1.0);
  if (n_ == 2) {
    const double th = 2.0 * std::numbers::pi * ray / shape_[0];
    return Eigen::VectorXd::Constant(1, th);
  }
  // n == 3: ray = i_azimuth * shape[1] + j_polar; polar grid open at the poles
  Eigen::VectorXd xi(2);
  const int i = ray / shape_[1];
  const int j = ray % shape_[1];
  xi[0] = 2.0 * std::numbers::pi * i / shape_[0];
  xi[1] = std::numbers::pi * (j + 1) / (shape_[1] + 1);
  return xi;
}

Eigen::VectorXd SeedChart::omega(const Eigen::VectorXd& xi) const {
  Eigen::VectorXd w(n_);
  if (n_ == 1) {
    w[0] = xi[0];
  } else if (n_ == 2) {
    w << std::cos(xi[0]), std::sin(xi[0]);
  } else {
    const double st = std::sin(xi[1]), ct = std::cos(xi[1]);
    w << st * std::cos(xi[0]), st * std::sin(xi[0]), ct;
  }
  return w;
}

Eigen::MatrixXd SeedChart::domega_dxi(const Eigen::VectorXd& xi) const {
  Eigen::MatrixXd d(n_, xi_dim_);
  if (n_ == 2) {
    d(0, 0) = -std::sin(xi[0]);
    d(1, 0) = std::cos(xi[0]);
  } else if (n_ == 3) {
    const double sp = std::sin(xi[1]), cp = std::cos(xi[1]);
    const double sa = std::sin(xi[0]), ca = std::cos(xi[0]);
    d(0, 0) = -sp * sa;
    d(1, 0) = sp * ca;
    d(2, 0) = 0.0;
    d(0, 1) = cp * ca;
    d(1, 1) = cp * sa;
    d(2, 1) = -sp;
  }
  return d;
}

Eigen::VectorXd SeedChart::seed_point(const Eigen::VectorXd& xi) const {
  return std::sqrt(delta_) * (p_inv_sqrt_ * omega(xi));
}

Eigen::MatrixXd SeedChart::seed_tangent(const Eigen::VectorXd& xi) const {
  return std::sqrt(delta_) * (p_inv_sqrt_ * domega_dxi(xi));
}

// ---------------------------------------------------------------------------
// seeding

namespace {

struct LambdaParts {
  double a, b, eps, st, lambda;
};

LambdaParts lambda_plus(const SystemSpec& s, const Eigen::VectorXd& q,
                        const Eigen::VectorXd& x0, const Eigen::MatrixXd& r) {
  LambdaParts lp;
  lp.a = q.dot(s.f(x0));
  lp.b = q.dot(r * q);
  lp.eps = s.epsilon(x0);
  const double scale = 1.0 + q.squaredNorm() * r.lpNorm<Eigen::Infinity>();
  if (lp.b <= 1e-12 * scale && lp.a >= 0.0)
    throw std::runtime_error("seed_momentum: level set point not actuated");
  lp.st = std::sqrt(lp.a * lp.a + lp.eps * lp.b);
  // Two algebraically equal forms of the outward root; pick the one free of
  // cancellation for the sign of a.
  lp.lambda = lp.a > 0.0 ? 2.0 * (lp.a + lp.st) / lp.b : 2.0 * lp.eps / (lp.st - lp.a);
  return lp;
}

std::vector<double> make_tau_grid(double tau_max, int samples) {
  if (samples < 2) throw std::invalid_argument("tau_samples must be at least 2");
  if (!(tau_max > 0.0)) throw std::invalid_argument("tau_max must be positive");
  std::vector<double> g(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i)
    g[static_cast<std::size_t>(i)] = tau_max * i / (samples - 1);
  return g;
}

}  // namespace

Eigen::VectorXd seed_momentum(const SystemSpec& s, const LocalSolution& local,
                              const Eigen::VectorXd& x0) {
  const double v = x0.dot(local.P * x0);
  if (std::abs(v - local.delta) > 1e-10 * std::max(1.0, local.delta))
    throw std::invalid_argument("seed_momentum: x0 is not on the level set {V=delta}");
  const Eigen::VectorXd q = 2.0 * (local.P * x0);
  const LambdaParts lp = lambda_plus(s, q, x0, s.R(x0));
  return lp.lambda * q;
}

SeedData seed_with_tangents(const SystemSpec& s, const LocalSolution& local,
                            const SeedChart& chart, const Eigen::VectorXd& xi) {
  SeedData out;
  out.x0 = chart.seed_point(xi);
  out.dx0_dxi = chart.seed_tangent(xi);
  const int n = s.n(), k = chart.xi_dim();

  const SystemJets jets = eval_system_jets(s, out.x0);
  const Eigen::MatrixXd r = jets.R_value();
  const Eigen::VectorXd q = 2.0 * (local.P * out.x0);
  const LambdaParts lp = lambda_plus(s, q, out.x0, r);
  out.p0 = lp.lambda * q;

  out.dp0_dxi.resize(n, k);
  const Eigen::VectorXd rq = r * q;
  const Eigen::MatrixXd jf = jets.f_jacobian();
  for (int l = 0; l < k; ++l) {
    const Eigen::VectorXd du = out.dx0_dxi.col(l);
    const Eigen::VectorXd dq = 2.0 * (local.P * du);
    const double da = dq.dot(jets.f_value()) + q.dot(jf * du);
    double db = 2.0 * dq.dot(rq);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) db += q[i] * q[j] * jets.R[i][j].g.dot(du);
    const double deps = jets.eps.g.dot(du);
    const double dst = (lp.a * da + 0.5 * (deps * lp.b + lp.eps * db)) / lp.st;
    double dlambda;
    if (lp.a > 0.0)
      dlambda = 2.0 * ((da + dst) * lp.b - (lp.a + lp.st) * db) / (lp.b * lp.b);
    else
      dlambda = 2.0 * (deps * (lp.st - lp.a) - lp.eps * (dst - da)) /
                ((lp.st - lp.a) * (lp.st - lp.a));
    out.dp0_dxi.col(l) = dlambda * q + lp.lambda * dq;
  }
  return out;
}

// ---------------------------------------------------------------------------
// atlas build

namespace {

void integrate_ray(const SystemSpec& sys, Atlas& a, int r, const PhasePoint& seed,
                   const Eigen::MatrixXd& xi_cols, const OdeOptions& ode,
                   std::vector<double>& x_, std::vector<double>& p_, std::vector<double>& S_,
                   std::vector<double>& detX_, std::vector<double>& frame_,
                   std::vector<uint8_t>& valid_, std::vector<std::string>& errors,
                   const std::vector<double>& tau, double escape, int n, int n_samples) {
  const BicharTrajectory traj =
      integrate_bicharacteristic(sys, seed, xi_cols, tau, ode, escape);
  if (traj.truncated) errors[static_cast<std::size_t>(r)] = traj.error;
  for (int s = 0; s < n_samples; ++s) {
    const TrajectorySample& smp = traj.samples[static_cast<std::size_t>(s)];
    if (!smp.valid) break;
    const std::size_t nid = static_cast<std::size_t>(a.node_id(r, s));
    Eigen::Map<Eigen::VectorXd>(x_.data() + nid * n, n) = smp.x;
    Eigen::Map<Eigen::VectorXd>(p_.data() + nid * n, n) = smp.p;
    S_[nid] = smp.S;
    Eigen::Map<Eigen::MatrixXd> fr(frame_.data() + nid * 2 * n * n, 2 * n, n);
    const auto [xd, pd] = ham_rhs(sys, smp.x, smp.p);
    fr.col(0).head(n) = xd;
    fr.col(0).tail(n) = pd;
    if (smp.xi_columns.cols() > 0) fr.rightCols(smp.xi_columns.cols()) = smp.xi_columns;
    detX_[nid] = fr.topRows(n).determinant();
    valid_[nid] = 1;
  }
}

}  // namespace

Atlas build_atlas(const std::shared_ptr<const SystemSpec>& sys, const LocalSolution& local,
                  const AtlasBuildParams& params) {
  if (!(local.margin < 0.0))
    throw std::invalid_argument("build_atlas: local solution margin must be negative");
  if (!params.xi_values.empty() && sys->n() != 2)
    throw std::invalid_argument("build_atlas: explicit xi_values require n=2");
  std::vector<int> counts = params.xi_counts;
  if (!params.xi_values.empty())
    counts = {static_cast<int>(params.xi_values.size())};
  const SeedChart chart(sys->n(), local.P, local.delta, counts);

  Atlas a;
  a.sys_ = sys;
  a.local_ = local;
  a.n_ = sys->n();
  a.m_ = sys->m();
  a.xi_dim_ = chart.xi_dim();
  a.xi_shape_ = chart.shape();
  a.xi_periodic_ = chart.periodic();
  a.n_rays_ = chart.ray_count();
  a.n_samples_ = params.tau_samples;
  a.tau_ = make_tau_grid(params.tau_max, params.tau_samples);
  a.ode_ = params.ode;
  if (!params.xi_values.empty()) {
    for (std::size_t i = 1; i < params.xi_values.size(); ++i)
      if (!(params.xi_values[i] > params.xi_values[i - 1]))
        throw std::invalid_argument("build_atlas: xi_values must be strictly ascending");
    a.xi_periodic_ = {params.xi_window_periodic};
  }

  a.ray_xi_.resize(static_cast<std::size_t>(a.n_rays_));
  double max_seed_norm = 0.0;
  for (int r = 0; r < a.n_rays_; ++r) {
    a.ray_xi_[static_cast<std::size_t>(r)] =
        params.xi_values.empty()
            ? chart.xi_of_ray(r)
            : Eigen::VectorXd::Constant(1, params.xi_values[static_cast<std::size_t>(r)]);
    max_seed_norm =
        std::max(max_seed_norm, chart.seed_point(a.ray_xi_[static_cast<std::size_t>(r)]).norm());
  }
  a.escape_radius_ = params.escape_radius > 0.0
                         ? params.escape_radius
                         : 10.0 * max_seed_norm * std::exp(params.tau_max);

  const int n = a.n_;
  const std::size_t node_count = static_cast<std::size_t>(a.n_rays_) * a.n_samples_;
  a.x_.assign(node_count * n, 0.0);
  a.p_.assign(node_count * n, 0.0);
  a.S_.assign(node_count, 0.0);
  a.detX_.assign(node_count, 0.0);
  a.frame_.assign(node_count * 2 * n * n, 0.0);
  a.valid_.assign(node_count, 0);
  a.ray_errors_.assign(static_cast<std::size_t>(a.n_rays_), "");

  parallel_for(0, a.n_rays_, params.threads, [&](int r) {
    try {
      const Eigen::VectorXd xi = a.ray_xi_[static_cast<std::size_t>(r)];
      const SeedData seed = seed_with_tangents(*sys, local, chart, xi);
      PhasePoint pp;
      pp.tau = 0.0;
      pp.x = seed.x0;
      pp.p = seed.p0;
      pp.S = 0.0;
      Eigen::MatrixXd cols(2 * n, a.xi_dim_);
      if (a.xi_dim_ > 0) {
        cols.topRows(n) = seed.dx0_dxi;
        cols.bottomRows(n) = seed.dp0_dxi;
      }
      integrate_ray(*sys, a, r, pp, cols, params.ode, a.x_, a.p_, a.S_, a.detX_, a.frame_,
                    a.valid_, a.ray_errors_, a.tau_, a.escape_radius_, n, a.n_samples_);
    } catch (const std::exception& err) {
      a.ray_errors_[static_cast<std::size_t>(r)] = err.what();
    }
  });

  a.finalize();
  return a;
}

Atlas build_atlas_from_seeds(const std::shared_ptr<const SystemSpec>& sys,
                             const LocalSolution& local,
                             const std::vector<Eigen::VectorXd>& seeds,
                             const AtlasBuildParams& params) {
  if (seeds.empty()) throw std::invalid_argument("build_atlas_from_seeds: no seeds");
  Atlas a;
  a.sys_ = sys;
  a.local_ = local;
  a.n_ = sys->n();
  a.m_ = sys->m();
  a.xi_dim_ = 0;
  a.xi_shape_ = {static_cast<int>(seeds.size())};
  a.xi_periodic_ = {false};
  a.n_rays_ = static_cast<int>(seeds.size());
  a.n_samples_ = params.tau_samples;
  a.tau_ = make_tau_grid(params.tau_max, params.tau_samples);
  a.ode_ = params.ode;

  double max_seed_norm = 0.0;
  for (const auto& s0 : seeds) max_seed_norm = std::max(max_seed_norm, s0.norm());
  a.escape_radius_ = params.escape_radius > 0.0
                         ? params.escape_radius
                         : 10.0 * max_seed_norm * std::exp(params.tau_max);

  const int n = a.n_;
  const std::size_t node_count = static_cast<std::size_t>(a.n_rays_) * a.n_samples_;
  a.x_.assign(node_count * n, 0.0);
  a.p_.assign(node_count * n, 0.0);
  a.S_.assign(node_count, 0.0);
  a.detX_.assign(node_count, 0.0);
  a.frame_.assign(node_count * 2 * n * n, 0.0);
  a.valid_.assign(node_count, 0);
  a.ray_errors_.assign(static_cast<std::size_t>(a.n_rays_), "");
  a.ray_xi_.assign(static_cast<std::size_t>(a.n_rays_), Eigen::VectorXd::Zero(1));
  for (int r = 0; r < a.n_rays_; ++r) a.ray_xi_[static_cast<std::size_t>(r)][0] = r;

  parallel_for(0, a.n_rays_, params.threads, [&](int r) {
    try {
      PhasePoint pp;
      pp.tau = 0.0;
      pp.x = seeds[static_cast<std::size_t>(r)];
      pp.p = seed_momentum(*sys, local, pp.x);
      pp.S = 0.0;
      integrate_ray(*sys, a, r, pp, Eigen::MatrixXd(2 * n, 0), params.ode, a.x_, a.p_, a.S_,
                    a.detX_, a.frame_, a.valid_, a.ray_errors_, a.tau_, a.escape_radius_, n,
                    a.n_samples_);
    } catch (const std::exception& err) {
      a.ray_errors_[static_cast<std::size_t>(r)] = err.what();
    }
  });

  a.finalize();
  return a;
}

// ---------------------------------------------------------------------------
// derived caches, cells, index

void Atlas::finalize() {
  const int n = n_;
  const std::size_t node_count = static_cast<std::size_t>(n_rays_) * n_samples_;
  xdot_.assign(node_count * n, 0.0);
  pdot_.assign(node_count * n, 0.0);
  Sdot_.assign(node_count, 0.0);
  dxdot_.assign(node_count * n * xi_dim_, 0.0);
  dpdot_.assign(node_count * n * xi_dim_, 0.0);
  dSdot_.assign(node_count * xi_dim_, 0.0);

  parallel_for(0, n_rays_, 0, [&](int r) {
    for (int s = 0; s < n_samples_; ++s) {
      if (!valid(r, s)) continue;
      const std::size_t nid = static_cast<std::size_t>(node_id(r, s));
      const Eigen::VectorXd xv = x(r, s);
      const Eigen::VectorXd pv = p(r, s);
      const HamDerivs d = ham_derivs(*sys_, xv, pv, xi_dim_ > 0);
      Eigen::Map<Eigen::VectorXd>(xdot_.data() + nid * n, n) = -d.Hp;
      Eigen::Map<Eigen::VectorXd>(pdot_.data() + nid * n, n) = d.Hx;
      Sdot_[nid] = d.Sdot;
      if (xi_dim_ > 0) {
        const auto fr = frame(r, s);
        Eigen::Map<Eigen::MatrixXd> dxd(dxdot_.data() + nid * n * xi_dim_, n, xi_dim_);
        Eigen::Map<Eigen::MatrixXd> dpd(dpdot_.data() + nid * n * xi_dim_, n, xi_dim_);
        Eigen::Map<Eigen::VectorXd> dsd(dSdot_.data() + nid * xi_dim_, xi_dim_);
        for (int c = 0; c < xi_dim_; ++c) {
          const Eigen::VectorXd u = fr.col(1 + c).head(n);
          const Eigen::VectorXd w = fr.col(1 + c).tail(n);
          dxd.col(c) = -(d.Hpx * u) - d.Hpp * w;
          dpd.col(c) = d.Hxx * u + d.Hpx.transpose() * w;
          dsd[c] = d.Sdot_x.dot(u) + d.Sdot_p.dot(w);
        }
      }
    }
  });

  std::vector<double> dets;
  dets.reserve(node_count);
  for (std::size_t i = 0; i < node_count; ++i)
    if (valid_[i]) dets.push_back(std::abs(detX_[i]));
  if (!dets.empty()) {
    auto mid = dets.begin() + static_cast<std::ptrdiff_t>(dets.size() / 2);
    std::nth_element(dets.begin(), mid, dets.end());
    median_abs_detx_ = *mid;
  }

  // cells + spatial index (cell queries cover xi_dim <= 1)
  cells_.clear();
  std::vector<Aabb> boxes;
  if (xi_dim_ <= 1) {
    const int ray_cells =
        xi_dim_ == 0 ? n_rays_ : (xi_periodic_[0] ? n_rays_ : n_rays_ - 1);
    cell_lookup_.assign(static_cast<std::size_t>(ray_cells) * (n_samples_ - 1), -1);
    for (int r = 0; r < ray_cells; ++r) {
      const int r1 = xi_dim_ == 0 ? r : ray_after(r);
      for (int s = 0; s + 1 < n_samples_; ++s) {
        bool ok = valid(r, s) && valid(r, s + 1);
        if (xi_dim_ == 1) ok = ok && valid(r1, s) && valid(r1, s + 1);
        if (!ok) continue;
        Aabb box;
        box.lo = x(r, s);
        box.hi = x(r, s);
        auto absorb = [&](const Eigen::VectorXd& pt) {
          box.lo = box.lo.cwiseMin(pt);
          box.hi = box.hi.cwiseMax(pt);
        };
        absorb(x(r, s + 1));
        if (xi_dim_ == 1) {
          absorb(x(r1, s));
          absorb(x(r1, s + 1));
        }
        const Eigen::VectorXd diag = box.hi - box.lo;
        const Eigen::VectorXd pad =
            0.15 * diag + Eigen::VectorXd::Constant(n, 1e-12 + 1e-9 * diag.norm());
        box.lo -= pad;
        box.hi += pad;
        cell_lookup_[static_cast<std::size_t>(r) * (n_samples_ - 1) + s] =
            static_cast<int>(cells_.size());
        cells_.push_back({r, s});
        boxes.push_back(std::move(box));
      }
    }
  }
  tree_ = AabbTree(std::move(boxes));
}

Eigen::VectorXd Atlas::dS_dxi(int r, int s) const {
  Eigen::VectorXd out(xi_dim_);
  const auto fr = frame(r, s);
  const Eigen::VectorXd pv = p(r, s);
  for (int c = 0; c < xi_dim_; ++c) out[c] = pv.dot(fr.col(1 + c).head(n_));
  return out;
}

bool Atlas::covers(const Eigen::VectorXd& pt) const { return !tree_.query(pt).empty(); }

double Atlas::cell_diameter_tauxi() const {
  const double dt = tau_step();
  double dxi = 0.0;
  if (xi_dim_ >= 1 && n_rays_ >= 2) dxi = (xi(1) - xi(0)).norm();
  return std::sqrt(dt * dt + dxi * dxi);
}

double Atlas::loop_integral(int r, int s) const {
  if (xi_dim_ == 0) return 0.0;
  const int r1 = ray_after(r);
  if (!valid(r, s) || !valid(r, s + 1) || !valid(r1, s) || !valid(r1, s + 1)) return 0.0;
  const Eigen::VectorXd xa = x(r, s), xb = x(r, s + 1), xc = x(r1, s + 1), xd = x(r1, s);
  const Eigen::VectorXd pa = p(r, s), pb = p(r, s + 1), pc = p(r1, s + 1), pd = p(r1, s);
  auto edge = [](const Eigen::VectorXd& pu, const Eigen::VectorXd& pv,
                 const Eigen::VectorXd& xu, const Eigen::VectorXd& xv) {
    return 0.5 * (pu + pv).dot(xv - xu);
  };
  return edge(pa, pb, xa, xb) + edge(pb, pc, xb, xc) + edge(pc, pd, xc, xd) +
         edge(pd, pa, xd, xa);
}

// ---------------------------------------------------------------------------
// i/o

namespace {

void put_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
  out += ' ';
}

struct LineReader {
  const char* p;
  double next() {
    char* end = nullptr;
    const double v = std::strtod(p, &end);
    if (end == p) throw std::runtime_error("atlas file: malformed node line");
    p = end;
    return v;
  }
};

}  // namespace

void Atlas::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open atlas file for writing: " + path);
  json header;
  header["format"] = "semiq-atlas-v1";
  header["n"] = n_;
  header["m"] = m_;
  header["f"] = sys_->f_source();
  header["g"] = sys_->g_source();
  header["epsilon"] = sys_->epsilon_source();
  header["Q"] = sys_->q_source();
  auto mat = [](const Eigen::MatrixXd& v) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      std::vector<double> row;
      for (Eigen::Index j = 0; j < v.cols(); ++j) row.push_back(v(i, j));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  header["P"] = mat(local_.P);
  header["K"] = mat(local_.K);
  header["delta"] = local_.delta;
  header["margin"] = local_.margin;
  header["tau_max"] = tau_.back();
  header["tau_samples"] = n_samples_;
  header["xi_dim"] = xi_dim_;
  header["xi_shape"] = xi_shape_;
  header["xi_periodic"] = std::vector<int>(xi_periodic_.begin(), xi_periodic_.end());
  {
    std::vector<std::vector<double>> xi_rows;
    for (const auto& v : ray_xi_) xi_rows.emplace_back(v.data(), v.data() + v.size());
    header["ray_xi"] = xi_rows;
  }
  header["ray_errors"] = ray_errors_;
  header["abs_tol"] = ode_.abs_tol;
  header["rel_tol"] = ode_.rel_tol;
  header["escape_radius"] = escape_radius_;
  os << "# semiq atlas v1\n" << header.dump() << "\n";

  const int n = n_;
  std::string line;
  for (int r = 0; r < n_rays_; ++r)
    for (int s = 0; s < n_samples_; ++s) {
      const std::size_t nid = static_cast<std::size_t>(node_id(r, s));
      line.clear();
      line += "node ";
      line += std::to_string(r);
      line += ' ';
      line += std::to_string(s);
      line += ' ';
      line += valid_[nid] ? '1' : '0';
      line += ' ';
      put_double(line, tau_[static_cast<std::size_t>(s)]);
      put_double(line, S_[nid]);
      put_double(line, detX_[nid]);
      for (int i = 0; i < n; ++i) put_double(line, x_[nid * n + i]);
      for (int i = 0; i < n; ++i) put_double(line, p_[nid * n + i]);
      for (int i = 0; i < 2 * n * n; ++i) put_double(line, frame_[nid * 2 * n * n + i]);
      line.back() = '\n';
      os << line;
    }
  if (!os) throw std::runtime_error("atlas write failed: " + path);
}

Atlas Atlas::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open atlas file: " + path);
  std::string magic, header_line;
  std::getline(is, magic);
  if (magic != "# semiq atlas v1") throw std::runtime_error("not a semiq atlas file: " + path);
  std::getline(is, header_line);
  const json h = json::parse(header_line);

  Atlas a;
  a.n_ = h.at("n").get<int>();
  a.m_ = h.at("m").get<int>();
  a.sys_ = std::make_shared<SystemSpec>(
      a.n_, a.m_, h.at("f").get<std::vector<std::string>>(),
      h.at("g").get<std::vector<std::vector<std::string>>>(),
      h.at("epsilon").get<std::string>(),
      h.at("Q").get<std::vector<std::vector<std::string>>>());
  auto mat = [](const json& v) {
    const auto rows = v.get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd out(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < rows[i].size(); ++j)
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return out;
  };
  a.local_.P = mat(h.at("P"));
  a.local_.K = mat(h.at("K"));
  a.local_.delta = h.at("delta").get<double>();
  a.local_.margin = h.at("margin").get<double>();
  a.n_samples_ = h.at("tau_samples").get<int>();
  a.tau_ = make_tau_grid(h.at("tau_max").get<double>(), a.n_samples_);
  a.xi_dim_ = h.at("xi_dim").get<int>();
  a.xi_shape_ = h.at("xi_shape").get<std::vector<int>>();
  {
    const auto per = h.at("xi_periodic").get<std::vector<int>>();
    a.xi_periodic_.assign(per.size(), false);
    for (std::size_t i = 0; i < per.size(); ++i) a.xi_periodic_[i] = per[i] != 0;
  }
  {
    const auto xi_rows = h.at("ray_xi").get<std::vector<std::vector<double>>>();
    a.n_rays_ = static_cast<int>(xi_rows.size());
    a.ray_xi_.resize(xi_rows.size());
    for (std::size_t i = 0; i < xi_rows.size(); ++i)
      a.ray_xi_[i] = Eigen::Map<const Eigen::VectorXd>(
          xi_rows[i].data(), static_cast<Eigen::Index>(xi_rows[i].size()));
  }
  a.ray_errors_ = h.at("ray_errors").get<std::vector<std::string>>();
  a.ode_.abs_tol = h.at("abs_tol").get<double>();
  a.ode_.rel_tol = h.at("rel_tol").get<double>();
  a.escape_radius_ = h.at("escape_radius").get<double>();

  const int n = a.n_;
  const std::size_t node_count = static_cast<std::size_t>(a.n_rays_) * a.n_samples_;
  a.x_.assign(node_count * n, 0.0);
  a.p_.assign(node_count * n, 0.0);
  a.S_.assign(node_count, 0.0);
  a.detX_.assign(node_count, 0.0);
  a.frame_.assign(node_count * 2 * n * n, 0.0);
  a.valid_.assign(node_count, 0);

  std::string line;
  std::size_t seen = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("node ", 0) != 0) throw std::runtime_error("atlas file: unexpected line");
    LineReader rd{line.c_str() + 5};
    const int r = static_cast<int>(rd.next());
    const int s = static_cast<int>(rd.next());
    if (r < 0 || r >= a.n_rays_ || s < 0 || s >= a.n_samples_)
      throw std::runtime_error("atlas file: node index out of range");
    const std::size_t nid = static_cast<std::size_t>(a.node_id(r, s));
    a.valid_[nid] = rd.next() != 0.0 ? 1 : 0;
    rd.next();  // tau, reconstructed from the grid
    a.S_[nid] = rd.next();
    a.detX_[nid] = rd.next();
    for (int i = 0; i < n; ++i) a.x_[nid * n + i] = rd.next();
    for (int i = 0; i < n; ++i) a.p_[nid * n + i] = rd.next();
    for (int i = 0; i < 2 * n * n; ++i) a.frame_[nid * 2 * n * n + i] = rd.next();
    ++seen;
  }
  if (seen != node_count) throw std::runtime_error("atlas file: node count mismatch");
  a.finalize();
  return a;
}

}  // namespace semiq
