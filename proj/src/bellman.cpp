#include "semiq/bellman.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace semiq {

namespace {

// Cubic Hermite on [0,1]; endpoint slopes are per unit of the underlying
// variable and `h` is the interval length.
inline double hermite_value(double y0, double d0, double y1, double d1, double h, double t) {
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * h * d0 + (-2 * t3 + 3 * t2) * y1 +
         (t3 - t2) * h * d1;
}
inline double hermite_slope(double y0, double d0, double y1, double d1, double h, double t) {
  const double t2 = t * t;
  return ((6 * t2 - 6 * t) * y0 + (3 * t2 - 4 * t + 1) * h * d0 + (-6 * t2 + 6 * t) * y1 +
          (3 * t2 - 2 * t) * h * d1) /
         h;
}

struct CornerData {
  Eigen::VectorXd x, p, xdot, pdot;
  double S = 0, Sdot = 0;
  Eigen::VectorXd x_xi, p_xi, xdot_xi, pdot_xi;
  double S_xi = 0, Sdot_xi = 0;
};

}  // namespace

/// Per-cell interpolation state: corner data fetched once, then evaluated at
/// any (u,v) without touching the atlas again.
class CellEvaluator {
 public:
  CellEvaluator(const Atlas& a, int cell_index)
      : atlas_(a), n_(a.n()), xd_(a.xi_dim()), cell_(a.cell(cell_index)) {
    dtau_ = a.tau_step();
    fetch(corners_[0], cell_.r, cell_.s);
    fetch(corners_[1], cell_.r, cell_.s + 1);
    if (xd_ == 1) {
      const int r1 = a.ray_after(cell_.r);
      dxi_ = (a.xi(r1) - a.xi(cell_.r)).value();
      if (dxi_ <= 0.0) dxi_ += 2.0 * std::numbers::pi;
      fetch(corners_[2], r1, cell_.s);
      fetch(corners_[3], r1, cell_.s + 1);
    }
  }

  const Atlas::Cell& cell() const { return cell_; }
  double dtau() const { return dtau_; }
  double dxi() const { return dxi_; }

  CellPointData eval(double u, double v) const {
    CellPointData out;
    out.dx.resize(n_, 1 + xd_);
    out.dp.resize(n_, 1 + xd_);
    out.dS.resize(1 + xd_);
    if (xd_ == 0) {
      const CornerData& n0 = corners_[0];
      const CornerData& n1 = corners_[1];
      out.x.resize(n_);
      out.p.resize(n_);
      for (int i = 0; i < n_; ++i) {
        out.x[i] = hermite_value(n0.x[i], n0.xdot[i], n1.x[i], n1.xdot[i], dtau_, u);
        out.dx(i, 0) = hermite_slope(n0.x[i], n0.xdot[i], n1.x[i], n1.xdot[i], dtau_, u);
        out.p[i] = hermite_value(n0.p[i], n0.pdot[i], n1.p[i], n1.pdot[i], dtau_, u);
        out.dp(i, 0) = hermite_slope(n0.p[i], n0.pdot[i], n1.p[i], n1.pdot[i], dtau_, u);
      }
      out.S = hermite_value(n0.S, n0.Sdot, n1.S, n1.Sdot, dtau_, u);
      out.dS[0] = hermite_slope(n0.S, n0.Sdot, n1.S, n1.Sdot, dtau_, u);
      out.detX = out.dx(0, 0);
      return out;
    }

    // Hermite across ξ at both τ levels, then Hermite along τ. The blended
    // τ-derivatives keep the composite 4th order in both directions.
    struct Level {
      double x[2], p[2], xdot[2], pdot[2], x_v[2], p_v[2], xdot_v[2], pdot_v[2];
      double S, Sdot, S_v, Sdot_v;
    } lv[2];
    for (int L = 0; L < 2; ++L) {
      const CornerData& a0 = corners_[L];      // (r, s+L)
      const CornerData& a1 = corners_[2 + L];  // (r1, s+L)
      for (int i = 0; i < n_; ++i) {
        lv[L].x[i] = hermite_value(a0.x[i], a0.x_xi[i], a1.x[i], a1.x_xi[i], dxi_, v);
        lv[L].x_v[i] = hermite_slope(a0.x[i], a0.x_xi[i], a1.x[i], a1.x_xi[i], dxi_, v);
        lv[L].p[i] = hermite_value(a0.p[i], a0.p_xi[i], a1.p[i], a1.p_xi[i], dxi_, v);
        lv[L].p_v[i] = hermite_slope(a0.p[i], a0.p_xi[i], a1.p[i], a1.p_xi[i], dxi_, v);
        lv[L].xdot[i] =
            hermite_value(a0.xdot[i], a0.xdot_xi[i], a1.xdot[i], a1.xdot_xi[i], dxi_, v);
        lv[L].xdot_v[i] =
            hermite_slope(a0.xdot[i], a0.xdot_xi[i], a1.xdot[i], a1.xdot_xi[i], dxi_, v);
        lv[L].pdot[i] =
            hermite_value(a0.pdot[i], a0.pdot_xi[i], a1.pdot[i], a1.pdot_xi[i], dxi_, v);
        lv[L].pdot_v[i] =
            hermite_slope(a0.pdot[i], a0.pdot_xi[i], a1.pdot[i], a1.pdot_xi[i], dxi_, v);
      }
      lv[L].S = hermite_value(a0.S, a0.S_xi, a1.S, a1.S_xi, dxi_, v);
      lv[L].S_v = hermite_slope(a0.S, a0.S_xi, a1.S, a1.S_xi, dxi_, v);
      lv[L].Sdot = hermite_value(a0.Sdot, a0.Sdot_xi, a1.Sdot, a1.Sdot_xi, dxi_, v);
      lv[L].Sdot_v = hermite_slope(a0.Sdot, a0.Sdot_xi, a1.Sdot, a1.Sdot_xi, dxi_, v);
    }
    out.x.resize(n_);
    out.p.resize(n_);
    for (int i = 0; i < n_; ++i) {
      out.x[i] = hermite_value(lv[0].x[i], lv[0].xdot[i], lv[1].x[i], lv[1].xdot[i], dtau_, u);
      out.dx(i, 0) =
          hermite_slope(lv[0].x[i], lv[0].xdot[i], lv[1].x[i], lv[1].xdot[i], dtau_, u);
      out.dx(i, 1) =
          hermite_value(lv[0].x_v[i], lv[0].xdot_v[i], lv[1].x_v[i], lv[1].xdot_v[i], dtau_, u);
      out.p[i] = hermite_value(lv[0].p[i], lv[0].pdot[i], lv[1].p[i], lv[1].pdot[i], dtau_, u);
      out.dp(i, 0) =
          hermite_slope(lv[0].p[i], lv[0].pdot[i], lv[1].p[i], lv[1].pdot[i], dtau_, u);
      out.dp(i, 1) =
          hermite_value(lv[0].p_v[i], lv[0].pdot_v[i], lv[1].p_v[i], lv[1].pdot_v[i], dtau_, u);
    }
    out.S = hermite_value(lv[0].S, lv[0].Sdot, lv[1].S, lv[1].Sdot, dtau_, u);
    out.dS[0] = hermite_slope(lv[0].S, lv[0].Sdot, lv[1].S, lv[1].Sdot, dtau_, u);
    out.dS[1] = hermite_value(lv[0].S_v, lv[0].Sdot_v, lv[1].S_v, lv[1].Sdot_v, dtau_, u);
    out.detX = out.dx.determinant();
    return out;
  }

  /// Smallest distance from the query to a cell corner, against the largest
  /// corner spread; cheap prefilter for inflated bounding boxes.
  bool plausibly_contains(const Eigen::VectorXd& xq) const {
    double min_d = std::numeric_limits<double>::infinity(), spread = 0.0;
    const int count = xd_ == 0 ? 2 : 4;
    for (int i = 0; i < count; ++i) {
      min_d = std::min(min_d, (corners_[i].x - xq).norm());
      for (int j = i + 1; j < count; ++j)
        spread = std::max(spread, (corners_[i].x - corners_[j].x).norm());
    }
    return min_d <= 1.5 * spread;
  }

 private:
  void fetch(CornerData& c, int r, int s) {
    c.x = atlas_.x(r, s);
    c.p = atlas_.p(r, s);
    c.xdot = atlas_.xdot(r, s);
    c.pdot = atlas_.pdot(r, s);
    c.S = atlas_.S(r, s);
    c.Sdot = atlas_.Sdot(r, s);
    if (xd_ == 1) {
      const auto fr = atlas_.frame(r, s);
      c.x_xi = fr.col(1).head(n_);
      c.p_xi = fr.col(1).tail(n_);
      c.xdot_xi = atlas_.dxdot_dxi(r, s).col(0);
      c.pdot_xi = atlas_.dpdot_dxi(r, s).col(0);
      c.S_xi = c.p.dot(c.x_xi);  // dS = <p, dx> on the manifold
      c.Sdot_xi = atlas_.dSdot_dxi(r, s)[0];
    }
  }

  const Atlas& atlas_;
  int n_, xd_;
  Atlas::Cell cell_;
  double dtau_ = 0, dxi_ = 0;
  CornerData corners_[4];
};

CellPointData cell_eval(const Atlas& atlas, int cell_index, double u, double v) {
  return CellEvaluator(atlas, cell_index).eval(u, v);
}

namespace {

struct RawRoot {
  int cell = -1;
  double u = 0, v = 0;
  CellPointData data;
  double residual = 0;
};

bool newton_from(const CellEvaluator& ce, int xd, const Eigen::VectorXd& xq,
                 const QueryOptions& opts, double u0, double v0, RawRoot& out) {
  double u = u0, v = v0;
  CellPointData d = ce.eval(u, v);
  double res = (d.x - xq).norm();
  const double tol = opts.tol * (1.0 + xq.norm());

  for (int it = 0; it < opts.max_newton && res > tol; ++it) {
    Eigen::VectorXd step;
    if (xd == 0) {
      if (d.dx(0, 0) == 0.0) return false;
      step = (xq - d.x) / d.dx(0, 0);
    } else {
      const Eigen::FullPivLU<Eigen::MatrixXd> lu(d.dx);
      if (!lu.isInvertible()) return false;
      step = lu.solve(xq - d.x);
    }
    double du = step[0] / ce.dtau();
    double dv = xd == 1 ? step[1] / ce.dxi() : 0.0;
    for (int halving = 0; halving < 8; ++halving) {  // damp on residual increase
      const double nu = std::clamp(u + du, -0.5, 1.5);
      const double nv = xd == 1 ? std::clamp(v + dv, -0.5, 1.5) : 0.0;
      const CellPointData nd = ce.eval(nu, nv);
      const double nres = (nd.x - xq).norm();
      if (nres < res || halving == 7) {
        u = nu;
        v = nv;
        d = nd;
        res = nres;
        break;
      }
      du *= 0.5;
      dv *= 0.5;
    }
  }
  const double slack = 0.02;
  if (res > tol) return false;
  if (u < -slack || u > 1.0 + slack) return false;
  if (xd == 1 && (v < -slack || v > 1.0 + slack)) return false;
  out.u = u;
  out.v = v;
  out.data = d;
  out.residual = res;
  return true;
}

}  // namespace

std::vector<Branch> enumerate_branches(const Atlas& a, const Eigen::VectorXd& xq,
                                       const QueryOptions& opts) {
  if (a.xi_dim() > 1)
    throw std::runtime_error("branch enumeration requires a grid atlas with xi_dim <= 1");
  const double vq = xq.dot(a.local().P * xq);
  if (vq < a.local().delta * (1.0 - 1e-12))
    throw InsideLevelSetError(
        "query lies inside the local region {V < delta}; use the local solution");
  const std::vector<int> cells = a.candidate_cells(xq);
  if (cells.empty()) throw OutsideRegionError("query outside synthesized region");

  std::vector<RawRoot> roots;
  for (int c : cells) {
    const CellEvaluator ce(a, c);
    if (!ce.plausibly_contains(xq)) continue;
    // Folded cells (corner detX of both signs) can hold two preimages.
    const Atlas::Cell cell = a.cell(c);
    bool folded = false;
    {
      const double d00 = a.detX(cell.r, cell.s);
      const double d01 = a.detX(cell.r, cell.s + 1);
      double lo = std::min(d00, d01), hi = std::max(d00, d01);
      if (a.xi_dim() == 1) {
        const int r1 = a.ray_after(cell.r);
        lo = std::min({lo, a.detX(r1, cell.s), a.detX(r1, cell.s + 1)});
        hi = std::max({hi, a.detX(r1, cell.s), a.detX(r1, cell.s + 1)});
      }
      folded = lo < 0.0 && hi > 0.0;
    }
    static constexpr double kStarts[][2] = {
        {0.5, 0.5}, {0.2, 0.2}, {0.8, 0.2}, {0.2, 0.8}, {0.8, 0.8}};
    const int n_starts = folded ? 5 : 1;
    for (int k = 0; k < n_starts; ++k) {
      RawRoot root;
      if (newton_from(ce, a.xi_dim(), xq, opts, kStarts[k][0], kStarts[k][1], root)) {
        root.cell = c;
        roots.push_back(std::move(root));
      }
    }
  }

  const double dtau = a.tau_step();
  const double dedup = a.cell_diameter_tauxi() / 10.0;
  std::vector<Branch> branches;
  for (const RawRoot& root : roots) {
    const Atlas::Cell cell = a.cell(root.cell);
    Branch b;
    b.ray = cell.r;
    b.sample = cell.s;
    b.tau = a.tau(cell.s) + root.u * dtau;
    if (a.xi_dim() == 1) {
      double dxi = (a.xi(a.ray_after(cell.r)) - a.xi(cell.r)).value();
      if (dxi <= 0.0) dxi += 2.0 * std::numbers::pi;
      b.xi = a.xi(cell.r).value() + root.v * dxi;
    } else {
      b.xi = a.xi(cell.r).value();
    }
    b.x_fit = root.data.x;
    b.p = root.data.p;
    b.S = root.data.S;
    b.detX = root.data.detX;
    b.distance_to_x = root.residual;

    bool dup = false;
    for (Branch& existing : branches) {
      double dxi_pair = b.xi - existing.xi;
      if (a.xi_dim() == 1) {
        dxi_pair = std::remainder(dxi_pair, 2.0 * std::numbers::pi);
      } else if (b.ray != existing.ray) {
        continue;  // n=1: distinct rays are distinct branches
      }
      const double dist = std::hypot(b.tau - existing.tau, dxi_pair);
      if (dist < dedup) {
        dup = true;
        if (b.distance_to_x < existing.distance_to_x) existing = b;
        break;
      }
    }
    if (!dup) branches.push_back(std::move(b));
  }
  std::sort(branches.begin(), branches.end(),
            [](const Branch& l, const Branch& r) { return l.S < r.S; });
  return branches;
}

BellmanResult bellman_query(const Atlas& a, const Eigen::VectorXd& xq, const QueryOptions& opts) {
  BellmanResult res;
  res.branches = enumerate_branches(a, xq, opts);
  if (res.branches.empty()) throw OutsideRegionError("query outside synthesized region");
  const Branch& best = res.branches.front();
  res.value = best.S;
  res.gradient = best.p;
  res.minimizer_critical = std::abs(best.detX) < opts.critical_factor * a.median_abs_detX();
  if (res.branches.size() > 1) {
    res.gap = res.branches[1].S - best.S;
    res.tie = res.gap <= opts.tie_rel * std::max(1.0, std::abs(res.value));
  }
  return res;
}

// ---------------------------------------------------------------------------
// caustics

namespace {

// det of the x-rows of a linearly interpolated frame between two nodes
struct FramePair {
  Eigen::MatrixXd f0, f1;
  int n;
  double det_at(double t) const {
    const Eigen::MatrixXd f = (1.0 - t) * f0 + t * f1;
    return f.topRows(n).determinant();
  }
};

double bisect_det(const FramePair& fp, double& det_out) {
  double lo = 0.0, hi = 1.0;
  double flo = fp.det_at(lo);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fmid = fp.det_at(mid);
    if (std::abs(fmid) < 1e-10) {
      det_out = fmid;
      return mid;
    }
    if ((flo < 0) != (fmid < 0)) {
      hi = mid;
    } else {
      lo = mid;
      flo = fmid;
    }
  }
  det_out = fp.det_at(0.5 * (lo + hi));
  return 0.5 * (lo + hi);
}

}  // namespace

std::vector<const CausticPoint*> CausticCloud::crb_members() const {
  std::vector<const CausticPoint*> out;
  for (const auto& c : points)
    if (c.crb) out.push_back(&c);
  return out;
}

CausticCloud detect_caustics(const Atlas& a, const QueryOptions& opts) {
  CausticCloud cloud;
  const int n = a.n();
  const double dtau = a.tau_step();

  auto spacing_at = [&](int r, int s) {
    double sp = (a.x(r, std::min(s + 1, a.sample_count() - 1)) - a.x(r, s)).norm();
    if (a.xi_dim() == 1) {
      const int r1 = a.ray_after(r);
      if (a.valid(r1, s)) sp = std::max(sp, (a.x(r1, s) - a.x(r, s)).norm());
    }
    return sp;
  };

  auto emit = [&](int r, int s, char dir, const FramePair& fp) {
    CausticPoint cp;
    double det = 0.0;
    const double troot = bisect_det(fp, det);
    cp.detX = det;
    cp.direction = dir;
    cp.ray = r;
    cp.sample = s;
    if (dir == 't') {
      cp.tau = a.tau(s) + troot * dtau;
      cp.xi = a.xi(r).value();
      const Eigen::VectorXd x0 = a.x(r, s), x1 = a.x(r, s + 1);
      const Eigen::VectorXd d0 = a.xdot(r, s), d1 = a.xdot(r, s + 1);
      cp.x.resize(n);
      for (int i = 0; i < n; ++i)
        cp.x[i] = hermite_value(x0[i], d0[i], x1[i], d1[i], dtau, troot);
    } else {
      const int r1 = a.ray_after(r);
      double dxi = (a.xi(r1) - a.xi(r)).value();
      if (dxi <= 0.0) dxi += 2.0 * std::numbers::pi;
      cp.tau = a.tau(s);
      cp.xi = a.xi(r).value() + troot * dxi;
      cp.x = (1.0 - troot) * a.x(r, s) + troot * a.x(r1, s);
    }
    cp.node_spacing = spacing_at(r, s);
    // Cr(B) membership: the critical branch at the projection (smallest
    // |detX|, the merging pair) realizes the minimum. The pair's S exceeds
    // the minimum only by the bisection position error, hence the relative
    // tolerance.
    try {
      const BellmanResult q = bellman_query(a, cp.x, opts);
      const Branch* crit = &q.branches.front();
      for (const Branch& b : q.branches)
        if (std::abs(b.detX) < std::abs(crit->detX)) crit = &b;
      double max_det = 0.0;
      for (const Branch& b : q.branches) max_det = std::max(max_det, std::abs(b.detX));
      const bool is_fold_branch =
          std::abs(crit->detX) < 0.2 * max_det || q.branches.size() == 1;
      cp.crb =
          is_fold_branch && crit->S - q.value <= 1e-3 * std::max(1.0, std::abs(q.value));
    } catch (const std::exception&) {
      cp.crb = false;
    }
    cloud.points.push_back(std::move(cp));
  };

  for (int r = 0; r < a.ray_count(); ++r) {
    for (int s = 0; s + 1 < a.sample_count(); ++s) {
      if (!a.valid(r, s) || !a.valid(r, s + 1)) continue;
      const double d0 = a.detX(r, s), d1 = a.detX(r, s + 1);
      if (d0 == 0.0 || (d0 < 0) != (d1 < 0)) {
        FramePair fp{a.frame(r, s), a.frame(r, s + 1), n};
        emit(r, s, 't', fp);
      }
    }
  }
  if (a.xi_dim() == 1) {
    const int ray_cells = a.xi_periodic()[0] ? a.ray_count() : a.ray_count() - 1;
    for (int r = 0; r < ray_cells; ++r) {
      const int r1 = a.ray_after(r);
      for (int s = 1; s < a.sample_count(); ++s) {
        if (!a.valid(r, s) || !a.valid(r1, s)) continue;
        const double d0 = a.detX(r, s), d1 = a.detX(r1, s);
        if ((d0 < 0) != (d1 < 0)) {
          FramePair fp{a.frame(r, s), a.frame(r1, s), n};
          emit(r, s, 'x', fp);
        }
      }
    }
  }
  return cloud;
}

}  // namespace semiq
