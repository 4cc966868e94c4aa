#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "semiq/bvh.hpp"
#include "semiq/hamflow.hpp"
#include "semiq/localsolve.hpp"
#include "semiq/ode.hpp"
#include "semiq/system.hpp"

namespace semiq {

/// Parametrization ξ ↦ x₀(ξ) = √δ · P^{−1/2} · ω(ξ) of the level set {V=δ}.
/// ω is a unit-sphere chart: n=1 two points; n=2 the angle θ ∈ [0,2π)
/// periodic; n=3 spherical angles (azimuth periodic, polar open with the
/// poles excluded). Grid builders for n>3 are out of scope; build_atlas
/// accepts explicit seed lists instead.
class SeedChart {
 public:
  SeedChart(int n, const Eigen::MatrixXd& P, double delta, const std::vector<int>& xi_counts);

  int n() const { return n_; }
  int xi_dim() const { return xi_dim_; }
  const std::vector<int>& shape() const { return shape_; }
  const std::vector<bool>& periodic() const { return periodic_; }
  int ray_count() const;
  double delta() const { return delta_; }
  const Eigen::MatrixXd& p_inv_sqrt() const { return p_inv_sqrt_; }

  Eigen::VectorXd xi_of_ray(int ray) const;
  Eigen::VectorXd omega(const Eigen::VectorXd& xi) const;
  Eigen::MatrixXd domega_dxi(const Eigen::VectorXd& xi) const;  // n × xi_dim
  Eigen::VectorXd seed_point(const Eigen::VectorXd& xi) const;
  Eigen::MatrixXd seed_tangent(const Eigen::VectorXd& xi) const;  // n × xi_dim

 private:
  int n_, xi_dim_;
  std::vector<int> shape_;
  std::vector<bool> periodic_;
  Eigen::MatrixXd p_inv_sqrt_;
  double delta_;
};

/// Initial costate p₀ = λ₊ q, q = ∇V(x₀) = 2P x₀, with λ₊ the root of
/// H(x₀, λq) = 0 that makes the reverse-time flow leave the level set
/// (⟨q, ẋ(0)⟩ > 0). Throws when ⟨q, Rq⟩ is numerically zero while ⟨q,f⟩ ≥ 0
/// ("level set point not actuated").
Eigen::VectorXd seed_momentum(const SystemSpec& s, const LocalSolution& local,
                              const Eigen::VectorXd& x0);

/// Seed with analytic ξ-tangents of (x₀, p₀), differentiating λ₊(ξ)·q(ξ)
/// through the root formula by the chain rule on jets.
struct SeedData {
  Eigen::VectorXd x0, p0;
  Eigen::MatrixXd dx0_dxi, dp0_dxi;  // n × xi_dim
};
SeedData seed_with_tangents(const SystemSpec& s, const LocalSolution& local,
                            const SeedChart& chart, const Eigen::VectorXd& xi);

struct AtlasBuildParams {
  std::vector<int> xi_counts;  // per ξ axis (empty for n=1)
  /// n=2 only: explicit ascending angle list overriding xi_counts (supports
  /// non-uniform grids and angular windows; periodic only for a full circle).
  std::vector<double> xi_values;
  bool xi_window_periodic = false;
  double tau_max = 2.0;
  int tau_samples = 801;  // including τ=0
  OdeOptions ode;
  double escape_radius = 0.0;  // 0 → 10 · max seed norm · e^{τ_max}
  int threads = 0;
};

/// The Lagrange–Pontryagin atlas: a rectangular (τ, ξ) grid of bicharacteristic
/// nodes with actions, variational frames and a spatial index over projected
/// grid cells. Immutable after construction; queries are thread-safe.
class Atlas {
 public:
  int n() const { return n_; }
  int m() const { return m_; }
  int ray_count() const { return n_rays_; }
  int sample_count() const { return n_samples_; }
  int xi_dim() const { return xi_dim_; }
  const std::vector<int>& xi_shape() const { return xi_shape_; }
  const std::vector<bool>& xi_periodic() const { return xi_periodic_; }
  const SystemSpec& system() const { return *sys_; }
  const std::shared_ptr<const SystemSpec>& system_ptr() const { return sys_; }
  const LocalSolution& local() const { return local_; }
  const OdeOptions& ode_options() const { return ode_; }
  double escape_radius() const { return escape_radius_; }
  double tau_max() const { return tau_.back(); }
  double tau_step() const { return tau_[1] - tau_[0]; }

  double tau(int s) const { return tau_[static_cast<std::size_t>(s)]; }
  const Eigen::VectorXd& xi(int r) const { return ray_xi_[static_cast<std::size_t>(r)]; }
  const std::vector<std::string>& ray_errors() const { return ray_errors_; }

  int node_id(int r, int s) const { return r * n_samples_ + s; }
  bool valid(int r, int s) const { return valid_[static_cast<std::size_t>(node_id(r, s))] != 0; }
  Eigen::Map<const Eigen::VectorXd> x(int r, int s) const { return map_n(x_, r, s); }
  Eigen::Map<const Eigen::VectorXd> p(int r, int s) const { return map_n(p_, r, s); }
  double S(int r, int s) const { return S_[static_cast<std::size_t>(node_id(r, s))]; }
  double detX(int r, int s) const { return detX_[static_cast<std::size_t>(node_id(r, s))]; }
  /// full 2n×n frame, τ-column first
  Eigen::Map<const Eigen::MatrixXd> frame(int r, int s) const {
    return {frame_.data() + static_cast<std::size_t>(node_id(r, s)) * 2 * n_ * n_,
            2 * n_, n_};
  }
  // derived per-node caches (recomputed after build/load, not serialized)
  Eigen::Map<const Eigen::VectorXd> xdot(int r, int s) const { return map_n(xdot_, r, s); }
  Eigen::Map<const Eigen::VectorXd> pdot(int r, int s) const { return map_n(pdot_, r, s); }
  double Sdot(int r, int s) const { return Sdot_[static_cast<std::size_t>(node_id(r, s))]; }
  /// ∂ẋ/∂ξ etc., n × xi_dim
  Eigen::Map<const Eigen::MatrixXd> dxdot_dxi(int r, int s) const { return map_nk(dxdot_, r, s); }
  Eigen::Map<const Eigen::MatrixXd> dpdot_dxi(int r, int s) const { return map_nk(dpdot_, r, s); }
  Eigen::Map<const Eigen::VectorXd> dSdot_dxi(int r, int s) const {
    return {dSdot_.data() + static_cast<std::size_t>(node_id(r, s)) * xi_dim_, xi_dim_};
  }
  /// ∂S/∂ξ = ⟨p, ∂x/∂ξ⟩ (exact on the manifold)
  Eigen::VectorXd dS_dxi(int r, int s) const;

  /// |detX| below this at a seed (or anywhere) marks the node critical.
  bool critical(int r, int s) const { return std::abs(detX(r, s)) < 1e-12; }
  double median_abs_detX() const { return median_abs_detx_; }

  // --- cells -------------------------------------------------------------
  // A cell spans τ ∈ [s, s+1] and, when xi_dim = 1, rays {r, r+1 (mod R)}.
  struct Cell {
    int r = 0, s = 0;
  };
  int cell_count() const { return static_cast<int>(cells_.size()); }
  const Cell& cell(int c) const { return cells_[static_cast<std::size_t>(c)]; }
  /// Cell with lower corner (r, s), or -1 when absent (invalid corner nodes).
  int cell_index(int r, int s) const {
    const std::size_t k = static_cast<std::size_t>(r) * (n_samples_ - 1) + s;
    return k < cell_lookup_.size() ? cell_lookup_[k] : -1;
  }
  int ray_after(int r) const { return (r + 1) % n_rays_; }
  /// Cells whose (inflated) projected bounding box contains x.
  std::vector<int> candidate_cells(const Eigen::VectorXd& x) const { return tree_.query(x); }
  bool covers(const Eigen::VectorXd& x) const;
  double cell_diameter_tauxi() const;  // (Δτ, Δξ) diagonal, for dedup radii

  /// Trapezoidal circulation of ⟨p,dx⟩ around the grid quadrilateral with
  /// lower corner (r, s). Zero for xi_dim = 0 (degenerate quads).
  double loop_integral(int r, int s) const;

  // --- i/o ---------------------------------------------------------------
  void save(const std::string& path) const;
  static Atlas load(const std::string& path);

  friend Atlas build_atlas(const std::shared_ptr<const SystemSpec>& sys,
                           const LocalSolution& local, const AtlasBuildParams& params);
  friend Atlas build_atlas_from_seeds(const std::shared_ptr<const SystemSpec>& sys,
                                      const LocalSolution& local,
                                      const std::vector<Eigen::VectorXd>& seeds,
                                      const AtlasBuildParams& params);
  /// In-place node mutation hook for fault-injection tests and tooling.
  void corrupt_S(int r, int s, double factor) {
    S_[static_cast<std::size_t>(node_id(r, s))] *= factor;
  }

 private:
  Eigen::Map<const Eigen::VectorXd> map_n(const std::vector<double>& a, int r, int s) const {
    return {a.data() + static_cast<std::size_t>(node_id(r, s)) * n_, n_};
  }
  Eigen::Map<const Eigen::MatrixXd> map_nk(const std::vector<double>& a, int r, int s) const {
    return {a.data() + static_cast<std::size_t>(node_id(r, s)) * n_ * xi_dim_, n_, xi_dim_};
  }
  void finalize();  // derived caches, cells, spatial index

  std::shared_ptr<const SystemSpec> sys_;
  LocalSolution local_;
  int n_ = 0, m_ = 0, n_rays_ = 0, n_samples_ = 0, xi_dim_ = 0;
  std::vector<int> xi_shape_;
  std::vector<bool> xi_periodic_;
  std::vector<double> tau_;
  std::vector<Eigen::VectorXd> ray_xi_;
  std::vector<std::string> ray_errors_;
  OdeOptions ode_;
  double escape_radius_ = 0.0;

  std::vector<double> x_, p_, S_, detX_, frame_;
  std::vector<uint8_t> valid_;

  std::vector<double> xdot_, pdot_, Sdot_, dxdot_, dpdot_, dSdot_;
  double median_abs_detx_ = 0.0;
  std::vector<Cell> cells_;
  std::vector<int> cell_lookup_;
  AabbTree tree_;
};

/// Seeds every grid ξ via seed_momentum, integrates to τ_max sampling a
/// uniform τ grid, and assembles the atlas. Integrator failures are recorded
/// per ray (gaps marked) and the atlas is still returned.
Atlas build_atlas(const std::shared_ptr<const SystemSpec>& sys, const LocalSolution& local,
                  const AtlasBuildParams& params);

/// Explicit seed-list variant (any n): rays only, no transverse frame
/// columns, so cell-based queries are unavailable.
Atlas build_atlas_from_seeds(const std::shared_ptr<const SystemSpec>& sys,
                             const LocalSolution& local,
                             const std::vector<Eigen::VectorXd>& seeds,
                             const AtlasBuildParams& params);

}  // namespace semiq
