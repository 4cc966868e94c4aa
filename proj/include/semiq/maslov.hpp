#pragma once

#include <complex>
#include <functional>
#include <optional>
#include <vector>

#include "semiq/bellman.hpp"
#include "semiq/lpmanifold.hpp"

namespace semiq {

/// Rectangular node-index window [r0,r1] × [s0,s1] (inclusive) on the atlas.
struct ChartWindow {
  int r0 = 0, r1 = 0, s0 = 0, s1 = 0;
  bool contains(int r, int s) const { return r >= r0 && r <= r1 && s >= s0 && s <= s1; }
};

/// Lagrangian chart: node subset + the index set β of state coordinates that
/// are swapped for their (phase) momenta. Chart coordinates are
/// (x_α, p̃_β) with p̃ = −p, under which S_j(x_α,p̃_β) = −⟨x_β,p̃_β⟩ − S is a
/// generating function: ∂S_j/∂x_α = p̃_α, ∂S_j/∂p̃_β = −x_β.
struct ChartSpec {
  ChartWindow window;
  std::vector<int> beta;  // sorted, |β| ≤ 2
  int nu = 0;             // chain index from the reference chart, mod 4
};

/// Smallest-|β| Lagrangian coordinates valid on every node of the window:
/// greedy over |β| = 0, 1, 2 with the admissibility test
/// |det ∂(x_α,p̃_β)/∂(τ,ξ)| > 1e-8 × (Hadamard row scale) per node.
/// Throws when no admissible β exists ("chart too folded; refine grid").
ChartSpec choose_lagrangian_coords(const Atlas& atlas, const ChartWindow& window);

/// Generating-function sample at a node: −⟨x_β, p̃_β⟩ − S (= −S for β = ∅).
double generating_function(const Atlas& atlas, const ChartSpec& chart, int r, int s);

/// ∂x_β/∂p̃_β at a node by block solve on the variational frame (symmetric on
/// a Lagrangian manifold; symmetrized against roundoff).
Eigen::MatrixXd dxbeta_dpbeta(const Atlas& atlas, const ChartSpec& chart, int r, int s);

int negative_eigenvalue_count(const Eigen::MatrixXd& sym);

/// ν(chart_a, chart_b) = (negeig_a − negeig_b) mod 4 at a shared node;
/// by convention 0 for disjoint charts (call with any node only when shared).
int chart_index(const Atlas& atlas, const ChartSpec& a, const ChartSpec& b, int r, int s);

/// Weight on the manifold, as a function of (τ, ξ).
using ManifoldFn = std::function<double(double tau, double xi)>;

/// Complex amplitude with an optionally exact phase record (β = ∅ charts know
/// k·S_j in closed form, which the regularized-Bellman logarithm needs).
struct MasValue {
  std::complex<double> value{0.0, 0.0};
  double phase = 0.0;      // total phase of `value` when exact_phase
  double magnitude = 0.0;  // |value|
  bool exact_phase = false;
};

/// Sample of a 1-D chart slice at fixed x_α: chart momentum p̃, generating
/// value S_j, Jacobian J = |∂(x_α,p̃_β)/∂(τ,ξ)|, the manifold's x_β, and the
/// smooth weight (partition × cutoff × φ).
struct SliceSample {
  double p = 0.0;
  double Sj = 0.0;
  double J = 0.0;
  double xbeta = 0.0;
  double weight = 1.0;
};

/// (k/(−2πi))^{1/2} ∫ J^{−1/2} w(p̃) e^{ik(S_j(p̃) + x_β p̃)} dp̃ over the
/// sampled slice (cubic-spline interpolation; adaptive Gauss–Kronrod panels
/// with ≥ 20 points per oscillation period).
std::complex<double> oscillatory_slice_integral(const std::vector<SliceSample>& slice,
                                                double xbeta_query, double k);

/// Extracts the chart slice {x_α(τ,ξ) = x_α of query} for a |β|=1 chart on an
/// n=2 atlas (marching the window cells), weighted by `weight` and a smooth
/// boundary cutoff. Samples ascend in p̃.
std::vector<SliceSample> chart_slice(const Atlas& atlas, const ChartSpec& chart,
                                     const Eigen::VectorXd& x, const ManifoldFn& weight);

/// Sub-canonical operator value at x. β = ∅: J^{−1/2} e^{ikS_j} φ at the
/// chart's branch (exact phase reported); |β| = 1: oscillatory slice integral.
MasValue subcanonical_apply(const Atlas& atlas, const ChartSpec& chart, const ManifoldFn& phi,
                            const Eigen::VectorXd& x, double k);

/// Canonical operator: Σ_j e^{−iπν_j/2} · Mas_k(Ω_j)(e_j·φ).
struct WeightedChart {
  ChartSpec chart;
  ManifoldFn e;  // partition weight subordinate to the chart window
};
MasValue canonical_apply(const Atlas& atlas, const std::vector<WeightedChart>& charts,
                         const ManifoldFn& phi, const Eigen::VectorXd& x, double k);

// ---------------------------------------------------------------------------

/// Ball cover of P(Cr(B)) with the exterior sets d(x_μ, ε_μ/2) and the smooth
/// partition {w_μ, v_μ}, Σ_μ(w_μ+v_μ) ≡ 1. Built from the bump
/// t ↦ exp(−1/(1−t²)).
class BumpCover {
 public:
  struct Bump {
    Eigen::VectorXd center;
    double radius = 0.0;
    int component = 0;  // chart component the ball projects into
  };

  const std::vector<Bump>& bumps() const { return bumps_; }
  bool empty() const { return bumps_.empty(); }

  double w(int mu, const Eigen::VectorXd& x) const;  // normalized w_μ
  double v(int mu, const Eigen::VectorXd& x) const;  // normalized v_μ
  double sum_w(const Eigen::VectorXd& x) const;
  double sum_v(const Eigen::VectorXd& x) const;
  /// Σ of w_μ over the bumps of one chart component.
  double sum_w_component(int component, const Eigen::VectorXd& x) const;

  friend class FieldBuilder;
  std::vector<Bump> bumps_;
};

/// Maslov-regularized Bellman field B(x,k): exact B off the bumps, the
/// log-phase of the canonical operator inside them.
class RegularizedField {
 public:
  struct Component {
    ChartSpec fold_chart;
    ChartSpec reference;   // β = ∅ chart fixing the phase convention
    int nu = 0;            // chain index reference → fold chart
  };

  double k = 100.0;
  const BumpCover& cover() const { return cover_; }
  const std::vector<Component>& components() const { return components_; }

  struct Value {
    double B = 0.0;             // unregularized value (min-branch S)
    Eigen::VectorXd gradB;
    double Bk = 0.0;            // regularized value
    Eigen::VectorXd gradBk;
    bool in_bump = false;
    int chart_id = -1;
    bool critical = false;
  };

  /// Value + gradient. Off all bumps the pair (B, ∇B) is returned exactly
  /// (bit-identical to bellman_query); inside, the §-formula value with the
  /// gradient by central differences (step 1e-5).
  Value evaluate(const Eigen::VectorXd& x, const QueryOptions& opts = {}) const;

  /// Value only (no gradient differences).
  Value evaluate_value(const Eigen::VectorXd& x, const QueryOptions& opts = {}) const;

  /// Re{(1/(ik)) ln Mas_k(𝓛_j)} with the tracked log branch (β=∅ charts:
  /// exact; otherwise unwrapped against −k·B_anchor).
  double log_mas_real(int component, const Eigen::VectorXd& x, double B_anchor) const;

  const Atlas* atlas = nullptr;

  friend class FieldBuilder;
  BumpCover cover_;
  std::vector<Component> components_;
};

struct BumpCoverPolicy {
  double radius_scale = 2.0;   // ε_μ = scale × local node spacing
  double min_radius_factor = 0.05;  // shrink floor before "refine atlas"
};

/// Greedy cover of the Cr(B) members of the caustic cloud; each ball is
/// shrunk until it projects into an admissible |β|≥1 chart, and the fold
/// charts get their indices from an adjacent β=∅ reference chart.
RegularizedField build_regularized_field(const Atlas& atlas, const CausticCloud& cloud,
                                         double k, const BumpCoverPolicy& policy = {});

}  // namespace semiq
