#pragma once

#include <Eigen/Dense>
#include <vector>

#include "semiq/lpmanifold.hpp"

namespace semiq {

/// One preimage point of the natural projection (x,p) ↦ x on the atlas,
/// refined off-grid by Newton iteration in (τ, ξ).
struct Branch {
  double tau = 0.0;
  double xi = 0.0;  // chart ξ (ray label ±1 for n=1)
  int ray = 0, sample = 0;
  Eigen::VectorXd x_fit;
  Eigen::VectorXd p;
  double S = 0.0;
  double detX = 0.0;
  double distance_to_x = 0.0;
};

struct BellmanResult {
  double value = 0.0;
  Eigen::VectorXd gradient;
  std::vector<Branch> branches;    // ascending in S
  bool minimizer_critical = false; // |detX| of the min branch below threshold
  bool tie = false;                // best and second-best S nearly equal
  double gap = std::numeric_limits<double>::infinity();
};

struct QueryOptions {
  double tol = 1e-9;       // residual tolerance, scaled by (1 + |x|)
  int max_newton = 25;
  double critical_factor = 1e-6;  // threshold = factor * median |detX|
  double tie_rel = 1e-7;
};

struct OutsideRegionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InsideLevelSetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// All branches of P⁻¹(x): Newton per candidate cell with the variational
/// frame as Jacobian, Hermite interpolation along τ (and across ξ for n=2),
/// deduplicated at cell-size/10 in (τ,ξ).
std::vector<Branch> enumerate_branches(const Atlas& atlas, const Eigen::VectorXd& x,
                                       const QueryOptions& opts = {});

/// B(x) = min branch S, ∇B = its costate. Throws InsideLevelSetError for
/// {V < δ} queries and OutsideRegionError when no branch exists.
BellmanResult bellman_query(const Atlas& atlas, const Eigen::VectorXd& x,
                            const QueryOptions& opts = {});

/// Interpolated node data inside one atlas cell; u ∈ [0,1] along τ,
/// v ∈ [0,1] across ξ (ignored when xi_dim = 0). Fourth-order in both
/// directions (value + first-derivative Hermite from the variational data).
struct CellPointData {
  Eigen::VectorXd x, p;
  double S = 0.0;
  Eigen::MatrixXd dx;  // n × (1 + xi_dim): ∂x/∂τ, ∂x/∂ξ
  Eigen::MatrixXd dp;
  Eigen::VectorXd dS;  // 1 + xi_dim
  double detX = 0.0;
};
CellPointData cell_eval(const Atlas& atlas, int cell_index, double u, double v);

struct CausticPoint {
  Eigen::VectorXd x;
  double tau = 0.0, xi = 0.0;
  int ray = 0, sample = 0;
  double detX = 0.0;        // residual after bisection
  double node_spacing = 0.0;
  bool crb = false;          // the minimizing branch at the projection is critical
  char direction = 't';      // 't': τ-adjacent pair, 'x': ξ-adjacent pair
};

struct CausticCloud {
  std::vector<CausticPoint> points;
  std::vector<const CausticPoint*> crb_members() const;
};

/// Sign changes of detX between τ- or ξ-adjacent nodes, bisected on the
/// interpolated frame to |detX| < 1e-10, each tagged with Cr(B) membership.
CausticCloud detect_caustics(const Atlas& atlas, const QueryOptions& opts = {});

}  // namespace semiq
