#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/expr.hpp"
#include "core/forward.hpp"
#include "core/quasimode.hpp"
#include "core/vectors.hpp"
#include "core/wkb.hpp"

namespace ctalab {

struct AsymptoticSample {
  double tau = 0.0;
  double lambda = 0.0;
  Cplx value;
  int order = 3;
  double quad_rel_error = 0.0;
};

/// Precomputed machinery for the normalized identity integrals of one
/// direction scheme: beams, pair/triple denominators and amplitude products
/// cached on a quadrature patch around p0; the (tau, lambda) sweep is then a
/// cheap weighted sum. Orders: 3 (xi4 scheme), 4 (zeta5 scheme).
class AsymptoticContext {
 public:
  AsymptoticContext(const TransversalGeometry& geom, const DirectionScheme& scheme,
                    const Expr& q1, const Expr& q2, int order, double delta_prime,
                    double patch_radius);

  AsymptoticSample sample(double tau, double lambda) const;
  /// Integral with the given lambda cached; call once per lambda then sweep tau.
  void prepare_lambda(double lambda) const;

  int order() const { return order_; }
  const std::vector<CGOSolution>& beams() const { return beams_; }
  Vec2 p0() const { return p0_; }
  double patch_radius() const { return patch_radius_; }
  /// Smallest |pair or triple denominator| found on the patch.
  double min_denominator_margin() const { return min_margin_; }
  /// Product of principal amplitudes at p0 (= 1 for Y(0) = 1 data).
  Cplx amplitude_product_p0() const;
  /// The coupling combination entering the limit: sum of 1/C (order 3) or
  /// the effective E combination (order 4), evaluated at p0.
  Cplx coupling_combination_p0() const;

 private:
  const TransversalGeometry* geom_;
  int order_;
  Vec2 p0_;
  double patch_radius_;
  mutable double min_margin_ = 0.0;
  Expr q1_, q2_;
  std::vector<CGOSolution> beams_;

  struct Node {
    Vec2 y;
    double w = 0.0;        // quadrature weight x sqrt(g)
    Cplx psi_sum;          // sum_k c_k psi_k(y')
    Cplx psi1;             // beam-1 phase (carries lambda)
    Cplx coef;             // amplitude x coupling coefficient function
  };
  std::vector<Node> nodes_;       // fine grid
  std::vector<Node> nodes_lo_;    // coarse grid for the error certificate
  mutable double cached_lambda_ = 1e300;
  mutable std::vector<Cplx> j_cache_, j_cache_lo_;

  void build_nodes(int cells, std::vector<Node>& out) const;
  Cplx node_coefficient(const Vec2& y, bool* ok) const;
  Cplx x1_integral(double lambda, const Vec2& y) const;
  Cplx accumulate(const std::vector<Node>& nodes, const std::vector<Cplx>& j, double tau,
                  double lambda) const;
};

/// Gaussian stationary-phase constant c_A = integral of e^{x.Ax} over the
/// plane, with A from the beams' Im H data at p0. Errors if A fails to be
/// negative definite.
double hessian_constant_cA(const std::vector<CGOSolution>& beams);

struct LimitEstimate {
  Cplx limit;
  Cplx correction;     // coefficient of tau^{-1/2}
  double fit_residual; // rms of the fit, relative
};

/// Richardson-style limit of samples over >= 4 dyadic tau at fixed lambda,
/// model a + b tau^{-1/2}.
LimitEstimate stationary_phase_limit(const std::vector<AsymptoticSample>& samples);

struct FourierInversion {
  std::vector<double> x1;
  std::vector<double> profile;
  double imag_residue = 0.0;       // relative to the profile L2 norm
  double symmetry_defect = 0.0;    // conjugate-symmetry violation
};

/// Discrete inverse of F(lambda) = int e^{i lambda x1} f(x1) dx1 on a
/// symmetric lambda grid; trapezoid in lambda, evaluated on x1 in [0,1].
FourierInversion fourier_invert(const std::vector<double>& lambdas,
                                const std::vector<Cplx>& values, int x1_samples = 65);

struct QProfileResult {
  std::vector<double> x1;
  std::vector<double> q_diff;       // reconstructed q1 - q2
  double consistency = 0.0;         // quartic residual, relative
};

/// Pointwise reconstruction of d = q1 - q2 from P2 = q1^2 - q2^2 and
/// P3 = q1^3 - q2^3 via d^4 - 4 P3 d + 3 P2^2 = 0 (cube root in the
/// degenerate P2 = 0 branch).
QProfileResult recover_q_profile(const std::vector<double>& x1, const std::vector<double>& P2,
                                 const std::vector<double>& P3);

struct BoundaryJet {
  BoundaryField q_boundary;
  BoundaryField dnu_q;
  BoundaryField d2nu_u0;     // experimental order-2 data
  double epsilon0 = 0.0;
  int m = 2;
};

/// Appendix-style boundary determination from oracle q-tilde data:
/// q|bd = (q_tilde - V)/(m eps0^{m-1}); dnu q solved from the differentiated
/// relation using the solver's dnu u0.
BoundaryJet boundary_recover(const Grid3& grid, const TransversalGeometry& geom, const Expr& V,
                             const Expr& q_truth, int m, double eps0,
                             int reference_refine = 2);

struct ProbeReport {
  std::vector<double> ratios;   // per (v, tau), flattened
  double c_hat = 0.0;
  double c_hat_doubled = 0.0;   // with 2x family size
  int argmin_v = -1;
  double argmin_tau = 0.0;
  bool inequality_violated_on_resample = false;
};

/// Carleman inequality probe: ratio of (conjugated-operator L2 norm +
/// tau^{3/2} boundary terms) to tau ||v||_{L2} over a family of random
/// smooth test functions.
ProbeReport carleman_probe(const DiscreteOperator& op, int family_size,
                           const std::vector<double>& tau_grid, std::uint64_t seed, int jobs = 1);

}  // namespace ctalab
