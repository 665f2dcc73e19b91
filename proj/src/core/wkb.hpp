#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/expr.hpp"
#include "core/quasimode.hpp"

namespace ctalab {

/// Complexified vector on M = I x M0: e1 slot plus chart-covariant
/// transversal components.
struct CVec3 {
  Cplx e1;
  ComplexVec2 yp;
};

/// Product phase of two or three beams:
///   Psi = (sum of signed c_k) x1 + i sum c_k psi_k,
///   Lambda = i (sum of signed lambda_k) x1 - sum lambda_k psi_k.
/// The tau-dependence lives entirely in e^{tau Psi}.
class ProductPhase {
 public:
  explicit ProductPhase(std::vector<CGOSolution> beams);

  struct Eval {
    bool in_support = false;
    double cutoff = 0.0;      // product of the beams' cutoffs
    Cplx psi_c;               // sum c_k psi_k (y')
    ComplexVec2 grad_psi_c;   // covariant chart gradient of the above
    Cplx lap_psi_c;
    Cplx lam_psi;             // sum lambda_k psi_k
    ComplexVec2 grad_lam_psi;
    Cplx lap_lam_psi;
    Cplx a0_prod;             // product of principal amplitudes (no cutoffs)
    Mat2 gi;                  // inverse metric at y'
    double sqrtg = 1.0;
  };
  Eval eval(const Vec2& yprime) const;

  double sum_sign_c() const { return sum_sign_c_; }
  double sum_sign_lambda() const { return sum_sign_lambda_; }
  int arity() const { return static_cast<int>(beams_.size()); }
  const std::vector<CGOSolution>& beams() const { return beams_; }
  double tau() const { return beams_.front().tau(); }

  Cplx psi_value(double x1, const Eval& e) const {
    return sum_sign_c_ * x1 + Cplx(0, 1) * e.psi_c;
  }
  Cplx lambda_value(double x1, const Eval& e) const {
    return Cplx(0, sum_sign_lambda_) * x1 - e.lam_psi;
  }
  CVec3 grad_psi(const Eval& e) const {
    return {Cplx(sum_sign_c_, 0.0), e.grad_psi_c * Cplx(0, 1)};
  }
  CVec3 grad_lambda(const Eval& e) const {
    return {Cplx(0, sum_sign_lambda_), e.grad_lam_psi * Cplx(-1.0, 0.0)};
  }
  Cplx lap_psi(const Eval& e) const { return Cplx(0, 1) * e.lap_psi_c; }
  Cplx lap_lambda(const Eval& e) const { return -e.lap_lam_psi; }
  /// Complexified bilinear pairing with the metric at the evaluation point.
  Cplx pair(const CVec3& a, const CVec3& b, const Eval& e) const;
  Cplx grad_psi_sq(const Eval& e) const {
    CVec3 g = grad_psi(e);
    return pair(g, g, e);
  }

 private:
  std::vector<CGOSolution> beams_;
  double sum_sign_c_ = 0.0;
  double sum_sign_lambda_ = 0.0;
};

/// WKB ansatz for the second (pair) or third (triple) linearized equation:
///   pair:   w0 = tau^{(n-2)/4} e^{tau Psi + Lambda} sum_k tau^{-k} beta_{-k}, k = 2..1+depth
///   triple: w0 = tau^{3(n-2)/8} e^{tau Psit + Lambdat} sum_k tau^{-k} B_{-k}, k = 4..3+depth
/// Coefficients follow the transport recursion; derivatives of coefficients
/// are 4th-order finite differences, phase derivatives are analytic.
class WkbAnsatz {
 public:
  static WkbAnsatz pair(CGOSolution v1, CGOSolution v2, const Expr& q, int depth,
                        const Expr& V = Expr::constant(0.0));
  static WkbAnsatz triple(CGOSolution v1, CGOSolution v2, CGOSolution v3,
                          const std::vector<WkbAnsatz>& pair_ansatzes, const Expr& q, int depth,
                          const Expr& V = Expr::constant(0.0));

  bool is_triple() const { return triple_; }
  int depth() const { return depth_; }
  const ProductPhase& phase() const { return phase_; }
  int k_min() const { return triple_ ? 4 : 2; }

  /// Coefficient beta_{-k} (pair) or B_{-k} (triple); zero outside support.
  Cplx coefficient(int k, double x1, const Vec2& yprime) const;
  /// Leading coefficient from the closed form; grouping selects the inner
  /// grouping of the triple formula (0: sum of reciprocals, as the recursion
  /// yields; 1: reciprocal of the sum, as the alternative display).
  Cplx leading_closed_form(double x1, const Vec2& yprime, int grouping = 0) const;
  /// Full ansatz value at the phase's tau.
  Cplx value(double x1, const Vec2& yprime) const;
  double tau_power() const { return triple_ ? 3.0 / 8.0 : 0.25; }  // n = 3

  struct Support {
    Vec2 center;
    double radius;  // chart-box half width enclosing the tube intersection
  };
  Support support() const { return support_; }

  const Expr& q() const { return q_; }
  const Expr& potential() const { return V_; }
  /// Source expansion term E_{-j} (pair) or H_{-j} (triple).
  Cplx source_term(int j, double x1, const Vec2& yprime) const;

 private:
  WkbAnsatz() = default;
  ProductPhase phase_{std::vector<CGOSolution>{}};
  std::vector<WkbAnsatz> pair_ansatzes_;  // triple case
  Expr q_;
  Expr V_;
  int depth_ = 1;
  bool triple_ = false;
  Support support_{};
  void locate_support();
};

double transversality_margin(const ProductPhase& phase, const Vec2& center, double radius,
                             int samples_per_axis = 41);

struct WkbResidualReport {
  std::vector<double> tau;
  std::vector<double> residual;   // normalized by the source norm
  double slope = 0.0;
  double slope_halfwidth95 = 0.0;
  double max_quadrature_change = 0.0;  // relative shift under refinement
  bool quadrature_converged = true;
};

/// Weighted residual e^{-tau Psi} [ (Delta - V) w0 - rhs ] in L2 over the
/// support, normalized by ||tau^{pow} e^Lambda E_source||.
WkbResidualReport wkb_residual(const WkbAnsatz& ansatz, const std::vector<double>& tau_grid,
                               int jobs = 1, int nx_hi = 3, int ny_hi = 12);

}  // namespace ctalab
