#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/expr.hpp"
#include "core/geometry.hpp"

namespace ctalab {

struct Grid3 {
  int n1 = 16, n2 = 16, n3 = 16;  // cells per axis on [0,1]^3
  int p1() const { return n1 + 1; }
  int p2() const { return n2 + 1; }
  int p3() const { return n3 + 1; }
  std::size_t nodes() const { return std::size_t(p1()) * p2() * p3(); }
  double h1() const { return 1.0 / n1; }
  double h2() const { return 1.0 / n2; }
  double h3() const { return 1.0 / n3; }
  std::size_t idx(int i, int j, int k) const {
    return (std::size_t(i) * p2() + j) * p3() + k;
  }
  bool boundary(int i, int j, int k) const {
    return i == 0 || i == n1 || j == 0 || j == n2 || k == 0 || k == n3;
  }
  Vec2 yp(int j, int k) const { return {j * h2(), k * h3()}; }
  double x1(int i) const { return i * h1(); }
};

using Field = std::vector<double>;

/// Values on the boundary nodes of a grid (zero elsewhere); carries both the
/// variational flux functional and the pointwise normal-derivative estimate.
struct BoundaryField {
  Grid3 grid;
  Field values;  // full-size, meaningful at boundary nodes
};

Field sample_field(const Grid3& g, const Expr& e);
BoundaryField sample_boundary(const Grid3& g, const Expr& e);

struct SolveStats {
  int newton_iterations = 0;
  int krylov_iterations = 0;
  double final_residual = 0.0;
  double stability_constant = 0.0;  // ||u|| / ||f||
};

/// Conservative second-order discretization of -Delta_g + V on
/// [0,1] x M0 with strong Dirichlet data. The bilinear form is assembled
/// edge-wise, so <K u, w> is symmetric to machine precision.
class DiscreteOperator {
 public:
  DiscreteOperator(const Grid3& grid, const TransversalGeometry& geom, Field V);
  DiscreteOperator(const Grid3& grid, const TransversalGeometry& geom, const Expr& V);

  const Grid3& grid() const { return grid_; }
  const Field& potential() const { return V_; }
  const Field& mass() const { return mass_; }
  double mass_at(std::size_t n) const { return mass_[n]; }

  /// Stiffness action (K u), rows of the discrete energy gradient.
  void apply_K(const Field& u, Field& out) const;
  /// (K + M V) u.
  void apply_A(const Field& u, Field& out) const;
  /// Bilinear form <K u, w>.
  double form_K(const Field& u, const Field& w) const;
  double inner_M(const Field& u, const Field& w) const;

  /// Dirichlet solve (-Delta_g + V + shift) v = source, v|bd = f.
  /// `extra_diag` (optional, node values) adds a diagonal M-weighted term,
  /// the Newton Jacobian's 2 q u.
  Field solve_linear(const BoundaryField& f, const Field& source, double tol = 1e-12,
                     const Field* extra_diag = nullptr, SolveStats* stats = nullptr) const;

  /// Newton solve of (-Delta_g + V) u + q u^2 = 0, u|bd = f.
  Field solve_semilinear(const Field& q, const BoundaryField& f, double newton_tol = 1e-10,
                         SolveStats* stats = nullptr) const;

  /// Strong residual sup-norm of the semilinear equation on interior nodes.
  double semilinear_residual(const Field& q, const Field& u) const;

  /// Variational DN data: flux functional at boundary nodes plus the
  /// pointwise normal derivative (flux / boundary area weight).
  struct NeumannData {
    BoundaryField flux;      // functional weights; exact integration by parts
    BoundaryField value;     // pointwise normal derivative estimate
    BoundaryField area;      // boundary area weights
  };
  NeumannData neumann_variational(const Field& q, const Field& u) const;
  /// One-sided 3-point normal difference (independent route).
  BoundaryField neumann_onesided(const Field& u) const;

  /// Boundary integral sum over face-interior nodes (one-node margin kept
  /// away from the face edges).
  double boundary_pair(const BoundaryField& a, const BoundaryField& b) const;

  /// Smallest-magnitude Dirichlet eigenvalue of -Delta_g + V (inverse
  /// iteration on the M-generalized problem).
  double eigenvalue_margin(int max_iter = 60, double tol = 1e-8) const;

  double smallness_delta(const Field& q) const;

 private:
  Grid3 grid_;
  TransversalGeometry geom_;
  Field V_;
  Field sqrtg_;       // per node, independent of x1 (stored per (j,k))
  Field mass_;        // node mass sqrtg h1 h2 h3
  std::vector<double> a1_, a2_, a3_;  // edge coefficients with quadrature weights
  mutable double cached_margin_ = -1.0;
  void assemble();
  void krylov_solve(const std::function<void(const Field&, Field&)>& op, const Field& rhs,
                    Field& x, double tol, int max_iter, int* iters) const;
};

struct ReducedCoefficients {
  Field V_hat;
  Field q_hat;
  double exponent_factor;  // c^{(n-2)/4} scaling bookkeeping at n = 3
};

/// Conformal reduction at n = 3: V_hat = cV - c^{1/4} Delta_g c^{-1/4},
/// q_hat = c^{-1/2} q, with the discrete Laplacian.
ReducedCoefficients conformal_reduce(const DiscreteOperator& op, const Expr& c, const Field& V,
                                     const Field& q);

}  // namespace ctalab
