#pragma once

#include <array>
#include <map>
#include <vector>

#include "core/common.hpp"
#include "core/expr.hpp"
#include "core/forward.hpp"

namespace ctalab {

/// Dirichlet-data family f_eps = sum eps_i f_i + sum eps_i eps_j f_ij +
/// sum eps_i eps_j eps_k f_ijk. Data is stored so that the mixed epsilon
/// derivative at 0 with distinct indices recovers exactly the stored
/// f_ij / f_ijk (the boundary values of the linearized solutions).
class EpsFamily {
 public:
  EpsFamily(const Grid3& grid, std::vector<Expr> f_first, std::map<std::pair<int, int>, Expr> f_second = {},
            std::map<std::array<int, 3>, Expr> f_third = {});

  int arity() const { return static_cast<int>(f1_.size()); }
  BoundaryField boundary(int i) const;                       // f_i
  BoundaryField boundary_pairdata(int i, int j) const;       // f_ij (i != j)
  BoundaryField boundary_tripledata(int i, int j, int k) const;
  /// f_eps on the boundary for the given parameter vector.
  BoundaryField at(const std::vector<double>& eps) const;
  double sup_norm_bound(double eps_magnitude) const;

 private:
  Grid3 grid_;
  std::vector<BoundaryField> f1_;
  std::map<std::pair<int, int>, BoundaryField> f2_;
  std::map<std::array<int, 3>, BoundaryField> f3_;
};

/// Central mixed derivative of eps -> solution (or DN data) at eps = 0.
/// 2^m-corner tensor stencil with distinct indices; each corner is one
/// nonlinear solve.
struct MixedDerivativeResult {
  Field field;                 // interior mixed derivative of u
  BoundaryField dn_onesided;   // mixed derivative of the one-sided DN data
  BoundaryField dn_variational;
  int solves = 0;
};

MixedDerivativeResult mixed_derivative(const DiscreteOperator& op, const Field& q,
                                       const EpsFamily& family, const std::vector<int>& index,
                                       double h, double newton_tol = 1e-12, int jobs = 1);

/// Direct solves of the linearized hierarchy.
Field direct_first_linearized(const DiscreteOperator& op, const BoundaryField& f_i);
Field direct_second_linearized(const DiscreteOperator& op, const Field& q, const Field& v_i,
                               const Field& v_j, const BoundaryField& f_ij);
Field direct_third_linearized(const DiscreteOperator& op, const Field& q, const Field& v_i,
                              const Field& v_j, const Field& v_k, const Field& w_jk,
                              const Field& w_ik, const Field& w_ij, const BoundaryField& f_ijk);
Field direct_fourth_linearized(const DiscreteOperator& op, const Field& q,
                               const std::array<Field, 4>& v,
                               const std::array<Field, 4>& w_triple,
                               const std::array<Field, 6>& w_pair);

struct IdentityReport {
  int order = 2;
  int grid_n = 0;
  double h_eps = 0.0;
  double boundary_side = 0.0;
  double volume_side = 0.0;
  double rel_discrepancy = 0.0;
};

/// Numerical check of the integral identities: boundary side from the
/// one-sided FD DN data of the nonlinear solves, volume side from direct
/// linearized solves. Shared f_ij / f_ijk across the two potentials.
IdentityReport identity_residual(const DiscreteOperator& op, const Field& q1, const Field& q2,
                                 const EpsFamily& family, int order, double h_eps,
                                 double newton_tol = 1e-12, int jobs = 1);

}  // namespace ctalab
