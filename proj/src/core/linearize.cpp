#include "core/linearize.hpp"

#include <cmath>

namespace ctalab {

EpsFamily::EpsFamily(const Grid3& grid, std::vector<Expr> f_first,
                     std::map<std::pair<int, int>, Expr> f_second,
                     std::map<std::array<int, 3>, Expr> f_third)
    : grid_(grid) {
  for (const auto& e : f_first) f1_.push_back(sample_boundary(grid_, e));
  for (const auto& [key, e] : f_second) {
    if (key.first > key.second || key.first < 0 || key.second >= arity())
      fail_invalid("EpsFamily: pair keys must be ordered and in range");
    f2_.emplace(key, sample_boundary(grid_, e));
  }
  for (const auto& [key, e] : f_third) {
    if (!(key[0] < key[1] && key[1] < key[2]) || key[2] >= arity())
      fail_invalid("EpsFamily: triple keys must be strictly increasing");
    f3_.emplace(key, sample_boundary(grid_, e));
  }
}

BoundaryField EpsFamily::boundary(int i) const { return f1_.at(i); }

BoundaryField EpsFamily::boundary_pairdata(int i, int j) const {
  if (i > j) std::swap(i, j);
  auto it = f2_.find({i, j});
  if (it != f2_.end()) return it->second;
  BoundaryField bf;
  bf.grid = grid_;
  bf.values.assign(grid_.nodes(), 0.0);
  return bf;
}

BoundaryField EpsFamily::boundary_tripledata(int i, int j, int k) const {
  std::array<int, 3> key{i, j, k};
  std::sort(key.begin(), key.end());
  auto it = f3_.find(key);
  if (it != f3_.end()) return it->second;
  BoundaryField bf;
  bf.grid = grid_;
  bf.values.assign(grid_.nodes(), 0.0);
  return bf;
}

BoundaryField EpsFamily::at(const std::vector<double>& eps) const {
  if (eps.size() != f1_.size()) fail_invalid("EpsFamily::at: parameter count mismatch");
  BoundaryField out;
  out.grid = grid_;
  out.values.assign(grid_.nodes(), 0.0);
  for (size_t i = 0; i < f1_.size(); ++i)
    if (eps[i] != 0.0)
      for (std::size_t m = 0; m < out.values.size(); ++m)
        out.values[m] += eps[i] * f1_[i].values[m];
  // Stored pair/triple data are the mixed-derivative values: the quadratic
  // term eps_i eps_j f_ij (i < j) differentiates to exactly f_ij.
  for (const auto& [key, bf] : f2_) {
    double w = eps[key.first] * eps[key.second];
    if (w != 0.0)
      for (std::size_t m = 0; m < out.values.size(); ++m) out.values[m] += w * bf.values[m];
  }
  for (const auto& [key, bf] : f3_) {
    double w = eps[key[0]] * eps[key[1]] * eps[key[2]];
    if (w != 0.0)
      for (std::size_t m = 0; m < out.values.size(); ++m) out.values[m] += w * bf.values[m];
  }
  return out;
}

double EpsFamily::sup_norm_bound(double eps_magnitude) const {
  double bound = 0.0;
  auto sup = [](const BoundaryField& bf) {
    double s = 0;
    for (double v : bf.values) s = std::max(s, std::abs(v));
    return s;
  };
  for (const auto& f : f1_) bound += eps_magnitude * sup(f);
  for (const auto& [k, f] : f2_) bound += eps_magnitude * eps_magnitude * sup(f);
  for (const auto& [k, f] : f3_) bound += std::pow(eps_magnitude, 3) * sup(f);
  return bound;
}

namespace {

struct Corner {
  std::vector<double> eps;
  double sign;
};

std::vector<Corner> stencil_corners(int arity, const std::vector<int>& index, double h) {
  for (size_t a = 0; a < index.size(); ++a)
    for (size_t b = a + 1; b < index.size(); ++b)
      if (index[a] == index[b]) fail_invalid("mixed_derivative: indices must be distinct");
  int m = static_cast<int>(index.size());
  std::vector<Corner> out;
  for (int mask = 0; mask < (1 << m); ++mask) {
    Corner c;
    c.eps.assign(arity, 0.0);
    c.sign = 1.0;
    for (int b = 0; b < m; ++b) {
      double s = (mask >> b) & 1 ? 1.0 : -1.0;
      c.eps[index[b]] = s * h;
      c.sign *= s;
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

MixedDerivativeResult mixed_derivative(const DiscreteOperator& op, const Field& q,
                                       const EpsFamily& family, const std::vector<int>& index,
                                       double h, double newton_tol, int jobs) {
  if (index.empty() || index.size() > 4)
    fail_invalid("mixed_derivative: order must be between 1 and 4");
  const Grid3& g = op.grid();
  auto corners = stencil_corners(family.arity(), index, h);
  std::vector<Field> solves(corners.size());
  std::vector<BoundaryField> dns(corners.size());
  parallel_for(corners.size(), jobs, [&](std::size_t c) {
    BoundaryField f = family.at(corners[c].eps);
    solves[c] = op.solve_semilinear(q, f, newton_tol);
    dns[c] = op.neumann_onesided(solves[c]);
  });

  double denom = std::pow(2.0 * h, static_cast<double>(index.size()));
  MixedDerivativeResult out;
  out.solves = static_cast<int>(corners.size());
  out.field.assign(g.nodes(), 0.0);
  out.dn_onesided.grid = g;
  out.dn_onesided.values.assign(g.nodes(), 0.0);
  out.dn_variational.grid = g;
  out.dn_variational.values.assign(g.nodes(), 0.0);
  for (std::size_t c = 0; c < corners.size(); ++c) {
    double w = corners[c].sign / denom;
    for (std::size_t m = 0; m < out.field.size(); ++m) {
      out.field[m] += w * solves[c][m];
      out.dn_onesided.values[m] += w * dns[c].values[m];
    }
  }
  // Variational route for the same derivative.
  for (std::size_t c = 0; c < corners.size(); ++c) {
    auto nd = op.neumann_variational(q, solves[c]);
    double w = corners[c].sign / denom;
    for (std::size_t m = 0; m < out.dn_variational.values.size(); ++m)
      out.dn_variational.values[m] += w * nd.value.values[m];
  }
  return out;
}

Field direct_first_linearized(const DiscreteOperator& op, const BoundaryField& f_i) {
  Field zero(op.grid().nodes(), 0.0);
  return op.solve_linear(f_i, zero);
}

Field direct_second_linearized(const DiscreteOperator& op, const Field& q, const Field& v_i,
                               const Field& v_j, const BoundaryField& f_ij) {
  Field src(op.grid().nodes());
  for (std::size_t m = 0; m < src.size(); ++m) src[m] = -2.0 * q[m] * v_i[m] * v_j[m];
  return op.solve_linear(f_ij, src);
}

Field direct_third_linearized(const DiscreteOperator& op, const Field& q, const Field& v_i,
                              const Field& v_j, const Field& v_k, const Field& w_jk,
                              const Field& w_ik, const Field& w_ij, const BoundaryField& f_ijk) {
  Field src(op.grid().nodes());
  for (std::size_t m = 0; m < src.size(); ++m)
    src[m] = -2.0 * q[m] * (v_i[m] * w_jk[m] + v_j[m] * w_ik[m] + v_k[m] * w_ij[m]);
  return op.solve_linear(f_ijk, src);
}

Field direct_fourth_linearized(const DiscreteOperator& op, const Field& q,
                               const std::array<Field, 4>& v,
                               const std::array<Field, 4>& w_triple,
                               const std::array<Field, 6>& w_pair) {
  // w_triple ordered as (234),(134),(124),(123); w_pair as
  // (12),(13),(14),(23),(24),(34).
  Field src(op.grid().nodes());
  for (std::size_t m = 0; m < src.size(); ++m) {
    double s = v[0][m] * w_triple[0][m] + v[1][m] * w_triple[1][m] + v[2][m] * w_triple[2][m] +
               v[3][m] * w_triple[3][m] + w_pair[0][m] * w_pair[5][m] +
               w_pair[1][m] * w_pair[4][m] + w_pair[2][m] * w_pair[3][m];
    src[m] = -2.0 * q[m] * s;
  }
  BoundaryField zero_bc;
  zero_bc.grid = op.grid();
  zero_bc.values.assign(op.grid().nodes(), 0.0);
  return op.solve_linear(zero_bc, src);
}

IdentityReport identity_residual(const DiscreteOperator& op, const Field& q1, const Field& q2,
                                 const EpsFamily& family, int order, double h_eps,
                                 double newton_tol, int jobs) {
  if (order < 2 || order > 4) fail_invalid("identity_residual: order must be 2, 3 or 4");
  const Grid3& g = op.grid();
  std::size_t n = g.nodes();

  std::vector<int> index;
  for (int i = 0; i < order; ++i) index.push_back(i);

  // Boundary side: FD of the DN difference paired with the extra datum.
  MixedDerivativeResult d1 = mixed_derivative(op, q1, family, index, h_eps, newton_tol, jobs);
  MixedDerivativeResult d2 = mixed_derivative(op, q2, family, index, h_eps, newton_tol, jobs);
  BoundaryField dn_diff;
  dn_diff.grid = g;
  dn_diff.values.assign(n, 0.0);
  for (std::size_t m = 0; m < n; ++m)
    dn_diff.values[m] = d1.dn_onesided.values[m] - d2.dn_onesided.values[m];
  // Pairing datum: f_{order} for orders 2 and 3 (the next first-order datum),
  // f_5 (index 4) at order 4.
  BoundaryField pair_f = family.boundary(order == 4 ? 4 : order);
  double boundary_side = op.boundary_pair(dn_diff, pair_f);

  // Volume side from the direct hierarchy with shared boundary data.
  std::vector<Field> v;  // first linearized solutions, shared by both labels
  for (int i = 0; i <= (order == 4 ? 4 : order); ++i)
    v.push_back(direct_first_linearized(op, family.boundary(i)));

  auto wpair = [&](const Field& q, int i, int j) {
    return direct_second_linearized(op, q, v[i], v[j], family.boundary_pairdata(i, j));
  };

  double volume_side = 0.0;
  if (order == 2) {
    // 2 int (q1 - q2) v0 v1 v2.
    double s = 0.0;
    for (std::size_t m = 0; m < n; ++m)
      s += op.mass_at(m) * (q1[m] - q2[m]) * v[0][m] * v[1][m] * v[2][m];
    volume_side = 2.0 * s;
  } else if (order == 3) {
    Field w1_01 = wpair(q1, 0, 1), w1_02 = wpair(q1, 0, 2), w1_12 = wpair(q1, 1, 2);
    Field w2_01 = wpair(q2, 0, 1), w2_02 = wpair(q2, 0, 2), w2_12 = wpair(q2, 1, 2);
    double s = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      double b1 = v[0][m] * w1_12[m] + v[1][m] * w1_02[m] + v[2][m] * w1_01[m];
      double b2 = v[0][m] * w2_12[m] + v[1][m] * w2_02[m] + v[2][m] * w2_01[m];
      s += op.mass_at(m) * (q1[m] * b1 - q2[m] * b2) * v[3][m];
    }
    volume_side = 2.0 * s;
  } else {
    auto bracket = [&](const Field& q) {
      std::array<Field, 6> wp = {wpair(q, 0, 1), wpair(q, 0, 2), wpair(q, 0, 3),
                                 wpair(q, 1, 2), wpair(q, 1, 3), wpair(q, 2, 3)};
      auto wtrip = [&](int i, int j, int k, const Field& wjk, const Field& wik,
                       const Field& wij) {
        return direct_third_linearized(op, q, v[i], v[j], v[k], wjk, wik, wij,
                                       family.boundary_tripledata(i, j, k));
      };
      Field w123 = wtrip(1, 2, 3, wp[5], wp[4], wp[3]);
      Field w023 = wtrip(0, 2, 3, wp[5], wp[2], wp[1]);
      Field w013 = wtrip(0, 1, 3, wp[4], wp[2], wp[0]);
      Field w012 = wtrip(0, 1, 2, wp[3], wp[1], wp[0]);
      Field out(n);
      for (std::size_t m = 0; m < n; ++m) {
        out[m] = q[m] * (v[0][m] * w123[m] + v[1][m] * w023[m] + v[2][m] * w013[m] +
                         v[3][m] * w012[m] + wp[0][m] * wp[5][m] + wp[1][m] * wp[4][m] +
                         wp[2][m] * wp[3][m]);
      }
      return out;
    };
    Field b1 = bracket(q1), b2 = bracket(q2);
    double s = 0.0;
    for (std::size_t m = 0; m < n; ++m) s += op.mass_at(m) * (b1[m] - b2[m]) * v[4][m];
    volume_side = 2.0 * s;
  }

  IdentityReport rep;
  rep.order = order;
  rep.grid_n = g.n1;
  rep.h_eps = h_eps;
  rep.boundary_side = boundary_side;
  rep.volume_side = volume_side;
  double qmax = 0.0;
  for (std::size_t m = 0; m < n; ++m) qmax = std::max(qmax, std::abs(q1[m]));
  double floor = 1e-12 * qmax;
  rep.rel_discrepancy =
      std::abs(boundary_side - volume_side) / std::max(std::abs(volume_side), floor);
  return rep;
}

}  // namespace ctalab
