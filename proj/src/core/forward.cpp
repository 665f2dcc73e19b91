#include "core/forward.hpp"

#include <cmath>

namespace ctalab {

Field sample_field(const Grid3& g, const Expr& e) {
  Field out(g.nodes());
  for (int i = 0; i < g.p1(); ++i)
    for (int j = 0; j < g.p2(); ++j)
      for (int k = 0; k < g.p3(); ++k)
        out[g.idx(i, j, k)] = e.eval(g.x1(i), j * g.h2(), k * g.h3());
  return out;
}

BoundaryField sample_boundary(const Grid3& g, const Expr& e) {
  BoundaryField bf;
  bf.grid = g;
  bf.values.assign(g.nodes(), 0.0);
  for (int i = 0; i < g.p1(); ++i)
    for (int j = 0; j < g.p2(); ++j)
      for (int k = 0; k < g.p3(); ++k)
        if (g.boundary(i, j, k))
          bf.values[g.idx(i, j, k)] = e.eval(g.x1(i), j * g.h2(), k * g.h3());
  return bf;
}

DiscreteOperator::DiscreteOperator(const Grid3& grid, const TransversalGeometry& geom, Field V)
    : grid_(grid), geom_(geom), V_(std::move(V)) {
  if (V_.size() != grid_.nodes()) fail_invalid("DiscreteOperator: V sample size mismatch");
  assemble();
}

DiscreteOperator::DiscreteOperator(const Grid3& grid, const TransversalGeometry& geom,
                                   const Expr& V)
    : DiscreteOperator(grid, geom, sample_field(grid, V)) {}

void DiscreteOperator::assemble() {
  const Grid3& g = grid_;
  double h1 = g.h1(), h2 = g.h2(), h3 = g.h3();
  sqrtg_.assign(g.nodes(), 1.0);
  mass_.assign(g.nodes(), 0.0);
  for (int i = 0; i < g.p1(); ++i)
    for (int j = 0; j < g.p2(); ++j)
      for (int k = 0; k < g.p3(); ++k) {
        Mat2 m = geom_.metric(g.yp(j, k));
        double s = std::sqrt(m.det());
        sqrtg_[g.idx(i, j, k)] = s;
        mass_[g.idx(i, j, k)] = s * h1 * h2 * h3;
      }

  // Edge coefficients (half-point values of sqrt|g| g^{dd}) carrying the
  // full quadrature weight, so apply_K is the exact gradient of a symmetric
  // quadratic form.
  a1_.assign(std::size_t(g.n1) * g.p2() * g.p3(), 0.0);
  a2_.assign(std::size_t(g.p1()) * g.n2 * g.p3(), 0.0);
  a3_.assign(std::size_t(g.p1()) * g.p2() * g.n3, 0.0);
  for (int i = 0; i < g.n1; ++i)
    for (int j = 0; j < g.p2(); ++j)
      for (int k = 0; k < g.p3(); ++k) {
        Mat2 m = geom_.metric(g.yp(j, k));
        double s = std::sqrt(m.det());
        a1_[(std::size_t(i) * g.p2() + j) * g.p3() + k] = s * h2 * h3 / h1;  // g^{11} = 1
      }
  for (int i = 0; i < g.p1(); ++i)
    for (int j = 0; j < g.n2; ++j)
      for (int k = 0; k < g.p3(); ++k) {
        Vec2 mid{(j + 0.5) * h2, k * h3};
        Mat2 m = geom_.metric(mid);
        double s = std::sqrt(m.det());
        a2_[(std::size_t(i) * g.n2 + j) * g.p3() + k] = s * m.inverse().a11 * h1 * h3 / h2;
      }
  for (int i = 0; i < g.p1(); ++i)
    for (int j = 0; j < g.p2(); ++j)
      for (int k = 0; k < g.n3; ++k) {
        Vec2 mid{j * h2, (k + 0.5) * h3};
        Mat2 m = geom_.metric(mid);
        double s = std::sqrt(m.det());
        a3_[(std::size_t(i) * g.p2() + j) * g.n3 + k] = s * m.inverse().a22 * h1 * h2 / h3;
      }
}

void DiscreteOperator::apply_K(const Field& u, Field& out) const {
  const Grid3& g = grid_;
  out.assign(g.nodes(), 0.0);
  for (int i = 0; i < g.n1; ++i)
    for (int j = 0; j < g.p2(); ++j)
      for (int k = 0; k < g.p3(); ++k) {
        std::size_t e = (std::size_t(i) * g.p2() + j) * g.p3() + k;
        std::size_t n0 = g.idx(i, j, k), n1 = g.idx(i + 1, j, k);
        double f = a1_[e] * (u[n1] - u[n0]);
        out[n1] += f;
        out[n0] -= f;
      }
  for (int i = 0; i < g.p1(); ++i)
    for (int j = 0; j < g.n2; ++j)
      for (int k = 0; k < g.p3(); ++k) {
        std::size_t e = (std::size_t(i) * g.n2 + j) * g.p3() + k;
        std::size_t n0 = g.idx(i, j, k), n1 = g.idx(i, j + 1, k);
        double f = a2_[e] * (u[n1] - u[n0]);
        out[n1] += f;
        out[n0] -= f;
      }
  for (int i = 0; i < g.p1(); ++i)
    for (int j = 0; j < g.p2(); ++j)
      for (int k = 0; k < g.n3; ++k) {
        std::size_t e = (std::size_t(i) * g.p2() + j) * g.n3 + k;
        std::size_t n0 = g.idx(i, j, k), n1 = g.idx(i, j, k + 1);
        double f = a3_[e] * (u[n1] - u[n0]);
        out[n1] += f;
        out[n0] -= f;
      }
}

void DiscreteOperator::apply_A(const Field& u, Field& out) const {
  apply_K(u, out);
  for (std::size_t n = 0; n < u.size(); ++n) out[n] += mass_[n] * V_[n] * u[n];
}

double DiscreteOperator::form_K(const Field& u, const Field& w) const {
  Field t;
  apply_K(u, t);
  double s = 0;
  for (std::size_t n = 0; n < w.size(); ++n) s += t[n] * w[n];
  return s;
}

double DiscreteOperator::inner_M(const Field& u, const Field& w) const {
  double s = 0;
  for (std::size_t n = 0; n < u.size(); ++n) s += mass_[n] * u[n] * w[n];
  return s;
}

void DiscreteOperator::krylov_solve(const std::function<void(const Field&, Field&)>& op,
                                    const Field& rhs, Field& x, double tol, int max_iter,
                                    int* iters) const {
  // Jacobi-preconditioned CG; falls back to CG on the squared operator when
  // negative curvature shows up (near-eigenvalue shifts).
  const Grid3& g = grid_;
  std::size_t n = rhs.size();
  Field diag(n, 1.0);
  {
    Field e1(n, 0.0);
    for (int i = 0; i < g.n1; ++i)
      for (int j = 0; j < g.p2(); ++j)
        for (int k = 0; k < g.p3(); ++k) {
          double a = a1_[(std::size_t(i) * g.p2() + j) * g.p3() + k];
          e1[g.idx(i, j, k)] += a;
          e1[g.idx(i + 1, j, k)] += a;
        }
    for (int i = 0; i < g.p1(); ++i)
      for (int j = 0; j < g.n2; ++j)
        for (int k = 0; k < g.p3(); ++k) {
          double a = a2_[(std::size_t(i) * g.n2 + j) * g.p3() + k];
          e1[g.idx(i, j, k)] += a;
          e1[g.idx(i, j + 1, k)] += a;
        }
    for (int i = 0; i < g.p1(); ++i)
      for (int j = 0; j < g.p2(); ++j)
        for (int k = 0; k < g.n3; ++k) {
          double a = a3_[(std::size_t(i) * g.p2() + j) * g.n3 + k];
          e1[g.idx(i, j, k)] += a;
          e1[g.idx(i, j, k + 1)] += a;
        }
    for (std::size_t m = 0; m < n; ++m) diag[m] = std::max(1e-30, std::abs(e1[m]));
  }

  auto dot = [](const Field& a, const Field& b) {
    double s = 0;
    for (std::size_t m = 0; m < a.size(); ++m) s += a[m] * b[m];
    return s;
  };

  x.assign(n, 0.0);
  Field r = rhs, z(n), p(n), Ap(n);
  double rhs_norm = std::sqrt(dot(rhs, rhs));
  if (rhs_norm == 0.0) {
    if (iters) *iters = 0;
    return;
  }
  for (std::size_t m = 0; m < n; ++m) z[m] = r[m] / diag[m];
  p = z;
  double rz = dot(r, z);
  int it = 0;
  bool breakdown = false;
  for (; it < max_iter; ++it) {
    op(p, Ap);
    double pAp = dot(p, Ap);
    if (!(pAp > 0)) {
      breakdown = true;
      break;
    }
    double alpha = rz / pAp;
    for (std::size_t m = 0; m < n; ++m) {
      x[m] += alpha * p[m];
      r[m] -= alpha * Ap[m];
    }
    if (std::sqrt(dot(r, r)) <= tol * rhs_norm) {
      ++it;
      if (iters) *iters = it;
      return;
    }
    for (std::size_t m = 0; m < n; ++m) z[m] = r[m] / diag[m];
    double rz_new = dot(r, z);
    double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t m = 0; m < n; ++m) p[m] = z[m] + beta * p[m];
  }
  if (!breakdown && it >= max_iter)
    fail_numeric("krylov: CG failed to converge within " + std::to_string(max_iter) +
                 " iterations");

  // Fallback: CG on the normal equations A^2 x = A b (A symmetric).
  Field Ab(n);
  op(rhs, Ab);
  auto op2 = [&](const Field& v, Field& out) {
    Field t(n);
    op(v, t);
    op(t, out);
  };
  x.assign(n, 0.0);
  r = Ab;
  for (std::size_t m = 0; m < n; ++m) z[m] = r[m] / (diag[m] * diag[m]);
  p = z;
  rz = dot(r, z);
  double ab_norm = std::sqrt(dot(Ab, Ab));
  for (int it2 = 0; it2 < 40 * max_iter; ++it2) {
    op2(p, Ap);
    double pAp = dot(p, Ap);
    if (!(pAp > 0)) break;
    double alpha = rz / pAp;
    for (std::size_t m = 0; m < n; ++m) {
      x[m] += alpha * p[m];
      r[m] -= alpha * Ap[m];
    }
    if (std::sqrt(dot(r, r)) <= tol * ab_norm) {
      if (iters) *iters = it + it2 + 1;
      return;
    }
    for (std::size_t m = 0; m < n; ++m) z[m] = r[m] / (diag[m] * diag[m]);
    double rz_new = dot(r, z);
    double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t m = 0; m < n; ++m) p[m] = z[m] + beta * p[m];
  }
  fail_numeric("krylov: normal-equation fallback failed to converge (operator singular?)");
}

Field DiscreteOperator::solve_linear(const BoundaryField& f, const Field& source, double tol,
                                     const Field* extra_diag, SolveStats* stats) const {
  const Grid3& g = grid_;
  std::size_t n = g.nodes();
  if (f.values.size() != n || source.size() != n)
    fail_invalid("solve_linear: size mismatch");

  auto zero_boundary = [&](Field& u) {
    for (int i = 0; i < g.p1(); ++i)
      for (int j = 0; j < g.p2(); ++j)
        for (int k = 0; k < g.p3(); ++k)
          if (g.boundary(i, j, k)) u[g.idx(i, j, k)] = 0.0;
  };

  auto op = [&](const Field& u, Field& out) {
    Field uu = u;
    zero_boundary(uu);
    apply_A(uu, out);
    if (extra_diag)
      for (std::size_t m = 0; m < n; ++m) out[m] += mass_[m] * (*extra_diag)[m] * uu[m];
    zero_boundary(out);
  };

  // RHS: M source - A (boundary extension).
  Field ub(n, 0.0);
  for (int i = 0; i < g.p1(); ++i)
    for (int j = 0; j < g.p2(); ++j)
      for (int k = 0; k < g.p3(); ++k)
        if (g.boundary(i, j, k)) ub[g.idx(i, j, k)] = f.values[g.idx(i, j, k)];
  Field rhs(n);
  apply_A(ub, rhs);
  if (extra_diag)
    for (std::size_t m = 0; m < n; ++m) rhs[m] += mass_[m] * (*extra_diag)[m] * ub[m];
  for (std::size_t m = 0; m < n; ++m) rhs[m] = mass_[m] * source[m] - rhs[m];
  zero_boundary(rhs);

  Field x;
  int iters = 0;
  int cap = 40 * (g.n1 + g.n2 + g.n3);
  krylov_solve(op, rhs, x, tol, cap, &iters);
  for (std::size_t m = 0; m < n; ++m) x[m] += ub[m];
  if (stats) stats->krylov_iterations += iters;
  return x;
}

Field DiscreteOperator::solve_semilinear(const Field& q, const BoundaryField& f,
                                         double newton_tol, SolveStats* stats) const {
  const Grid3& g = grid_;
  std::size_t n = g.nodes();
  if (q.size() != n) fail_invalid("solve_semilinear: q sample size mismatch");

  double fmax = 0.0;
  for (std::size_t m = 0; m < n; ++m) fmax = std::max(fmax, std::abs(f.values[m]));
  double delta = smallness_delta(q);
  if (fmax > delta)
    fail_invalid("solve_semilinear: ||f||_inf = " + std::to_string(fmax) +
                 " exceeds the smallness bound " + std::to_string(delta));

  Field zero_src(n, 0.0);
  Field u = solve_linear(f, zero_src, 1e-12, nullptr, stats);  // q-term dropped

  double res = semilinear_residual(q, u);
  int it = 0;
  for (; it < 25 && res > newton_tol; ++it) {
    // Newton step: (K + M(V + 2 q u)) d = -(K u + M(V u + q u^2)), d|bd = 0.
    Field Fu;
    apply_K(u, Fu);
    for (std::size_t m = 0; m < n; ++m)
      Fu[m] += mass_[m] * (V_[m] * u[m] + q[m] * u[m] * u[m]);
    Field neg_src(n);
    for (std::size_t m = 0; m < n; ++m) neg_src[m] = -Fu[m] / mass_[m];
    Field jac_diag(n);
    for (std::size_t m = 0; m < n; ++m) jac_diag[m] = 2.0 * q[m] * u[m];
    BoundaryField zero_bc;
    zero_bc.grid = g;
    zero_bc.values.assign(n, 0.0);
    Field d = solve_linear(zero_bc, neg_src, 1e-12, &jac_diag, stats);

    double step = 1.0;
    for (int halving = 0; halving <= 8; ++halving) {
      Field trial = u;
      for (std::size_t m = 0; m < n; ++m) trial[m] += step * d[m];
      double tr = semilinear_residual(q, trial);
      if (tr < res || halving == 8) {
        u = std::move(trial);
        res = tr;
        break;
      }
      step *= 0.5;
    }
  }
  if (res > newton_tol)
    fail_numeric("solve_semilinear: Newton failed to reach tolerance (last residual " +
                 std::to_string(res) + "); Dirichlet data too large?");
  if (stats) {
    stats->newton_iterations = it;
    stats->final_residual = res;
    double un = 0, fn = 0;
    for (std::size_t m = 0; m < n; ++m) {
      un = std::max(un, std::abs(u[m]));
      fn = std::max(fn, std::abs(f.values[m]));
    }
    stats->stability_constant = fn > 0 ? un / fn : 0.0;
  }
  return u;
}

double DiscreteOperator::semilinear_residual(const Field& q, const Field& u) const {
  const Grid3& g = grid_;
  Field Ku;
  apply_K(u, Ku);
  double worst = 0.0;
  for (int i = 1; i < g.n1; ++i)
    for (int j = 1; j < g.n2; ++j)
      for (int k = 1; k < g.n3; ++k) {
        std::size_t m = g.idx(i, j, k);
        double strong = Ku[m] / mass_[m] + V_[m] * u[m] + q[m] * u[m] * u[m];
        worst = std::max(worst, std::abs(strong));
      }
  return worst;
}

DiscreteOperator::NeumannData DiscreteOperator::neumann_variational(const Field& q,
                                                                    const Field& u) const {
  const Grid3& g = grid_;
  std::size_t n = g.nodes();
  NeumannData nd;
  nd.flux.grid = nd.value.grid = nd.area.grid = g;
  nd.flux.values.assign(n, 0.0);
  nd.value.values.assign(n, 0.0);
  nd.area.values.assign(n, 0.0);

  Field F;
  apply_K(u, F);
  for (std::size_t m = 0; m < n; ++m)
    F[m] += mass_[m] * (V_[m] * u[m] + q[m] * u[m] * u[m]);

  double h1 = g.h1(), h2 = g.h2(), h3 = g.h3();
  for (int i = 0; i < g.p1(); ++i)
    for (int j = 0; j < g.p2(); ++j)
      for (int k = 0; k < g.p3(); ++k) {
        if (!g.boundary(i, j, k)) continue;
        std::size_t m = g.idx(i, j, k);
        // Area weight: sum over the faces this node lies on (trapezoid).
        Mat2 gm = geom_.metric(g.yp(j, k));
        double s = 0.0;
        auto half = [](int a, int maxa) { return (a == 0 || a == maxa) ? 0.5 : 1.0; };
        if (i == 0 || i == g.n1) s += std::sqrt(gm.det()) * h2 * h3 * half(j, g.n2) * half(k, g.n3);
        if (j == 0 || j == g.n2) {
          double line = std::sqrt(gm.a22);  // induced metric on (x1, y2)
          s += line * h1 * h3 * half(i, g.n1) * half(k, g.n3);
        }
        if (k == 0 || k == g.n3) {
          double line = std::sqrt(gm.a11);
          s += line * h1 * h2 * half(i, g.n1) * half(j, g.n2);
        }
        nd.area.values[m] = s;
        nd.flux.values[m] = F[m];
        nd.value.values[m] = s > 0 ? F[m] / s : 0.0;
      }
  return nd;
}

BoundaryField DiscreteOperator::neumann_onesided(const Field& u) const {
  const Grid3& g = grid_;
  BoundaryField out;
  out.grid = g;
  out.values.assign(g.nodes(), 0.0);
  auto os = [&](double u0, double u1, double u2, double h) {
    return (3.0 * u0 - 4.0 * u1 + u2) / (2.0 * h);
  };
  for (int i = 0; i < g.p1(); ++i)
    for (int j = 0; j < g.p2(); ++j)
      for (int k = 0; k < g.p3(); ++k) {
        if (!g.boundary(i, j, k)) continue;
        std::size_t m = g.idx(i, j, k);
        Mat2 gm = geom_.metric(g.yp(j, k));
        Mat2 gi = gm.inverse();
        double val = 0.0;
        int faces = 0;
        if (i == 0 && g.n1 >= 2) {
          val += os(u[m], u[g.idx(1, j, k)], u[g.idx(2, j, k)], g.h1());
          ++faces;
        }
        if (i == g.n1 && g.n1 >= 2) {
          val += os(u[m], u[g.idx(g.n1 - 1, j, k)], u[g.idx(g.n1 - 2, j, k)], g.h1());
          ++faces;
        }
        if (j == 0 && g.n2 >= 2) {
          double d1 = os(u[m], u[g.idx(i, 1, k)], u[g.idx(i, 2, k)], g.h2());
          double d2 = (k > 0 && k < g.n3)
                          ? (u[g.idx(i, 0, k + 1)] - u[g.idx(i, 0, k - 1)]) / (2 * g.h3())
                          : 0.0;
          val += (gi.a11 * d1 + gi.a12 * d2) / std::sqrt(gi.a11);
          ++faces;
        }
        if (j == g.n2 && g.n2 >= 2) {
          double d1 = os(u[m], u[g.idx(i, g.n2 - 1, k)], u[g.idx(i, g.n2 - 2, k)], g.h2());
          double d2 = (k > 0 && k < g.n3)
                          ? (u[g.idx(i, g.n2, k + 1)] - u[g.idx(i, g.n2, k - 1)]) / (2 * g.h3())
                          : 0.0;
          val += (gi.a11 * d1 + gi.a12 * d2) / std::sqrt(gi.a11);
          ++faces;
        }
        if (k == 0 && g.n3 >= 2) {
          double d1 = os(u[m], u[g.idx(i, j, 1)], u[g.idx(i, j, 2)], g.h3());
          double d2 = (j > 0 && j < g.n2)
                          ? (u[g.idx(i, j + 1, 0)] - u[g.idx(i, j - 1, 0)]) / (2 * g.h2())
                          : 0.0;
          val += (gi.a22 * d1 + gi.a12 * d2) / std::sqrt(gi.a22);
          ++faces;
        }
        if (k == g.n3 && g.n3 >= 2) {
          double d1 = os(u[m], u[g.idx(i, j, g.n3 - 1)], u[g.idx(i, j, g.n3 - 2)], g.h3());
          double d2 = (j > 0 && j < g.n2)
                          ? (u[g.idx(i, j + 1, g.n3)] - u[g.idx(i, j - 1, g.n3)]) / (2 * g.h2())
                          : 0.0;
          val += (gi.a22 * d1 + gi.a12 * d2) / std::sqrt(gi.a22);
          ++faces;
        }
        // Signs: the one-sided stencils above give -du/dnu at the lower
        // faces; orient outward.
        // Lower faces (index 0) have outward normal along -axis: the stencil
        // os(u0, u_in, u_in2, h) approximates -d/d(axis), which IS outward.
        out.values[m] = faces > 0 ? val / faces : 0.0;
      }
  return out;
}

double DiscreteOperator::boundary_pair(const BoundaryField& a, const BoundaryField& b) const {
  const Grid3& g = grid_;
  double s = 0.0;
  double h1 = g.h1(), h2 = g.h2(), h3 = g.h3();
  auto area = [&](int i, int j, int k) {
    Mat2 gm = geom_.metric(g.yp(j, k));
    if (i == 0 || i == g.n1) return std::sqrt(gm.det()) * h2 * h3;
    if (j == 0 || j == g.n2) return std::sqrt(gm.a22) * h1 * h3;
    return std::sqrt(gm.a11) * h1 * h2;
  };
  // One-node margin away from face edges (corner exclusion).
  for (int j = 1; j < g.n2; ++j)
    for (int k = 1; k < g.n3; ++k)
      for (int i : {0, g.n1}) {
        std::size_t m = g.idx(i, j, k);
        s += a.values[m] * b.values[m] * area(i, j, k);
      }
  for (int i = 1; i < g.n1; ++i)
    for (int k = 1; k < g.n3; ++k)
      for (int j : {0, g.n2}) {
        std::size_t m = g.idx(i, j, k);
        s += a.values[m] * b.values[m] * area(i, j, k);
      }
  for (int i = 1; i < g.n1; ++i)
    for (int j = 1; j < g.n2; ++j)
      for (int k : {0, g.n3}) {
        std::size_t m = g.idx(i, j, k);
        s += a.values[m] * b.values[m] * area(i, j, k);
      }
  return s;
}

double DiscreteOperator::eigenvalue_margin(int max_iter, double tol) const {
  const Grid3& g = grid_;
  std::size_t n = g.nodes();
  auto zero_boundary = [&](Field& u) {
    for (int i = 0; i < g.p1(); ++i)
      for (int j = 0; j < g.p2(); ++j)
        for (int k = 0; k < g.p3(); ++k)
          if (g.boundary(i, j, k)) u[g.idx(i, j, k)] = 0.0;
  };
  auto op = [&](const Field& u, Field& out) {
    Field uu = u;
    zero_boundary(uu);
    apply_A(uu, out);
    zero_boundary(out);
  };

  // Inverse iteration on A x = lambda M x (interior).
  Field x(n, 0.0);
  for (int i = 1; i < g.n1; ++i)
    for (int j = 1; j < g.n2; ++j)
      for (int k = 1; k < g.n3; ++k)
        x[g.idx(i, j, k)] = std::sin(kPi * i * g.h1()) * std::sin(kPi * j * g.h2()) *
                            std::sin(kPi * k * g.h3());
  double lambda = 0.0, lambda_prev = 1e300;
  for (int it = 0; it < max_iter; ++it) {
    Field Mx(n);
    for (std::size_t m = 0; m < n; ++m) Mx[m] = mass_[m] * x[m];
    zero_boundary(Mx);
    Field y;
    int kiters = 0;
    krylov_solve(op, Mx, y, 1e-10, 40 * (g.n1 + g.n2 + g.n3), &kiters);
    double norm = 0;
    for (std::size_t m = 0; m < n; ++m) norm += mass_[m] * y[m] * y[m];
    norm = std::sqrt(norm);
    for (std::size_t m = 0; m < n; ++m) x[m] = y[m] / norm;
    Field Ax(n);
    op(x, Ax);
    double num = 0, den = 0;
    for (std::size_t m = 0; m < n; ++m) {
      num += x[m] * Ax[m];
      den += mass_[m] * x[m] * x[m];
    }
    lambda = num / den;
    if (std::abs(lambda - lambda_prev) <= tol * std::max(1.0, std::abs(lambda))) break;
    lambda_prev = lambda;
  }
  return lambda;
}

double DiscreteOperator::smallness_delta(const Field& q) const {
  double qmax = 0.0;
  for (double v : q) qmax = std::max(qmax, std::abs(v));
  double margin = std::abs(cached_margin_ >= 0 ? cached_margin_ : (cached_margin_ = std::abs(eigenvalue_margin())));
  if (margin <= 1e-10)
    fail_numeric("solve_semilinear: zero is (numerically) a Dirichlet eigenvalue");
  if (qmax == 0.0) return 0.05;
  return std::min(0.05, 0.05 * margin / qmax);
}

ReducedCoefficients conformal_reduce(const DiscreteOperator& op, const Expr& c, const Field& V,
                                     const Field& q) {
  const Grid3& g = op.grid();
  std::size_t n = g.nodes();
  Field cs = sample_field(g, c);
  for (double v : cs)
    if (!(v > 0.0)) fail_invalid("conformal_reduce: c must be positive on the grid");

  // c^{-1/4} and the discrete Laplacian of it; interior rows only, boundary
  // copied from the one-sided interior neighbor.
  Field w(n);
  for (std::size_t m = 0; m < n; ++m) w[m] = std::pow(cs[m], -0.25);
  Field Kw;
  op.apply_K(w, Kw);
  Field lap(n, 0.0);
  for (int i = 1; i < g.n1; ++i)
    for (int j = 1; j < g.n2; ++j)
      for (int k = 1; k < g.n3; ++k) {
        std::size_t m = g.idx(i, j, k);
        lap[m] = -Kw[m] / op.mass_at(m);
      }
  for (int i = 0; i < g.p1(); ++i)
    for (int j = 0; j < g.p2(); ++j)
      for (int k = 0; k < g.p3(); ++k) {
        if (!g.boundary(i, j, k)) continue;
        int ii = std::min(std::max(i, 1), g.n1 - 1);
        int jj = std::min(std::max(j, 1), g.n2 - 1);
        int kk = std::min(std::max(k, 1), g.n3 - 1);
        lap[g.idx(i, j, k)] = lap[g.idx(ii, jj, kk)];
      }

  ReducedCoefficients out;
  out.V_hat.resize(n);
  out.q_hat.resize(n);
  out.exponent_factor = 0.25;
  for (std::size_t m = 0; m < n; ++m) {
    out.V_hat[m] = cs[m] * V[m] - std::pow(cs[m], 0.25) * lap[m];
    out.q_hat[m] = q[m] / std::sqrt(cs[m]);
  }
  return out;
}

}  // namespace ctalab


