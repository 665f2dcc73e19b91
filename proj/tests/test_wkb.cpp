#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/vectors.hpp"
#include "core/wkb.hpp"

using namespace ctalab;

namespace {

struct Lab {
  TransversalGeometry geom;
  Lab() : geom(make_spec()) {}
  static TransversalSpec make_spec() {
    TransversalSpec s;
    s.tube_radius = 0.2;
    return s;
  }

  CGOSolution beam(Vec2 dir, double speed, double lambda, int sign, double dp, double tau,
                   const Expr& V = Expr::constant(0.0)) const {
    Vec2 p0{0.5, 0.5};
    double n = geom.norm(p0, dir);
    Geodesic geo = trace_geodesic(geom, p0, dir * (1.0 / n));
    FermiChart chart(geom, geo, geom.spec().tube_radius);
    RiccatiSolution ric = solve_riccati(chart);
    return assemble_cgo(build_beam(geom, geo, ric, speed, lambda, sign, dp, 0, V), tau);
  }
};

}  // namespace

TEST_CASE("second-order ansatz: orthogonal flat pair, signs (+,+)") {
  Lab lab;
  Expr q = Expr::parse("1 + 0.5*x1");
  double tau = 64;
  CGOSolution v1 = lab.beam({1, 0}, 1.0, 0.0, +1, 0.15, tau);
  CGOSolution v2 = lab.beam({0, 1}, 1.0, 0.0, +1, 0.15, tau);
  WkbAnsatz w = WkbAnsatz::pair(v1, v2, q, 1);

  // Denominator at p0: (c1+c2)^2 - |xi1+xi2|^2 = 4 - 2 = 2, so
  // b_{-2}(p0) = q a0 a0 (a0 = 1 at the seed).
  Vec2 p0{0.5, 0.5};
  for (double x1 : {0.0, 0.3, 1.0}) {
    Cplx b2 = w.coefficient(2, x1, p0);
    Cplx expect = q.eval(x1, 0.5, 0.5);
    CHECK(std::abs(b2 - expect) < 1e-10 * std::abs(expect));
    CHECK(std::abs(b2 - w.leading_closed_form(x1, p0)) < 1e-10);
  }

  // Recursion output matches the closed form pointwise on the support.
  for (Vec2 yp : {Vec2{0.52, 0.47}, Vec2{0.45, 0.55}, Vec2{0.5, 0.41}}) {
    Cplx a = w.coefficient(2, 0.25, yp);
    Cplx b = w.leading_closed_form(0.25, yp);
    CHECK(std::abs(a - b) <= 1e-8 * std::max(1.0, std::abs(b)));
  }

  // Margin: 2 at p0, positive and smaller over a larger patch.
  double m_small = transversality_margin(w.phase(), p0, 0.005);
  CHECK(m_small == doctest::Approx(2.0).epsilon(0.01));
  double m_large = transversality_margin(w.phase(), p0, 0.15);
  CHECK(m_large > 0.0);
  CHECK(m_large < m_small);
}

TEST_CASE("second-order ansatz on xi-scheme pair (1,2) with signs (+,+)") {
  Lab lab;
  DirectionScheme xi = build_xi_scheme(lab.geom, {0.5, 0.5}, {1, 0}, 0.1, +1, false);
  Expr q = Expr::parse("0.7");
  double tau = 64;
  CGOSolution v1 = lab.beam(xi.tangents[0], 1.0, 0.0, +1, 0.12, tau);
  CGOSolution v2 = lab.beam(xi.tangents[1], 1.0, 0.0, +1, 0.12, tau);
  WkbAnsatz w = WkbAnsatz::pair(v1, v2, q, 1);
  // Denominator 4 - (4 - 2 delta) = 0.2 => b_{-2} = 10 q a0 a0 at p0.
  Cplx b2 = w.coefficient(2, 0.5, {0.5, 0.5});
  CHECK(std::abs(b2 - Cplx(7.0, 0)) < 1e-9);
}

TEST_CASE("q = 0 gives the zero ansatz") {
  Lab lab;
  CGOSolution v1 = lab.beam({1, 0}, 1.0, 0.0, +1, 0.15, 64);
  CGOSolution v2 = lab.beam({0, 1}, 1.0, 0.0, +1, 0.15, 64);
  WkbAnsatz w = WkbAnsatz::pair(v1, v2, Expr::constant(0.0), 2);
  CHECK(w.coefficient(2, 0.2, {0.52, 0.5}) == Cplx(0, 0));
  CHECK(w.coefficient(3, 0.2, {0.52, 0.5}) == Cplx(0, 0));
  CHECK(w.value(0.2, {0.52, 0.5}) == Cplx(0, 0));
}

TEST_CASE("margin vanishes for an improper pair") {
  Lab lab;
  // Same line traversed in opposite directions, signs (+,-): at p0 the
  // bilinear square is -2 c1 c2 (<g1', g2'> - sign product) = 0.
  CGOSolution v1 = lab.beam({1, 0}, 1.0, 0.0, +1, 0.15, 64);
  CGOSolution v2 = lab.beam({-1, 0}, 1.0, 0.0, -1, 0.15, 64);
  ProductPhase phase({v1, v2});
  double m = transversality_margin(phase, {0.5, 0.5}, 0.01);
  CHECK(m < 1e-6);
  CHECK_THROWS_AS(WkbAnsatz::pair(v1, v2, Expr::constant(1.0), 1), Error);
}

TEST_CASE("third-order ansatz: B_{-4} closed form and grouping flag") {
  Lab lab;
  DirectionScheme ze = build_zeta_scheme(lab.geom, {0.5, 0.5}, 0.3, {1, 0}, +1, false);
  Expr q = Expr::parse("0.8 + 0.2*x1");
  double tau = 64;
  // Use zeta_2, zeta_3, zeta_4 (indices 1,2,3) as the triple.
  auto mk = [&](int i, double dp) {
    return lab.beam(ze.tangents[i], ze.speeds[i], 0.0, ze.signs[i], dp, tau);
  };
  CGOSolution v2 = mk(1, 0.1), v3 = mk(2, 0.1), v4 = mk(3, 0.1);
  std::vector<WkbAnsatz> pairs = {WkbAnsatz::pair(v3, v4, q, 1), WkbAnsatz::pair(v2, v4, q, 1),
                                  WkbAnsatz::pair(v2, v3, q, 1)};
  WkbAnsatz w = WkbAnsatz::triple(v2, v3, v4, pairs, q, 1);

  Vec2 p0{0.5, 0.5};
  Cplx rec = w.coefficient(4, 0.4, p0);
  Cplx closed_sum = w.leading_closed_form(0.4, p0, 0);
  Cplx closed_grouped = w.leading_closed_form(0.4, p0, 1);
  // The recursion reproduces the sum-of-reciprocals grouping.
  CHECK(std::abs(rec - closed_sum) < 1e-8 * std::abs(closed_sum));
  CHECK(std::abs(rec - closed_grouped) > 1e-3 * std::abs(rec));

  // And the value matches the coupling-table prediction at p0:
  // B_{-4} = 4 q^2 (1/D_234)(1/D_23 + 1/D_24 + 1/D_34). Beam indices here
  // are zeta_{2,3,4}, i.e. scheme slots 1,2,3.
  double D234 = coupling_D_triple(ze, 1, 2, 3);
  double D23 = coupling_D_pair(ze, 1, 2);
  double D24 = coupling_D_pair(ze, 1, 3);
  double D34 = coupling_D_pair(ze, 2, 3);
  double qv = q.eval(0.4, 0.5, 0.5);
  Cplx expect = 4.0 * qv * qv / D234 * (1.0 / D23 + 1.0 / D24 + 1.0 / D34);
  CHECK(std::abs(rec - expect) < 1e-9 * std::abs(expect));

  // Triple margin at p0 equals |D_234| = |D_15|.
  double m = transversality_margin(w.phase(), p0, 0.004);
  CHECK(m == doctest::Approx(std::abs(coupling_D_pair(ze, 0, 4))).epsilon(0.01));
}

TEST_CASE("zeta triple (2,3,4) margin at delta = 0.1 is about 7.899") {
  Lab lab;
  DirectionScheme ze = build_zeta_scheme(lab.geom, {0.5, 0.5}, 0.1, {1, 0}, +1, false);
  auto mk = [&](int i) {
    return lab.beam(ze.tangents[i], ze.speeds[i], 0.0, ze.signs[i], 0.1, 64);
  };
  ProductPhase phase({mk(1), mk(2), mk(3)});
  double m = transversality_margin(phase, {0.5, 0.5}, 0.003);
  CHECK(m == doctest::Approx(7.898717737923585).epsilon(0.01));
}

TEST_CASE("wkb residual decays with depth and scales homogeneously") {
  // delta' = 0.15 keeps the tau-expansion in-regime over the swept grid
  // (the b-coefficients grow like (1/delta'^2)^k).
  Lab lab;
  Expr q = Expr::parse("1 + 0.3*sin(pi*x1)");
  CGOSolution v1 = lab.beam({1, 0}, 1.0, 0.0, +1, 0.15, 64);
  CGOSolution v2 = lab.beam({0, 1}, 1.0, 0.0, +1, 0.15, 64);
  std::vector<double> taus = {128, 256, 512, 1024};

  WkbAnsatz w1 = WkbAnsatz::pair(v1, v2, q, 1);
  WkbResidualReport r1 = wkb_residual(w1, taus, 2);
  CHECK(r1.quadrature_converged);
  CHECK(std::abs(r1.slope - (-1.0)) <= 0.5);

  WkbAnsatz w2 = WkbAnsatz::pair(v1, v2, q, 2);
  WkbResidualReport r2 = wkb_residual(w2, taus, 2);
  CHECK(std::abs(r2.slope - (-2.0)) <= 0.5);
  // Adding b_{-3} strictly decreases the residual at tau = 512.
  CHECK(r2.residual[2] < r1.residual[2]);

  // Homogeneity: scaling q scales both sides; the normalized report is equal.
  Expr q2 = Expr::parse("2*(1 + 0.3*sin(pi*x1))");
  WkbAnsatz w1s = WkbAnsatz::pair(v1, v2, q2, 1);
  WkbResidualReport r1s = wkb_residual(w1s, taus, 2);
  for (size_t i = 0; i < taus.size(); ++i)
    CHECK(r1s.residual[i] == doctest::Approx(r1.residual[i]).epsilon(1e-9));
}

TEST_CASE("boundary-data locality: interior bump does not change boundary traces") {
  Lab lab;
  Expr q1 = Expr::parse("1 + 0.2*x1");
  // Interior bump vanishing to high order away from the center plane.
  Expr q2 = Expr::parse("1 + 0.2*x1 + (x1*(1-x1))^4 * sin(pi*y1)*sin(pi*y2)");
  CGOSolution v1 = lab.beam({1, 0}, 1.0, 0.0, +1, 0.12, 64);
  CGOSolution v2 = lab.beam({0, 1}, 1.0, 0.0, +1, 0.12, 64);
  WkbAnsatz a1 = WkbAnsatz::pair(v1, v2, q1, 1);
  WkbAnsatz a2 = WkbAnsatz::pair(v1, v2, q2, 1);
  for (double x1 : {0.0, 1.0}) {
    for (Vec2 yp : {Vec2{0.5, 0.5}, Vec2{0.55, 0.48}, Vec2{0.42, 0.5}}) {
      Cplx w1 = a1.value(x1, yp);
      Cplx w2 = a2.value(x1, yp);
      CHECK(std::abs(w1 - w2) <= 1e-10 * std::max(1.0, std::abs(w1)));
    }
  }
}

TEST_CASE("ansatz depth validation") {
  Lab lab;
  CGOSolution v1 = lab.beam({1, 0}, 1.0, 0.0, +1, 0.15, 64);
  CGOSolution v2 = lab.beam({0, 1}, 1.0, 0.0, +1, 0.15, 64);
  CHECK_THROWS_AS(WkbAnsatz::pair(v1, v2, Expr::constant(1.0), 0), Error);
  CHECK_THROWS_AS(WkbAnsatz::pair(v1, v2, Expr::constant(1.0), 5), Error);
  WkbAnsatz w = WkbAnsatz::pair(v1, v2, Expr::constant(1.0), 1);
  CHECK_THROWS_AS(w.coefficient(3, 0.1, {0.5, 0.5}), Error);
}
