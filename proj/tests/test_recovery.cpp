#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/recovery.hpp"

using namespace ctalab;

namespace {

TransversalGeometry wide_geom() {
  TransversalSpec s;
  s.tube_radius = 0.3;
  return TransversalGeometry(s);
}

}  // namespace

TEST_CASE("hessian constant cA") {
  TransversalGeometry geom = wide_geom();
  DirectionScheme xi = build_xi_scheme(geom, {0.5, 0.5}, {1, 0}, 0.1);
  Expr q0 = Expr::constant(0.0);
  AsymptoticContext ctx(geom, xi, q0, q0, 3, 0.3, 0.1);
  double cA = hessian_constant_cA(ctx.beams());

  // Quadrature oracle: integrate e^{x.Ax} with A rebuilt from the beams.
  double a11 = 0, a12 = 0, a22 = 0;
  for (const auto& b : ctx.beams()) {
    double imH = b.riccati().H_spline.eval(0.0).imag();
    Vec2 n = b.chart().frame_normal(0.0);
    a11 += -0.5 * b.speed() * imH * n.x * n.x;
    a12 += -0.5 * b.speed() * imH * n.x * n.y;
    a22 += -0.5 * b.speed() * imH * n.y * n.y;
  }
  double quad = 0, L = 12.0, nn = 1200;
  for (int i = 0; i < nn; ++i)
    for (int j = 0; j < nn; ++j) {
      double xx = -L + 2 * L * (i + 0.5) / nn, yy = -L + 2 * L * (j + 0.5) / nn;
      quad += std::exp(a11 * xx * xx + 2 * a12 * xx * yy + a22 * yy * yy) * (2 * L / nn) *
              (2 * L / nn);
    }
  CHECK(cA == doctest::Approx(quad).epsilon(1e-6));

  // Scaling: Im H -> 4 Im H divides cA by 4 (2-D determinant scaling);
  // equivalently scaling A by 4.
  double det4 = (4 * a11) * (4 * a22) - (4 * a12) * (4 * a12);
  CHECK(kPi / std::sqrt(det4) == doctest::Approx(cA / 4.0).epsilon(1e-12));
}

TEST_CASE("stationary phase limit fit") {
  // Synthetic sequence v_tau = L + 3 tau^{-1/2}.
  Cplx L(0.7, -0.2);
  std::vector<AsymptoticSample> ss;
  for (double t : {64.0, 128.0, 256.0, 512.0}) {
    AsymptoticSample s;
    s.tau = t;
    s.value = L + 3.0 / std::sqrt(t);
    ss.push_back(s);
  }
  LimitEstimate est = stationary_phase_limit(ss);
  CHECK(std::abs(est.limit - L) < 1e-4);
  CHECK(std::abs(est.correction - 3.0) < 1e-3);
  CHECK(est.fit_residual < 1e-10);
  ss.pop_back();
  CHECK_THROWS_AS(stationary_phase_limit(ss), Error);
}

TEST_CASE("fourier inversion round trip") {
  // Bump whose transform is concentrated in [-30, 30].
  auto bump = [](double x) { return std::exp(-std::pow((x - 0.5) / 0.2, 2)); };
  int nl = 64;
  std::vector<double> lams(nl);
  std::vector<Cplx> vals(nl);
  for (int i = 0; i < nl; ++i) {
    lams[i] = -30.0 + 60.0 * i / (nl - 1);
    Cplx acc = 0;
    int N = 2000;
    for (int k = 0; k < N; ++k) {
      double x = (k + 0.5) / N;
      acc += bump(x) * std::exp(Cplx(0, lams[i] * x)) / double(N);
    }
    vals[i] = acc;
  }
  FourierInversion inv = fourier_invert(lams, vals, 201);
  double num = 0, den = 0;
  for (size_t i = 0; i < inv.x1.size(); ++i) {
    double d = inv.profile[i] - bump(inv.x1[i]);
    num += d * d;
    den += bump(inv.x1[i]) * bump(inv.x1[i]);
  }
  CHECK(std::sqrt(num / den) <= 0.01);
  CHECK(inv.imag_residue < 1e-6);
  CHECK(inv.symmetry_defect < 1e-9);

  // Zero input gives the zero profile.
  std::vector<Cplx> zeros(nl, Cplx(0, 0));
  FourierInversion z = fourier_invert(lams, zeros, 33);
  for (double v : z.profile) CHECK(v == 0.0);
}

TEST_CASE("order-3 asymptotic samples: equal potentials vanish") {
  TransversalGeometry geom = wide_geom();
  DirectionScheme xi = build_xi_scheme(geom, {0.5, 0.5}, {1, 0}, 0.1);
  Expr q = Expr::parse("sin(pi*x1)*(0.9 + 0.2*sin(pi*y1)*sin(pi*y2))");
  AsymptoticContext ctx(geom, xi, q, q, 3, 0.3, 0.12);
  for (double tau : {1024.0, 4096.0}) {
    AsymptoticSample s = ctx.sample(tau, 2.0);
    CHECK(std::abs(s.value) < 1e-12);
  }
}

TEST_CASE("order-3 limit matches the closed-form prediction") {
  TransversalGeometry geom = wide_geom();
  DirectionScheme xi = build_xi_scheme(geom, {0.5, 0.5}, {1, 0}, 0.1);
  Expr q1 = Expr::parse("sin(pi*x1)*(0.9 + 0.2*sin(pi*y1)*sin(pi*y2))");
  Expr q2 = Expr::parse("0.5*sin(pi*x1)");
  AsymptoticContext ctx(geom, xi, q1, q2, 3, 0.3, 0.12);
  double cA = hessian_constant_cA(ctx.beams());
  Cplx norm = cA * ctx.amplitude_product_p0() * ctx.coupling_combination_p0();

  std::vector<double> taus = {4096, 8192, 16384, 32768};
  for (double lam : {0.0, 4.0}) {
    std::vector<AsymptoticSample> ss;
    for (double t : taus) ss.push_back(ctx.sample(t, lam));
    LimitEstimate est = stationary_phase_limit(ss);
    Cplx Fhat = 0;
    int N = 3000;
    for (int i = 0; i < N; ++i) {
      double x1 = (i + 0.5) / N;
      double a = q1.eval(x1, 0.5, 0.5), b = q2.eval(x1, 0.5, 0.5);
      Fhat += std::exp(Cplx(0, lam * x1)) * (a * a - b * b) / double(N);
    }
    Cplx pred = norm * Fhat;
    CHECK(std::abs(est.limit - pred) <= 0.10 * std::abs(pred));
    CHECK(ss.back().quad_rel_error < 1e-3);
  }
}

TEST_CASE("order-4: odd-potential pair defeats order 3 but not order 4") {
  TransversalGeometry geom = wide_geom();
  Expr q1 = Expr::parse("sin(pi*x1)*(1 - 0.15*(1 - cos(2*pi*x1)))*(0.8 + 0.2*sin(pi*y1))");
  Expr q2 = Expr::parse("-sin(pi*x1)*(1 - 0.15*(1 - cos(2*pi*x1)))*(0.8 + 0.2*sin(pi*y1))");

  // Order 3 sees q1^2 - q2^2 = 0.
  DirectionScheme xi = build_xi_scheme(geom, {0.5, 0.5}, {1, 0}, 0.1);
  AsymptoticContext c3(geom, xi, q1, q2, 3, 0.3, 0.12);
  CHECK(std::abs(c3.sample(4096.0, 2.0).value) < 1e-12);

  // Order 4 recovers the cube difference.
  DirectionScheme ze = build_zeta_scheme(geom, {0.5, 0.5}, 0.3);
  AsymptoticContext c4(geom, ze, q1, q2, 4, 0.3, 0.05);
  double cA = hessian_constant_cA(c4.beams());
  Cplx norm = cA * c4.amplitude_product_p0() * c4.coupling_combination_p0();
  std::vector<AsymptoticSample> ss;
  for (double t : {4096.0, 8192.0, 16384.0, 32768.0}) ss.push_back(c4.sample(t, 0.0));
  LimitEstimate est = stationary_phase_limit(ss);
  Cplx Fhat = 0;
  int N = 3000;
  for (int i = 0; i < N; ++i) {
    double x1 = (i + 0.5) / N;
    double a = q1.eval(x1, 0.5, 0.5), b = q2.eval(x1, 0.5, 0.5);
    Fhat += Cplx(a * a * a - b * b * b, 0) / double(N);
  }
  Cplx pred = norm * Fhat;
  CHECK(std::abs(est.limit - pred) <= 0.10 * std::abs(pred));
}

TEST_CASE("q-profile reconstruction from squares and cubes") {
  std::vector<double> x1, P2, P3;
  auto qf = [](double x) { return 0.8 * std::sin(kPi * x); };

  SUBCASE("q2 = 0: cube root recovers q1") {
    for (int i = 0; i <= 40; ++i) {
      double x = i / 40.0;
      x1.push_back(x);
      double q = qf(x);
      P2.push_back(q * q);
      P3.push_back(q * q * q);
    }
    QProfileResult r = recover_q_profile(x1, P2, P3);
    for (size_t i = 0; i < x1.size(); ++i)
      CHECK(r.q_diff[i] == doctest::Approx(qf(x1[i])).epsilon(1e-6));
    CHECK(r.consistency < 1e-10);
  }

  SUBCASE("q1 = -q2: sign ambiguity resolved by the cube") {
    for (int i = 0; i <= 40; ++i) {
      double x = i / 40.0;
      x1.push_back(x);
      double q = qf(x);
      P2.push_back(0.0);
      P3.push_back(2.0 * q * q * q);
    }
    QProfileResult r = recover_q_profile(x1, P2, P3);
    for (size_t i = 0; i < x1.size(); ++i)
      CHECK(r.q_diff[i] == doctest::Approx(2.0 * qf(x1[i])).epsilon(1e-9));
  }

  SUBCASE("q1 = q2 gives zero") {
    for (int i = 0; i <= 10; ++i) {
      x1.push_back(i / 10.0);
      P2.push_back(0.0);
      P3.push_back(0.0);
    }
    QProfileResult r = recover_q_profile(x1, P2, P3);
    for (double d : r.q_diff) CHECK(d == 0.0);
  }
}

TEST_CASE("boundary determination") {
  Grid3 g{12, 12, 12};
  TransversalGeometry geom{TransversalSpec{}};
  Expr V = Expr::parse("0.5 + 0.3*y1");
  Expr q = Expr::parse("1 + 0.5*sin(pi*x1)*sin(pi*y1)*sin(pi*y2)");

  SUBCASE("order 0 is an exact round trip; eps0-invariance") {
    std::vector<BoundaryField> recs;
    for (double eps0 : {0.005, 0.01, 0.02}) {
      BoundaryJet jet = boundary_recover(g, geom, V, q, 2, eps0, 1);
      for (int j = 0; j < g.p2(); ++j)
        for (int k = 0; k < g.p3(); ++k) {
          double truth = q.eval(0.0, j * g.h2(), k * g.h3());
          CHECK(jet.q_boundary.values[g.idx(0, j, k)] ==
                doctest::Approx(truth).epsilon(1e-10));
        }
      recs.push_back(jet.q_boundary);
    }
    for (std::size_t m = 0; m < recs[0].values.size(); ++m) {
      CHECK(std::abs(recs[1].values[m] - recs[0].values[m]) <=
            1e-4 * std::max(1.0, std::abs(recs[0].values[m])));
      CHECK(std::abs(recs[2].values[m] - recs[0].values[m]) <=
            1e-4 * std::max(1.0, std::abs(recs[0].values[m])));
    }
  }

  SUBCASE("normal derivative: constants give zero; smooth q is recovered") {
    // The eps0-division puts the recovered normal derivative at the
    // one-sided-DN discretization level (C h^2), ~5e-3 at 12^3.
    BoundaryJet flat_jet =
        boundary_recover(g, geom, Expr::constant(0.5), Expr::constant(1.0), 2, 0.01, 2);
    for (int j = 2; j < g.n2 - 1; ++j)
      for (int k = 2; k < g.n3 - 1; ++k)
        CHECK(std::abs(flat_jet.dnu_q.values[g.idx(0, j, k)]) < 1e-2);

    BoundaryJet jet = boundary_recover(g, geom, V, q, 2, 0.01, 2);
    Expr dq_x1 = q.derivative("x1");
    double worst = 0;
    for (int j = 2; j < g.n2 - 1; ++j)
      for (int k = 2; k < g.n3 - 1; ++k) {
        double truth = -dq_x1.eval(0.0, j * g.h2(), k * g.h3());
        worst = std::max(worst, std::abs(jet.dnu_q.values[g.idx(0, j, k)] - truth));
      }
    CHECK(worst < 0.05);
  }

  SUBCASE("m = 3 recovery also round-trips; algebraic eps0 factor") {
    double eps0 = 0.01;
    BoundaryJet jet3 = boundary_recover(g, geom, V, q, 3, eps0, 1);
    for (int j = 0; j < g.p2(); ++j) {
      double truth = q.eval(0.0, j * g.h2(), 0.5);
      // boundary node (0, j, mid)
      int k = g.n3 / 2;
      CHECK(jet3.q_boundary.values[g.idx(0, j, k)] == doctest::Approx(truth).epsilon(1e-9));
      // The same q-tilde read with the wrong power differs by 2 eps0 / (3 eps0^2).
      double qt_m2 = 2.0 * truth * eps0;  // (q~ - V) built with m = 2
      double wrong_m3 = qt_m2 / (3.0 * eps0 * eps0);
      CHECK(wrong_m3 == doctest::Approx(truth * 2.0 / (3.0 * eps0)).epsilon(1e-12));
    }
  }

  CHECK_THROWS_AS(boundary_recover(g, geom, V, q, 2, 0.0, 1), Error);
}

TEST_CASE("carleman probe") {
  Grid3 g{16, 16, 16};
  TransversalGeometry geom{TransversalSpec{}};
  DiscreteOperator op(g, geom, Expr::constant(1.0));

  SUBCASE("random family: positive stable floor, inequality never violated") {
    std::vector<double> taus = {8, 16, 32, 64};
    ProbeReport rep = carleman_probe(op, 30, taus, 42, 2);
    CHECK(rep.c_hat > 0.0);
    CHECK_FALSE(rep.inequality_violated_on_resample);
    CHECK(rep.c_hat_doubled <= rep.c_hat + 1e-12);
    CHECK(rep.c_hat_doubled >= 0.5 * rep.c_hat);
  }

  SUBCASE("boundary-flat test function: ratio grows linearly in tau") {
    // v = sin(pi x1) sin(pi y1) sin(pi y2) through the probe internals:
    // run the probe on a single-function family twice at different tau and
    // compare. The ratio for fixed v is monotone ~ tau for large tau.
    ProbeReport lo = carleman_probe(op, 1, {16.0}, 7, 1);
    ProbeReport hi = carleman_probe(op, 1, {64.0}, 7, 1);
    CHECK(hi.c_hat > 2.0 * lo.c_hat);
  }
}
