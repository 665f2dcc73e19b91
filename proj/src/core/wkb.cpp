#include "core/wkb.hpp"

#include <cmath>

namespace ctalab {

ProductPhase::ProductPhase(std::vector<CGOSolution> beams) : beams_(std::move(beams)) {
  if (beams_.empty()) return;
  if (beams_.size() != 2 && beams_.size() != 3)
    fail_invalid("ProductPhase: two or three beams required");
  for (const auto& b : beams_) {
    sum_sign_c_ += b.sign() * b.speed();
    sum_sign_lambda_ += b.sign() * b.lambda();
    if (b.corrections() != 0)
      fail_invalid("ProductPhase: product constructions use principal-amplitude beams");
  }
}

ProductPhase::Eval ProductPhase::eval(const Vec2& yprime) const {
  Eval e;
  e.cutoff = 1.0;
  e.a0_prod = 1.0;
  for (const auto& b : beams_) {
    CgoChartData d = b.chart_data(yprime);
    if (!d.in_tube) {
      e.in_support = false;
      return e;
    }
    double c = b.speed(), lam = b.lambda();
    e.psi_c += c * d.psi;
    e.grad_psi_c = e.grad_psi_c + d.grad_psi * Cplx(c, 0);
    e.lap_psi_c += c * d.lap_psi;
    e.lam_psi += lam * d.psi;
    e.grad_lam_psi = e.grad_lam_psi + d.grad_psi * Cplx(lam, 0);
    e.lap_lam_psi += lam * d.lap_psi;
    e.a0_prod *= d.a0;
    e.cutoff *= d.cutoff;
  }
  const TransversalGeometry& g = beams_.front().chart().geometry();
  Mat2 gm = g.metric(yprime);
  e.gi = gm.inverse();
  e.sqrtg = std::sqrt(gm.det());
  e.in_support = e.cutoff > 0.0;
  return e;
}

Cplx ProductPhase::pair(const CVec3& a, const CVec3& b, const Eval& e) const {
  Cplx yp = e.gi.a11 * a.yp.x * b.yp.x + e.gi.a12 * (a.yp.x * b.yp.y + a.yp.y * b.yp.x) +
            e.gi.a22 * a.yp.y * b.yp.y;
  return a.e1 * b.e1 + yp;
}

namespace {

/// Fourth-order central differences for the coefficient fields.
struct Fd {
  double h = 2e-4;
  template <typename F>
  Cplx d1(const F& f, double x) const {
    return (-f(x + 2 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2 * h)) / (12.0 * h);
  }
  template <typename F>
  Cplx d2(const F& f, double x) const {
    return (-f(x + 2 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2 * h)) /
           (12.0 * h * h);
  }
};

}  // namespace

WkbAnsatz WkbAnsatz::pair(CGOSolution v1, CGOSolution v2, const Expr& q, int depth,
                          const Expr& V) {
  if (depth < 1 || depth > 2) fail_invalid("second_order_ansatz: depth must be 1 or 2");
  WkbAnsatz a;
  a.phase_ = ProductPhase({std::move(v1), std::move(v2)});
  a.q_ = q;
  a.V_ = V;
  a.depth_ = depth;
  a.triple_ = false;
  a.locate_support();

  double margin = transversality_margin(a.phase_, a.support_.center, a.support_.radius);
  if (margin < 1e-8)
    fail_numeric("second_order_ansatz: <grad Psi, grad Psi> vanishes on the support near (" +
                 std::to_string(a.support_.center.x) + "," + std::to_string(a.support_.center.y) +
                 "); shrink the beam cutoffs");
  return a;
}

WkbAnsatz WkbAnsatz::triple(CGOSolution v1, CGOSolution v2, CGOSolution v3,
                            const std::vector<WkbAnsatz>& pair_ansatzes, const Expr& q, int depth,
                            const Expr& V) {
  if (depth < 1 || depth > 2) fail_invalid("third_order_ansatz: depth must be 1 or 2");
  if (pair_ansatzes.size() != 3)
    fail_invalid("third_order_ansatz: the three pair ansatzes (23), (13), (12) are required");
  for (const auto& p : pair_ansatzes) {
    if (p.is_triple()) fail_invalid("third_order_ansatz: pair ansatzes must not be triples");
    if (p.depth() < depth)
      fail_invalid("third_order_ansatz: pair ansatz depth must be >= the triple depth");
  }
  WkbAnsatz a;
  a.phase_ = ProductPhase({std::move(v1), std::move(v2), std::move(v3)});
  a.pair_ansatzes_ = pair_ansatzes;
  a.q_ = q;
  a.V_ = V;
  a.depth_ = depth;
  a.triple_ = true;
  a.locate_support();

  double margin = transversality_margin(a.phase_, a.support_.center, a.support_.radius);
  if (margin < 1e-8)
    fail_numeric("third_order_ansatz: <grad Psit, grad Psit> vanishes on the support near (" +
                 std::to_string(a.support_.center.x) + "," + std::to_string(a.support_.center.y) +
                 ")");
  return a;
}

void WkbAnsatz::locate_support() {
  const auto& beams = phase_.beams();
  Vec2 c = beams.front().chart().geodesic().seed_point();
  for (const auto& b : beams) {
    Vec2 s = b.chart().geodesic().seed_point();
    if ((s - c).norm() > 1e-8)
      fail_invalid("wkb ansatz: beams must share the intersection point (common seed)");
  }
  support_.center = c;
  double sum_dp = 0.0, min_sin = 1.0;
  for (size_t i = 0; i < beams.size(); ++i) sum_dp = std::max(sum_dp, beams[i].delta_prime());
  for (size_t i = 0; i < beams.size(); ++i)
    for (size_t k = i + 1; k < beams.size(); ++k) {
      Vec2 a = beams[i].chart().geodesic().seed_direction();
      Vec2 b = beams[k].chart().geodesic().seed_direction();
      min_sin = std::min(min_sin, std::abs(a.x * b.y - a.y * b.x));
    }
  support_.radius = std::min(0.45, 2.0 * sum_dp / std::max(0.2, min_sin));
}

Cplx WkbAnsatz::source_term(int j, double x1, const Vec2& yprime) const {
  // Pair: E_0 = 2 q a0^(1) a0^(2) (with cutoffs); other E_{-j} vanish for
  // principal beams. Triple: H_{-j} = 2 q sum_i a0^(i) beta_{-j}^{(jk)}.
  if (!triple_) {
    if (j != 0) return 0.0;
    ProductPhase::Eval e = phase_.eval(yprime);
    if (!e.in_support) return 0.0;
    return 2.0 * q_.eval(x1, yprime.x, yprime.y) * e.a0_prod * e.cutoff;
  }
  if (j < 2) return 0.0;
  const auto& beams = phase_.beams();
  Cplx acc = 0.0;
  // pair_ansatzes_ ordered as (jk) complements of beam i: [0]=(23), [1]=(13), [2]=(12).
  for (int i = 0; i < 3; ++i) {
    CgoChartData d = beams[i].chart_data(yprime);
    if (!d.in_tube) return 0.0;
    Cplx b = pair_ansatzes_[i].coefficient(j, x1, yprime);
    acc += d.a0 * d.cutoff * b;
  }
  return 2.0 * q_.eval(x1, yprime.x, yprime.y) * acc;
}

Cplx WkbAnsatz::coefficient(int k, double x1, const Vec2& yprime) const {
  ProductPhase::Eval e = phase_.eval(yprime);
  if (!e.in_support) return 0.0;
  Cplx denom = phase_.grad_psi_sq(e);

  int kmin = k_min();
  if (k < kmin || k > kmin + depth_ - 1)
    fail_invalid("wkb coefficient index out of the built range");

  if (k == kmin) {
    return source_term(kmin - 2, x1, yprime) / denom;
  }

  // One recursion step: beta_{-k} = [E_{-k+2} - (2<grad b, grad Psi> +
  // (2<grad Lambda, grad Psi> + lap Psi) b)] / <grad Psi, grad Psi>,
  // with b = beta_{-(k-1)}. (The (Delta - V) term enters only two levels up.)
  Fd fd;
  auto prev = [&](double xx1, const Vec2& yy) { return coefficient(k - 1, xx1, yy); };
  Cplx b = prev(x1, yprime);
  CVec3 grad_b;
  grad_b.e1 = fd.d1([&](double u) { return prev(u, yprime); }, x1);
  grad_b.yp.x = fd.d1([&](double u) { return prev(x1, Vec2{u, yprime.y}); }, yprime.x);
  grad_b.yp.y = fd.d1([&](double u) { return prev(x1, Vec2{yprime.x, u}); }, yprime.y);

  CVec3 gpsi = phase_.grad_psi(e);
  CVec3 glam = phase_.grad_lambda(e);
  Cplx transport = 2.0 * phase_.pair(grad_b, gpsi, e) +
                   (2.0 * phase_.pair(glam, gpsi, e) + phase_.lap_psi(e)) * b;
  return (source_term(k - 2, x1, yprime) - transport) / denom;
}

Cplx WkbAnsatz::leading_closed_form(double x1, const Vec2& yprime, int grouping) const {
  const auto& beams = phase_.beams();
  double qv = q_.eval(x1, yprime.x, yprime.y);
  if (!triple_) {
    // b_{-2} = 2q a0^(1) a0^(2) / [ (sum signed c)^2 - |c1 grad psi1 + c2 grad psi2|^2 ].
    CgoChartData d1 = beams[0].chart_data(yprime);
    CgoChartData d2 = beams[1].chart_data(yprime);
    if (!d1.in_tube || !d2.in_tube) return 0.0;
    const TransversalGeometry& g = beams[0].chart().geometry();
    Mat2 gi = g.metric(yprime).inverse();
    ComplexVec2 S = d1.grad_psi * Cplx(beams[0].speed(), 0) +
                    d2.grad_psi * Cplx(beams[1].speed(), 0);
    Cplx S2 = gi.a11 * S.x * S.x + 2.0 * gi.a12 * S.x * S.y + gi.a22 * S.y * S.y;
    double sc = beams[0].sign() * beams[0].speed() + beams[1].sign() * beams[1].speed();
    Cplx denom = sc * sc - S2;
    return 2.0 * qv * d1.a0 * d2.a0 * d1.cutoff * d2.cutoff / denom;
  }
  // B_{-4} = 4 q^2 a0 a0 a0 (1/D_123) x inner grouping over the pair denominators.
  CgoChartData d[3];
  for (int i = 0; i < 3; ++i) {
    d[i] = beams[i].chart_data(yprime);
    if (!d[i].in_tube) return 0.0;
  }
  const TransversalGeometry& g = beams[0].chart().geometry();
  Mat2 gi = g.metric(yprime).inverse();
  auto denom_of = [&](std::vector<int> idx) {
    ComplexVec2 S;
    double sc = 0;
    for (int i : idx) {
      S = S + d[i].grad_psi * Cplx(beams[i].speed(), 0);
      sc += beams[i].sign() * beams[i].speed();
    }
    Cplx S2 = gi.a11 * S.x * S.x + 2.0 * gi.a12 * S.x * S.y + gi.a22 * S.y * S.y;
    return Cplx(sc * sc, 0) - S2;
  };
  Cplx D123 = denom_of({0, 1, 2});
  Cplx D12 = denom_of({0, 1}), D13 = denom_of({0, 2}), D23 = denom_of({1, 2});
  Cplx inner = grouping == 0 ? (1.0 / D12 + 1.0 / D13 + 1.0 / D23) : 1.0 / (D12 + D13 + D23);
  Cplx cut = d[0].cutoff * d[1].cutoff * d[2].cutoff;
  return 4.0 * qv * qv * d[0].a0 * d[1].a0 * d[2].a0 * cut * inner / D123;
}

Cplx WkbAnsatz::value(double x1, const Vec2& yprime) const {
  ProductPhase::Eval e = phase_.eval(yprime);
  if (!e.in_support) return 0.0;
  double tau = phase_.tau();
  Cplx btau = 0.0;
  for (int k = k_min(); k < k_min() + depth_; ++k)
    btau += coefficient(k, x1, yprime) * std::pow(tau, -k);
  Cplx expo = tau * phase_.psi_value(x1, e) + phase_.lambda_value(x1, e);
  return std::pow(tau, tau_power()) * std::exp(expo) * btau;
}

double transversality_margin(const ProductPhase& phase, const Vec2& center, double radius,
                             int samples_per_axis) {
  double margin = 1e300;
  bool any = false;
  for (int i = 0; i < samples_per_axis; ++i)
    for (int j = 0; j < samples_per_axis; ++j) {
      Vec2 p{center.x - radius + 2 * radius * i / (samples_per_axis - 1),
             center.y - radius + 2 * radius * j / (samples_per_axis - 1)};
      ProductPhase::Eval e = phase.eval(p);
      if (!e.in_support) continue;
      any = true;
      margin = std::min(margin, std::abs(phase.grad_psi_sq(e)));
    }
  return any ? margin : 0.0;
}

WkbResidualReport wkb_residual(const WkbAnsatz& ansatz, const std::vector<double>& tau_grid,
                               int jobs, int nx_hi, int ny_hi) {
  const ProductPhase& phase = ansatz.phase();
  const Expr& V = ansatz.potential();
  int kmin = ansatz.k_min();
  int kmax = kmin + ansatz.depth() - 1;

  // Pointwise data cached on a tensor grid over the support; the tau sweep
  // is then a cheap recombination (the coefficients are tau-independent).
  struct PointData {
    double weight = 0;
    Cplx expo_lam;
    std::vector<Cplx> beta, grad_e1, lap;
    std::vector<ComplexVec2> grad_yp;
    std::vector<Cplx> source;  // j = kmin-2 .. kmax-1
    Cplx gpsi_sq, lap_psi, lam_psi_pair, lam_sq, lap_lam;
    CVec3 gpsi, glam;
    Mat2 gi;
    double Vv = 0;
  };

  auto pair_with = [&](const Mat2& gi, const CVec3& a, const CVec3& b) {
    Cplx yp = gi.a11 * a.yp.x * b.yp.x + gi.a12 * (a.yp.x * b.yp.y + a.yp.y * b.yp.x) +
              gi.a22 * a.yp.y * b.yp.y;
    return a.e1 * b.e1 + yp;
  };

  auto build_points = [&](int nx, int nyp, std::vector<PointData>& pts, double* source_norm2) {
    const std::array<double, 8> gl_x = {-0.9602898564975363, -0.7966664774136267,
                                        -0.5255324099163290, -0.1834346424956498,
                                        0.1834346424956498,  0.5255324099163290,
                                        0.7966664774136267,  0.9602898564975363};
    const std::array<double, 8> gl_w = {0.1012285362903763, 0.2223810344533745,
                                        0.3137066458778873, 0.3626837833783620,
                                        0.3626837833783620, 0.3137066458778873,
                                        0.2223810344533745, 0.1012285362903763};
    Fd fd;
    Vec2 c = ansatz.support().center;
    double R = ansatz.support().radius;
    const TransversalGeometry& geom = phase.beams()[0].chart().geometry();
    *source_norm2 = 0.0;
    std::vector<std::vector<PointData>> task_pts(nx * 8);
    std::vector<double> task_src(nx * 8, 0.0);
    parallel_for(nx * 8, jobs, [&](size_t task) {
      int ix = static_cast<int>(task) / 8;
      int a = static_cast<int>(task) % 8;
      std::vector<PointData>& pts_local = task_pts[task];
      double& src_local = task_src[task];
      {
        double x1 = (ix + 0.5 * (1.0 + gl_x[a])) / nx;
        double wx = gl_w[a] * 0.5 / nx;
        for (int iy = 0; iy < nyp; ++iy)
          for (int b = 0; b < 8; ++b) {
            double y1 = c.x - R + (iy + 0.5 * (1.0 + gl_x[b])) * (2.0 * R / nyp);
            double wy1 = gl_w[b] * R / nyp;
            for (int iz = 0; iz < nyp; ++iz)
              for (int cc = 0; cc < 8; ++cc) {
                double y2 = c.y - R + (iz + 0.5 * (1.0 + gl_x[cc])) * (2.0 * R / nyp);
                double wy2 = gl_w[cc] * R / nyp;
                Vec2 yp{y1, y2};
                ProductPhase::Eval e = phase.eval(yp);
                if (!e.in_support) continue;
                PointData p;
                p.weight = wx * wy1 * wy2 * e.sqrtg;
                p.expo_lam = std::exp(phase.lambda_value(x1, e));
                p.gpsi = phase.grad_psi(e);
                p.glam = phase.grad_lambda(e);
                p.gi = e.gi;
                p.gpsi_sq = phase.pair(p.gpsi, p.gpsi, e);
                p.lap_psi = phase.lap_psi(e);
                p.lam_psi_pair = phase.pair(p.glam, p.gpsi, e);
                p.lam_sq = phase.pair(p.glam, p.glam, e);
                p.lap_lam = phase.lap_lambda(e);
                p.Vv = V.eval(x1, yp.x, yp.y);
                for (int k = kmin; k <= kmax; ++k) {
                  auto f = [&](double u1, Vec2 uy) { return ansatz.coefficient(k, u1, uy); };
                  p.beta.push_back(f(x1, yp));
                  p.grad_e1.push_back(fd.d1([&](double u) { return f(u, yp); }, x1));
                  ComplexVec2 gy;
                  gy.x = fd.d1([&](double u) { return f(x1, Vec2{u, yp.y}); }, yp.x);
                  gy.y = fd.d1([&](double u) { return f(x1, Vec2{yp.x, u}); }, yp.y);
                  p.grad_yp.push_back(gy);
                  Cplx lxx = fd.d2([&](double u) { return f(u, yp); }, x1);
                  Cplx l11 = fd.d2([&](double u) { return f(x1, Vec2{u, yp.y}); }, yp.x);
                  Cplx l22 = fd.d2([&](double u) { return f(x1, Vec2{yp.x, u}); }, yp.y);
                  Cplx l12;
                  {
                    double h = fd.h;
                    l12 = (f(x1, Vec2{yp.x + h, yp.y + h}) + f(x1, Vec2{yp.x - h, yp.y - h}) -
                           f(x1, Vec2{yp.x + h, yp.y - h}) - f(x1, Vec2{yp.x - h, yp.y + h})) /
                          (4.0 * h * h);
                  }
                  auto G = geom.christoffel(yp);
                  Cplx lap_chart = e.gi.a11 * l11 + 2.0 * e.gi.a12 * l12 + e.gi.a22 * l22;
                  double gam1 =
                      e.gi.a11 * G[0][0][0] + 2 * e.gi.a12 * G[0][0][1] + e.gi.a22 * G[0][1][1];
                  double gam2 =
                      e.gi.a11 * G[1][0][0] + 2 * e.gi.a12 * G[1][0][1] + e.gi.a22 * G[1][1][1];
                  lap_chart -= gam1 * gy.x + gam2 * gy.y;
                  p.lap.push_back(lxx + lap_chart);
                }
                for (int j = kmin - 2; j <= kmax - 1; ++j)
                  p.source.push_back(ansatz.source_term(j, x1, yp));
                double s0 = std::abs(p.expo_lam * p.source[0]);
                src_local += p.weight * s0 * s0;
                pts_local.push_back(std::move(p));
              }
          }
      }
    });
    for (int task = 0; task < nx * 8; ++task) {
      *source_norm2 += task_src[task];
      for (auto& p : task_pts[task]) pts.push_back(std::move(p));
    }
  };

  auto eval_norm = [&](const std::vector<PointData>& pts, double tau) {
    double acc = 0.0;
    for (const auto& p : pts) {
      Cplx beta_t = 0, lap = 0;
      CVec3 gb{Cplx(0, 0), ComplexVec2()};
      for (int k = kmin; k <= kmax; ++k) {
        double w = std::pow(tau, -k);
        size_t i = k - kmin;
        beta_t += w * p.beta[i];
        gb.e1 += w * p.grad_e1[i];
        gb.yp = gb.yp + p.grad_yp[i] * Cplx(w, 0);
        lap += w * p.lap[i];
      }
      Cplx src = 0.0;
      for (int j = kmin - 2; j <= kmax - 1; ++j)
        src += std::pow(tau, -j) * p.source[j - (kmin - 2)];

      Cplx gb_gp = pair_with(p.gi, gb, p.gpsi);
      Cplx gl_gb = pair_with(p.gi, p.glam, gb);
      Cplx P = tau * tau * p.gpsi_sq * beta_t +
               tau * (2.0 * gb_gp + (p.lap_psi + 2.0 * p.lam_psi_pair) * beta_t) +
               (lap + 2.0 * gl_gb + (p.lap_lam + p.lam_sq - p.Vv) * beta_t);
      acc += p.weight * std::norm(p.expo_lam * (P - src));
    }
    return std::sqrt(acc);
  };

  WkbResidualReport rep;
  rep.tau = tau_grid;
  std::vector<PointData> pts_lo, pts_hi;
  double src2_lo = 0, src2_hi = 0;
  build_points(std::max(1, 2 * nx_hi / 3), std::max(2, 2 * ny_hi / 3), pts_lo, &src2_lo);
  build_points(nx_hi, ny_hi, pts_hi, &src2_hi);

  rep.residual.resize(tau_grid.size());
  for (size_t i = 0; i < tau_grid.size(); ++i) {
    double lo = eval_norm(pts_lo, tau_grid[i]) / std::sqrt(src2_lo);
    double hi = eval_norm(pts_hi, tau_grid[i]) / std::sqrt(src2_hi);
    rep.residual[i] = hi;
    double rel = std::abs(hi - lo) / (std::abs(hi) + 1e-300);
    rep.max_quadrature_change = std::max(rep.max_quadrature_change, rel);
    if (rel > 0.10) rep.quadrature_converged = false;
  }
  if (tau_grid.size() >= 2) {
    std::vector<double> lx, ly;
    for (size_t i = 0; i < tau_grid.size(); ++i) {
      lx.push_back(std::log(tau_grid[i]));
      ly.push_back(std::log(rep.residual[i]));
    }
    LineFit f = fit_line(lx, ly);
    rep.slope = f.slope;
    rep.slope_halfwidth95 = f.slope_halfwidth95;
  }
  return rep;
}

}  // namespace ctalab
