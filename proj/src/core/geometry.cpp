#include "core/geometry.hpp"

#include <cmath>
#include <sstream>

namespace ctalab {

namespace {

struct State4 {
  Vec2 p, v;
  State4 operator+(const State4& r) const { return {p + r.p, v + r.v}; }
  State4 operator*(double s) const { return {p * s, v * s}; }
};

State4 geodesic_rhs(const TransversalGeometry& g, const State4& s) {
  auto G = g.christoffel(s.p);
  Vec2 acc;
  const double v[2] = {s.v.x, s.v.y};
  for (int k = 0; k < 2; ++k) {
    double a = 0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) a += G[k][i][j] * v[i] * v[j];
    (k == 0 ? acc.x : acc.y) = -a;
  }
  return {s.v, acc};
}

State4 rk4_step(const TransversalGeometry& g, const State4& s, double h) {
  State4 k1 = geodesic_rhs(g, s);
  State4 k2 = geodesic_rhs(g, s + k1 * (h / 2));
  State4 k3 = geodesic_rhs(g, s + k2 * (h / 2));
  State4 k4 = geodesic_rhs(g, s + k3 * h);
  return s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
}

}  // namespace

TransversalGeometry::TransversalGeometry(const TransversalSpec& spec) : spec_(spec) {
  flat_ = spec.metric == MetricKind::Flat || spec.epsilon == 0.0;
  if (!flat_) {
    phi_ = Expr::parse(spec.phi);
    phi_d_[0] = phi_.derivative("y1");
    phi_d_[1] = phi_.derivative("y2");
    phi_dd_[0] = phi_d_[0].derivative("y1");
    phi_dd_[1] = phi_d_[0].derivative("y2");
    phi_dd_[2] = phi_d_[1].derivative("y2");
  }
  extension_margin_ = 0.1 * diameter();
  check_positive_definite();
}

double TransversalGeometry::conformal_factor(const Vec2& p) const {
  return 1.0 + spec_.epsilon * phi_.eval(0.0, p.x, p.y);
}

Mat2 TransversalGeometry::metric(const Vec2& p) const {
  if (flat_) return {1.0, 0.0, 1.0};
  double c = conformal_factor(p);
  return {c, 0.0, c};
}

Mat2 TransversalGeometry::metric_d(const Vec2& p, int k) const {
  if (flat_) return {0.0, 0.0, 0.0};
  double dc = spec_.epsilon * phi_d_[k].eval(0.0, p.x, p.y);
  return {dc, 0.0, dc};
}

Mat2 TransversalGeometry::metric_dd(const Vec2& p, int k, int l) const {
  if (flat_) return {0.0, 0.0, 0.0};
  int idx = (k == 0 && l == 0) ? 0 : (k == 1 && l == 1) ? 2 : 1;
  double ddc = spec_.epsilon * phi_dd_[idx].eval(0.0, p.x, p.y);
  return {ddc, 0.0, ddc};
}

std::array<std::array<std::array<double, 2>, 2>, 2> TransversalGeometry::christoffel(
    const Vec2& p) const {
  std::array<std::array<std::array<double, 2>, 2>, 2> G{};
  if (flat_) return G;
  Mat2 g = metric(p);
  Mat2 gi = g.inverse();
  Mat2 dg[2] = {metric_d(p, 0), metric_d(p, 1)};
  auto gc = [&](const Mat2& m, int i, int j) {
    return (i == 0 && j == 0) ? m.a11 : (i == 1 && j == 1) ? m.a22 : m.a12;
  };
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double s = 0;
        for (int l = 0; l < 2; ++l)
          s += gc(gi, k, l) * (gc(dg[i], l, j) + gc(dg[j], i, l) - gc(dg[l], i, j));
        G[k][i][j] = 0.5 * s;
      }
  return G;
}

double TransversalGeometry::curvature(const Vec2& p) const {
  if (flat_) return 0.0;
  // R^r_{s m n} = d_m G^r_{n s} - d_n G^r_{m s} + G^r_{m l} G^l_{n s} - G^r_{n l} G^l_{m s}
  // K = g_{1l} R^l_{2 1 2} / det g, with dG from the analytic second derivatives.
  Mat2 g = metric(p);
  Mat2 gi = g.inverse();
  Mat2 dg[2] = {metric_d(p, 0), metric_d(p, 1)};
  Mat2 ddg[2][2] = {{metric_dd(p, 0, 0), metric_dd(p, 0, 1)},
                    {metric_dd(p, 0, 1), metric_dd(p, 1, 1)}};
  auto gc = [&](const Mat2& m, int i, int j) {
    return (i == 0 && j == 0) ? m.a11 : (i == 1 && j == 1) ? m.a22 : m.a12;
  };
  auto G = christoffel(p);
  // dGamma[m][r][i][j] = d_m Gamma^r_{ij}
  double dG[2][2][2][2];
  for (int m = 0; m < 2; ++m) {
    // d_m g^{ab} = -g^{ac} (d_m g_{cd}) g^{db}
    Mat2 dgi;
    {
      double d11 = 0, d12 = 0, d22 = 0;
      for (int c = 0; c < 2; ++c)
        for (int d = 0; d < 2; ++d) {
          double t = gc(dg[m], c, d);
          d11 -= gc(gi, 0, c) * t * gc(gi, d, 0);
          d12 -= gc(gi, 0, c) * t * gc(gi, d, 1);
          d22 -= gc(gi, 1, c) * t * gc(gi, d, 1);
        }
      dgi = {d11, d12, d22};
    }
    for (int r = 0; r < 2; ++r)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          double s = 0;
          for (int l = 0; l < 2; ++l) {
            s += gc(dgi, r, l) * (gc(dg[i], l, j) + gc(dg[j], i, l) - gc(dg[l], i, j));
            s += gc(gi, r, l) *
                 (gc(ddg[m][i], l, j) + gc(ddg[m][j], i, l) - gc(ddg[m][l], i, j));
          }
          dG[m][r][i][j] = 0.5 * s;
        }
  }
  // R^l_{2 1 2}
  double Rl[2];
  for (int l = 0; l < 2; ++l) {
    double s = dG[0][l][1][1] - dG[1][l][0][1];
    for (int m = 0; m < 2; ++m) s += G[l][0][m] * G[m][1][1] - G[l][1][m] * G[m][0][1];
    Rl[l] = s;
  }
  double R1212 = g.a11 * Rl[0] + g.a12 * Rl[1];
  return R1212 / g.det();
}

double TransversalGeometry::boundary_distance(const Vec2& p) const {
  if (spec_.chart == ChartKind::Square)
    return std::min(std::min(p.x, 1.0 - p.x), std::min(p.y, 1.0 - p.y));
  double r = (p - Vec2{0.5, 0.5}).norm();
  return 0.5 - r;
}

Vec2 TransversalGeometry::boundary_normal(const Vec2& p) const {
  if (spec_.chart == ChartKind::Square) {
    double d[4] = {p.x, 1.0 - p.x, p.y, 1.0 - p.y};
    int k = 0;
    for (int i = 1; i < 4; ++i)
      if (d[i] < d[k]) k = i;
    switch (k) {
      case 0: return {-1.0, 0.0};
      case 1: return {1.0, 0.0};
      case 2: return {0.0, -1.0};
      default: return {0.0, 1.0};
    }
  }
  Vec2 r = p - Vec2{0.5, 0.5};
  double n = r.norm();
  return n > 0 ? r * (1.0 / n) : Vec2{1.0, 0.0};
}

double TransversalGeometry::diameter() const {
  return spec_.chart == ChartKind::Square ? std::sqrt(2.0) : 1.0;
}

std::string TransversalGeometry::content_key() const {
  std::ostringstream os;
  os << (spec_.chart == ChartKind::Square ? "square" : "disk") << "|"
     << (spec_.metric == MetricKind::Flat ? "flat" : "conformal") << "|" << spec_.epsilon << "|"
     << spec_.phi << "|" << spec_.trace_step << "|" << spec_.tube_radius;
  return os.str();
}

void TransversalGeometry::check_positive_definite() const {
  const int n = 21;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Vec2 p{-extension_margin_ + (1.0 + 2 * extension_margin_) * i / (n - 1),
             -extension_margin_ + (1.0 + 2 * extension_margin_) * j / (n - 1)};
      Mat2 g = metric(p);
      double tr = g.a11 + g.a22, det = g.det();
      double lam_min = 0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4 * det)));
      if (!(lam_min > 0.0))
        fail_config("metric is not positive definite at chart point (" + std::to_string(p.x) + "," +
                    std::to_string(p.y) + ")");
    }
}

void Geodesic::finalize() {
  std::vector<double> t;
  std::vector<double> px, py, vx, vy;
  t.reserve(samples_.size());
  for (const auto& s : samples_) {
    t.push_back(s.t);
    px.push_back(s.pos.x);
    py.push_back(s.pos.y);
    vx.push_back(s.vel.x);
    vy.push_back(s.vel.y);
  }
  px_ = CubicSpline<double>(t, px);
  py_ = CubicSpline<double>(t, py);
  vx_ = CubicSpline<double>(t, vx);
  vy_ = CubicSpline<double>(t, vy);
}

Vec2 Geodesic::point(double t) const { return {px_.eval(t), py_.eval(t)}; }
Vec2 Geodesic::velocity(double t) const { return {vx_.eval(t), vy_.eval(t)}; }

double Geodesic::unit_speed_defect(const TransversalGeometry& geom) const {
  double worst = 0;
  for (const auto& s : samples_) worst = std::max(worst, std::abs(geom.norm(s.pos, s.vel) - 1.0));
  return worst;
}

double Geodesic::equation_residual(const TransversalGeometry& geom) const {
  double worst = 0;
  for (size_t i = 2; i + 2 < samples_.size(); ++i) {
    double h1 = samples_[i].t - samples_[i - 1].t;
    double h2 = samples_[i + 1].t - samples_[i].t;
    if (std::abs(h1 - h2) > 1e-12) continue;  // skip the clipped end step
    const Vec2& vm = samples_[i - 1].vel;
    const Vec2& vp = samples_[i + 1].vel;
    Vec2 acc = (vp - vm) * (1.0 / (h1 + h2));
    auto G = geom.christoffel(samples_[i].pos);
    const double v[2] = {samples_[i].vel.x, samples_[i].vel.y};
    Vec2 gamma_term;
    for (int k = 0; k < 2; ++k) {
      double a = 0;
      for (int ii = 0; ii < 2; ++ii)
        for (int j = 0; j < 2; ++j) a += G[k][ii][j] * v[ii] * v[j];
      (k == 0 ? gamma_term.x : gamma_term.y) = a;
    }
    Vec2 res = acc + gamma_term;
    // central difference of the velocity has O(h^2) truncation; subtract nothing,
    // the invariant tolerance (1e-6) already accounts for it at the default step.
    worst = std::max(worst, std::max(std::abs(res.x), std::abs(res.y)));
  }
  return worst;
}

Geodesic trace_geodesic(const TransversalGeometry& geom, const Vec2& p, const Vec2& v,
                        double step) {
  if (!geom.inside(p)) fail_invalid("trace_geodesic: seed point is not interior");
  double nv = geom.norm(p, v);
  if (std::abs(nv - 1.0) > 1e-10)
    fail_invalid("trace_geodesic: direction is not unit (|v|_g = " + std::to_string(nv) + ")");
  double h = step > 0 ? step : geom.spec().trace_step;

  auto trace_dir = [&](double sign) {
    std::vector<GeodesicSample> out;
    State4 s{p, v * sign};
    double t = 0.0;
    double cap = geom.spec().max_trace_length;
    while (true) {
      State4 next = rk4_step(geom, s, h);
      if (!geom.inside(next.p)) {
        // Bisect the crossing time within the last step.
        double lo = 0.0, hi = h;
        for (int it = 0; it < 80; ++it) {
          double mid = 0.5 * (lo + hi);
          State4 sm = rk4_step(geom, s, mid);
          if (geom.inside(sm.p)) lo = mid;
          else hi = mid;
          if (hi - lo < 1e-13) break;
        }
        double dt = 0.5 * (lo + hi);
        State4 sb = rk4_step(geom, s, dt);
        out.push_back({t + dt, sb.p, sb.v});
        return out;
      }
      t += h;
      s = next;
      out.push_back({t, s.p, s.v});
      if (t > cap)
        fail_numeric("trace_geodesic: arc length exceeded cap without reaching the boundary "
                     "(trapped geodesic?)");
    }
  };

  std::vector<GeodesicSample> fwd = trace_dir(+1.0);
  std::vector<GeodesicSample> bwd = trace_dir(-1.0);

  Geodesic g;
  g.seed_point_ = p;
  g.seed_direction_ = v;
  g.samples_.reserve(fwd.size() + bwd.size() + 1);
  for (auto it = bwd.rbegin(); it != bwd.rend(); ++it)
    g.samples_.push_back({-it->t, it->pos, it->vel * -1.0});
  g.samples_.push_back({0.0, p, v});
  for (const auto& s : fwd) g.samples_.push_back(s);
  g.endpoints_on_boundary_ =
      std::abs(geom.boundary_distance(g.samples_.front().pos)) < 1e-8 &&
      std::abs(geom.boundary_distance(g.samples_.back().pos)) < 1e-8;

  auto exit_angle = [&](const GeodesicSample& s) {
    Vec2 n = geom.boundary_normal(s.pos);
    Mat2 gm = geom.metric(s.pos);
    // Angle from tangency = angle between velocity and the boundary tangent.
    Vec2 tangent = n.perp();
    double cosang = gm.quad(s.vel, tangent) /
                    (std::sqrt(gm.quad(s.vel, s.vel)) * std::sqrt(gm.quad(tangent, tangent)));
    cosang = std::clamp(cosang, -1.0, 1.0);
    double a = std::acos(std::abs(cosang));
    return a;
  };
  g.nontangential_ = g.endpoints_on_boundary_ && exit_angle(g.samples_.front()) > 1e-3 &&
                     exit_angle(g.samples_.back()) > 1e-3;
  g.finalize();
  return g;
}

std::vector<IntersectionPoint> find_proper_intersections(const TransversalGeometry& geom,
                                                         const Geodesic& g1, const Geodesic& g2,
                                                         double tol) {
  const auto& s1 = g1.samples();
  const auto& s2 = g2.samples();

  // Reparametrization case: every sample of g1 lies on g2.
  {
    double worst = 0;
    for (size_t i = 0; i < s1.size(); i += std::max<size_t>(1, s1.size() / 32)) {
      double best = 1e300;
      for (size_t j = 0; j < s2.size(); ++j)
        best = std::min(best, (s1[i].pos - s2[j].pos).norm());
      worst = std::max(worst, best);
    }
    if (worst < 1e-7) {
      IntersectionPoint ip;
      ip.point = g1.seed_point();
      ip.proper = false;
      return {ip};
    }
  }

  std::vector<IntersectionPoint> out;
  auto add_candidate = [&](double t1, double t2) {
    // Newton refinement on gamma1(t1) - gamma2(t2) = 0.
    for (int it = 0; it < 60; ++it) {
      Vec2 f = g1.point(t1) - g2.point(t2);
      if (f.norm() < 1e-13) break;
      Vec2 a = g1.velocity(t1), b = g2.velocity(t2) * -1.0;
      double det = a.x * b.y - a.y * b.x;
      if (std::abs(det) < 1e-14) return;
      double d1 = (-f.x * b.y + f.y * b.x) / det;
      double d2 = (-a.x * f.y + a.y * f.x) / det;
      t1 += d1;
      t2 += d2;
      if (t1 < g1.l1() - 1e-6 || t1 > g1.l2() + 1e-6 || t2 < g2.l1() - 1e-6 ||
          t2 > g2.l2() + 1e-6)
        return;
    }
    Vec2 p = g1.point(t1);
    if ((p - g2.point(t2)).norm() > std::max(tol, 1e-10)) return;
    for (const auto& e : out)
      if ((e.point - p).norm() < 1e-6) return;
    IntersectionPoint ip;
    ip.point = p;
    ip.t1 = t1;
    ip.t2 = t2;
    Vec2 v1 = g1.velocity(t1), v2 = g2.velocity(t2);
    Mat2 gm = geom.metric(p);
    double area = std::sqrt(gm.det()) * std::abs(v1.x * v2.y - v1.y * v2.x);
    ip.proper = area > 1e-6;
    double c = gm.quad(v1, v2) / (std::sqrt(gm.quad(v1, v1)) * std::sqrt(gm.quad(v2, v2)));
    ip.angle = std::acos(std::clamp(c, -1.0, 1.0));
    out.push_back(ip);
  };

  for (size_t i = 0; i + 1 < s1.size(); ++i) {
    Vec2 a1 = s1[i].pos, a2 = s1[i + 1].pos;
    double alox = std::min(a1.x, a2.x) - 1e-9, ahix = std::max(a1.x, a2.x) + 1e-9;
    double aloy = std::min(a1.y, a2.y) - 1e-9, ahiy = std::max(a1.y, a2.y) + 1e-9;
    Vec2 da = a2 - a1;
    for (size_t j = 0; j + 1 < s2.size(); ++j) {
      Vec2 b1 = s2[j].pos, b2 = s2[j + 1].pos;
      if (std::max(b1.x, b2.x) < alox || std::min(b1.x, b2.x) > ahix ||
          std::max(b1.y, b2.y) < aloy || std::min(b1.y, b2.y) > ahiy)
        continue;
      Vec2 db = b2 - b1;
      double det = da.x * (-db.y) - da.y * (-db.x);
      if (std::abs(det) < 1e-16) continue;
      Vec2 r = b1 - a1;
      double s = (r.x * (-db.y) - r.y * (-db.x)) / det;
      double u = (da.x * r.y - da.y * r.x) / det;
      if (s < -0.05 || s > 1.05 || u < -0.05 || u > 1.05) continue;
      add_candidate(s1[i].t + s * (s1[i + 1].t - s1[i].t), s2[j].t + u * (s2[j + 1].t - s2[j].t));
    }
  }
  return out;
}

FermiChart::FermiChart(const TransversalGeometry& geom, const Geodesic& geo, double tube_radius)
    : geom_(&geom), geo_(&geo), tube_radius_(tube_radius), flat_(geom.is_flat()) {
  if (!geo.nontangential()) fail_invalid("fermi_frame: geodesic must be nontangential");
  if (flat_) {
    origin_ = geo.seed_point();
    axis_u_ = geo.seed_direction();
    axis_n_ = axis_u_.perp();
  }
  check_overlap();
}

Vec2 FermiChart::frame_normal(double t) const {
  Vec2 p = geo_->point(t);
  Vec2 v = geo_->velocity(t);
  Mat2 g = geom_->metric(p);
  double sg = std::sqrt(g.det());
  // Metric rotation of the (parallel) velocity field; itself parallel.
  return Vec2{-(g.a12 * v.x + g.a22 * v.y) / sg, (g.a11 * v.x + g.a12 * v.y) / sg};
}

FermiPoint FermiChart::map(double t, double y) const {
  FermiPoint out;
  if (flat_) {
    out.pos = origin_ + axis_u_ * t + axis_n_ * y;
    out.dFdy = axis_n_;
    out.jacobi = 1.0;
    out.jacobi_dy = 0.0;
    return out;
  }
  Vec2 q = geo_->point(t);
  Vec2 w = frame_normal(t);
  double j = 1.0, jp = 0.0;
  double remaining = std::abs(y);
  double dir = y >= 0 ? 1.0 : -1.0;
  w = w * dir;
  int nsteps = std::max(8, static_cast<int>(std::ceil(remaining / 0.004)));
  double h = remaining / nsteps;
  for (int i = 0; i < nsteps; ++i) {
    // RK4 on (q, w, j, jp); Jacobi equation j'' = -K(q) j.
    auto rhs = [&](const Vec2& qq, const Vec2& ww, double jj, double jjp, Vec2& dq, Vec2& dw,
                   double& dj, double& djp) {
      auto G = geom_->christoffel(qq);
      dq = ww;
      const double v[2] = {ww.x, ww.y};
      for (int k = 0; k < 2; ++k) {
        double a = 0;
        for (int ii = 0; ii < 2; ++ii)
          for (int jjj = 0; jjj < 2; ++jjj) a += G[k][ii][jjj] * v[ii] * v[jjj];
        (k == 0 ? dw.x : dw.y) = -a;
      }
      dj = jjp;
      djp = -geom_->curvature(qq) * jj;
    };
    Vec2 dq1, dw1, dq2, dw2, dq3, dw3, dq4, dw4;
    double dj1, djp1, dj2, djp2, dj3, djp3, dj4, djp4;
    rhs(q, w, j, jp, dq1, dw1, dj1, djp1);
    rhs(q + dq1 * (h / 2), w + dw1 * (h / 2), j + dj1 * h / 2, jp + djp1 * h / 2, dq2, dw2, dj2, djp2);
    rhs(q + dq2 * (h / 2), w + dw2 * (h / 2), j + dj2 * h / 2, jp + djp2 * h / 2, dq3, dw3, dj3, djp3);
    rhs(q + dq3 * h, w + dw3 * h, j + dj3 * h, jp + djp3 * h, dq4, dw4, dj4, djp4);
    q += (dq1 + dq2 * 2.0 + dq3 * 2.0 + dq4) * (h / 6.0);
    w += (dw1 + dw2 * 2.0 + dw3 * 2.0 + dw4) * (h / 6.0);
    j += (dj1 + 2 * dj2 + 2 * dj3 + dj4) * (h / 6.0);
    jp += (djp1 + 2 * djp2 + 2 * djp3 + djp4) * (h / 6.0);
  }
  out.pos = q;
  out.dFdy = w * dir;
  out.jacobi = j;
  out.jacobi_dy = jp * dir;
  return out;
}

std::optional<std::pair<double, double>> FermiChart::to_fermi(const Vec2& x) const {
  if (flat_) {
    Vec2 r = x - origin_;
    double t = r.dot(axis_u_), y = r.dot(axis_n_);
    if (std::abs(y) > tube_radius_ || t < geo_->l1() - 1e-9 || t > geo_->l2() + 1e-9)
      return std::nullopt;
    return std::make_pair(t, y);
  }
  // Initial guess from the nearest geodesic sample.
  const auto& samples = geo_->samples();
  double best = 1e300, t0 = 0;
  for (const auto& s : samples) {
    double d = (x - s.pos).norm();
    if (d < best) {
      best = d;
      t0 = s.t;
    }
  }
  if (best > 2.0 * tube_radius_) return std::nullopt;
  Vec2 n0 = frame_normal(t0);
  double y0 = (x - geo_->point(t0)).dot(n0);
  double t = t0, y = y0;
  for (int it = 0; it < 50; ++it) {
    FermiPoint f = map(t, y);
    Vec2 r = f.pos - x;
    if (r.norm() < 1e-12) break;
    double ht = 1e-6;
    Vec2 dt_col = (map(t + ht, y).pos - map(t - ht, y).pos) * (1.0 / (2 * ht));
    Vec2 dy_col = f.dFdy;
    double det = dt_col.x * dy_col.y - dt_col.y * dy_col.x;
    if (std::abs(det) < 1e-14) return std::nullopt;
    double dt = (-r.x * dy_col.y + r.y * dy_col.x) / det;
    double dy = (-dt_col.x * r.y + dt_col.y * r.x) / det;
    t += dt;
    y += dy;
    if (std::abs(y) > 2.0 * tube_radius_) return std::nullopt;
  }
  if ((map(t, y).pos - x).norm() > 1e-9) return std::nullopt;
  if (std::abs(y) > tube_radius_ || t < geo_->l1() - 1e-9 || t > geo_->l2() + 1e-9)
    return std::nullopt;
  return std::make_pair(t, y);
}

std::array<std::array<double, 2>, 2> FermiChart::inverse_jacobian(double t, double y) const {
  if (flat_) {
    return {{{axis_u_.x, axis_u_.y}, {axis_n_.x, axis_n_.y}}};
  }
  double ht = 1e-6;
  FermiPoint f = map(t, y);
  Vec2 dt_col = (map(t + ht, y).pos - map(t - ht, y).pos) * (1.0 / (2 * ht));
  Vec2 dy_col = f.dFdy;
  double det = dt_col.x * dy_col.y - dt_col.y * dy_col.x;
  // Rows of the inverse of [dt_col dy_col].
  return {{{dy_col.y / det, -dy_col.x / det}, {-dt_col.y / det, dt_col.x / det}}};
}

double FermiChart::metric_tt(double t, double y) const {
  double j = map(t, y).jacobi;
  return j * j;
}

double FermiChart::djacobi_dt(double t, double y) const {
  if (flat_) return 0.0;
  double h = 1e-4;
  return (map(t + h, y).jacobi - map(t - h, y).jacobi) / (2 * h);
}

double FermiChart::riccati_coefficient(double t) const {
  return geom_->curvature(geo_->point(t));
}

void FermiChart::check_overlap() const {
  const auto& s = geo_->samples();
  size_t stride = std::max<size_t>(1, s.size() / 160);
  std::vector<std::pair<double, Vec2>> pts;
  for (size_t i = 0; i < s.size(); i += stride) {
    double t = s[i].t;
    for (double y : {-tube_radius_, -0.5 * tube_radius_, 0.5 * tube_radius_, tube_radius_}) {
      Vec2 q = map(t, y).pos;
      // Away from the endpoints the tube must stay inside the extended chart.
      double end_dist = std::min(t - geo_->l1(), geo_->l2() - t);
      if (end_dist > tube_radius_ && !geom_->inside_extended(q))
        fail_invalid("fermi_frame: tube of radius " + std::to_string(tube_radius_) +
                     " leaves the (extended) chart; shrink tube_radius");
      pts.push_back({t, q});
    }
  }
  for (size_t a = 0; a < pts.size(); ++a)
    for (size_t b = a + 1; b < pts.size(); ++b) {
      if (std::abs(pts[a].first - pts[b].first) < 2.5 * tube_radius_) continue;
      if ((pts[a].second - pts[b].second).norm() < 0.5 * tube_radius_)
        fail_invalid("fermi_frame: tube of radius " + std::to_string(tube_radius_) +
                     " self-overlaps; shrink tube_radius");
    }
}

}  // namespace ctalab
