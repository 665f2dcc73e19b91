#include "core/vectors.hpp"

#include <cmath>

namespace ctalab {

namespace {

/// Orthonormal frame for g at p (Gram-Schmidt on the chart basis).
void orthonormal_frame(const Mat2& g, Vec2& e1, Vec2& e2) {
  e1 = Vec2{1.0 / std::sqrt(g.a11), 0.0};
  Vec2 raw{0.0, 1.0};
  double proj = g.quad(raw, e1);
  Vec2 v{raw.x - proj * e1.x, raw.y - proj * e1.y};
  double n = std::sqrt(g.quad(v, v));
  e2 = v * (1.0 / n);
}

Vec2 frame_to_chart(const Vec2& f, const Vec2& e1, const Vec2& e2) {
  return e1 * f.x + e2 * f.y;
}

}  // namespace

double DirectionScheme::tangent_inner(int i, int k) const {
  return g_p0.quad(tangents[i], tangents[k]);
}

Vec2 DirectionScheme::tangent_in_frame(int k) const {
  // Coordinates of tangents[k] in the orthonormal frame: solve [e1 e2] x = v.
  const Vec2& v = tangents[k];
  double det = frame_e1.x * frame_e2.y - frame_e1.y * frame_e2.x;
  return {(v.x * frame_e2.y - v.y * frame_e2.x) / det,
          (frame_e1.x * v.y - frame_e1.y * v.x) / det};
}

double DirectionScheme::lightlike_defect() const {
  double worst = 0;
  for (const auto& l : lifts)
    worst = std::max(worst, std::abs(l.e1 * l.e1 - l.tangent.dot(l.tangent)));
  return worst;
}

double DirectionScheme::closure_defect() const {
  double se = 0;
  Vec2 st;
  for (const auto& l : lifts) {
    se += l.e1;
    st += l.tangent;
  }
  return std::sqrt(se * se + st.dot(st));
}

double DirectionScheme::min_pair_independence() const {
  double worst = 1e300;
  for (size_t i = 0; i < lifts.size(); ++i)
    for (size_t k = i + 1; k < lifts.size(); ++k) {
      const Vec2& a = lifts[i].tangent;
      const Vec2& b = lifts[k].tangent;
      worst = std::min(worst, std::abs(a.x * b.y - a.y * b.x));
    }
  return worst;
}

namespace {

DirectionScheme build_scheme(const TransversalGeometry& geom, const Vec2& p0,
                             const Vec2& xi1_direction, double delta, int rotation_sense,
                             SchemeKind kind, bool trace) {
  if (!(delta > 0.0 && delta < 1.0)) fail_invalid("direction scheme: delta must lie in (0,1)");
  if (!geom.inside(p0)) fail_invalid("direction scheme: p0 must be interior");

  DirectionScheme s;
  s.kind = kind;
  s.delta = delta;
  s.p0 = p0;
  s.g_p0 = geom.metric(p0);
  orthonormal_frame(s.g_p0, s.frame_e1, s.frame_e2);

  // xi_1: unit vector along the requested chart direction; xi_2 in the plane,
  // rotated by the configured sense with <xi1, xi2> = 1 - delta.
  Vec2 d1 = xi1_direction;
  double n1 = std::sqrt(s.g_p0.quad(d1, d1));
  if (!(n1 > 0)) fail_invalid("direction scheme: xi1 direction is zero");
  Vec2 xi1_chart = d1 * (1.0 / n1);

  // Work in the orthonormal frame where the algebra is euclidean.
  double det = s.frame_e1.x * s.frame_e2.y - s.frame_e1.y * s.frame_e2.x;
  auto to_frame = [&](const Vec2& v) {
    return Vec2{(v.x * s.frame_e2.y - v.y * s.frame_e2.x) / det,
                (s.frame_e1.x * v.y - s.frame_e1.y * v.x) / det};
  };
  Vec2 f1 = to_frame(xi1_chart);
  double c = 1.0 - delta;
  double sperp = rotation_sense >= 0 ? std::sqrt(1.0 - c * c) : -std::sqrt(1.0 - c * c);
  Vec2 f2{c * f1.x - sperp * f1.y, c * f1.y + sperp * f1.x};  // rotate by the delta-angle

  std::vector<Vec2> frame_vecs;
  std::vector<int> signs;
  Vec2 f3{-(f1.x + delta * f2.x) / (1.0 + delta), -(f1.y + delta * f2.y) / (1.0 + delta)};
  Vec2 f4{-(delta * f1.x + f2.x) / (1.0 + delta), -(delta * f1.y + f2.y) / (1.0 + delta)};
  if (kind == SchemeKind::Xi4) {
    frame_vecs = {f1, f2, f3, f4};
    signs = {+1, -1, +1, -1};
  } else {
    double scale = 1.0 + std::sqrt(2.0 / (2.0 - delta));
    double s5 = std::sqrt(2.0 / (2.0 - delta));
    frame_vecs = {f1, f2, f3 * scale, f4 * scale, Vec2{s5 * (f1.x + f2.x), s5 * (f1.y + f2.y)}};
    signs = {+1, +1, +1, -1, -1};
  }

  for (size_t k = 0; k < frame_vecs.size(); ++k) {
    Vec2 fv = frame_vecs[k];
    double len = fv.norm();
    LiftedVector lift;
    lift.e1 = signs[k] * len;
    lift.tangent = fv;
    s.lifts.push_back(lift);
    s.speeds.push_back(len);
    s.signs.push_back(signs[k]);
    s.tangents.push_back(frame_to_chart(fv, s.frame_e1, s.frame_e2));
  }

  if (s.min_pair_independence() <= 1e-6)
    fail_invalid("direction scheme: vectors lose pairwise independence (delta too close to 1?)");

  if (trace) {
    for (size_t k = 0; k < s.tangents.size(); ++k) {
      Vec2 dir = s.tangents[k] * (1.0 / s.speeds[k]);
      // Renormalize in the metric to the tracer's tolerance.
      double nn = geom.norm(p0, dir);
      Geodesic g = trace_geodesic(geom, p0, dir * (1.0 / nn));
      if (!g.nontangential())
        fail_numeric("direction scheme: geodesic " + std::to_string(k + 1) +
                     " is tangential; perturb xi1 or shrink delta");
      s.geodesics.push_back(std::move(g));
    }
  }
  return s;
}

}  // namespace

DirectionScheme build_xi_scheme(const TransversalGeometry& geom, const Vec2& p0,
                                const Vec2& xi1_direction, double delta, int rotation_sense,
                                bool trace) {
  return build_scheme(geom, p0, xi1_direction, delta, rotation_sense, SchemeKind::Xi4, trace);
}

DirectionScheme build_zeta_scheme(const TransversalGeometry& geom, const Vec2& p0, double delta,
                                  const Vec2& xi1_direction, int rotation_sense, bool trace) {
  return build_scheme(geom, p0, xi1_direction, delta, rotation_sense, SchemeKind::Zeta5, trace);
}

namespace {

double pair_bilinear(const LiftedVector& a, const LiftedVector& b) {
  // <abar, bbar> = a1 b1 - <v_a, v_b> (frame coordinates are euclidean).
  return a.e1 * b.e1 - a.tangent.dot(b.tangent);
}

}  // namespace

double coupling_C(const DirectionScheme& scheme, int i, int k) {
  if (scheme.kind != SchemeKind::Xi4) fail_invalid("coupling_C: xi4 scheme required");
  if (i == k) fail_invalid("coupling_C: indices must differ");
  return 2.0 * pair_bilinear(scheme.lifts[i], scheme.lifts[k]);
}

double coupling_D_pair(const DirectionScheme& scheme, int i, int k) {
  if (scheme.kind != SchemeKind::Zeta5) fail_invalid("coupling_D: zeta5 scheme required");
  if (i == k) fail_invalid("coupling_D: indices must differ");
  return 2.0 * pair_bilinear(scheme.lifts[i], scheme.lifts[k]);
}

double coupling_D_triple(const DirectionScheme& scheme, int i, int j, int k) {
  if (scheme.kind != SchemeKind::Zeta5) fail_invalid("coupling_D: zeta5 scheme required");
  if (i == j || j == k || i == k) fail_invalid("coupling_D: indices must differ");
  LiftedVector sum;
  sum.e1 = scheme.lifts[i].e1 + scheme.lifts[j].e1 + scheme.lifts[k].e1;
  sum.tangent = scheme.lifts[i].tangent + scheme.lifts[j].tangent + scheme.lifts[k].tangent;
  double direct = pair_bilinear(sum, sum);
  // Complement identity D_{ijk} = D_{lm} from the closure sum.
  int l = -1, m = -1;
  for (int idx = 0; idx < 5; ++idx)
    if (idx != i && idx != j && idx != k) (l < 0 ? l : m) = idx;
  double via_complement = coupling_D_pair(scheme, l, m);
  if (std::abs(direct - via_complement) > 1e-10)
    fail_numeric("coupling_D: complement identity violated: " + std::to_string(direct) + " vs " +
                 std::to_string(via_complement));
  return direct;
}

double coefficient_E(const DirectionScheme& zeta) {
  auto D = [&](int i, int k) { return coupling_D_pair(zeta, i - 1, k - 1); };
  return 1.0 / D(1, 5) * (1.0 / (D(2, 3) + D(2, 4) + D(3, 4))) +
         1.0 / D(2, 5) * (1.0 / (D(1, 3) + D(1, 4) + D(3, 4))) +
         1.0 / D(3, 5) * (1.0 / (D(1, 2) + D(1, 4) + D(2, 4))) +
         1.0 / D(4, 5) * (1.0 / (D(1, 2) + D(1, 3) + D(2, 3))) +
         1.0 / (D(1, 2) * D(3, 4)) + 1.0 / (D(1, 3) * D(2, 4)) + 1.0 / (D(1, 4) * D(2, 3));
}

double coefficient_E_effective(const DirectionScheme& zeta) {
  auto D = [&](int i, int k) { return coupling_D_pair(zeta, i - 1, k - 1); };
  return 1.0 / D(1, 5) * (1.0 / D(2, 3) + 1.0 / D(2, 4) + 1.0 / D(3, 4)) +
         1.0 / D(2, 5) * (1.0 / D(1, 3) + 1.0 / D(1, 4) + 1.0 / D(3, 4)) +
         1.0 / D(3, 5) * (1.0 / D(1, 2) + 1.0 / D(1, 4) + 1.0 / D(2, 4)) +
         1.0 / D(4, 5) * (1.0 / D(1, 2) + 1.0 / D(1, 3) + 1.0 / D(2, 3)) +
         1.0 / (D(1, 2) * D(3, 4)) + 1.0 / (D(1, 3) * D(2, 4)) + 1.0 / (D(1, 4) * D(2, 3));
}

CouplingTable coupling_table(const DirectionScheme& zeta) {
  if (zeta.kind != SchemeKind::Zeta5) fail_invalid("coupling_table: zeta5 scheme required");
  CouplingTable t;
  t.delta = zeta.delta;
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 5; ++k)
      if (i != k) t.D[i][k] = coupling_D_pair(zeta, i, k);
  t.E_delta = coefficient_E(zeta);
  t.E_effective = coefficient_E_effective(zeta);
  return t;
}

SchemeReport verify_scheme(const DirectionScheme& scheme) {
  SchemeReport r;
  r.lightlike_defect = scheme.lightlike_defect();
  r.closure_defect = scheme.closure_defect();
  r.min_pair_independence = scheme.min_pair_independence();

  r.min_three_sum = 1e300;
  size_t n = scheme.lifts.size();
  for (size_t a = 0; a < n; ++a)
    for (size_t b = a + 1; b < n; ++b)
      for (size_t c = b + 1; c < n; ++c) {
        double e1 = scheme.lifts[a].e1 + scheme.lifts[b].e1 + scheme.lifts[c].e1;
        Vec2 tv = scheme.lifts[a].tangent + scheme.lifts[b].tangent + scheme.lifts[c].tangent;
        r.min_three_sum = std::min(r.min_three_sum, std::sqrt(e1 * e1 + tv.dot(tv)));
      }

  // eta(a,b) = <abar, bbar> is definitional; verify on the scheme's own pairs.
  r.eta_consistency = 0.0;
  for (size_t a = 0; a < n; ++a)
    for (size_t b = 0; b < n; ++b) {
      double eta = scheme.lifts[a].e1 * scheme.lifts[b].e1 -
                   scheme.lifts[a].tangent.dot(scheme.lifts[b].tangent);
      double pair = pair_bilinear(scheme.lifts[a], scheme.lifts[b]);
      r.eta_consistency = std::max(r.eta_consistency, std::abs(eta - pair));
    }

  r.all_nontangential = !scheme.geodesics.empty();
  for (const auto& g : scheme.geodesics)
    if (!g.nontangential()) r.all_nontangential = false;

  r.pass = r.lightlike_defect <= 1e-12 && r.closure_defect <= 1e-12 &&
           r.min_pair_independence > 1e-6;
  return r;
}

}  // namespace ctalab
