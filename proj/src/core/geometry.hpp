#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/expr.hpp"

namespace ctalab {

enum class ChartKind { Square, Disk };
enum class MetricKind { Flat, Conformal };

struct TransversalSpec {
  ChartKind chart = ChartKind::Square;
  MetricKind metric = MetricKind::Flat;
  double epsilon = 0.0;
  std::string phi = "sin(pi*y1)*sin(pi*y2)";
  double trace_step = 1e-3;
  double tube_radius = 0.2;
  double max_trace_length = 20.0;
};

/// The transversal factor (M_0, g_0): a parameterized 2-D chart with an
/// analytic metric. Derivative evaluators come from symbolic
/// differentiation of the metric formula, not finite differences.
class TransversalGeometry {
 public:
  explicit TransversalGeometry(const TransversalSpec& spec);

  Mat2 metric(const Vec2& p) const;
  /// d g / d y_k for k in {0,1}; each entry differentiated.
  Mat2 metric_d(const Vec2& p, int k) const;
  Mat2 metric_dd(const Vec2& p, int k, int l) const;
  /// Christoffel symbols Gamma^k_{ij}; result[k][i][j].
  std::array<std::array<std::array<double, 2>, 2>, 2> christoffel(const Vec2& p) const;
  /// Gaussian curvature at p.
  double curvature(const Vec2& p) const;

  double inner(const Vec2& p, const Vec2& u, const Vec2& v) const { return metric(p).quad(u, v); }
  double norm(const Vec2& p, const Vec2& v) const { return std::sqrt(inner(p, v, v)); }

  bool inside(const Vec2& p) const { return boundary_distance(p) > 0.0; }
  bool inside_extended(const Vec2& p) const { return boundary_distance(p) > -extension_margin_; }
  /// Positive inside, negative outside (chart-plane distance).
  double boundary_distance(const Vec2& p) const;
  /// Outward unit normal (euclidean chart normal) at a boundary point.
  Vec2 boundary_normal(const Vec2& p) const;

  bool is_flat() const { return flat_; }
  const TransversalSpec& spec() const { return spec_; }
  double diameter() const;
  std::string content_key() const;

 private:
  TransversalSpec spec_;
  bool flat_ = true;
  Expr phi_;
  Expr phi_d_[2];
  Expr phi_dd_[3];  // y1y1, y1y2, y2y2
  double extension_margin_ = 0.1;

  double conformal_factor(const Vec2& p) const;
  void check_positive_definite() const;
};

struct GeodesicSample {
  double t = 0.0;
  Vec2 pos;
  Vec2 vel;
};

/// Unit-speed geodesic traced across the chart, arc-length parameterized
/// with t=0 at the seed point.
class Geodesic {
 public:
  Geodesic() = default;

  double l1() const { return samples_.front().t; }
  double l2() const { return samples_.back().t; }
  const std::vector<GeodesicSample>& samples() const { return samples_; }
  Vec2 point(double t) const;
  Vec2 velocity(double t) const;
  bool endpoints_on_boundary() const { return endpoints_on_boundary_; }
  bool nontangential() const { return nontangential_; }
  const Vec2& seed_point() const { return seed_point_; }
  const Vec2& seed_direction() const { return seed_direction_; }

  /// Sup over samples of | |v|_g - 1 |.
  double unit_speed_defect(const TransversalGeometry& geom) const;
  /// Sup-norm residual of the geodesic equation from sampled finite differences.
  double equation_residual(const TransversalGeometry& geom) const;

 private:
  friend Geodesic trace_geodesic(const TransversalGeometry&, const Vec2&, const Vec2&, double);
  std::vector<GeodesicSample> samples_;
  CubicSpline<double> px_, py_, vx_, vy_;
  bool endpoints_on_boundary_ = false;
  bool nontangential_ = false;
  Vec2 seed_point_, seed_direction_;
  void finalize();
};

Geodesic trace_geodesic(const TransversalGeometry& geom, const Vec2& p, const Vec2& v,
                        double step = 0.0);

struct IntersectionPoint {
  Vec2 point;
  double t1 = 0.0;
  double t2 = 0.0;
  double angle = 0.0;  // radians, metric angle between velocities
  bool proper = false;
};

std::vector<IntersectionPoint> find_proper_intersections(const TransversalGeometry& geom,
                                                         const Geodesic& g1, const Geodesic& g2,
                                                         double tol = 1e-9);

struct FermiPoint {
  Vec2 pos;        // chart point F(t,y)
  Vec2 dFdy;       // unit normal-geodesic velocity
  double jacobi = 1.0;   // j(t,y) with metric E = j^2 in Fermi coordinates
  double jacobi_dy = 0.0;
};

/// Fermi coordinates (t, y) in a tubular neighborhood of a geodesic.
/// In 2-D the pulled-back metric is E(t,y) dt^2 + dy^2 with E = j^2 and
/// j solving the Jacobi equation in y; the chart exposes j directly.
class FermiChart {
 public:
  FermiChart(const TransversalGeometry& geom, const Geodesic& geo, double tube_radius);

  FermiPoint map(double t, double y) const;
  Vec2 map_point(double t, double y) const { return map(t, y).pos; }
  /// Inverse map; returns nullopt outside the tube (or if Newton fails).
  std::optional<std::pair<double, double>> to_fermi(const Vec2& x) const;
  /// d(t,y)/d(chart) at the given Fermi point, rows (t,y), columns (y1,y2).
  std::array<std::array<double, 2>, 2> inverse_jacobian(double t, double y) const;

  double metric_tt(double t, double y) const;  // E(t,y)
  double jacobi(double t, double y) const { return map(t, y).jacobi; }
  double djacobi_dt(double t, double y) const;
  /// D(t) = (1/2) d^2_y g^{tt} on the geodesic = Gaussian curvature there.
  double riccati_coefficient(double t) const;

  double tube_radius() const { return tube_radius_; }
  const Geodesic& geodesic() const { return *geo_; }
  const TransversalGeometry& geometry() const { return *geom_; }
  bool flat() const { return flat_; }
  /// Parallel unit normal at parameter t.
  Vec2 frame_normal(double t) const;

 private:
  const TransversalGeometry* geom_;
  const Geodesic* geo_;
  double tube_radius_;
  bool flat_;
  Vec2 origin_, axis_u_, axis_n_;  // flat fast path
  void check_overlap() const;
};

}  // namespace ctalab
