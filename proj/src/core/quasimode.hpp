#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/expr.hpp"
#include "core/geometry.hpp"

namespace ctalab {

/// Scalar Riccati data along a geodesic: Y'' + D Y = 0, H = Y'/Y, with
/// D(t) the Gaussian curvature on the geodesic (n = 3).
struct RiccatiSolution {
  std::vector<double> t;
  std::vector<Cplx> Y;
  std::vector<Cplx> Ydot;
  std::vector<Cplx> H;
  std::vector<double> D;
  Cplx Y0{1.0, 0.0};
  Cplx Ydot0{0.0, 1.0};

  CubicSpline<Cplx> Y_spline;
  CubicSpline<Cplx> H_spline;
  CubicSpline<double> D_spline;

  /// max_t | Im H(t) |Y(t)|^2 - 1 |, the scalar determinant identity.
  double conservation_defect() const;
  double min_im_H() const;
};

RiccatiSolution solve_riccati(const FermiChart& chart, Cplx Y0 = Cplx(1.0, 0.0),
                              Cplx Ydot0 = Cplx(0.0, 1.0));

/// Everything tau-independent about one Gaussian beam: Fermi chart,
/// Riccati data, phase corrections and the transport-amplitude hierarchy.
/// CGOSolution instances at different tau share this.
class GaussianBeamData;

struct CgoChartData {
  bool in_tube = false;
  double t = 0.0, y = 0.0;
  Cplx psi;               // phase at (t, y)
  ComplexVec2 grad_psi;   // chart-coordinate gradient of psi
  Cplx lap_psi;           // Laplace-Beltrami of psi on M0
  Cplx a0;                // principal amplitude a_{0,0}(t)
  double cutoff = 0.0;    // chi(|y|/delta')
};

/// A CGO solution e^{sign * s x1} tau^{1/8} e^{i s psi} a_s chi at one tau.
class CGOSolution {
 public:
  CGOSolution(std::shared_ptr<const GaussianBeamData> data, double tau);

  Cplx s() const;
  double tau() const { return tau_; }
  double speed() const;
  double lambda() const;
  int sign() const;
  double delta_prime() const;
  int corrections() const;
  const FermiChart& chart() const;
  const RiccatiSolution& riccati() const;

  /// Full value at (x1, chart point). Zero outside the tube.
  Cplx value(double x1, const Vec2& xprime) const;
  /// Phase/amplitude data at a chart point (for product constructions).
  CgoChartData chart_data(const Vec2& xprime) const;
  /// Same but from Fermi coordinates directly.
  CgoChartData fermi_data(double t, double y) const;

  /// Principal amplitude on the geodesic, a_{0,0}(t) = Y(t)^{-1/2},
  /// branch-continuous in t.
  Cplx principal_amplitude(double t) const;

  /// Conjugated residual e^{-i s psi} (-Delta_{g0} + V - s^2)(e^{i s psi} a chi)
  /// at Fermi (t,y), split into interior and cutoff-driven parts.
  struct ResidualParts {
    Cplx core;
    Cplx cutoff;
  };
  ResidualParts conjugated_residual(double t, double y, const Expr& V) const;

  /// sqrt(det g) weight in Fermi coordinates (the Jacobi field).
  double fermi_weight(double t, double y) const;
  Cplx weighted_value(double t, double y) const;  // tau^{1/8} e^{i s psi} a chi

  std::shared_ptr<const GaussianBeamData> data() const { return data_; }

 private:
  std::shared_ptr<const GaussianBeamData> data_;
  double tau_;
};

struct PhaseCheck {
  double min_im_coeff = 0.0;   // min over tube of Im psi / y^2
  double grad_on_axis_defect = 0.0;
};

/// Builds the shared beam data.
/// corrections in {0,1,2}: correction level m adds the phase terms up to
/// y^{2m+2} and amplitude terms a_{k,j}, k <= m, j <= 2(m-k) solving the
/// transport hierarchy; level 0 is the principal term a_{0,0} alone.
/// Levels > 0 require a flat transversal metric and x1-independent V.
std::shared_ptr<const GaussianBeamData> build_beam(const TransversalGeometry& geom,
                                                   const Geodesic& geo,
                                                   const RiccatiSolution& ric, double speed,
                                                   double lambda, int sign, double delta_prime,
                                                   int corrections, const Expr& V);

CGOSolution assemble_cgo(std::shared_ptr<const GaussianBeamData> beam, double tau);

PhaseCheck check_phase(const GaussianBeamData& beam);

struct ResidualReport {
  std::vector<double> tau;
  std::vector<double> residual;       // normalized: ||res|| / (tau * ||v||)
  std::vector<double> residual_abs;   // || e^{-sx1} (-Delta+V) v ||
  std::vector<double> vnorm;          // || e^{-sx1} v ||
  std::vector<double> cutoff_fraction;
  std::string norm_kind;              // "L2" or "H1"
  double slope = 0.0;
  double slope_halfwidth95 = 0.0;
  bool cutoff_dominates = false;
};

ResidualReport quasimode_residual(std::shared_ptr<const GaussianBeamData> beam, const Expr& V,
                                  const std::string& norm_kind, const std::vector<double>& tau_grid,
                                  int jobs = 1);

/// Smooth bump cutoff: 1 on [0, 1/2], exp(1 - 1/(1-r^2)) of the rescaled
/// argument on (1/2, 1), 0 beyond; argument is |y|/delta'.
double cutoff_chi(double r);
double cutoff_chi_d1(double r);
double cutoff_chi_d2(double r);

}  // namespace ctalab
