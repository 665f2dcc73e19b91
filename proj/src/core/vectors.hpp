#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/geometry.hpp"

namespace ctalab {

enum class SchemeKind { Xi4, Zeta5 };

/// A complexified direction vector (c e1, i v) in T(R x M0): first slot the
/// signed speed along e1, tangential part i*v. Lightlike for the Lorentz
/// pairing <a,b> = a1 b1 - <v_a, v_b>.
struct LiftedVector {
  double e1 = 0.0;  // signed |v|
  Vec2 tangent;     // v (the i-part)
  double speed() const { return std::abs(e1); }
  int sign() const { return e1 >= 0 ? +1 : -1; }
  Cplx pair(const LiftedVector& o, const Mat2& g) const {
    // <a, b> with a = a1 e1 + i v_a: a1 b1 - g(v_a, v_b).
    return Cplx(e1 * o.e1 - g.quad(tangent, o.tangent), 0.0);
  }
};

/// Direction vectors at p0 with lifted lightlike versions, traced geodesics
/// and the derived coupling data.
class DirectionScheme {
 public:
  SchemeKind kind;
  double delta = 0.1;
  Vec2 p0;
  std::vector<Vec2> tangents;       // xi_k or zeta_k (chart components)
  std::vector<LiftedVector> lifts;  // in the orthonormal frame at p0
  std::vector<double> speeds;       // c_k = |vector|_g
  std::vector<int> signs;
  std::vector<Geodesic> geodesics;
  Mat2 g_p0;
  // Orthonormal frame at p0 (columns), so frame coords have euclidean algebra.
  Vec2 frame_e1, frame_e2;

  /// Inner product of scheme vectors i and k in T_{p0} M0.
  double tangent_inner(int i, int k) const;
  double lightlike_defect() const;  // max_k |<v_k, v_k>|
  double closure_defect() const;    // |sum_k lifted|
  /// min over pairs of the (euclidean-in-frame) parallelogram area.
  double min_pair_independence() const;
  Vec2 tangent_in_frame(int k) const;
};

struct SchemeReport {
  double lightlike_defect = 0.0;
  double closure_defect = 0.0;
  double min_pair_independence = 0.0;
  double min_three_sum = 0.0;      // xi4: min over 3-subsets of |sum of lifts|
  double eta_consistency = 0.0;    // max |eta(a,b) - <abar,bbar>| over samples
  bool all_nontangential = false;
  bool pass = false;
};

DirectionScheme build_xi_scheme(const TransversalGeometry& geom, const Vec2& p0,
                                const Vec2& xi1_direction, double delta, int rotation_sense = +1,
                                bool trace = true);
DirectionScheme build_zeta_scheme(const TransversalGeometry& geom, const Vec2& p0, double delta,
                                  const Vec2& xi1_direction = Vec2{1.0, 0.0},
                                  int rotation_sense = +1, bool trace = true);

double coupling_C(const DirectionScheme& scheme, int i, int k);
double coupling_D_pair(const DirectionScheme& scheme, int i, int k);
/// Triple coefficient computed directly AND via the complement identity;
/// errors if the two routes disagree beyond 1e-10.
double coupling_D_triple(const DirectionScheme& scheme, int i, int j, int k);

struct CouplingTable {
  double delta = 0.0;
  std::array<std::array<double, 5>, 5> D{};        // pairs, zeta indices 0..4
  std::array<double, 4> C{};                        // C12, C13, C23, C14-slot unused
  double C12 = 0, C13 = 0, C23 = 0;
  double E_delta = 0.0;       // Lemma display: 1/(D+D+D) grouping
  double E_effective = 0.0;   // recursion grouping: 1/D_ij + 1/D_ik + 1/D_jk
};

CouplingTable coupling_table(const DirectionScheme& zeta);

/// E_delta exactly as the closed-form lemma displays it.
double coefficient_E(const DirectionScheme& zeta);
/// The same combination with the recursion-consistent inner grouping.
double coefficient_E_effective(const DirectionScheme& zeta);

SchemeReport verify_scheme(const DirectionScheme& scheme);

}  // namespace ctalab
