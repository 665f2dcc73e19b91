#include "core/runner.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "core/cache.hpp"
#include "core/forward.hpp"
#include "core/geometry.hpp"
#include "core/linearize.hpp"
#include "core/quasimode.hpp"
#include "core/recovery.hpp"
#include "core/vectors.hpp"
#include "core/wkb.hpp"

namespace fs = std::filesystem;

namespace ctalab {

namespace {

struct RunContext {
  Config cfg;
  RunOptions opts;
  Manifest manifest;
  bool threshold_failed = false;

  void emit(const std::string& name, const std::string& bytes) {
    std::string path = (fs::path(opts.out_dir) / name).string();
    atomic_write_file(path, bytes);
    manifest.add(name, bytes);
  }
};

TransversalGeometry geometry_from(const Config& cfg) {
  TransversalSpec spec;
  std::string chart = cfg.get_string("geometry.chart", std::string("square"));
  if (chart == "square") spec.chart = ChartKind::Square;
  else if (chart == "disk") spec.chart = ChartKind::Disk;
  else fail_config("geometry.chart must be 'square' or 'disk'");
  std::string metric = cfg.get_string("geometry.metric", std::string("flat"));
  if (metric == "flat") spec.metric = MetricKind::Flat;
  else if (metric == "conformal") spec.metric = MetricKind::Conformal;
  else fail_config("geometry.metric must be 'flat' or 'conformal'");
  spec.epsilon = cfg.get_double("geometry.epsilon", 0.0);
  spec.phi = cfg.get_string("geometry.phi", std::string("sin(pi*y1)*sin(pi*y2)"));
  spec.trace_step = cfg.get_double("geometry.trace_step", 1e-3);
  spec.tube_radius = cfg.get_double("geometry.tube_radius", 0.3);
  return TransversalGeometry(spec);
}

Vec2 vec2_from(const Config& cfg, const std::string& key, Vec2 fallback) {
  if (!cfg.has(key)) return fallback;
  auto v = cfg.get_list(key);
  if (v.size() != 2) fail_config(key + " must be two comma-separated numbers");
  return {v[0], v[1]};
}

std::string csv_escape(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void run_vectors(RunContext& rc) {
  TransversalGeometry geom = geometry_from(rc.cfg);
  Vec2 p0 = vec2_from(rc.cfg, "scheme.point", {0.5, 0.5});
  Vec2 xi1 = vec2_from(rc.cfg, "scheme.xi1", {1.0, 0.0});
  int rot = static_cast<int>(rc.cfg.get_int("scheme.rotation", 1));
  std::vector<double> deltas =
      rc.cfg.get_list("sweeps.delta", {0.1, 0.05, 0.025, 0.0125, 0.00625});

  std::ostringstream csv;
  csv << "delta,name,value\n";
  for (double d : deltas) {
    DirectionScheme xi = build_xi_scheme(geom, p0, xi1, d, rot, false);
    DirectionScheme ze = build_zeta_scheme(geom, p0, d, xi1, rot, false);
    auto row = [&](const std::string& name, double v) {
      csv << csv_escape(d) << "," << name << "," << csv_escape(v) << "\n";
    };
    row("C12", coupling_C(xi, 0, 1));
    row("C13", coupling_C(xi, 0, 2));
    row("C23", coupling_C(xi, 1, 2));
    for (int i = 0; i < 5; ++i)
      for (int k = i + 1; k < 5; ++k)
        row("D" + std::to_string(i + 1) + std::to_string(k + 1), coupling_D_pair(ze, i, k));
    row("D123", coupling_D_triple(ze, 0, 1, 2));
    row("E_delta", coefficient_E(ze));
    row("E_effective", coefficient_E_effective(ze));
    SchemeReport rep = verify_scheme(xi);
    row("xi_lightlike_defect", rep.lightlike_defect);
    row("xi_closure_defect", rep.closure_defect);
    row("xi_min_three_sum", rep.min_three_sum);
  }
  rc.emit("couplings.csv", csv.str());
}

void run_quasimode(RunContext& rc) {
  TransversalGeometry geom = geometry_from(rc.cfg);
  Vec2 p0 = vec2_from(rc.cfg, "quasimode.point", {0.5, 0.5});
  Vec2 dir = vec2_from(rc.cfg, "quasimode.direction", {1.0, 0.0});
  double n = geom.norm(p0, dir);
  Geodesic geo = trace_geodesic(geom, p0, dir * (1.0 / n));
  FermiChart chart(geom, geo, geom.spec().tube_radius);
  RiccatiSolution ric = solve_riccati(chart);

  Expr V = rc.cfg.get_expr("potentials.V", std::string("0"));
  double speed = rc.cfg.get_double("quasimode.speed", 8.0);
  double lambda = rc.cfg.get_double("quasimode.lambda", 0.0);
  int sign = static_cast<int>(rc.cfg.get_int("quasimode.sign", 1));
  double dp = rc.cfg.get_double("quasimode.delta_prime", 0.45);
  int corrections = static_cast<int>(rc.cfg.get_int("quasimode.corrections", 0));
  std::string norm_kind = rc.cfg.get_string("quasimode.norm", std::string("L2"));
  std::vector<double> taus = rc.cfg.get_list("sweeps.tau", {64, 128, 256, 512});

  auto beam = build_beam(geom, geo, ric, speed, lambda, sign, dp, corrections, V);
  ResidualReport rep = quasimode_residual(beam, V, norm_kind, taus, rc.opts.jobs);

  std::ostringstream csv;
  csv << "tau,norm_kind,residual,slope_running\n";
  for (size_t i = 0; i < rep.tau.size(); ++i) {
    double slope_running = 0.0;
    if (i > 0)
      slope_running = std::log(rep.residual[i] / rep.residual[i - 1]) /
                      std::log(rep.tau[i] / rep.tau[i - 1]);
    csv << csv_escape(rep.tau[i]) << "," << rep.norm_kind << "," << csv_escape(rep.residual[i])
        << "," << csv_escape(slope_running) << "\n";
  }
  rc.emit("quasimode_residual.csv", csv.str());

  nlohmann::json j;
  j["slope"] = rep.slope;
  j["slope_halfwidth95"] = rep.slope_halfwidth95;
  j["cutoff_dominates"] = rep.cutoff_dominates;
  j["conservation_defect"] = ric.conservation_defect();
  j["min_im_H"] = ric.min_im_H();
  j["corrections"] = corrections;
  rc.emit("quasimode_summary.json", j.dump(2) + "\n");

  double max_slope = rc.cfg.get_double("quasimode.max_slope", 1e30);
  if (rep.slope > max_slope) rc.threshold_failed = true;
}

void run_forward(RunContext& rc) {
  TransversalGeometry geom = geometry_from(rc.cfg);
  int n = static_cast<int>(rc.cfg.get_int("grid.n", 16));
  Grid3 grid{n, n, n};
  Expr V = rc.cfg.get_expr("potentials.V", std::string("0"));
  Expr q = rc.cfg.get_expr("potentials.q1", std::string("0"));
  Expr f = rc.cfg.get_expr("forward.f", std::string("0.01"));
  DiscreteOperator op(grid, geom, V);

  double margin = op.eigenvalue_margin();
  if (std::abs(margin) < rc.cfg.get_double("forward.min_margin", 1e-6))
    fail_numeric("zero is (numerically) a Dirichlet eigenvalue; adjust V");

  Field qs = sample_field(grid, q);
  BoundaryField fb = sample_boundary(grid, f);

  // Content-addressed DN cache keyed by the full problem description.
  std::string key = "dn|" + geom.content_key() + "|" + std::to_string(n) + "|V=" +
                    rc.cfg.get_string("potentials.V", std::string("0")) + "|q=" +
                    rc.cfg.get_string("potentials.q1", std::string("0")) + "|f=" +
                    rc.cfg.get_string("forward.f", std::string("0.01"));
  ArtifactCache cache((fs::path(rc.opts.out_dir) / "cache").string());
  std::vector<std::int64_t> dims = {n, n, n};
  std::vector<double> dn_values;
  bool cache_hit = false;
  if (rc.cfg.get_bool("forward.use_cache", true)) {
    if (auto hit = cache.load(key, dims)) {
      dn_values = *hit;
      cache_hit = true;
    }
  }
  SolveStats stats;
  if (!cache_hit) {
    Field u = op.solve_semilinear(qs, fb, rc.cfg.get_double("solver.newton_tol", 1e-10), &stats);
    auto nd = op.neumann_variational(qs, u);
    dn_values = nd.value.values;
    cache.store(key, dims, dn_values);
  }

  std::ostringstream csv;
  csv << "i,j,k,x1,y1,y2,dn_value\n";
  const Grid3& g = grid;
  for (int i = 0; i < g.p1(); ++i)
    for (int jj = 0; jj < g.p2(); ++jj)
      for (int k = 0; k < g.p3(); ++k) {
        if (!g.boundary(i, jj, k)) continue;
        csv << i << "," << jj << "," << k << "," << csv_escape(g.x1(i)) << ","
            << csv_escape(jj * g.h2()) << "," << csv_escape(k * g.h3()) << ","
            << csv_escape(dn_values[g.idx(i, jj, k)]) << "\n";
      }
  rc.emit("dn_map.csv", csv.str());

  nlohmann::json j;
  j["eigenvalue_margin"] = margin;
  j["cache_hit"] = cache_hit;
  j["newton_iterations"] = stats.newton_iterations;
  j["stability_constant"] = stats.stability_constant;
  rc.emit("forward_summary.json", j.dump(2) + "\n");
}

EpsFamily family_from(const Config& cfg, const Grid3& grid) {
  double scale = cfg.get_double("linearize.f_scale", 0.15);
  std::string s = "(" + std::to_string(scale) + ")*";
  std::vector<Expr> f1 = {
      Expr::parse(s + "(1 + 0.5*sin(pi*y1))"),
      Expr::parse(s + "(1 - 0.4*cos(pi*x1)*sin(pi*y2))"),
      Expr::parse(s + "(0.8 + 0.3*sin(pi*x1)*sin(pi*y1))"),
      Expr::parse(s + "(0.9 - 0.2*cos(pi*y2))"),
      Expr::parse(s + "(0.7 + 0.25*sin(pi*(x1+y1)))"),
  };
  std::map<std::pair<int, int>, Expr> f2;
  f2[{0, 1}] = Expr::parse(s + "0.4*(1+y2)");
  f2[{0, 2}] = Expr::parse(s + "0.3*cos(pi*y1)");
  f2[{1, 2}] = Expr::parse(s + "0.2");
  std::map<std::array<int, 3>, Expr> f3;
  f3[{0, 1, 2}] = Expr::parse(s + "0.15*(1-y1)");
  return EpsFamily(grid, f1, f2, f3);
}

void run_identity(RunContext& rc) {
  TransversalGeometry geom = geometry_from(rc.cfg);
  Expr V = rc.cfg.get_expr("potentials.V", std::string("1"));
  Expr q1e = rc.cfg.get_expr("potentials.q1", std::string("1 + 0.4*sin(pi*y1)*sin(pi*y2)"));
  Expr q2e = rc.cfg.get_expr(
      "potentials.q2",
      std::string("1 + 0.4*sin(pi*y1)*sin(pi*y2) - 0.5*sin(pi*x1)*sin(pi*y1)*sin(pi*y2)"));
  int n = static_cast<int>(rc.cfg.get_int("grid.n", 32));
  bool refine = rc.cfg.get_bool("identity.refine", false);
  double tol = rc.cfg.get_double("identity.max_rel", 5e-2);
  double newton_tol = rc.cfg.get_double("solver.newton_tol", 1e-12);

  std::ostringstream csv;
  csv << "order,grid,h,lhs,rhs,rel_discrepancy\n";
  std::vector<int> grids = {n};
  if (refine) grids.push_back(2 * n);
  for (int order : {2, 3, 4}) {
    double h = rc.cfg.get_double("linearize.h" + std::to_string(order),
                                 order == 2 ? 1e-2 : order == 3 ? 2e-2 : 3e-2);
    for (int gn : grids) {
      Grid3 grid{gn, gn, gn};
      DiscreteOperator op(grid, geom, V);
      Field q1 = sample_field(grid, q1e), q2 = sample_field(grid, q2e);
      EpsFamily fam = family_from(rc.cfg, grid);
      try {
        IdentityReport rep =
            identity_residual(op, q1, q2, fam, order, h, newton_tol, rc.opts.jobs);
        csv << order << "," << gn << "," << csv_escape(h) << ","
            << csv_escape(rep.boundary_side) << "," << csv_escape(rep.volume_side) << ","
            << csv_escape(rep.rel_discrepancy) << "\n";
        if (gn == n && rep.rel_discrepancy > tol) rc.threshold_failed = true;
      } catch (const Error& e) {
        rc.manifest.add_error("identity order " + std::to_string(order) + " n " +
                                  std::to_string(gn),
                              e.what());
      }
    }
  }
  rc.emit("identity_reports.csv", csv.str());
}

void run_linearize(RunContext& rc) {
  TransversalGeometry geom = geometry_from(rc.cfg);
  Expr V = rc.cfg.get_expr("potentials.V", std::string("1"));
  Expr qe = rc.cfg.get_expr("potentials.q1",
                            std::string("1 + 0.5*sin(pi*x1)*sin(pi*y1)*sin(pi*y2)"));
  int n = static_cast<int>(rc.cfg.get_int("grid.n", 32));
  Grid3 grid{n, n, n};
  DiscreteOperator op(grid, geom, V);
  Field q = sample_field(grid, qe);
  EpsFamily fam = family_from(rc.cfg, grid);
  double newton_tol = rc.cfg.get_double("solver.newton_tol", 1e-12);

  std::ostringstream csv;
  csv << "order,h,rel_error_fd,rel_error_richardson\n";
  auto rel_err = [&](const Field& a, const Field& b) {
    double num = 0, den = 0;
    for (std::size_t m = 0; m < a.size(); ++m) {
      num += op.mass_at(m) * (a[m] - b[m]) * (a[m] - b[m]);
      den += op.mass_at(m) * b[m] * b[m];
    }
    return std::sqrt(num / den);
  };

  for (int order : {2, 3}) {
    double h = rc.cfg.get_double("linearize.h" + std::to_string(order),
                                 order == 2 ? 1e-2 : 2e-2);
    // Direct solve of the linearized hierarchy.
    std::vector<Field> v;
    for (int i = 0; i < order; ++i) v.push_back(direct_first_linearized(op, fam.boundary(i)));
    Field direct;
    if (order == 2) {
      direct = direct_second_linearized(op, q, v[0], v[1], fam.boundary_pairdata(0, 1));
    } else {
      Field w01 = direct_second_linearized(op, q, v[0], v[1], fam.boundary_pairdata(0, 1));
      Field w02 = direct_second_linearized(op, q, v[0], v[2], fam.boundary_pairdata(0, 2));
      Field w12 = direct_second_linearized(op, q, v[1], v[2], fam.boundary_pairdata(1, 2));
      direct = direct_third_linearized(op, q, v[0], v[1], v[2], w12, w02, w01,
                                       fam.boundary_tripledata(0, 1, 2));
    }
    std::vector<int> index;
    for (int i = 0; i < order; ++i) index.push_back(i);
    Field fd_h = mixed_derivative(op, q, fam, index, h, newton_tol, rc.opts.jobs).field;
    Field fd_h2 = mixed_derivative(op, q, fam, index, h / 2, newton_tol, rc.opts.jobs).field;
    Field rich(fd_h.size());
    for (std::size_t m = 0; m < rich.size(); ++m) rich[m] = (4.0 * fd_h2[m] - fd_h[m]) / 3.0;
    double e_fd = rel_err(fd_h2, direct);
    double e_rich = rel_err(rich, direct);
    csv << order << "," << csv_escape(h) << "," << csv_escape(e_fd) << ","
        << csv_escape(e_rich) << "\n";
    if (e_rich > rc.cfg.get_double("linearize.max_rel", 5e-3)) rc.threshold_failed = true;
  }
  rc.emit("fd_vs_direct.csv", csv.str());
}

void run_wkb(RunContext& rc) {
  TransversalGeometry geom = geometry_from(rc.cfg);
  Expr q = rc.cfg.get_expr("potentials.q1", std::string("1 + 0.3*sin(pi*x1)"));
  Expr V = rc.cfg.get_expr("potentials.V", std::string("0"));
  Vec2 p0 = vec2_from(rc.cfg, "wkb.point", {0.5, 0.5});
  double dp = rc.cfg.get_double("wkb.delta_prime", 0.15);
  int depth = static_cast<int>(rc.cfg.get_int("wkb.depth", 2));
  std::vector<double> taus = rc.cfg.get_list("sweeps.tau", {128, 256, 512, 1024});

  auto mkbeam = [&](Vec2 dir) {
    double nn = geom.norm(p0, dir);
    Geodesic geo = trace_geodesic(geom, p0, dir * (1.0 / nn));
    FermiChart chart(geom, geo, geom.spec().tube_radius);
    RiccatiSolution ric = solve_riccati(chart);
    return assemble_cgo(build_beam(geom, geo, ric, 1.0, 0.0, +1, dp, 0, V), taus.front());
  };
  CGOSolution v1 = mkbeam(vec2_from(rc.cfg, "wkb.direction1", {1.0, 0.0}));
  CGOSolution v2 = mkbeam(vec2_from(rc.cfg, "wkb.direction2", {0.0, 1.0}));
  WkbAnsatz ansatz = WkbAnsatz::pair(v1, v2, q, depth, V);
  WkbResidualReport rep = wkb_residual(ansatz, taus, rc.opts.jobs);

  std::ostringstream csv;
  csv << "tau,residual,slope_running\n";
  for (size_t i = 0; i < rep.tau.size(); ++i) {
    double slope_running =
        i > 0 ? std::log(rep.residual[i] / rep.residual[i - 1]) /
                    std::log(rep.tau[i] / rep.tau[i - 1])
              : 0.0;
    csv << csv_escape(rep.tau[i]) << "," << csv_escape(rep.residual[i]) << ","
        << csv_escape(slope_running) << "\n";
  }
  rc.emit("wkb_residual.csv", csv.str());

  // Coefficient slice for plotting: |b_{-2}| on the chart patch at x1 = 1/2.
  std::ostringstream slice;
  slice << "y1,y2,re_b2,im_b2\n";
  double R = ansatz.support().radius;
  for (int i = 0; i <= 40; ++i)
    for (int j = 0; j <= 40; ++j) {
      Vec2 yp{p0.x - R + 2 * R * i / 40.0, p0.y - R + 2 * R * j / 40.0};
      Cplx b = ansatz.coefficient(ansatz.k_min(), 0.5, yp);
      slice << csv_escape(yp.x) << "," << csv_escape(yp.y) << "," << csv_escape(b.real()) << ","
            << csv_escape(b.imag()) << "\n";
    }
  rc.emit("wkb_b2_slice.csv", slice.str());

  nlohmann::json j;
  j["slope"] = rep.slope;
  j["depth"] = depth;
  j["quadrature_converged"] = rep.quadrature_converged;
  j["max_quadrature_change"] = rep.max_quadrature_change;
  rc.emit("wkb_summary.json", j.dump(2) + "\n");
}

void run_recover(RunContext& rc) {
  TransversalGeometry geom = geometry_from(rc.cfg);
  int order = static_cast<int>(rc.cfg.get_int("recover.order", 3));
  double delta = rc.cfg.get_double("scheme.delta", order == 3 ? 0.1 : 0.3);
  Vec2 p0 = vec2_from(rc.cfg, "scheme.point", {0.5, 0.5});
  Vec2 xi1 = vec2_from(rc.cfg, "scheme.xi1", {1.0, 0.0});
  Expr q1 = rc.cfg.get_expr("potentials.q1",
                            std::string("sin(pi*x1)*(0.9 + 0.2*sin(pi*y1)*sin(pi*y2))"));
  Expr q2 = rc.cfg.get_expr("potentials.q2", std::string("0.5*sin(pi*x1)"));
  double dp = rc.cfg.get_double("recover.delta_prime", 0.3);
  double patch = rc.cfg.get_double("recover.patch_radius", order == 3 ? 0.12 : 0.05);
  std::vector<double> taus = rc.cfg.get_list("sweeps.tau", {4096, 8192, 16384, 32768});
  std::vector<double> lambdas = rc.cfg.get_list("sweeps.lambda", {});
  if (lambdas.empty())
    for (int i = 0; i < 33; ++i) lambdas.push_back(-8.0 + 16.0 * i / 32.0);

  DirectionScheme scheme = order == 3 ? build_xi_scheme(geom, p0, xi1, delta)
                                      : build_zeta_scheme(geom, p0, delta, xi1);
  AsymptoticContext ctx(geom, scheme, q1, q2, order, dp, patch);
  double cA = hessian_constant_cA(ctx.beams());
  Cplx norm = cA * ctx.amplitude_product_p0() * ctx.coupling_combination_p0();

  std::vector<Cplx> limits(lambdas.size());
  std::vector<double> fitres(lambdas.size());
  for (size_t li = 0; li < lambdas.size(); ++li) {
    std::vector<AsymptoticSample> ss;
    for (double t : taus) ss.push_back(ctx.sample(t, lambdas[li]));
    LimitEstimate est = stationary_phase_limit(ss);
    limits[li] = est.limit;
    fitres[li] = est.fit_residual;
  }

  // Normalize and invert.
  std::vector<Cplx> fs(limits.size());
  for (size_t i = 0; i < limits.size(); ++i) fs[i] = limits[i] / norm;
  int x1n = static_cast<int>(rc.cfg.get_int("recover.x1_samples", 65));
  FourierInversion inv = fourier_invert(lambdas, fs, x1n);

  // Ground truth profile along (x1, p0).
  std::vector<double> truth(inv.x1.size());
  for (size_t i = 0; i < inv.x1.size(); ++i) {
    double a = q1.eval(inv.x1[i], p0.x, p0.y), b = q2.eval(inv.x1[i], p0.x, p0.y);
    truth[i] = order == 3 ? a * a - b * b : a * a * a - b * b * b;
  }
  double num = 0, den = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    num += (inv.profile[i] - truth[i]) * (inv.profile[i] - truth[i]);
    den += truth[i] * truth[i];
  }
  double rel_l2 = den > 0 ? std::sqrt(num / den) : std::sqrt(num);

  nlohmann::json j;
  j["order"] = order;
  j["lambda"] = lambdas;
  j["limit_re"] = nlohmann::json::array();
  j["limit_im"] = nlohmann::json::array();
  for (const auto& L : limits) {
    j["limit_re"].push_back(L.real());
    j["limit_im"].push_back(L.imag());
  }
  j["profile"] = inv.profile;
  j["truth"] = truth;
  j["rel_l2_err"] = rel_l2;
  j["c_A"] = cA;
  j["coupling_combination"] = {norm.real() / cA, norm.imag() / cA};
  j["imag_residue"] = inv.imag_residue;
  j["min_denominator_margin"] = ctx.min_denominator_margin();
  rc.emit("recovery.json", j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "lambda,limit_re,limit_im,fit_residual\n";
  for (size_t i = 0; i < lambdas.size(); ++i)
    csv << csv_escape(lambdas[i]) << "," << csv_escape(limits[i].real()) << ","
        << csv_escape(limits[i].imag()) << "," << csv_escape(fitres[i]) << "\n";
  rc.emit("recovery_limits.csv", csv.str());

  std::ostringstream pcsv;
  pcsv << "x1,profile,truth\n";
  for (size_t i = 0; i < inv.x1.size(); ++i)
    pcsv << csv_escape(inv.x1[i]) << "," << csv_escape(inv.profile[i]) << ","
         << csv_escape(truth[i]) << "\n";
  rc.emit("recovery_profile.csv", pcsv.str());

  if (rel_l2 > rc.cfg.get_double("recover.max_rel_l2", 1e30)) rc.threshold_failed = true;
}

void run_boundary(RunContext& rc) {
  TransversalGeometry geom = geometry_from(rc.cfg);
  int n = static_cast<int>(rc.cfg.get_int("grid.n", 16));
  Grid3 grid{n, n, n};
  Expr V = rc.cfg.get_expr("potentials.V", std::string("0.5 + 0.3*y1"));
  Expr q = rc.cfg.get_expr("potentials.q1",
                           std::string("1 + 0.5*sin(pi*x1)*sin(pi*y1)*sin(pi*y2)"));
  int m = static_cast<int>(rc.cfg.get_int("boundary.m", 2));
  std::vector<double> eps_list = rc.cfg.get_list("boundary.eps0", {0.005, 0.01, 0.02});
  int refine = static_cast<int>(rc.cfg.get_int("boundary.reference_refine", 2));

  nlohmann::json j;
  j["m"] = m;
  j["grid_n"] = n;
  std::vector<double> q_err, dq_err;
  Expr dq[3] = {q.derivative("x1"), q.derivative("y1"), q.derivative("y2")};
  BoundaryField first_rec;
  double eps_invariance = 0.0;
  for (size_t e = 0; e < eps_list.size(); ++e) {
    BoundaryJet jet = boundary_recover(grid, geom, V, q, m, eps_list[e], refine);
    double worst_q = 0, worst_dq = 0;
    for (int i = 0; i < grid.p1(); ++i)
      for (int jj = 0; jj < grid.p2(); ++jj)
        for (int k = 0; k < grid.p3(); ++k) {
          if (!grid.boundary(i, jj, k)) continue;
          int faces = (i == 0) + (i == grid.n1) + (jj == 0) + (jj == grid.n2) + (k == 0) +
                      (k == grid.n3);
          if (faces != 1) continue;
          double x1 = grid.x1(i), y1 = jj * grid.h2(), y2 = k * grid.h3();
          double truth = q.eval(x1, y1, y2);
          worst_q = std::max(worst_q,
                             std::abs(jet.q_boundary.values[grid.idx(i, jj, k)] - truth));
          double dn[3] = {0, 0, 0};
          if (i == 0) dn[0] = -1;
          if (i == grid.n1) dn[0] = 1;
          if (jj == 0) dn[1] = -1;
          if (jj == grid.n2) dn[1] = 1;
          if (k == 0) dn[2] = -1;
          if (k == grid.n3) dn[2] = 1;
          double dq_truth = dn[0] * dq[0].eval(x1, y1, y2) + dn[1] * dq[1].eval(x1, y1, y2) +
                            dn[2] * dq[2].eval(x1, y1, y2);
          worst_dq =
              std::max(worst_dq, std::abs(jet.dnu_q.values[grid.idx(i, jj, k)] - dq_truth));
        }
    q_err.push_back(worst_q);
    dq_err.push_back(worst_dq);
    if (e == 0) first_rec = jet.q_boundary;
    else
      for (std::size_t mm = 0; mm < first_rec.values.size(); ++mm)
        eps_invariance = std::max(
            eps_invariance, std::abs(jet.q_boundary.values[mm] - first_rec.values[mm]));
  }
  j["eps0"] = eps_list;
  j["q_boundary_sup_error"] = q_err;
  j["dnu_q_sup_error"] = dq_err;
  j["eps0_invariance"] = eps_invariance;
  rc.emit("boundary_recovery.json", j.dump(2) + "\n");
}

void run_carleman(RunContext& rc) {
  TransversalGeometry geom = geometry_from(rc.cfg);
  int n = static_cast<int>(rc.cfg.get_int("grid.n", 24));
  Grid3 grid{n, n, n};
  Expr V = rc.cfg.get_expr("potentials.V", std::string("1"));
  DiscreteOperator op(grid, geom, V);
  int family = static_cast<int>(rc.cfg.get_int("carleman.family", 200));
  std::vector<double> taus = rc.cfg.get_list("sweeps.tau", {8, 16, 24, 32, 48, 64, 80});

  ProbeReport rep = carleman_probe(op, family, taus, rc.opts.seed, rc.opts.jobs);

  std::ostringstream csv;
  csv << "sample,ratio\n";
  for (size_t i = 0; i < rep.ratios.size(); ++i)
    csv << i << "," << csv_escape(rep.ratios[i]) << "\n";
  rc.emit("carleman_ratios.csv", csv.str());

  nlohmann::json j;
  j["c_hat"] = rep.c_hat;
  j["c_hat_doubled"] = rep.c_hat_doubled;
  j["argmin_tau"] = rep.argmin_tau;
  j["inequality_violated_on_resample"] = rep.inequality_violated_on_resample;
  j["family"] = family;
  rc.emit("carleman_summary.json", j.dump(2) + "\n");
  if (rep.inequality_violated_on_resample) rc.threshold_failed = true;
}

}  // namespace

bool is_known_subcommand(const std::string& name) {
  static const char* names[] = {"quasimode", "forward", "linearize", "identity", "wkb",
                                "vectors",   "recover", "boundary",  "carleman", "all"};
  for (const char* n : names)
    if (name == n) return true;
  return false;
}

const char* known_subcommands() {
  return "quasimode, forward, linearize, identity, wkb, vectors, recover, boundary, carleman, all";
}

int run_subcommand(const std::string& subcommand, const Config& cfg, const RunOptions& opts,
                   std::string* error_message) {
  if (!is_known_subcommand(subcommand)) {
    if (error_message)
      *error_message = "unknown subcommand '" + subcommand + "' (expected one of: " +
                       known_subcommands() + ")";
    return 2;
  }
  RunContext rc{cfg, opts, {}, false};
  try {
    if (subcommand == "vectors" || subcommand == "all") run_vectors(rc);
    if (subcommand == "quasimode" || subcommand == "all") run_quasimode(rc);
    if (subcommand == "forward" || subcommand == "all") run_forward(rc);
    if (subcommand == "identity" || subcommand == "all") run_identity(rc);
    if (subcommand == "linearize" || subcommand == "all") run_linearize(rc);
    if (subcommand == "wkb" || subcommand == "all") run_wkb(rc);
    if (subcommand == "recover" || subcommand == "all") run_recover(rc);
    if (subcommand == "boundary" || subcommand == "all") run_boundary(rc);
    if (subcommand == "carleman" || subcommand == "all") run_carleman(rc);
  } catch (const Error& e) {
    if (error_message) *error_message = e.what();
    rc.manifest.add_error(subcommand, e.what());
    std::string manifest_json = rc.manifest.to_json(content_hash(cfg.canonical()), opts.seed);
    try {
      atomic_write_file((fs::path(opts.out_dir) / "manifest.json").string(), manifest_json);
    } catch (...) {
    }
    return e.kind() == ErrorKind::Config ? 2 : 3;
  }

  std::string manifest_json = rc.manifest.to_json(content_hash(cfg.canonical()), opts.seed);
  atomic_write_file((fs::path(opts.out_dir) / "manifest.json").string(), manifest_json);
  if (rc.manifest.has_errors()) {
    if (error_message) *error_message = "one or more sweep points failed; see manifest.json";
    return 3;
  }
  return rc.threshold_failed ? 4 : 0;
}

}  // namespace ctalab
