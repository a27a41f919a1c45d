#pragma once

#include <iostream>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "homog/config.hpp"
#include "homog/oracle.hpp"

namespace homog::app {

constexpr int kOk = 0, kSolverFailure = 1, kConfigError = 2, kAcceptanceFailure = 3;

struct Context {
  ExperimentConfig cfg;
  fs::path out;
  bool quiet = false;

  void progress(const std::string& msg) const {
    if (!quiet) std::cerr << "[homog] " << msg << "\n";
  }
  fs::path table(const std::string& name) const { return out / "tables" / (name + ".csv"); }
  fs::path field(const std::string& name) const { return out / "fields" / name; }
};

inline json field_meta(const Context& ctx, const std::string& name) {
  json m;
  m["n"] = ctx.cfg.n;
  m["field_name"] = name;
  m["field"] = ctx.cfg.field;
  return m;
}

inline json merged(json a, const json& b) {
  a.update(b);
  return a;
}

inline json matrix_json(const Mat<3>& A) {
  json rows = json::array();
  for (const auto& r : A) rows.push_back(std::vector<double>(r.begin(), r.end()));
  return rows;
}

inline std::vector<long> per_eps(const std::vector<long>& v, std::size_t k) {
  return v.size() == 1 ? std::vector<long>(k, v[0]) : v;
}

// ---------------------------------------------------------------------------

inline int cmd_cell(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto field = make_field<3>(cfg.field);
  const auto copt = cfg.cell_options();
  const auto Ns = per_eps(cfg.res.N_cell, cfg.eps_list.size());
  json summary;
  summary["command"] = "cell";
  summary["config"] = cfg.raw;

  ctx.progress("effective tensor, N = " + std::to_string(Ns.back()));
  const auto et = effective_tensor(field, Ns.back(), copt);
  CsvTable abar({"i", "j", "abar"});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) abar.add({static_cast<long>(i), static_cast<long>(j), et.abar[i][j]});
  abar.write(ctx.table("effective_tensor"));
  summary["abar"] = matrix_json(et.abar);
  summary["kappas"] = et.kappas;
  write_node_field(ctx.field("invariant_measure"), et.measure,
                   merged(field_meta(ctx, "invariant_measure"), json{{"N", Ns.back()}}));

  ctx.progress("critical values over " + std::to_string(cfg.eps_list.size()) + " eps");
  std::vector<CriticalValueResult<3>> keep;
  const auto est = estimate_beta0(field, cfg.eps_list, Ns, copt, &keep);
  CsvTable cv({"eps", "N", "abar_eps", "E", "m_star", "eta", "beta", "envelope_c1", "envelope_c2", "outer_max",
               "max_free", "sweeps"});
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto& r = keep[i];
    cv.add({r.eps, r.N, r.abar, r.E, r.m_star, r.eta, r.beta, r.envelope_c1, r.envelope_c2, r.outer_max, r.max_free,
            r.stats.sweeps});
    json meta = merged(field_meta(ctx, "W_eps"), json{{"eps", r.eps}, {"N", r.N}, {"octant", r.W.octant}});
    write_node_field(ctx.field("W_eps_" + std::to_string(i)), r.W.values, meta);
  }
  cv.write(ctx.table("critical_values"));
  json b;
  b["beta0"] = est.beta0;
  b["tolerance"] = est.tolerance;
  b["ls_intercept"] = est.ls_intercept;
  b["ls_slope"] = est.ls_slope;
  b["ls_rms"] = est.ls_rms;
  b["cauchy"] = est.cauchy;
  b["cauchy_decreasing"] = est.cauchy_decreasing;
  b["model"] = est.model;
  summary["beta0"] = b;

  Mat<3> A0 = field(Vec<3>{0.0, 0.0, 0.0});
  ctx.progress("capacity potential, R = " + format_double(cfg.res.R_capacity));
  const auto cap = capacity_potential<3>(A0, cfg.res.R_capacity, cfg.res.capacity_nodes_per_unit, cfg.solve_options());
  CsvTable ct({"rho", "flux"});
  for (const auto& [rho, fl] : cap.flux_shells) ct.add({rho, fl});
  ct.write(ctx.table("capacity_flux"));
  json c;
  c["A0"] = matrix_json(A0);
  c["gamma0"] = cap.gamma0;
  c["flux_spread"] = cap.flux_spread;
  c["flux_warning"] = cap.flux_warning;
  c["far_field_passes"] = cap.far_field_passes;
  c["envelope"] = {cap.envelope_min, cap.envelope_max};
  summary["capacity"] = c;
  const double gap = std::abs(est.beta0 - cap.gamma0);
  const double allowed = est.tolerance + cap.flux_spread * cap.gamma0;
  summary["consistency"] = {{"abs_gap", gap}, {"allowed", allowed}, {"within", gap <= allowed},
                            {"applies", field.is_constant()}};

  if (cfg.field.value("kind", std::string()) == "remark") {
    ctx.progress("remark identity table");
    auto rc = cfg.remark;
    rc.delta = {cfg.field.value("delta", 0.1)};
    const auto rep = remark_experiment(rc.delta, cfg.eps_list, rc.N, rc.N_coarse, cfg.field.value("N", 64L),
                                       cfg.thresholds, copt);
    CsvTable rt({"delta", "eps", "N", "beta", "lhs", "I1", "I1_delta", "I2_surface", "I2_volume", "I3", "residual",
                 "gamma0"});
    for (const auto& r : rep.rows)
      rt.add({r.delta, r.eps, r.N, r.beta, r.lhs, r.I1, r.I1_delta, r.I2_surface, r.I2_volume, r.I3, r.residual,
              r.gamma0});
    rt.write(ctx.table("remark_gap"));
    summary["remark"] = rep.to_json();
  }
  write_json(ctx.out / "summary.json", summary);
  return kOk;
}

inline int cmd_converge(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  if (cfg.res.M.empty()) throw ConfigError("converge needs resolutions.M");
  if (cfg.alpha != 1.0) throw ConfigError("converge runs the critical case alpha = 1; use noncritical");
  ConvergenceInputs<3> in{make_field<3>(cfg.field), make_phi<3>(cfg.phi)};
  in.eps_list = cfg.eps_list;
  in.M_list = cfg.res.M;
  in.N_cell = cfg.res.N_cell;
  in.M_reference = cfg.res.M_reference;
  in.beta0 = cfg.beta0;
  in.cell_opt = cfg.cell_options();
  in.solve = cfg.solve_options();
  in.thresholds = cfg.thresholds;
  in.progress = [&](const std::string& m) { ctx.progress(m); };
  in.sink = [&](std::size_t i, const PerforatedDomain<3>& dom, const NodeField& u, const NodeField& ubar) {
    json meta = merged(field_meta(ctx, "u_eps"), json{{"eps", dom.scale.eps}, {"M", dom.M}, {"symmetric", dom.symmetric}, {"alpha", 1.0}});
    write_node_field(ctx.field("u_eps_" + std::to_string(i)), u, meta);
    meta["field_name"] = "ubar_eps";
    write_node_field(ctx.field("ubar_eps_" + std::to_string(i)), ubar, meta);
  };
  in.reference_sink = [&](const BoxGrid<3>& g, const NodeField& u) {
    json meta = merged(field_meta(ctx, "u_homogenized"), json{{"M", cfg.res.M_reference}, {"nodes_per_axis", g.nodes(0)}});
    write_node_field(ctx.field("u_homogenized"), u, meta);
  };
  const auto rep = run_convergence(in);
  CsvTable t({"eps", "M", "N_cell", "beta_eps", "sup_bar_error", "l1_error", "l2_error", "near_hole_l1", "grad_ratio",
              "flatness_max", "flatness_reference", "decay_max", "sweeps"});
  for (const auto& r : rep.rows)
    t.add({r.eps, r.M, r.N_cell, r.beta_eps, r.sup_bar_error, r.l1_error, r.l2_error, r.near_hole_l1, r.grad_ratio,
           r.flatness_max, r.flatness_reference, r.decay_max, r.sweeps});
  t.write(ctx.table("convergence"));
  json s = rep.to_json();
  s["command"] = "converge";
  write_json(ctx.out / "summary.json", s);
  return rep.complete ? kOk : kSolverFailure;
}

inline int cmd_green(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& gc = cfg.green;
  const auto field = make_field<3>(cfg.field);
  const Vec<3> x0{gc.x0[0], gc.x0[1], gc.x0[2]};
  json summary;
  summary["command"] = "green";
  summary["config"] = cfg.raw;
  CsvTable bt({"sigma", "bound_ratio", "min_value", "source_mass", "sweeps"});
  CsvTable st({"sigma", "radius", "min_scaled", "max_scaled", "band", "nodes"});
  std::vector<double> bounds;
  bool nonneg = true;
  for (double sigma : {gc.sigma, 0.5 * gc.sigma}) {
    ctx.progress("mollified Green function, sigma = " + format_double(sigma));
    const auto probe = approx_green<3>(field, x0, sigma, gc.N, cfg.solve_options());
    bt.add({sigma, probe.bound_ratio, probe.min_value, probe.source_mass, probe.stats.sweeps});
    bounds.push_back(probe.bound_ratio);
    nonneg = nonneg && probe.min_value >= 0.0;
    for (const auto& r : almost_homogeneity_probe(probe, gc.radii))
      st.add({sigma, r.radius, r.min_scaled, r.max_scaled, r.band, r.nodes});
    if (sigma == gc.sigma) write_node_field(ctx.field("green_sigma"), probe.G,
                                            merged(field_meta(ctx, "G_sigma"), json{{"sigma", sigma}, {"N", gc.N}}));
  }
  bt.write(ctx.table("green_bound"));
  st.write(ctx.table("green_shells"));
  ctx.progress("L^q gradient test");
  const auto rows = l1_gradient_test(field, gc.q, gc.shrink, gc.M, cfg.solve_options());
  CsvTable lt({"r", "q", "norm"});
  for (const auto& r : rows)
    for (std::size_t k = 0; k < gc.q.size(); ++k) lt.add({r.r, gc.q[k], r.norms[k]});
  lt.write(ctx.table("l1_gradient"));
  json trend = json::array();
  for (std::size_t k = 0; k < gc.q.size(); ++k) {
    json t;
    t["q"] = gc.q[k];
    t["critical"] = 3.0 / 2.0;
    std::vector<double> inc;
    for (std::size_t i = 1; i < rows.size(); ++i) inc.push_back(rows[i].norms[k] - rows[i - 1].norms[k]);
    t["increments"] = inc;
    if (inc.size() >= 2) t["increment_ratio"] = inc.back() / inc[inc.size() - 2];
    trend.push_back(t);
  }
  summary["bound_ratio"] = bounds;
  summary["bound_ratio_change"] = bounds[1] / bounds[0];
  summary["nonnegative"] = nonneg;
  summary["gradient_trend"] = trend;
  write_json(ctx.out / "summary.json", summary);
  return kOk;
}

inline int cmd_noncritical(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  if (cfg.alpha == 1.0) throw ConfigError("noncritical needs alpha != 1");
  NoncriticalInputs<3> in{make_field<3>(cfg.field), make_phi<3>(cfg.phi)};
  in.alpha = cfg.alpha;
  in.eps_list = cfg.eps_list;
  in.N_cell = cfg.res.N_cell;
  in.M_list = cfg.res.M;
  in.cell_opt = cfg.cell_options();
  in.solve = cfg.solve_options();
  in.thresholds = cfg.thresholds;
  ctx.progress("non-critical sweep, alpha = " + format_double(cfg.alpha));
  const auto rep = noncritical_sweep(in);
  CsvTable t({"eps", "eps_prime", "N", "M", "beta_prime", "beta_hat", "lower_bound", "bound_violations", "w_min",
              "w_max", "min_u_minus_phi", "sup_bar"});
  for (const auto& r : rep.rows)
    t.add({r.eps, r.eps_prime, r.N, r.M, r.beta_prime, r.beta_hat, r.lower_bound, r.bound_violations, r.w_min, r.w_max,
           r.min_u_minus_phi, r.sup_bar});
  t.write(ctx.table("noncritical"));
  json s = rep.to_json();
  s["command"] = "noncritical";
  s["config"] = cfg.raw;
  write_json(ctx.out / "summary.json", s);
  return kOk;
}

inline int cmd_remark(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& rc = cfg.remark;
  ctx.progress("remark experiment");
  const auto rep = remark_experiment(rc.delta, cfg.eps_list, rc.N, rc.N_coarse, rc.N_psi, cfg.thresholds,
                                     cfg.cell_options());
  CsvTable t({"delta", "eps", "N", "abar", "beta", "lhs", "I1", "I1_coarse", "N_coarse", "I1_delta", "I2_surface",
              "I2_volume", "I2_bound", "I3", "shell_radius", "identity_residual", "gamma0"});
  for (const auto& r : rep.rows)
    t.add({r.delta, r.eps, r.N, r.abar, r.beta, r.lhs, r.I1, r.I1_coarse, r.N_coarse, r.I1_delta, r.I2_surface,
           r.I2_volume, r.I2_bound, r.I3, r.shell_radius, r.residual, r.gamma0});
  t.write(ctx.table("remark"));
  json s = rep.to_json();
  s["command"] = "remark";
  s["config"] = cfg.raw;
  write_json(ctx.out / "summary.json", s);
  return kOk;
}

// ---------------------------------------------------------------------------
// verify: the property and oracle suite at smoke scale

struct Check {
  std::string name;
  double value = 0.0, tolerance = 0.0;
  bool pass = true;
  bool warning = false;  // reported but never fails the suite
};

inline std::vector<Check> run_verify_suite(const ExperimentConfig& cfg, std::vector<std::string>& warnings,
                                           const std::function<void(const std::string&)>& progress) {
  std::vector<Check> out;
  auto add = [&](std::string name, double value, double tol, bool pass) {
    out.push_back({std::move(name), value, tol, pass, false});
  };
  std::mt19937 rng(cfg.seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const auto field = make_field<3>(cfg.field);
  const long Ns = std::max(8L, cfg.verify.smoke_N + cfg.verify.smoke_N % 2);
  CellOptions copt = cfg.cell_options();

  progress("cell checks");
  {
    const Mat<3> A = field.is_constant() ? field(Vec<3>{}) : diagonal<3>(Vec<3>{1.0, 2.0, 3.0});
    const auto et = effective_tensor(make_constant_field<3>(A), Ns, copt);
    add("effective_tensor_constant", max_abs_diff<3>(et.abar, A), 1e-10, max_abs_diff<3>(et.abar, A) <= 1e-10);
  }
  const auto et = effective_tensor(field, Ns, copt);
  {
    double worst = 0.0;
    for (int t = 0; t < 5; ++t) {
      Mat<3> M1{}, M2{}, S{};
      for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
          M1[i][j] = M1[j][i] = U(rng);
          M2[i][j] = M2[j][i] = U(rng);
          S[i][j] = S[j][i] = M1[i][j] + M2[i][j];
        }
      worst = std::max(worst, std::abs(et.kappa(S) - et.kappa(M1) - et.kappa(M2)));
    }
    add("kappa_linearity", worst, 1e-8, worst <= 1e-8);
  }
  {
    const auto audit = audit_field(field, 200, cfg.seed);
    const double slack = std::max(field.lambda() - audit.lambda_hat, audit.Lambda_hat - field.Lambda());
    add("ellipticity_bounds", slack, 1e-6, slack <= 1e-6);
  }
  {
    const auto cell = build_cell_grid<3>(Ns, 0.0);
    const auto op = assemble(field, cell.grid, 1.0);
    if (!op.dominance()) {
      warnings.push_back("stencil is not diagonally dominant; the discrete maximum principle may fail");
      out.push_back({"stencil_dominance", 0.0, 0.0, true, true});
    } else {
      add("stencil_dominance", 1.0, 0.0, true);
    }
  }
  {
    const auto res = critical_value(field, 0.5, std::max(Ns, 16L), copt);
    const double mn = *std::min_element(res.W.values.begin(), res.W.values.end());
    bool hole_ok = true;
    for (std::size_t p = 0; p < res.hole.size(); ++p)
      if (res.hole[p] && res.W.values[p] != res.E) hole_ok = false;
    add("critical_value_normalization", mn, 0.0, mn == 0.0 && hole_ok && res.beta > 0.0);
  }
  {
    bool rejected = false;
    try {
      (void)ScaleSet::make(3, 0.5, 1.0);
      NoncriticalInputs<3> in{field, make_phi<3>(cfg.phi)};
      in.alpha = 1.0;
      in.eps_list = {0.5, 0.25, 0.125};
      in.N_cell = {16};
      (void)noncritical_sweep(in);
    } catch (const InvalidArgument&) {
      rejected = true;
    }
    add("noncritical_rejects_alpha_one", rejected ? 1.0 : 0.0, 0.0, rejected);
  }
  {
    double worst = 0.0;
    for (double e : {0.5, 0.25, 1.0 / 6.0}) {
      const auto s = ScaleSet::make(3, e);
      worst = std::max(worst, std::abs(std::pow(s.a_eps / e, 0.5) - e));
    }
    add("critical_exponent_identity", worst, 1e-14, worst <= 1e-14);
  }

  progress("eps-problem checks");
  const double eps = 0.5;
  const long M = 16;
  const auto dom = perforate<3>(M, ScaleSet::make(3, eps), 1.0, false);
  const auto op = assemble(field, dom.grid, eps);
  const NodeField zero(dom.grid.size(), 0.0);
  SolveOptions tight = cfg.solve_options();
  tight.tol_rel = 1e-12;
  {
    // obstacle positive only at the hole nodes next to the centre
    const auto phi = make_obstacle<3>(json{{"family", "paraboloid"}, {"height", 1.0}, {"rho", 0.08}});
    EpsProblemSpec<3> spec{field, phi, dom};
    const NodeField psi = spec.obstacle_eps();
    const NodeField u = solve_eps_problem(spec, tight);
    const auto orc = lcp_enumeration(op, psi, zero);
    const double d = max_abs_diff_fields(u, orc.u);
    add("lcp_enumeration_oracle", d, 1e-7, d <= 1e-7 && orc.feasible_sets == 1);

    // least supersolution against randomized admissible supersolutions
    std::uniform_real_distribution<double> B(0.0, 0.5);
    std::uniform_int_distribution<std::size_t> P(0, dom.grid.size() - 1);
    double worst = 0.0;
    for (int t = 0; t < cfg.verify.supersolutions; ++t) {
      NodeField big = psi;
      for (int k = 0; k < 40; ++k) {
        const std::size_t p = P(rng);
        if (op.is_unknown(p)) big[p] += B(rng);
      }
      const NodeField v = solve_lcp(op, big, zero, tight);
      for (std::size_t p = 0; p < u.size(); ++p) worst = std::max(worst, u[p] - v[p]);
    }
    add("least_supersolution", worst, 1e-8, worst <= 1e-8);
  }
  {
    const auto phi = make_obstacle<3>(json{{"family", "constant"}, {"height", -0.5}});
    const NodeField u = solve_eps_problem(EpsProblemSpec<3>{field, phi, dom}, tight);
    add("nonpositive_obstacle_gives_zero", max_abs(u), 0.0, max_abs(u) == 0.0);
  }
  {
    const auto phi = make_phi<3>(cfg.phi);
    const NodeField u = solve_eps_problem(EpsProblemSpec<3>{field, phi, dom}, tight);
    const NodeField ub = underline_transform(u, dom);
    double c = 0.0;
    const NodeField cst(u.size(), 0.25);
    c = max_abs_diff_fields(underline_transform(cst, dom), cst);
    add("underline_of_constant", c, 0.0, c == 0.0);
    add("discrete_gradient_finite", verify_discrete_gradient(u, dom), 0.0,
        std::isfinite(verify_discrete_gradient(u, dom)));
    double worst = 0.0;
    for (std::size_t p = 0; p < u.size(); ++p)
      if (dom.cls[p] != NodeClass::OuterBoundary) worst = std::max(worst, ub[p] - u[p]);
    add("underline_below_solution", worst, 0.0, worst <= 0.0);
  }
  {
    NodeField aff(dom.grid.size());
    for (std::size_t p = 0; p < aff.size(); ++p) aff[p] = 0.75 * dom.grid.position(p)[1] - 0.1;
    const double g = verify_discrete_gradient(aff, dom);
    add("discrete_gradient_affine", std::abs(g - 0.75), 1e-12, std::abs(g - 0.75) <= 1e-12);
    const NodeField cst(dom.grid.size(), 3.0);
    add("discrete_gradient_constant", verify_discrete_gradient(cst, dom), 0.0, verify_discrete_gradient(cst, dom) == 0.0);
    const auto d4 = perforate<3>(128, ScaleSet::make(3, 0.25), 1.0, false);
    const auto fl = verify_flatness(NodeField(d4.grid.size(), 3.0), d4);
    add("flatness_constant", fl.max_osc, 0.0, fl.max_osc == 0.0 && !fl.osc.empty());
  }

  progress("homogenized checks");
  {
    HomogenizedSpec<3> hs;
    hs.abar = et.abar;
    hs.beta0 = laplacian_ball_capacity(3);
    hs.phi = make_obstacle<3>(json{{"family", "constant"}, {"height", -1.0}});
    hs.grid = unit_box<3>(16);
    const NodeField u = solve_homogenized(hs, tight);
    add("homogenized_nonpositive_obstacle", max_abs(u), 0.0, max_abs(u) == 0.0);
    hs.phi = make_phi<3>(cfg.phi);
    HomogenizedStats st;
    const NodeField v = solve_homogenized(hs, tight, &st);
    add("homogenized_residual", st.residual, 1e-6, st.residual <= 1e-6);
    const NodeField w = solve_limit_obstacle<3>(et.abar, hs.phi, hs.grid, tight);
    double below = 0.0;
    for (std::size_t p = 0; p < w.size(); ++p)
      if (!hs.grid.on_dirichlet_face(hs.grid.coords(p))) below = std::max(below, hs.phi(hs.grid.position(p)) - w[p]);
    add("limit_obstacle_above_phi", std::max(below, 0.0), 1e-10, below <= 1e-10);
    double order = 0.0;
    for (std::size_t p = 0; p < w.size(); ++p) order = std::max(order, v[p] - w[p]);
    add("homogenized_below_limit_obstacle", std::max(order, 0.0), 1e-8, order <= 1e-8);
  }

  progress("green checks");
  {
    const auto probe = approx_green<3>(field, Vec<3>{0.0, 0.0, 0.0}, 0.15, 16, cfg.solve_options());
    add("green_source_mass", std::abs(probe.source_mass - 1.0), 1e-12, std::abs(probe.source_mass - 1.0) <= 1e-12);
    add("green_nonnegative", probe.min_value, 0.0, probe.min_value >= 0.0);
  }
  return out;
}

inline int cmd_verify(const Context& ctx) {
  std::vector<std::string> warnings;
  const auto checks = run_verify_suite(ctx.cfg, warnings, [&](const std::string& m) { ctx.progress(m); });
  CsvTable t({"name", "value", "tolerance", "pass", "warning"});
  json js = json::array();
  bool all = true;
  for (const auto& c : checks) {
    t.add({c.name, c.value, c.tolerance, std::string(c.pass ? "true" : "false"),
           std::string(c.warning ? "true" : "false")});
    js.push_back({{"name", c.name}, {"value", c.value}, {"tolerance", c.tolerance}, {"pass", c.pass},
                  {"warning", c.warning}});
    all = all && c.pass;
  }
  t.write(ctx.table("verify"));
  for (const auto& w : warnings) ctx.progress("warning: " + w);
  json s;
  s["command"] = "verify";
  s["config"] = ctx.cfg.raw;
  s["seed"] = ctx.cfg.seed;
  s["checks"] = js;
  s["warnings"] = warnings;
  s["pass"] = all;
  write_json(ctx.out / "summary.json", s);
  if (!ctx.quiet) std::cerr << "[homog] verify: " << (all ? "all checks passed" : "FAILED") << "\n";
  return all ? kOk : kAcceptanceFailure;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
  CLI::App cli{"Obstacle homogenization lab: cell problems, eps-sweeps and verification"};
  cli.set_version_flag("--version", "homog 0.1");
  std::string config_path, out_dir;
  int threads = 0;
  bool quiet = false;
  cli.add_option("--config", config_path, "experiment config (JSON)")->required();
  cli.add_option("--out", out_dir, "output directory (defaults to the config's output)");
  cli.add_option("--threads", threads, "worker threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
  cli.add_flag("--quiet", quiet, "no progress output");
  cli.require_subcommand(1, 1);
  cli.fallthrough();
  std::string which;
  for (const char* name : {"cell", "converge", "green", "noncritical", "remark", "verify"}) {
    auto* sub = cli.add_subcommand(name);
    sub->callback([&which, name] { which = name; });
  }
  cli.get_subcommand("cell")->description("effective tensor, critical values, beta0 and capacity");
  cli.get_subcommand("converge")->description("eps-sweep of the critical problem with rate fits");
  cli.get_subcommand("green")->description("mollified Green function and L^q gradient tables");
  cli.get_subcommand("noncritical")->description("alpha != 1 sweep");
  cli.get_subcommand("remark")->description("flux identity experiment for the remark coefficient");
  cli.get_subcommand("verify")->description("property and oracle suite; exit 3 on failure");
  try {
    cli.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.exit(e);
    return kConfigError;
  }
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif
  Context ctx;
  ctx.quiet = quiet;
  try {
    ctx.cfg = load_config(config_path);
    ctx.out = out_dir.empty() ? fs::path(ctx.cfg.output) : fs::path(out_dir);
    fs::create_directories(ctx.out / "tables");
    fs::create_directories(ctx.out / "fields");
    if (which == "cell") return cmd_cell(ctx);
    if (which == "converge") return cmd_converge(ctx);
    if (which == "green") return cmd_green(ctx);
    if (which == "noncritical") return cmd_noncritical(ctx);
    if (which == "remark") return cmd_remark(ctx);
    return cmd_verify(ctx);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kConfigError;
  } catch (const Error& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kSolverFailure;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kSolverFailure;
  }
}

}  // namespace homog::app
