#pragma once

#include "homog/green.hpp"
#include "homog/io.hpp"
#include "homog/remark.hpp"

namespace homog {

/// Acceptance thresholds of the harness. Defaults are the values the acceptance gate uses.
struct Thresholds {
  double frozen_margin = 2.0;       // calibrated constant = margin * coarsest observation
  double rate_target = 3.0;         // n/(n-2) for n = 3
  double rate_tol = 0.5;
  double envelope_ratio_max = 20.0;
  double identity_tol = 0.10;       // flux identity imbalance
  double capacity_tol = 0.10;       // I3 against gamma0
  double i1_margin = 3.0;           // I1 must exceed this many refinement deltas
  double noncritical_slope_tol = 0.3;
  double bound_tol = 1e-12;         // nodewise corrector bounds

  json to_json() const {
    json j;
    j["frozen_margin"] = frozen_margin;
    j["rate_target"] = rate_target;
    j["rate_tol"] = rate_tol;
    j["envelope_ratio_max"] = envelope_ratio_max;
    j["identity_tol"] = identity_tol;
    j["capacity_tol"] = capacity_tol;
    j["i1_margin"] = i1_margin;
    j["noncritical_slope_tol"] = noncritical_slope_tol;
    j["bound_tol"] = bound_tol;
    return j;
  }
  static Thresholds from_json(const json& j) {
    Thresholds t;
    t.frozen_margin = j.value("frozen_margin", t.frozen_margin);
    t.rate_target = j.value("rate_target", t.rate_target);
    t.rate_tol = j.value("rate_tol", t.rate_tol);
    t.envelope_ratio_max = j.value("envelope_ratio_max", t.envelope_ratio_max);
    t.identity_tol = j.value("identity_tol", t.identity_tol);
    t.capacity_tol = j.value("capacity_tol", t.capacity_tol);
    t.i1_margin = j.value("i1_margin", t.i1_margin);
    t.noncritical_slope_tol = j.value("noncritical_slope_tol", t.noncritical_slope_tol);
    t.bound_tol = j.value("bound_tol", t.bound_tol);
    return t;
  }
};

/// value_i <= C * reference_i with C = margin * value_0 / reference_0 calibrated on the first entry.
struct FrozenCheck {
  std::string name;
  std::vector<double> eps, values, reference;
  double margin = 2.0;
  double constant = 0.0;
  bool pass = true;

  json to_json() const {
    json j;
    j["name"] = name;
    j["eps"] = eps;
    j["values"] = values;
    j["reference"] = reference;
    j["margin"] = margin;
    j["constant"] = constant;
    j["pass"] = pass;
    return j;
  }
};

inline FrozenCheck frozen_check(std::string name, std::vector<double> eps, std::vector<double> values,
                                std::vector<double> reference, double margin) {
  if (values.empty() || values.size() != reference.size() || eps.size() != values.size())
    throw InvalidArgument("frozen check needs matching, nonempty series");
  FrozenCheck c;
  c.name = std::move(name);
  c.margin = margin;
  c.constant = margin * values[0] / reference[0];
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!(values[i] <= c.constant * reference[i])) c.pass = false;
  c.eps = std::move(eps);
  c.values = std::move(values);
  c.reference = std::move(reference);
  return c;
}

/// Least-squares slope of log(y) against log(x); returns (slope, intercept, rms).
inline std::array<double, 3> loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) throw InvalidArgument("log-log fit needs positive data");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  const auto f = linear_fit(lx, ly);
  return {f[1], f[0], f[2]};
}

// ---------------------------------------------------------------------------
// probes on a single eps-solution

namespace detail {

/// Index of the stored node carrying full-box coordinate c, folding across mirror planes.
template <int Dim>
std::optional<std::size_t> folded_index(const BoxGrid<Dim>& g, std::array<long, Dim> c) {
  for (int a = 0; a < Dim; ++a) {
    const long last = g.nodes(a) - 1;
    if (c[a] < 0) return std::nullopt;
    if (c[a] > last) {
      if (g.hi(a) != Side::Mirror) return std::nullopt;
      c[a] = 2 * last - c[a];
      if (c[a] < 0) return std::nullopt;
    }
  }
  return g.index(c);
}

}  // namespace detail

/// max over e_l and nodes x, x + eps e_l of |u(x + eps e_l) - u(x)| / eps.
template <int Dim>
double verify_discrete_gradient(const NodeField& u, const PerforatedDomain<Dim>& dom) {
  const auto& g = dom.grid;
  if (u.size() != g.size()) throw InvalidArgument("node field does not match the domain");
  const double steps = dom.scale.eps / g.h();
  const long s = std::lround(steps);
  if (std::abs(steps - static_cast<double>(s)) > 1e-9) throw InvalidArgument("eps is not a multiple of h");
  double best = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    const auto c = g.coords(p);
    for (int a = 0; a < Dim; ++a)
      for (int dir : {-1, 1}) {
        auto d = c;
        d[a] += dir * s;
        if (d[a] < 0 || d[a] > dom.M) continue;
        const auto q = detail::folded_index<Dim>(g, d);
        if (!q) continue;
        best = std::max(best, std::abs(u[*q] - u[p]) / dom.scale.eps);
      }
  }
  return best;
}

struct FlatnessResult {
  std::vector<double> osc;   // one per admissible cube
  double max_osc = 0.0;
  double reference = 0.0;    // (a/eps)^{(n-2)/2} + eps
};

/// Oscillation of u over FREE nodes of Q_eps(eps k) \ B_b(eps k) for cubes with Q_{3 eps}(eps k) in Omega.
template <int Dim>
FlatnessResult verify_flatness(const NodeField& u, const PerforatedDomain<Dim>& dom) {
  const auto& g = dom.grid;
  if (u.size() != g.size()) throw InvalidArgument("node field does not match the domain");
  const auto& s = dom.scale;
  FlatnessResult out;
  out.reference = std::pow(s.a_eps / s.eps, 0.5 * (Dim - 2)) + s.eps;
  const long per_cell = std::lround(s.eps / g.h());
  const long half = per_cell / 2;
  const long cells = std::lround(dom.side / s.eps);
  const long kmax = dom.symmetric ? cells / 2 : cells;
  std::array<long, Dim> k;
  k.fill(0);
  while (true) {
    bool inside = true;
    for (int a = 0; a < Dim; ++a) {
      const double x = s.eps * static_cast<double>(k[a]);
      if (x - 1.5 * s.eps < -1e-12 || x + 1.5 * s.eps > dom.side + 1e-12) inside = false;
    }
    if (inside) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      std::array<long, Dim> off;
      off.fill(-half);
      while (true) {
        std::array<long, Dim> c;
        double r2 = 0.0;
        for (int a = 0; a < Dim; ++a) {
          c[a] = k[a] * per_cell + off[a];
          r2 += std::pow(static_cast<double>(off[a]) * g.h(), 2);
        }
        const auto p = detail::folded_index<Dim>(g, c);
        if (p && dom.cls[*p] == NodeClass::Free && std::sqrt(r2) > s.b_eps) {
          lo = std::min(lo, u[*p]);
          hi = std::max(hi, u[*p]);
        }
        int a = 0;
        for (; a < Dim; ++a) {
          if (++off[a] <= half) break;
          off[a] = -half;
        }
        if (a == Dim) break;
      }
      if (hi >= lo) {
        out.osc.push_back(hi - lo);
        out.max_osc = std::max(out.max_osc, hi - lo);
      }
    }
    int a = 0;
    for (; a < Dim; ++a) {
      if (++k[a] <= kmax) break;
      k[a] = 0;
    }
    if (a == Dim) break;
  }
  return out;
}

/// max over the away region of the scaled corrector w = eps^2 W(x/eps).
template <int Dim>
double corrector_decay(const CriticalValueResult<Dim>& res, const PerforatedDomain<Dim>& dom) {
  const NodeField w = scaled_corrector(res, dom);
  double m = 0.0;
  for (std::size_t p = 0; p < w.size(); ++p)
    if (dom.away_mask[p]) m = std::max(m, w[p]);
  return m;
}

/// True when phi(x) = phi(L - x) axis by axis on a sample.
template <int Dim>
bool obstacle_symmetric(const ObstacleFunction<Dim>& phi, double side = 1.0, int samples = 64, unsigned seed = 11) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> U(0.0, side);
  for (int s = 0; s < samples; ++s) {
    Vec<Dim> x;
    for (auto& v : x) v = U(rng);
    for (int a = 0; a < Dim; ++a) {
      Vec<Dim> y = x;
      y[a] = side - y[a];
      if (std::abs(phi(x) - phi(y)) > 1e-12 * (1.0 + std::abs(phi(x)))) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// convergence sweep (alpha = 1)

template <int Dim>
struct ConvergenceInputs {
  ConvergenceInputs(CoefficientField<Dim> f, ObstacleFunction<Dim> p) : field(std::move(f)), phi(std::move(p)) {}

  CoefficientField<Dim> field;
  ObstacleFunction<Dim> phi;
  std::vector<double> eps_list;        // strictly decreasing
  std::vector<long> M_list;            // domain resolution per eps
  std::vector<long> N_cell;            // cell resolution per eps (one entry = shared)
  long M_reference = 192;              // resolution of the homogenized reference
  std::optional<Mat<Dim>> abar;        // skip the effective-tensor solve when given
  std::optional<double> beta0;         // skip the extrapolation when given
  const std::vector<CriticalValueResult<Dim>>* cells = nullptr;  // reuse critical values per eps
  CellOptions cell_opt;
  SolveOptions solve;
  Thresholds thresholds;
  // optional hooks: persisted solutions and progress lines
  std::function<void(std::size_t, const PerforatedDomain<Dim>&, const NodeField&, const NodeField&)> sink;
  std::function<void(const BoxGrid<Dim>&, const NodeField&)> reference_sink;
  std::function<void(const std::string&)> progress;
};

struct ConvergenceRow {
  double eps = 0.0;
  long M = 0, N_cell = 0;
  double beta_eps = 0.0;
  double sup_bar_error = 0.0;  // ||u_bar_eps - u||_inf over FREE nodes
  double l1_error = 0.0;       // ||u_eps - u||_{L^1}
  double l2_error = 0.0;       // ||u_eps - u||_{L^2}
  double near_hole_l1 = 0.0;   // int |u_eps - u_bar_eps|
  double grad_ratio = 0.0;
  double flatness_max = 0.0;
  double flatness_reference = 0.0;
  long flatness_cubes = 0;
  double decay_max = 0.0;      // max of w^eps over the away region
  long sweeps = 0;
  double residual = 0.0;
  long holes = 0;

  json to_json() const {
    json j;
    j["eps"] = eps;
    j["M"] = M;
    j["N_cell"] = N_cell;
    j["beta_eps"] = beta_eps;
    j["sup_bar_error"] = sup_bar_error;
    j["l1_error"] = l1_error;
    j["l2_error"] = l2_error;
    j["near_hole_l1"] = near_hole_l1;
    j["grad_ratio"] = grad_ratio;
    j["flatness_max"] = flatness_max;
    j["flatness_reference"] = flatness_reference;
    j["flatness_cubes"] = flatness_cubes;
    j["decay_max"] = decay_max;
    j["sweeps"] = sweeps;
    j["residual"] = residual;
    j["hole_nodes"] = holes;
    return j;
  }
};

struct ConvergenceReport {
  json config;
  Thresholds thresholds;
  json cell;  // abar, beta0 and their source
  std::vector<ConvergenceRow> rows;  // eps descending
  double rate_slope = 0.0, rate_intercept = 0.0, rate_rms = 0.0;  // near-hole L^1 vs eps
  bool rate_pass = false;
  bool sup_decreasing = false;
  double sup_rate = 0.0, sup_rate_rms = 0.0;  // observed only
  std::vector<FrozenCheck> frozen;
  bool complete = false;
  std::string failure;

  json to_json() const {
    json j;
    j["config"] = config;
    j["thresholds"] = thresholds.to_json();
    j["cell"] = cell;
    json rs = json::array();
    for (const auto& r : rows) rs.push_back(r.to_json());
    j["rows"] = rs;
    j["rate"] = {{"quantity", "near_hole_l1"},      {"slope", rate_slope}, {"intercept", rate_intercept},
                 {"rms", rate_rms},                 {"target", thresholds.rate_target},
                 {"tolerance", thresholds.rate_tol}, {"pass", rate_pass}};
    j["sup_error"] = {{"decreasing", sup_decreasing}, {"observed_slope", sup_rate}, {"rms", sup_rate_rms}};
    json fs = json::array();
    for (const auto& f : frozen) fs.push_back(f.to_json());
    j["frozen_checks"] = fs;
    j["complete"] = complete;
    if (!failure.empty()) j["failure"] = failure;
    return j;
  }
};

template <int Dim>
ConvergenceReport run_convergence(const ConvergenceInputs<Dim>& in) {
  ConvergenceReport rep;
  rep.thresholds = in.thresholds;
  const std::size_t k = in.eps_list.size();
  if (k < 3) throw InvalidArgument("rate fits need at least three eps values");
  if (in.M_list.size() != k) throw InvalidArgument("one domain resolution per eps value is required");
  for (std::size_t i = 1; i < k; ++i)
    if (!(in.eps_list[i] < in.eps_list[i - 1])) throw InvalidArgument("eps values must be strictly decreasing");
  std::vector<long> Ncell = in.N_cell;
  if (Ncell.size() == 1) Ncell.assign(k, Ncell[0]);
  if (Ncell.size() != k) throw InvalidArgument("one cell resolution per eps value is required");
  if (in.cells && in.cells->size() != k) throw InvalidArgument("critical values do not match the eps list");
  rep.config = {{"field", in.field.descriptor()}, {"phi", in.phi.descriptor()}, {"eps", in.eps_list},
                {"M", in.M_list},                 {"N_cell", Ncell},            {"M_reference", in.M_reference},
                {"alpha", 1.0}};

  // cell quantities
  Mat<Dim> abar;
  std::string abar_source = "given";
  if (in.abar) {
    abar = *in.abar;
  } else {
    abar = effective_tensor(in.field, Ncell.back(), in.cell_opt).abar;
    abar_source = "effective_tensor";
  }
  std::vector<CriticalValueResult<Dim>> own;
  const std::vector<CriticalValueResult<Dim>>* cells = in.cells;
  double beta0 = 0.0;
  std::string beta_source = "given";
  if (!cells) {
    auto est = estimate_beta0(in.field, in.eps_list, Ncell, in.cell_opt, &own);
    cells = &own;
    beta0 = est.beta0;
    beta_source = "estimate_beta0";
  }
  if (in.beta0) {
    beta0 = *in.beta0;
    beta_source = "given";
  } else if (in.cells) {
    std::vector<double> xs, ys;
    for (const auto& c : *cells) {
      xs.push_back(std::pow(c.eps, 2.0 / (Dim - 2)));
      ys.push_back(c.beta);
    }
    beta0 = (ys[k - 1] * xs[k - 2] - ys[k - 2] * xs[k - 1]) / (xs[k - 2] - xs[k - 1]);
    beta_source = "richardson";
  }
  json A = json::array();
  for (const auto& row : abar) A.push_back(std::vector<double>(row.begin(), row.end()));
  rep.cell = {{"abar", A}, {"abar_source", abar_source}, {"beta0", beta0}, {"beta0_source", beta_source}};

  const bool symmetric = reflection_symmetric(in.field) && obstacle_symmetric(in.phi);
  try {
    // homogenized reference, solved once
    HomogenizedSpec<Dim> hs;
    hs.abar = abar;
    hs.beta0 = beta0;
    hs.phi = in.phi;
    hs.grid = unit_box<Dim>(in.M_reference, symmetric && in.M_reference % 2 == 0);
    if (in.progress) in.progress("homogenized reference, M = " + std::to_string(in.M_reference));
    const NodeField u_ref = solve_homogenized(hs, in.solve);
    if (in.reference_sink) in.reference_sink(hs.grid, u_ref);

    for (std::size_t i = 0; i < k; ++i) {
      const double eps = in.eps_list[i];
      ConvergenceRow row;
      row.eps = eps;
      row.M = in.M_list[i];
      row.N_cell = Ncell[i];
      row.beta_eps = (*cells)[i].beta;
      if (in.progress) in.progress("eps-problem, eps = " + format_double(eps) + ", M = " + std::to_string(row.M));
      EpsProblemSpec<Dim> spec{in.field, in.phi,
                               perforate<Dim>(in.M_list[i], ScaleSet::make(Dim, eps), 1.0,
                                              symmetric && in.M_list[i] % 2 == 0)};
      const auto& dom = spec.dom;
      row.holes = static_cast<long>(dom.count(NodeClass::Hole) + dom.count(NodeClass::HoleBoundary));
      SolveStats st;
      const NodeField u = solve_eps_problem(spec, in.solve, &st);
      row.sweeps = st.sweeps;
      row.residual = st.residual;
      const NodeField ubar = underline_transform(u, dom);
      if (in.sink) in.sink(i, dom, u, ubar);
      const auto w = dom.quadrature_weights();
      for (std::size_t p = 0; p < u.size(); ++p) {
        const double uh = box_interpolate<Dim>(hs.grid, u_ref, dom.grid.position(p));
        const double d = std::abs(u[p] - uh);
        row.l1_error += w[p] * d;
        row.l2_error += w[p] * d * d;
        row.near_hole_l1 += w[p] * std::abs(u[p] - ubar[p]);
        if (dom.cls[p] == NodeClass::Free) row.sup_bar_error = std::max(row.sup_bar_error, std::abs(ubar[p] - uh));
      }
      row.l2_error = std::sqrt(row.l2_error);
      row.grad_ratio = verify_discrete_gradient(u, dom);
      const auto fl = verify_flatness(u, dom);
      row.flatness_max = fl.max_osc;
      row.flatness_reference = fl.reference;
      row.flatness_cubes = static_cast<long>(fl.osc.size());
      row.decay_max = corrector_decay((*cells)[i], dom);
      rep.rows.push_back(row);
    }
  } catch (const Error& e) {
    rep.failure = e.what();
    return rep;
  }

  std::vector<double> eps, l1, sup, grad, decay, unit;
  for (const auto& r : rep.rows) {
    eps.push_back(r.eps);
    l1.push_back(r.near_hole_l1);
    sup.push_back(r.sup_bar_error);
    grad.push_back(r.grad_ratio);
    decay.push_back(r.decay_max);
    unit.push_back(1.0);
  }
  if (std::all_of(l1.begin(), l1.end(), [](double v) { return v > 0.0; })) {
    const auto fit = loglog_fit(eps, l1);
    rep.rate_slope = fit[0];
    rep.rate_intercept = fit[1];
    rep.rate_rms = fit[2];
    rep.rate_pass = std::abs(rep.rate_slope - in.thresholds.rate_target) <= in.thresholds.rate_tol;
  } else {
    // identically zero errors (e.g. phi <= 0) carry no rate
    rep.rate_slope = std::numeric_limits<double>::quiet_NaN();
  }
  rep.sup_decreasing = true;
  for (std::size_t i = 1; i < k; ++i)
    if (!(sup[i] < sup[i - 1])) rep.sup_decreasing = false;
  if (std::all_of(sup.begin(), sup.end(), [](double v) { return v > 0.0; })) {
    const auto sf = loglog_fit(eps, sup);
    rep.sup_rate = sf[0];
    rep.sup_rate_rms = sf[2];
  }
  const double m = in.thresholds.frozen_margin;
  rep.frozen.push_back(frozen_check("discrete_gradient", eps, grad, unit, m));
  rep.frozen.push_back(frozen_check("corrector_decay", eps, decay, eps, m));
  // flatness is calibrated on the coarsest eps that has an admissible cube
  std::vector<double> fe, fv, fr;
  for (const auto& r : rep.rows)
    if (r.flatness_cubes > 0) {
      fe.push_back(r.eps);
      fv.push_back(r.flatness_max);
      fr.push_back(r.flatness_reference);
    }
  if (!fe.empty()) rep.frozen.push_back(frozen_check("flatness", fe, fv, fr, m));
  rep.complete = true;
  return rep;
}

// ---------------------------------------------------------------------------
// remark experiment: the flux identity |Q \ B| beta = I1 - I2 + I3

struct RemarkRow {
  double delta = 0.0, eps = 0.0;
  long N = 0;
  double abar = 0.0, beta = 0.0;
  double lhs = 0.0;          // |Q \ B| beta
  double I1 = 0.0;
  double I1_coarse = 0.0;    // same quantity at the coarse resolution
  long N_coarse = 0;
  double I1_delta = 0.0;     // |I1 - I1_coarse|
  double I2_surface = 0.0;   // eps^{-2} int_{dB} grad psi . nu_in
  double I2_volume = 0.0;    // -eps^{-2} int_B Delta psi
  double I2_bound = 0.0;     // eps^{-2} |B| sup |Delta psi|
  double I3 = 0.0;
  double shell_radius = 0.0;
  double residual = 0.0;     // |lhs - (I1 - I2 + I3)| / lhs
  double gamma0 = 0.0;       // capacity of a(0) = (2 + psi(0)) I

  json to_json() const {
    json j;
    j["delta"] = delta;
    j["eps"] = eps;
    j["N"] = N;
    j["abar"] = abar;
    j["beta"] = beta;
    j["lhs"] = lhs;
    j["I1"] = I1;
    j["I1_coarse"] = I1_coarse;
    j["N_coarse"] = N_coarse;
    j["I1_delta"] = I1_delta;
    j["I2_surface"] = I2_surface;
    j["I2_volume"] = I2_volume;
    j["I2_bound"] = I2_bound;
    j["I3"] = I3;
    j["shell_radius"] = shell_radius;
    j["identity_residual"] = residual;
    j["gamma0"] = gamma0;
    return j;
  }
};

struct RemarkReport {
  std::vector<RemarkRow> rows;  // per delta, eps descending
  json summary;                 // per delta: gap, checks
  bool pass = true;

  json to_json() const {
    json j;
    json rs = json::array();
    for (const auto& r : rows) rs.push_back(r.to_json());
    j["rows"] = rs;
    j["summary"] = summary;
    j["pass"] = pass;
    return j;
  }
};

namespace detail {

/// Quasi-uniform points on the unit sphere of R^3 (Fibonacci lattice), equal weights.
inline std::vector<Vec<3>> fibonacci_sphere(int count) {
  std::vector<Vec<3>> pts;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / count;
    const double r = std::sqrt(1.0 - z * z);
    pts.push_back({r * std::cos(golden * i), r * std::sin(golden * i), z});
  }
  return pts;
}

struct RemarkIntegrals {
  double I1 = 0.0, I2_surface = 0.0, I2_volume = 0.0, I3 = 0.0, rho = 0.0, beta = 0.0, abar = 0.0;
};

inline RemarkIntegrals remark_integrals(const RemarkField<3>& rf, double eps, long N, const CellOptions& opt) {
  constexpr int Dim = 3;
  RemarkIntegrals out;
  const auto res = critical_value(rf.field, eps, N, opt);
  out.beta = res.beta;
  out.abar = res.abar;
  const auto& g = res.W.grid;
  const auto& W = res.W.values;
  const double h = g.h();
  const double hn = h * h * h;
  const double e2inv = 1.0 / (eps * eps);

  for (std::size_t p = 0; p < W.size(); ++p)
    if (!res.hole[p]) out.I1 += rf.laplacian_psi(g.position(p)) * W[p] * hn;

  // surface form, gradient of the grid psi by central differences
  const auto pts = fibonacci_sphere(4000);
  const double area = unit_sphere_area(Dim) * res.abar * res.abar;
  const double dh = rf.grid.h();
  double s = 0.0;
  for (const auto& nu : pts) {
    Vec<Dim> y;
    for (int a = 0; a < Dim; ++a) y[a] = res.abar * nu[a];
    double dn = 0.0;
    for (int a = 0; a < Dim; ++a) {
      Vec<Dim> yp = y, ym = y;
      yp[a] += dh;
      ym[a] -= dh;
      dn -= nu[a] * (rf.psi_at(yp) - rf.psi_at(ym)) / (2.0 * dh);  // inward normal is -nu
    }
    s += dn;
  }
  out.I2_surface = e2inv * area * s / static_cast<double>(pts.size());

  // volume form on a fine product rule over the ball (exact Delta psi)
  {
    const int k = 96;
    const double step = 2.0 * res.abar / k;
    double v = 0.0;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        for (int l = 0; l < k; ++l) {
          const Vec<Dim> y{-res.abar + (i + 0.5) * step, -res.abar + (j + 0.5) * step,
                           -res.abar + (l + 0.5) * step};
          if (norm<Dim>(y) <= res.abar) v += rf.laplacian_psi(y);
        }
    out.I2_volume = -e2inv * v * step * step * step;
  }

  // I3: outward flux through a lattice shell, corrected for the annulus between it and the hole
  out.rho = std::max(1.5 * res.abar, res.abar + 2.0 * h);
  if (out.rho >= 0.5) throw UnderResolved("no room for a flux shell inside the cell", N);
  const auto op = assemble(rf.field, g, 1.0);
  const double flux = shell_flux(op, W, out.rho, false);
  double cross = 0.0;
  for (std::size_t p = 0; p < W.size(); ++p) {
    if (res.hole[p]) continue;
    const auto c = g.coords(p);
    const Vec<Dim> y = g.position(c);
    const double r = norm<Dim>(y);
    if (r <= res.abar || r > out.rho) continue;
    double dot = 0.0;
    for (int a = 0; a < Dim; ++a) {
      const auto up = static_cast<std::size_t>(static_cast<long>(p) + g.offset(a, c[a], 1));
      const auto dn = static_cast<std::size_t>(static_cast<long>(p) + g.offset(a, c[a], 0));
      Vec<Dim> yp = y, ym = y;
      yp[a] += h;
      ym[a] -= h;
      dot += (W[up] - W[dn]) / (2.0 * h) * (rf.psi_at(yp) - rf.psi_at(ym)) / (2.0 * h);
    }
    cross += dot * hn;
  }
  const double ann = unit_ball_volume(Dim) * (std::pow(out.rho, Dim) - std::pow(res.abar, Dim));
  out.I3 = flux + res.beta * ann + cross;
  return out;
}

}  // namespace detail

/// Evaluates the identity per (delta, eps). N_coarse drives the grid-refinement delta of I1.
inline RemarkReport remark_experiment(const std::vector<double>& delta_list, const std::vector<double>& eps_list,
                                      long N, long N_coarse, long N_psi = 0, const Thresholds& th = {},
                                      const CellOptions& opt = {}) {
  constexpr int Dim = 3;
  RemarkReport rep;
  if (eps_list.size() < 2) throw InvalidArgument("the remark sweep needs at least two eps values");
  if (N_psi <= 0) N_psi = N;
  json summary = json::array();
  for (double delta : delta_list) {
    const auto rf = build_remark_coefficient<Dim>(delta, N_psi);
    const double psi0 = (*rf.psi)[rf.grid.index(std::array<long, Dim>{N_psi / 2, N_psi / 2, N_psi / 2})];
    const double gamma0 = (2.0 + psi0) * laplacian_ball_capacity(Dim);
    std::vector<RemarkRow> rows;
    for (double eps : eps_list) {
      RemarkRow row;
      row.delta = delta;
      row.eps = eps;
      row.N = N;
      row.gamma0 = gamma0;
      const auto fine = detail::remark_integrals(rf, eps, N, opt);
      row.abar = fine.abar;
      row.beta = fine.beta;
      row.lhs = (1.0 - unit_ball_volume(Dim) * std::pow(fine.abar, Dim)) * fine.beta;
      row.I1 = fine.I1;
      row.I2_surface = fine.I2_surface;
      row.I2_volume = fine.I2_volume;
      row.I2_bound = unit_ball_volume(Dim) * std::pow(fine.abar, Dim) / (eps * eps);  // sup |Delta psi| = 1
      row.I3 = fine.I3;
      row.shell_radius = fine.rho;
      row.residual = std::abs(row.lhs - (row.I1 - row.I2_surface + row.I3)) / row.lhs;
      try {
        const auto coarse = detail::remark_integrals(rf, eps, N_coarse, opt);
        row.I1_coarse = coarse.I1;
        row.N_coarse = N_coarse;
        row.I1_delta = std::abs(row.I1 - coarse.I1);
      } catch (const UnderResolved&) {
        row.N_coarse = 0;  // coarse grid cannot resolve this hole
      }
      rows.push_back(row);
    }
    // checks
    const auto& last = rows.back();
    bool i1_ok = false;
    for (const auto& r : rows)
      if (r.N_coarse > 0) i1_ok = r.I1 > th.i1_margin * r.I1_delta;  // finest eps with a refinement pair
    bool i2_ok = std::abs(last.I2_surface) <= last.I2_bound * 1.05 + 1e-12;
    for (const auto& r : rows)
      if (std::abs(r.I2_surface) < std::abs(last.I2_surface)) i2_ok = false;
    const bool i3_ok = std::abs(last.I3 - gamma0) <= th.capacity_tol * gamma0;
    bool id_ok = true;
    for (const auto& r : rows)
      if (r.residual > th.identity_tol) id_ok = false;
    std::vector<double> xs, ys;
    for (const auto& r : rows) {
      xs.push_back(std::pow(r.eps, 2.0));
      ys.push_back(r.beta);
    }
    const std::size_t k = xs.size();
    const double beta0 = (ys[k - 1] * xs[k - 2] - ys[k - 2] * xs[k - 1]) / (xs[k - 2] - xs[k - 1]);
    json s;
    s["delta"] = delta;
    s["psi_max"] = rf.psi_max;
    s["psi_at_origin"] = psi0;
    s["gamma0"] = gamma0;
    s["beta0_richardson"] = beta0;
    s["gap_beta0_minus_gamma0"] = beta0 - gamma0;
    s["gap_I1_minus_I2_finest"] = last.I1 - last.I2_surface;
    s["I1_positive_with_margin"] = i1_ok;
    s["I2_vanishing"] = i2_ok;
    s["I3_near_gamma0"] = i3_ok;
    s["identity_balanced"] = id_ok;
    summary.push_back(s);
    rep.pass = rep.pass && i1_ok && i2_ok && i3_ok && id_ok;
    for (auto& r : rows) rep.rows.push_back(r);
  }
  rep.summary = summary;
  return rep;
}

// ---------------------------------------------------------------------------
// non-critical regimes

template <int Dim>
struct NoncriticalInputs {
  NoncriticalInputs(CoefficientField<Dim> f, ObstacleFunction<Dim> p) : field(std::move(f)), phi(std::move(p)) {}

  CoefficientField<Dim> field;
  ObstacleFunction<Dim> phi;
  double alpha = 1.2;
  std::vector<double> eps_list;
  std::vector<long> N_cell;   // per eps (one entry = shared)
  std::vector<long> M_list;   // per eps; empty skips the domain solves
  CellOptions cell_opt;
  SolveOptions solve;
  Thresholds thresholds;
};

struct NoncriticalRow {
  double eps = 0.0, eps_prime = 0.0;
  long N = 0, M = 0;
  double beta_prime = 0.0, beta_hat = 0.0;
  double lower_bound = 0.0;
  long bound_violations = -1;
  double w_min = 0.0, w_max = 0.0;
  double min_u_minus_phi = 0.0;  // over FREE nodes
  double sup_bar = 0.0;          // ||u_bar_eps||_inf, the limit being 0 for alpha > 1

  json to_json() const {
    json j;
    j["eps"] = eps;
    j["eps_prime"] = eps_prime;
    j["N"] = N;
    j["M"] = M;
    j["beta_prime"] = beta_prime;
    j["beta_hat"] = beta_hat;
    j["lower_bound"] = lower_bound;
    j["bound_violations"] = bound_violations;
    j["w_min"] = w_min;
    j["w_max"] = w_max;
    j["min_u_minus_phi"] = min_u_minus_phi;
    j["sup_bar"] = sup_bar;
    return j;
  }
};

struct NoncriticalReport {
  double alpha = 0.0, alphabar = 0.0;
  std::vector<NoncriticalRow> rows;
  double slope = 0.0, slope_rms = 0.0, predicted = 0.0;  // beta_hat log-log (alpha > 1)
  bool slope_pass = false;
  bool bounds_pass = false;  // alpha < 1
  std::optional<FrozenCheck> obstacle_gap;  // alpha < 1: -min(u - phi) <= K eps^{2 - 2 alphabar}
  bool pass = false;

  json to_json() const {
    json j;
    j["alpha"] = alpha;
    j["alphabar"] = alphabar;
    json rs = json::array();
    for (const auto& r : rows) rs.push_back(r.to_json());
    j["rows"] = rs;
    if (alpha > 1.0) j["slope"] = {{"observed", slope}, {"rms", slope_rms}, {"predicted", predicted}, {"pass", slope_pass}};
    else j["bounds_pass"] = bounds_pass;
    if (obstacle_gap) j["obstacle_gap"] = obstacle_gap->to_json();
    j["pass"] = pass;
    return j;
  }
};

template <int Dim>
NoncriticalReport noncritical_sweep(const NoncriticalInputs<Dim>& in) {
  if (in.alpha == 1.0) throw InvalidArgument("alpha = 1 is the critical case; use run_convergence");
  const std::size_t k = in.eps_list.size();
  if (k < 3) throw InvalidArgument("rate fits need at least three eps values");
  std::vector<long> N = in.N_cell;
  if (N.size() == 1) N.assign(k, N[0]);
  if (N.size() != k) throw InvalidArgument("one cell resolution per eps value is required");
  if (!in.M_list.empty() && in.M_list.size() != k) throw InvalidArgument("one domain resolution per eps value is required");
  NoncriticalReport rep;
  rep.alpha = in.alpha;
  rep.alphabar = ScaleSet::make(Dim, in.eps_list[0], in.alpha).alphabar;
  const bool domains = !in.M_list.empty();
  const bool symmetric = reflection_symmetric(in.field) && obstacle_symmetric(in.phi);
  for (std::size_t i = 0; i < k; ++i) {
    const double eps = in.eps_list[i];
    const long M = domains ? in.M_list[i] : 0;
    CellOptions co = in.cell_opt;
    auto nc = noncritical_corrector(in.field, eps, in.alpha, N[i], in.alpha < 1.0 ? M : 0, co, in.thresholds.bound_tol);
    NoncriticalRow row;
    row.eps = eps;
    row.eps_prime = nc.eps_prime;
    row.N = N[i];
    row.M = M;
    row.beta_prime = nc.beta_prime;
    row.beta_hat = nc.beta_hat;
    row.lower_bound = nc.lower_bound;
    row.bound_violations = nc.bound_violations;
    if (!nc.w.empty()) {
      row.w_min = std::numeric_limits<double>::infinity();
      row.w_max = -row.w_min;
      for (std::size_t p = 0; p < nc.w.size(); ++p) {
        if (is_hole(nc.domain->cls[p])) continue;
        row.w_min = std::min(row.w_min, nc.w[p]);
        row.w_max = std::max(row.w_max, nc.w[p]);
      }
    }
    if (domains) {
      EpsProblemSpec<Dim> spec{in.field, in.phi,
                               perforate<Dim>(M, ScaleSet::make(Dim, eps, in.alpha), 1.0, symmetric && M % 2 == 0)};
      const NodeField u = solve_eps_problem(spec, in.solve);
      const auto& dom = spec.dom;
      row.min_u_minus_phi = std::numeric_limits<double>::infinity();
      for (std::size_t p = 0; p < u.size(); ++p)
        if (dom.cls[p] == NodeClass::Free)
          row.min_u_minus_phi = std::min(row.min_u_minus_phi, u[p] - in.phi(dom.grid.position(p)));
      const NodeField ubar = underline_transform(u, dom);
      for (std::size_t p = 0; p < u.size(); ++p)
        if (dom.cls[p] == NodeClass::Free) row.sup_bar = std::max(row.sup_bar, std::abs(ubar[p]));
    }
    rep.rows.push_back(row);
  }
  std::vector<double> eps, bh;
  for (const auto& r : rep.rows) {
    eps.push_back(r.eps);
    bh.push_back(r.beta_hat);
  }
  if (in.alpha > 1.0) {
    const auto f = loglog_fit(eps, bh);
    rep.slope = f[0];
    rep.slope_rms = f[2];
    rep.predicted = 2.0 * (rep.alphabar - 1.0);
    rep.slope_pass = std::abs(rep.slope - rep.predicted) <= in.thresholds.noncritical_slope_tol;
    rep.pass = rep.slope_pass;
  } else {
    rep.bounds_pass = domains;
    for (const auto& r : rep.rows)
      if (r.bound_violations != 0) rep.bounds_pass = false;
    rep.pass = rep.bounds_pass;
    if (domains) {
      std::vector<double> gap, ref;
      for (const auto& r : rep.rows) {
        gap.push_back(std::max(0.0, -r.min_u_minus_phi));
        ref.push_back(std::pow(r.eps, 2.0 - 2.0 * rep.alphabar));
      }
      rep.obstacle_gap = frozen_check("obstacle_gap", eps, gap, ref, in.thresholds.frozen_margin);
      rep.pass = rep.pass && rep.obstacle_gap->pass;
    }
  }
  return rep;
}

}  // namespace homog
