#pragma once

#include <optional>

#include "homog/discretize.hpp"

namespace homog {

/// A node field on the unit cell, stored either on the full periodic grid or, for
/// reflection-symmetric problems, on the octant [0, 1/2]^n with mirror faces.
template <int Dim>
struct CellField {
  BoxGrid<Dim> grid;
  NodeField values;
  bool octant = false;

  /// Value at an arbitrary point of R^n (periodic extension).
  double operator()(const Vec<Dim>& y) const {
    if (!octant) return periodic_interpolate<Dim>(grid, values, y);
    std::array<long, Dim> base{};
    Vec<Dim> t{};
    for (int a = 0; a < Dim; ++a) {
      const double f = std::abs(y[a] - std::round(y[a]));
      const double s = f / grid.h();
      long i = std::min(static_cast<long>(std::floor(s)), grid.nodes(a) - 2);
      base[a] = i;
      t[a] = s - static_cast<double>(i);
    }
    double acc = 0.0;
    for (int corner = 0; corner < (1 << Dim); ++corner) {
      double w = 1.0;
      std::array<long, Dim> c{};
      for (int a = 0; a < Dim; ++a) {
        const int bit = (corner >> a) & 1;
        w *= bit ? t[a] : 1.0 - t[a];
        c[a] = base[a] + bit;
      }
      if (w != 0.0) acc += w * values[grid.index(c)];
    }
    return acc;
  }

  /// Quadrature weights of the stored nodes for integrals over Q_1.
  std::vector<double> weights() const {
    const double hn = std::pow(grid.h(), Dim);
    std::vector<double> w(grid.size(), hn);
    if (!octant) return w;
    for (std::size_t p = 0; p < w.size(); ++p) {
      const auto c = grid.coords(p);
      double v = hn * std::pow(2.0, Dim);
      for (int a = 0; a < Dim; ++a)
        if (c[a] == 0 || c[a] == grid.nodes(a) - 1) v *= 0.5;
      w[p] = v;
    }
    return w;
  }
};

/// Numerical controls for the cell problems.
struct CellOptions {
  bool octant = false;  // solve on [0,1/2]^n; needs a reflection-symmetric diagonal field
  SolveOptions solve = [] {
    SolveOptions o;
    o.tol_rel = 1e-10;
    return o;
  }();
};

template <int Dim>
bool reflection_symmetric(const CoefficientField<Dim>& f, int samples = 64, unsigned seed = 7) {
  if (!f.is_diagonal()) return false;
  if (f.is_constant()) return true;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int s = 0; s < samples; ++s) {
    Vec<Dim> y;
    for (auto& v : y) v = u(rng);
    const Mat<Dim> A = f(y);
    for (int a = 0; a < Dim; ++a) {
      Vec<Dim> r = y;
      r[a] = -r[a];
      if (max_abs_diff<Dim>(A, f(r)) > 1e-12) return false;
    }
  }
  return true;
}

/// Grid for a cell problem with hole radius r: the periodic cell, or its octant.
template <int Dim>
BoxGrid<Dim> cell_box(long N, double r, bool octant) {
  const auto cell = build_cell_grid<Dim>(N, r);  // validates N and r
  if (!octant) return cell.grid;
  typename BoxGrid<Dim>::Index nodes;
  nodes.fill(N / 2 + 1);
  std::array<Side, Dim> m;
  m.fill(Side::Mirror);
  return BoxGrid<Dim>(nodes, 1.0 / static_cast<double>(N), Vec<Dim>{}, m, m);
}

// ---------------------------------------------------------------------------
// coefficient corrector and effective tensor

template <int Dim>
struct CorrectorResult {
  CellField<Dim> w;
  double kappa = 0.0;
  SolveStats stats;
};

/// w_{1,M}: a_ij D_ij w + a_ij M_ij = kappa, min w = 0.
template <int Dim>
CorrectorResult<Dim> corrector_w1(const CoefficientField<Dim>& field, const Mat<Dim>& M, long N,
                                  const NodeField* measure = nullptr, const CellOptions& opt = {}) {
  const auto cell = build_cell_grid<Dim>(N, 0.0);
  const auto op = assemble(field, cell.grid, 1.0);
  NodeField f(cell.grid.size());
  for (std::size_t p = 0; p < f.size(); ++p) f[p] = contract<Dim>(field(cell.grid.position(p)), M);
  auto sol = solve_periodic(op, f, Normalization::MinZero, measure, opt.solve);
  CorrectorResult<Dim> out;
  out.w.grid = cell.grid;
  out.w.values = std::move(sol.u);
  out.kappa = sol.kappa;
  out.stats = sol.stats;
  return out;
}

template <int Dim>
struct EffectiveTensor {
  Mat<Dim> abar{};
  long N = 0;
  json descriptor;
  json kappas = json::array();  // basis matrix label and kappa value
  NodeField measure;
  SolveStats measure_stats;

  /// kappa(M) = abar : M by linearity.
  double kappa(const Mat<Dim>& M) const { return contract<Dim>(abar, M); }
};

/// Invariant measure of the hole-free cell operator at resolution N.
template <int Dim>
NodeField cell_measure(const CoefficientField<Dim>& field, long N, const CellOptions& opt = {},
                       SolveStats* stats = nullptr) {
  const auto cell = build_cell_grid<Dim>(N, 0.0);
  const auto op = assemble(field, cell.grid, 1.0);
  SolveOptions o = opt.solve;
  return invariant_measure(op, o, stats);
}

/// kappa(M) = <m, a:M> for a given invariant measure.
template <int Dim>
double kappa_from_measure(const CoefficientField<Dim>& field, const NodeField& m, long N, const Mat<Dim>& M) {
  const auto cell = build_cell_grid<Dim>(N, 0.0);
  const double hn = std::pow(cell.grid.h(), Dim);
  double s = 0.0;
  for (std::size_t p = 0; p < m.size(); ++p) s += m[p] * contract<Dim>(field(cell.grid.position(p)), M);
  return s * hn;
}

template <int Dim>
EffectiveTensor<Dim> effective_tensor(const CoefficientField<Dim>& field, long N, const CellOptions& opt = {}) {
  EffectiveTensor<Dim> out;
  out.N = N;
  out.descriptor = field.descriptor();
  out.measure = cell_measure(field, N, opt, &out.measure_stats);
  const auto cell = build_cell_grid<Dim>(N, 0.0);
  const double hn = std::pow(cell.grid.h(), Dim);
  // one pass over the nodes accumulates every basis kappa
  Mat<Dim> acc{};
  for (std::size_t p = 0; p < out.measure.size(); ++p) {
    const Mat<Dim> A = field(cell.grid.position(p));
    for (int i = 0; i < Dim; ++i)
      for (int j = i; j < Dim; ++j) acc[i][j] += out.measure[p] * (i == j ? A[i][i] : A[i][j] + A[j][i]);
  }
  for (int i = 0; i < Dim; ++i)
    for (int j = i; j < Dim; ++j) {
      const double kap = acc[i][j] * hn;
      out.kappas.push_back({{"basis", i == j ? "e" + std::to_string(i) + "e" + std::to_string(i)
                                             : "e" + std::to_string(i) + "e" + std::to_string(j) + "+sym"},
                            {"kappa", kap}});
      if (i == j) out.abar[i][i] = kap;
      else out.abar[i][j] = out.abar[j][i] = 0.5 * kap;
    }
  return out;
}

// ---------------------------------------------------------------------------
// critical value

template <int Dim>
struct CellHoleSolve {
  double eps = 0.5;
  long N = 0;
  double abar = 0.0;  // hole radius in the fast variable
  double E = 0.0;     // eps^{-2}
  CellField<Dim> W_raw;
  std::vector<std::uint8_t> hole;  // data nodes of the hole
  SolveStats stats;
};

/// a_ij D_ij W = 1 off the holes, W = eps^{-2} on them (hole radius eps^{2/(n-2)}).
template <int Dim>
CellHoleSolve<Dim> solve_cell_unit_rhs(const CoefficientField<Dim>& field, double eps, long N,
                                       const CellOptions& opt = {}) {
  if (!(eps > 0.0 && eps < 1.0)) throw InvalidArgument("eps must lie in (0,1)");
  if (opt.octant && !reflection_symmetric(field))
    throw InvalidArgument("octant cell solves need a reflection-symmetric diagonal field");
  CellHoleSolve<Dim> out;
  out.eps = eps;
  out.N = N;
  out.abar = ScaleSet::critical_abar(Dim, eps);
  out.E = 1.0 / (eps * eps);
  const BoxGrid<Dim> grid = cell_box<Dim>(N, out.abar, opt.octant);
  auto op = assemble(field, grid, 1.0);
  out.hole = op.add_sphere_holes(SphereLattice<Dim>{1.0, Vec<Dim>{}, out.abar}, out.E);
  NodeField f(grid.size(), -1.0), g(grid.size(), out.E);
  SolveOptions so = opt.solve;
  if (so.lambda_hint <= 0.0) {
    // smallest eigenvalue ~ capacity density of the hole lattice
    so.lambda_hint = field.lambda() * laplacian_ball_capacity(Dim) * std::pow(out.abar, Dim - 2);
  }
  out.W_raw.grid = grid;
  out.W_raw.octant = opt.octant;
  out.W_raw.values = solve_dirichlet(op, f, g, so, &out.stats);
  return out;
}

template <int Dim>
struct CriticalValueResult {
  double eps = 0.5;
  long N = 0;
  double abar = 0.0;
  double E = 0.0;
  double m_star = 0.0;
  double eta = 0.0;
  double beta = 0.0;
  CellField<Dim> W;
  std::vector<std::uint8_t> hole;
  Vec<Dim> inf_location{};
  double r1 = 0.3;
  double envelope_c1 = 0.0;  // min of W |y|^{n-2} on the annulus abar <= |y| <= r1
  double envelope_c2 = 0.0;  // max of the same
  double outer_max = 0.0;    // max W outside T_{r1}
  double max_free = 0.0;     // max W over non-hole nodes
  SolveStats stats;
};

template <int Dim>
CriticalValueResult<Dim> critical_value(const CoefficientField<Dim>& field, double eps, long N,
                                        const CellOptions& opt = {}) {
  auto raw = solve_cell_unit_rhs(field, eps, N, opt);
  CriticalValueResult<Dim> out;
  out.eps = eps;
  out.N = N;
  out.abar = raw.abar;
  out.E = raw.E;
  out.stats = raw.stats;
  const auto& g = raw.W_raw.grid;
  const NodeField& w = raw.W_raw.values;
  std::size_t arg = 0;
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < w.size(); ++p)
    if (!raw.hole[p] && w[p] < m) {
      m = w[p];
      arg = p;
    }
  if (!(m < raw.E)) throw ConsistencyError("cell minimum reaches the hole value");
  out.m_star = m;
  out.eta = m / (m - raw.E);
  out.beta = 1.0 - out.eta;
  out.inf_location = g.position(arg);
  out.W.grid = g;
  out.W.octant = raw.W_raw.octant;
  out.W.values.resize(w.size());
  for (std::size_t p = 0; p < w.size(); ++p) out.W.values[p] = out.eta * raw.E + (1.0 - out.eta) * w[p];
  // pin the infimum to zero exactly and the hole to its data exactly
  const double shift = out.W.values[arg];
  for (std::size_t p = 0; p < w.size(); ++p)
    out.W.values[p] = raw.hole[p] ? raw.E : out.W.values[p] - shift;
  out.hole = std::move(raw.hole);

  out.envelope_c1 = std::numeric_limits<double>::infinity();
  out.envelope_c2 = 0.0;
  for (std::size_t p = 0; p < w.size(); ++p) {
    if (out.hole[p]) continue;
    const double v = out.W.values[p];
    out.max_free = std::max(out.max_free, v);
    const double r = lattice_distance<Dim>(g.position(p));
    if (r >= out.abar && r <= out.r1) {
      const double s = v * std::pow(r, Dim - 2);
      out.envelope_c1 = std::min(out.envelope_c1, s);
      out.envelope_c2 = std::max(out.envelope_c2, s);
    } else if (r > out.r1) {
      out.outer_max = std::max(out.outer_max, v);
    }
  }
  return out;
}

template <int Dim>
struct Beta0Estimate {
  struct Row {
    double eps, x, beta;
    long N;
    double envelope_c1, envelope_c2, outer_max;
  };
  std::vector<Row> rows;  // eps descending
  double beta0 = 0.0;     // Richardson on the two finest rows
  double ls_intercept = 0.0, ls_slope = 0.0, ls_rms = 0.0;
  double tolerance = 0.0;  // |Richardson - least squares| + rms
  std::vector<double> cauchy;
  bool cauchy_decreasing = true;
  std::string model = "beta(eps) = beta0 + c * eps^{2/(n-2)}";
};

/// Fits a + b x to (x_i, y_i); returns (a, b, rms residual).
inline std::array<double, 3> linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw InvalidArgument("linear fit needs at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw InvalidArgument("linear fit needs distinct abscissae");
  const double b = sxy / sxx, a = my - b * mx;
  double r = 0.0;
  for (std::size_t i = 0; i < n; ++i) r += std::pow(y[i] - a - b * x[i], 2);
  return {a, b, std::sqrt(r / static_cast<double>(n))};
}

template <int Dim>
Beta0Estimate<Dim> estimate_beta0(const CoefficientField<Dim>& field, std::vector<double> eps_list,
                                  std::vector<long> N_list, const CellOptions& opt = {},
                                  std::vector<CriticalValueResult<Dim>>* keep = nullptr) {
  if (eps_list.size() < 3) throw InvalidArgument("beta0 extrapolation needs at least three eps values");
  if (N_list.size() == 1) N_list.assign(eps_list.size(), N_list[0]);
  if (N_list.size() != eps_list.size()) throw InvalidArgument("one resolution per eps value is required");
  for (std::size_t i = 1; i < eps_list.size(); ++i)
    if (!(eps_list[i] < eps_list[i - 1])) throw InvalidArgument("eps values must be strictly decreasing");
  Beta0Estimate<Dim> out;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    auto r = critical_value(field, eps_list[i], N_list[i], opt);
    const double x = std::pow(eps_list[i], 2.0 / (Dim - 2));
    out.rows.push_back({eps_list[i], x, r.beta, N_list[i], r.envelope_c1, r.envelope_c2, r.outer_max});
    xs.push_back(x);
    ys.push_back(r.beta);
    if (keep) keep->push_back(std::move(r));
  }
  const std::size_t k = xs.size();
  out.beta0 = (ys[k - 1] * xs[k - 2] - ys[k - 2] * xs[k - 1]) / (xs[k - 2] - xs[k - 1]);
  const auto fit = linear_fit(xs, ys);
  out.ls_intercept = fit[0];
  out.ls_slope = fit[1];
  out.ls_rms = fit[2];
  out.tolerance = std::abs(out.beta0 - out.ls_intercept) + out.ls_rms;
  for (std::size_t i = 1; i < k; ++i) out.cauchy.push_back(std::abs(ys[i] - ys[i - 1]));
  for (std::size_t i = 1; i < out.cauchy.size(); ++i)
    if (!(out.cauchy[i] < out.cauchy[i - 1])) out.cauchy_decreasing = false;
  return out;
}

// ---------------------------------------------------------------------------
// capacity potential

template <int Dim>
struct CapacityResult {
  double gamma0 = 0.0;
  double R = 16.0;
  long nodes_per_unit = 8;
  bool octant = true;
  BoxGrid<Dim> grid;
  NodeField W0;
  std::vector<std::pair<double, double>> flux_shells;  // (radius, flux)
  double flux_spread = 0.0;                            // max relative deviation across shells
  double far_field_residual = 0.0;                     // last change of the far-field amplitude
  int far_field_passes = 0;
  double envelope_max = 0.0;  // max over shells of W0 |z|^{n-2}
  double envelope_min = 0.0;
  bool flux_warning = false;
  long sweeps = 0;
};

/// Outward flux of -A grad W through the lattice shell {|z| <= rho} of a constant-coefficient operator.
template <int Dim>
double shell_flux(const StencilOperator<Dim>& op, const NodeField& W, double rho, bool octant) {
  const auto& g = op.grid();
  const double hn = std::pow(g.h(), Dim);
  auto inside = [&](const Vec<Dim>& z) { return norm<Dim>(z) <= rho; };
  double flux = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    const auto c = g.coords(p);
    const Vec<Dim> zp = g.position(c);
    if (!inside(zp) || !op.is_unknown(p)) continue;
    const auto nb = op.offsets(c);
    if (!octant) {
      op.for_each_stencil_neighbor(p, nb, [&](std::size_t q, double w) {
        if (!inside(g.position(q))) flux += w * (W[p] - W[q]) * hn;
      });
      continue;
    }
    for (int a = 0; a < Dim; ++a)
      for (int dir = 0; dir < 2; ++dir) {
        if (dir == 0 && c[a] == 0) continue;  // the mirror image of this edge is counted instead
        Vec<Dim> zq = zp;
        zq[a] += dir ? g.h() : -g.h();
        if (inside(zq)) continue;
        int nonzero = 0;
        for (int b = 0; b < Dim; ++b) {
          const double mid = b == a ? 0.5 * (zp[b] + zq[b]) : zp[b];
          if (mid != 0.0) ++nonzero;
        }
        const auto q = static_cast<std::size_t>(static_cast<long>(p) + nb[a][dir]);
        const double w = op.coef(p, a, a) / (g.h() * g.h());
        flux += std::pow(2.0, nonzero) * w * (W[p] - W[q]) * hn;
      }
  }
  return flux;
}

/// Exterior potential of B_1 for the constant operator A0:D^2, truncated to the box |z|_inf <= R.
template <int Dim>
CapacityResult<Dim> capacity_potential(const Mat<Dim>& A0, double R, long nodes_per_unit,
                                       const SolveOptions& sopt = {}) {
  if (!(R >= 8.0)) throw InvalidArgument("capacity truncation R must be at least 8");
  if (nodes_per_unit < 8) throw UnderResolved("capacity annulus [1,2] needs at least 8 nodes", 8);
  const auto field = make_constant_field<Dim>(A0);
  CapacityResult<Dim> out;
  out.R = R;
  out.nodes_per_unit = nodes_per_unit;
  out.octant = field.is_diagonal();
  const double h = 1.0 / static_cast<double>(nodes_per_unit);
  const long half = std::lround(R * nodes_per_unit);
  typename BoxGrid<Dim>::Index nodes;
  Vec<Dim> origin;
  std::array<Side, Dim> lo, hi;
  hi.fill(Side::Dirichlet);
  if (out.octant) {
    nodes.fill(half + 1);
    origin.fill(0.0);
    lo.fill(Side::Mirror);
  } else {
    nodes.fill(2 * half + 1);
    origin.fill(-R);
    lo.fill(Side::Dirichlet);
  }
  out.grid = BoxGrid<Dim>(nodes, h, origin, lo, hi);
  auto op = assemble(field, out.grid, 1.0);
  op.add_sphere_holes(SphereLattice<Dim>{0.0, Vec<Dim>{}, 1.0}, 1.0);

  const Mat<Dim> Ainv = inverse<Dim>(A0);
  const double detA = determinant<Dim>(A0);
  const double Sn = unit_sphere_area(Dim);
  auto fundamental = [&](const Vec<Dim>& z) {
    double q = 0.0;
    for (int i = 0; i < Dim; ++i)
      for (int j = 0; j < Dim; ++j) q += z[i] * Ainv[i][j] * z[j];
    return std::pow(q, 0.5 * (2 - Dim)) / ((Dim - 2) * Sn * std::sqrt(detA));
  };
  double gamma = (Dim - 2) * Sn * std::pow(detA, 1.0 / Dim);
  NodeField g(out.grid.size(), 1.0), f(out.grid.size(), 0.0);
  NodeField W;
  SolveOptions so = sopt;
  if (so.tol_rel > 1e-10) so.tol_rel = 1e-10;
  for (int pass = 0; pass < 8; ++pass) {
    for (std::size_t p = 0; p < g.size(); ++p) {
      const auto c = out.grid.coords(p);
      if (out.grid.on_dirichlet_face(c)) g[p] = gamma * fundamental(out.grid.position(c));
    }
    if (!W.empty()) so.initial = &W;
    SolveStats st;
    NodeField next = solve_dirichlet(op, f, g, so, &st);
    W = std::move(next);
    so.initial = nullptr;
    out.sweeps += st.sweeps;
    const double measured = shell_flux(op, W, 1.5, out.octant);
    out.far_field_residual = std::abs(measured - gamma);
    out.far_field_passes = pass + 1;
    gamma = measured;
    if (out.far_field_residual <= 1e-6 * std::abs(gamma)) break;
  }
  out.gamma0 = gamma;
  for (double rho : {1.5, 2.0, 3.0, 4.0}) out.flux_shells.emplace_back(rho, shell_flux(op, W, rho, out.octant));
  for (const auto& [rho, fl] : out.flux_shells)
    out.flux_spread = std::max(out.flux_spread, std::abs(fl - out.gamma0) / out.gamma0);
  out.flux_warning = out.flux_spread > 0.05;
  out.envelope_min = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < W.size(); ++p) {
    const double r = norm<Dim>(out.grid.position(p));
    if (r < 1.5 || r > 0.5 * R || !op.is_unknown(p)) continue;
    const double s = W[p] * std::pow(r, Dim - 2);
    out.envelope_max = std::max(out.envelope_max, s);
    out.envelope_min = std::min(out.envelope_min, s);
  }
  out.W0 = std::move(W);
  return out;
}

// ---------------------------------------------------------------------------
// correctors on the perforated domain

/// w(x) = eps^2 W(x/eps) on non-hole nodes, 1 on hole nodes.
template <int Dim>
NodeField scaled_corrector(const CriticalValueResult<Dim>& res, const PerforatedDomain<Dim>& dom) {
  if (std::abs(dom.scale.alpha - 1.0) > 1e-12 || std::abs(dom.scale.eps - res.eps) > 1e-12 * res.eps)
    throw InvalidArgument("scaled corrector needs a critical domain with the same eps");
  const double e2 = res.eps * res.eps;
  NodeField w(dom.grid.size());
  for (std::size_t p = 0; p < w.size(); ++p) {
    if (is_hole(dom.cls[p])) {
      w[p] = 1.0;
      continue;
    }
    Vec<Dim> y = dom.grid.position(p);
    for (auto& v : y) v /= res.eps;
    w[p] = std::clamp(e2 * res.W(y), 0.0, 1.0);
  }
  return w;
}

template <int Dim>
struct NoncriticalCorrector {
  double eps = 0.5, alpha = 1.2, alphabar = 1.3;
  double eps_prime = 0.0;   // eps^alphabar, the scale of the underlying critical cell problem
  double beta_prime = 0.0;  // beta^{eps'}
  double beta_hat = 0.0;    // eps^{2(alphabar-1)} beta^{eps'} (alpha > 1)
  double lower_bound = 0.0; // 1 - eps^{2-2 alphabar} (alpha < 1)
  CriticalValueResult<Dim> critical;
  std::optional<PerforatedDomain<Dim>> domain;
  NodeField w;                 // scaled corrector on the domain (if one was built)
  long bound_violations = -1;  // nodes breaking lower_bound <= w <= 1 (alpha < 1)
};

/// alpha > 1: W_hat = eps^{2(alphabar-1)} W^{eps'}, w_hat(x) = eps^2 W_hat(x/eps).
/// alpha < 1: W_tilde = W^{eps'} + eps^{-2} - eps'^{-2}, w_tilde(x) = eps^2 W_tilde(x/eps).
/// With M > 0 the corrector is also sampled on the perforated domain at that resolution.
template <int Dim>
NoncriticalCorrector<Dim> noncritical_corrector(const CoefficientField<Dim>& field, double eps, double alpha, long N,
                                                long M = 0, const CellOptions& opt = {}, double bound_tol = 1e-12) {
  if (alpha == 1.0) throw InvalidArgument("alpha = 1 is the critical case");
  const ScaleSet s = ScaleSet::make(Dim, eps, alpha);
  NoncriticalCorrector<Dim> out;
  out.eps = eps;
  out.alpha = alpha;
  out.alphabar = s.alphabar;
  out.eps_prime = std::pow(eps, s.alphabar);
  out.critical = critical_value(field, out.eps_prime, N, opt);
  out.beta_prime = out.critical.beta;
  const double factor = std::pow(eps, 2.0 * (s.alphabar - 1.0));
  out.beta_hat = factor * out.beta_prime;
  out.lower_bound = 1.0 - std::pow(eps, 2.0 - 2.0 * s.alphabar);
  if (M <= 0) return out;
  out.domain = perforate<Dim>(M, s, 1.0, opt.octant);
  const auto& dom = *out.domain;
  const double e2 = eps * eps;
  const double shift = 1.0 / e2 - 1.0 / (out.eps_prime * out.eps_prime);
  out.w.assign(dom.grid.size(), 1.0);
  long bad = 0;
  for (std::size_t p = 0; p < out.w.size(); ++p) {
    if (is_hole(dom.cls[p])) continue;
    Vec<Dim> y = dom.grid.position(p);
    for (auto& v : y) v /= eps;
    const double W = out.critical.W(y);
    out.w[p] = alpha > 1.0 ? e2 * factor * W : e2 * (W + shift);
    if (alpha < 1.0 && (out.w[p] < out.lower_bound - bound_tol || out.w[p] > 1.0 + bound_tol)) ++bad;
  }
  if (alpha < 1.0) out.bound_violations = bad;
  return out;
}

}  // namespace homog
