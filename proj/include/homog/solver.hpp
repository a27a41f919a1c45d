#pragma once

#include "homog/cell.hpp"

namespace homog {

/// Multilinear interpolation of a node field on a non-periodic box grid; mirror faces
/// reflect points beyond them, other faces clamp.
template <int Dim>
double box_interpolate(const BoxGrid<Dim>& g, const NodeField& f, Vec<Dim> x) {
  std::array<long, Dim> base{};
  Vec<Dim> t{};
  for (int a = 0; a < Dim; ++a) {
    const double lo = g.origin()[a];
    const double hi = lo + g.h() * static_cast<double>(g.nodes(a) - 1);
    if (g.hi(a) == Side::Mirror && x[a] > hi) x[a] = 2.0 * hi - x[a];
    if (g.lo(a) == Side::Mirror && x[a] < lo) x[a] = 2.0 * lo - x[a];
    const double s = std::clamp((x[a] - lo) / g.h(), 0.0, static_cast<double>(g.nodes(a) - 1));
    long i = std::min(static_cast<long>(std::floor(s)), g.nodes(a) - 2);
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
    if (w != 0.0) acc += w * f[g.index(c)];
  }
  return acc;
}

/// Node grid of [0,1]^n (or its symmetric octant) with M intervals per axis.
template <int Dim>
BoxGrid<Dim> unit_box(long M, bool symmetric = false, double side = 1.0) {
  if (symmetric && M % 2 != 0) throw InvalidArgument("symmetric boxes need even M");
  typename BoxGrid<Dim>::Index nodes;
  nodes.fill(symmetric ? M / 2 + 1 : M + 1);
  std::array<Side, Dim> lo, hi;
  lo.fill(Side::Dirichlet);
  hi.fill(symmetric ? Side::Mirror : Side::Dirichlet);
  return BoxGrid<Dim>(nodes, side / static_cast<double>(M), Vec<Dim>{}, lo, hi);
}

template <int Dim>
NodeField sample(const BoxGrid<Dim>& g, const std::function<double(const Vec<Dim>&)>& fn) {
  NodeField out(g.size());
  for (std::size_t p = 0; p < g.size(); ++p) out[p] = fn(g.position(p));
  return out;
}

// ---------------------------------------------------------------------------
// the eps-problem

template <int Dim>
struct EpsProblemSpec {
  CoefficientField<Dim> field;
  ObstacleFunction<Dim> phi;
  PerforatedDomain<Dim> dom;

  /// phi on hole nodes, 0 elsewhere.
  NodeField obstacle_eps() const {
    NodeField psi(dom.grid.size(), 0.0);
    for (std::size_t p = 0; p < psi.size(); ++p)
      if (is_hole(dom.cls[p])) psi[p] = phi(dom.grid.position(p));
    return psi;
  }
};

/// Least discrete supersolution: min(-Lu, u - phi_eps) = 0 at interior nodes, u = 0 on the boundary.
template <int Dim>
NodeField solve_eps_problem(const EpsProblemSpec<Dim>& spec, const SolveOptions& opt = {},
                            SolveStats* stats = nullptr) {
  const auto& dom = spec.dom;
  if (dom.symmetric && !reflection_symmetric(spec.field))
    throw InvalidArgument("symmetric domains need a reflection-symmetric diagonal field");
  const auto op = assemble(spec.field, dom.grid, dom.scale.eps);
  const NodeField psi = spec.obstacle_eps();
  const NodeField g(dom.grid.size(), 0.0);
  return solve_lcp(op, psi, g, opt, stats);
}

// ---------------------------------------------------------------------------
// the homogenized problem

template <int Dim>
struct HomogenizedSpec {
  Mat<Dim> abar = identity<Dim>();
  double beta0 = 0.0;
  ObstacleFunction<Dim> phi;
  BoxGrid<Dim> grid;
  const NodeField* forcing = nullptr;  // optional F: abar:D^2 u + beta0 (phi - u)_+ + F = 0
};

struct HomogenizedStats {
  int active_iterations = 0;
  long active_count = 0;
  double residual = 0.0;  // max |abar:D^2u + beta0 (phi-u)_+ + F| over unknowns
  long sweeps = 0;
};

template <int Dim>
NodeField solve_homogenized(const HomogenizedSpec<Dim>& spec, const SolveOptions& opt = {},
                            HomogenizedStats* stats = nullptr, int max_active_iterations = 200) {
  if (spec.beta0 < 0.0) throw InvalidArgument("beta0 must be nonnegative");
  const auto field = make_constant_field<Dim>(spec.abar);
  const auto op = assemble(field, spec.grid, 1.0);
  const std::size_t n = spec.grid.size();
  const NodeField phi = sample<Dim>(spec.grid, [&](const Vec<Dim>& x) { return spec.phi(x); });
  if (spec.forcing && spec.forcing->size() != n) throw InvalidArgument("forcing size mismatch");
  const NodeField g(n, 0.0);
  NodeField u(n, 0.0), c(n, 0.0), f(n, 0.0);
  std::vector<std::uint8_t> active(n, 0);
  HomogenizedStats hs;
  SolveOptions so = opt;
  so.log = nullptr;
  bool first = true;
  for (int it = 0;; ++it) {
    if (it >= max_active_iterations) throw NonConvergence("active-set iteration is cycling", hs.residual, it);
    bool changed = first;
    long count = 0;
    for (std::size_t p = 0; p < n; ++p) {
      const std::uint8_t a = op.is_unknown(p) && phi[p] > u[p] ? 1 : 0;  // ties count as inactive
      if (a != active[p]) changed = true;
      active[p] = a;
      count += a;
    }
    hs.active_iterations = it;
    hs.active_count = count;
    if (!changed) break;
    first = false;
    for (std::size_t p = 0; p < n; ++p) {
      c[p] = active[p] ? spec.beta0 : 0.0;
      f[p] = c[p] * phi[p] + (spec.forcing ? (*spec.forcing)[p] : 0.0);
    }
    SolveStats st;
    so.initial = &u;
    NodeField next = solve_dirichlet_reaction(op, c, f, g, so, &st);
    u = std::move(next);
    hs.sweeps += st.sweeps;
    if (opt.log) opt.log(it + 1, st.residual, count);
  }
  double r = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    if (!op.is_unknown(p)) continue;
    const double v = op.apply_at(u, p) + spec.beta0 * std::max(phi[p] - u[p], 0.0) +
                     (spec.forcing ? (*spec.forcing)[p] : 0.0);
    r = std::max(r, std::abs(v));
  }
  hs.residual = r;
  if (stats) *stats = hs;
  return u;
}

/// Least supersolution of abar:D^2 u <= 0 with u >= phi at every interior node, u = 0 on the boundary.
template <int Dim>
NodeField solve_limit_obstacle(const Mat<Dim>& abar, const ObstacleFunction<Dim>& phi, const BoxGrid<Dim>& grid,
                               const SolveOptions& opt = {}, SolveStats* stats = nullptr) {
  const auto op = assemble(make_constant_field<Dim>(abar), grid, 1.0);
  const NodeField psi = sample<Dim>(grid, [&](const Vec<Dim>& x) { return phi(x); });
  return solve_lcp(op, psi, NodeField(grid.size(), 0.0), opt, stats);
}

}  // namespace homog
