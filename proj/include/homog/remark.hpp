#pragma once

#include <memory>

#include "homog/discretize.hpp"

namespace homog {

/// Smooth cutoff: 1 on B_{delta/2}, 0 outside B_delta, mollifier profile in between.
inline double bump(double r, double delta) {
  const double t = std::max(2.0 * r / delta - 1.0, 0.0);
  if (t >= 1.0) return 0.0;
  if (t == 0.0) return 1.0;
  return std::exp(1.0 - 1.0 / (1.0 - t * t));
}

inline const char* kBumpFormula = "exp(1 - 1/(1 - t^2)), t = (2|y|/delta - 1)_+";

/// Field (2 + psi) I with Delta psi = g(y) - g(y - e1/4) on the torus, min psi = 0.
template <int Dim>
struct RemarkField {
  double delta = 0.1;
  long N = 64;
  BoxGrid<Dim> grid;
  std::shared_ptr<const NodeField> psi;
  double psi_max = 0.0;
  double rhs_mean = 0.0;  // discrete mean of the right side before compatibility
  SolveStats stats;
  CoefficientField<Dim> field;
  bool flat = false;  // psi == 0: the field is the constant 2 I

  /// Exact Laplacian of psi, i.e. D_ij a_ij.
  double laplacian_psi(const Vec<Dim>& y) const { return flat ? 0.0 : source(y, delta); }

  double psi_at(const Vec<Dim>& y) const { return periodic_interpolate<Dim>(grid, *psi, y); }

  static double source(const Vec<Dim>& y, double delta) {
    Vec<Dim> shifted = y;
    shifted[0] -= 0.25;
    return bump(lattice_distance<Dim>(y), delta) - bump(lattice_distance<Dim>(shifted), delta);
  }
};

template <int Dim>
RemarkField<Dim> build_remark_coefficient(double delta, long N, const SolveOptions& opt = {}) {
  if (!(delta > 0.0 && delta < 0.125)) throw InvalidArgument("remark bump width must lie in (0, 1/8)");
  RemarkField<Dim> rf;
  rf.delta = delta;
  rf.N = N;
  const auto cell = build_cell_grid<Dim>(N, 0.0);
  rf.grid = cell.grid;
  const auto lap = assemble(make_constant_field<Dim>(identity<Dim>()), cell.grid, 1.0);
  NodeField f(cell.grid.size());
  double mean = 0.0;
  for (std::size_t p = 0; p < f.size(); ++p) {
    // Delta psi = s  <=>  L psi = kappa - f with f = -s
    const double s = RemarkField<Dim>::source(cell.grid.position(p), delta);
    f[p] = -s;
    mean += s;
  }
  rf.rhs_mean = mean / static_cast<double>(f.size());
  SolveOptions o = opt;
  if (o.tol_rel > 1e-10) o.tol_rel = 1e-10;
  auto sol = solve_periodic(lap, f, Normalization::MinZero, nullptr, o);
  rf.stats = sol.stats;
  rf.psi_max = *std::max_element(sol.u.begin(), sol.u.end());
  auto psi = std::make_shared<const NodeField>(std::move(sol.u));
  rf.psi = psi;

  json d;
  d["kind"] = "remark";
  d["delta"] = delta;
  d["N"] = N;
  d["bump"] = kBumpFormula;
  d["psi_max"] = rf.psi_max;
  typename CoefficientField<Dim>::Traits t;
  t.diagonal = true;
  t.scalar = true;
  const BoxGrid<Dim> g = cell.grid;
  rf.field = CoefficientField<Dim>(
      [g, psi](const Vec<Dim>& y) {
        return scaled<Dim>(identity<Dim>(), 2.0 + periodic_interpolate<Dim>(g, *psi, y));
      },
      2.0, 2.0 + rf.psi_max, t, std::move(d), "smooth (grid-backed, multilinear interpolation)");
  return rf;
}

/// The same construction with psi == 0; a control for the flux identity.
template <int Dim>
RemarkField<Dim> flat_remark_field(long N) {
  RemarkField<Dim> rf;
  rf.delta = 0.0;
  rf.N = N;
  rf.flat = true;
  rf.grid = build_cell_grid<Dim>(N, 0.0).grid;
  rf.psi = std::make_shared<const NodeField>(rf.grid.size(), 0.0);
  rf.field = make_constant_field<Dim>(scaled<Dim>(identity<Dim>(), 2.0));
  return rf;
}

}  // namespace homog
