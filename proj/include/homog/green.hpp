#pragma once

#include "homog/solver.hpp"

namespace homog {

template <int Dim>
struct GreenProbe {
  Vec<Dim> x0{};
  double sigma = 0.0;
  long N = 0;  // nodes per unit length
  BoxGrid<Dim> grid;
  NodeField G;
  double source_mass = 0.0;  // discrete integral of f_sigma
  double bound_ratio = 0.0;  // sup of G |x - x0|^{n-2} over 3 sigma <= |x - x0| <= 0.4
  double min_value = 0.0;
  SolveStats stats;
};

/// Mollified Green's function: a_ij D_ij G = -f_sigma in B_1(x0), G = 0 outside.
template <int Dim>
GreenProbe<Dim> approx_green(const CoefficientField<Dim>& field, const Vec<Dim>& x0, double sigma, long N,
                             const SolveOptions& opt = {}) {
  const double h = 1.0 / static_cast<double>(N);
  if (sigma < 2.0 * h * (1.0 - 1e-9)) {
    throw UnderResolved("source radius sigma = " + std::to_string(sigma) + " is under-resolved",
                        static_cast<long>(std::ceil(2.0 / sigma)));
  }
  if (sigma >= 1.0) throw InvalidArgument("source ball must lie inside B_1(x0)");
  GreenProbe<Dim> out;
  out.x0 = x0;
  out.sigma = sigma;
  out.N = N;
  typename BoxGrid<Dim>::Index nodes;
  nodes.fill(2 * N + 1);
  Vec<Dim> origin;
  for (int a = 0; a < Dim; ++a) origin[a] = x0[a] - 1.0;
  std::array<Side, Dim> d;
  d.fill(Side::Dirichlet);
  out.grid = BoxGrid<Dim>(nodes, h, origin, d, d);
  auto op = assemble(field, out.grid, 1.0);
  const std::size_t n = out.grid.size();
  std::vector<std::uint8_t> outside(n, 0);
  std::vector<double> dist(n);
  std::size_t in_source = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const Vec<Dim> x = out.grid.position(p);
    double r2 = 0.0;
    for (int a = 0; a < Dim; ++a) r2 += (x[a] - x0[a]) * (x[a] - x0[a]);
    dist[p] = std::sqrt(r2);
    if (dist[p] >= 1.0) outside[p] = 1;
    if (dist[p] <= sigma) ++in_source;
  }
  op.add_data_nodes(outside);
  const double hn = std::pow(h, Dim);
  const double level = 1.0 / (static_cast<double>(in_source) * hn);
  NodeField f(n, 0.0);
  double mass = 0.0;
  for (std::size_t p = 0; p < n; ++p)
    if (dist[p] <= sigma) {
      f[p] = level;
      mass += level * hn;
    }
  out.source_mass = mass;
  SolveOptions so = opt;
  if (so.lambda_hint <= 0.0) {
    const double j0 = std::numbers::pi;  // first Dirichlet mode of the unit ball is at least pi^2 in 3D
    so.lambda_hint = field.lambda() * j0 * j0;
  }
  out.G = solve_dirichlet(op, f, NodeField(n, 0.0), so, &out.stats);
  out.min_value = *std::min_element(out.G.begin(), out.G.end());
  for (std::size_t p = 0; p < n; ++p)
    if (dist[p] >= 3.0 * sigma && dist[p] <= 0.4)
      out.bound_ratio = std::max(out.bound_ratio, out.G[p] * std::pow(dist[p], Dim - 2));
  return out;
}

template <int Dim>
struct HomogeneityRow {
  double radius = 0.0;
  double min_scaled = 0.0;  // min of G |x - x0|^{n-2} on the shell
  double max_scaled = 0.0;
  double band = 0.0;        // max / min
  long nodes = 0;
};

/// Shell statistics of G^sigma |x - x0|^{n-2}; shells collect nodes within h of each radius.
template <int Dim>
std::vector<HomogeneityRow<Dim>> almost_homogeneity_probe(const GreenProbe<Dim>& probe,
                                                          const std::vector<double>& radii) {
  std::vector<HomogeneityRow<Dim>> rows;
  const auto& g = probe.grid;
  for (double r : radii) {
    if (!(r > 3.0 * probe.sigma && r < 0.4 + 1e-12))
      throw InvalidArgument("probe radii must lie in (3 sigma, 0.4]");
    HomogeneityRow<Dim> row;
    row.radius = r;
    row.min_scaled = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < g.size(); ++p) {
      const Vec<Dim> x = g.position(p);
      double r2 = 0.0;
      for (int a = 0; a < Dim; ++a) r2 += (x[a] - probe.x0[a]) * (x[a] - probe.x0[a]);
      const double d = std::sqrt(r2);
      if (std::abs(d - r) > g.h()) continue;
      const double s = probe.G[p] * std::pow(d, Dim - 2);
      row.min_scaled = std::min(row.min_scaled, s);
      row.max_scaled = std::max(row.max_scaled, s);
      ++row.nodes;
    }
    row.band = row.max_scaled / row.min_scaled;
    rows.push_back(row);
  }
  return rows;
}

template <int Dim>
std::vector<HomogeneityRow<Dim>> almost_homogeneity_probe(const CoefficientField<Dim>& field, const Vec<Dim>& x0,
                                                          const std::vector<double>& radii, double sigma, long N,
                                                          const SolveOptions& opt = {}) {
  return almost_homogeneity_probe(approx_green<Dim>(field, x0, sigma, N, opt), radii);
}

struct GradientRow {
  double r = 0.0;
  std::vector<double> norms;  // one per exponent q
};

/// ||grad u_r||_{L^q} for a:D^2 u_r = -chi_{B_r}/|B_r| in [0,1]^n, u_r = 0 on the boundary,
/// source centred at the middle of the box. One solve per radius serves every q.
template <int Dim>
std::vector<GradientRow> l1_gradient_test(const CoefficientField<Dim>& field, const std::vector<double>& qs,
                                          const std::vector<double>& radii, long M, const SolveOptions& opt = {}) {
  const bool symmetric = reflection_symmetric(field) && M % 2 == 0;
  const BoxGrid<Dim> g = unit_box<Dim>(M, symmetric);
  const auto op = assemble(field, g, 1.0);
  const double h = g.h();
  const double hn = std::pow(h, Dim);
  Vec<Dim> c;
  c.fill(0.5);
  std::vector<GradientRow> rows;
  for (double r : radii) {
    if (r < 2.0 * h * (1.0 - 1e-9)) throw UnderResolved("source radius is under-resolved", static_cast<long>(std::ceil(2.0 / r)));
    NodeField f(g.size(), 0.0);
    double count = 0.0;
    std::vector<double> wq(g.size(), 0.0);
    for (std::size_t p = 0; p < g.size(); ++p) {
      const auto idx = g.coords(p);
      double w = 1.0;
      for (int a = 0; a < Dim; ++a)
        if (symmetric && idx[a] == g.nodes(a) - 1) w *= 0.5;
      wq[p] = symmetric ? w * std::pow(2.0, Dim) : 1.0;
      const Vec<Dim> x = g.position(idx);
      double d2 = 0.0;
      for (int a = 0; a < Dim; ++a) d2 += (x[a] - c[a]) * (x[a] - c[a]);
      if (std::sqrt(d2) <= r) {
        f[p] = 1.0;
        count += wq[p];
      }
    }
    for (double& v : f) v /= count * hn;
    SolveOptions so = opt;
    const NodeField u = solve_dirichlet(op, f, NodeField(g.size(), 0.0), so);
    GradientRow row;
    row.r = r;
    row.norms.assign(qs.size(), 0.0);
    for (std::size_t p = 0; p < g.size(); ++p) {
      const auto idx = g.coords(p);
      bool skip = false;
      for (int a = 0; a < Dim; ++a)
        if (idx[a] == 0 || (!symmetric && idx[a] == g.nodes(a) - 1)) skip = true;
      if (skip) continue;
      double grad2 = 0.0;
      for (int a = 0; a < Dim; ++a) {
        // central: zero across a mirror plane, so the octant reproduces the full sum
        const double d = (u[p + g.offset(a, idx[a], 1)] - u[p + g.offset(a, idx[a], 0)]) / (2.0 * h);
        grad2 += d * d;
      }
      const double gm = std::sqrt(grad2);
      for (std::size_t k = 0; k < qs.size(); ++k) row.norms[k] += wq[p] * std::pow(gm, qs[k]) * hn;
    }
    for (std::size_t k = 0; k < qs.size(); ++k) row.norms[k] = std::pow(row.norms[k], 1.0 / qs[k]);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace homog
