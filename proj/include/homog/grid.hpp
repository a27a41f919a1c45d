#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "homog/core.hpp"

namespace homog {

/// Boundary behaviour of one end of a grid axis.
///   Periodic  - the axis wraps (both ends must be periodic)
///   Dirichlet - the end node is a data node; it has no outer neighbour
///   Mirror    - the end node lies on a symmetry plane; the outer neighbour is its reflection
enum class Side : std::uint8_t { Periodic, Dirichlet, Mirror };

/// Tensor-product node grid with uniform spacing h and per-face topology.
template <int Dim>
class BoxGrid {
 public:
  using Index = std::array<long, Dim>;

  BoxGrid() = default;

  BoxGrid(Index nodes, double h, Vec<Dim> origin, std::array<Side, Dim> lo, std::array<Side, Dim> hi)
      : nodes_(nodes), h_(h), origin_(origin), lo_(lo), hi_(hi) {
    if (h <= 0.0) throw InvalidArgument("grid spacing must be positive");
    long s = 1;
    for (int a = 0; a < Dim; ++a) {
      if (nodes_[a] < 3) throw InvalidArgument("grid needs at least 3 nodes per axis");
      if ((lo_[a] == Side::Periodic) != (hi_[a] == Side::Periodic))
        throw InvalidArgument("periodic axes must be periodic at both ends");
      stride_[a] = s;
      s *= nodes_[a];
      build_offsets(a);
    }
    size_ = static_cast<std::size_t>(s);
  }

  std::size_t size() const { return size_; }
  double h() const { return h_; }
  const Index& nodes() const { return nodes_; }
  long nodes(int a) const { return nodes_[a]; }
  long stride(int a) const { return stride_[a]; }
  const Vec<Dim>& origin() const { return origin_; }
  Side lo(int a) const { return lo_[a]; }
  Side hi(int a) const { return hi_[a]; }
  bool periodic(int a) const { return lo_[a] == Side::Periodic; }

  Index coords(std::size_t p) const {
    Index c{};
    for (int a = 0; a < Dim; ++a) {
      c[a] = static_cast<long>(p % static_cast<std::size_t>(nodes_[a]));
      p /= static_cast<std::size_t>(nodes_[a]);
    }
    return c;
  }

  std::size_t index(const Index& c) const {
    std::size_t p = 0;
    for (int a = 0; a < Dim; ++a) p += static_cast<std::size_t>(c[a] * stride_[a]);
    return p;
  }

  Vec<Dim> position(const Index& c) const {
    Vec<Dim> x{};
    for (int a = 0; a < Dim; ++a) x[a] = origin_[a] + h_ * static_cast<double>(c[a]);
    return x;
  }

  Vec<Dim> position(std::size_t p) const { return position(coords(p)); }

  /// Linear-index offset to the neighbour of a node with coordinate `c` along axis `a`
  /// in direction dir (0 = minus, 1 = plus). Zero when the neighbour does not exist.
  long offset(int a, long c, int dir) const { return offsets_[a][static_cast<std::size_t>(c)][dir]; }

  bool has_neighbor(int a, long c, int dir) const {
    if (periodic(a)) return true;
    if (dir == 0) return c > 0 || lo_[a] == Side::Mirror;
    return c < nodes_[a] - 1 || hi_[a] == Side::Mirror;
  }

  /// True when the node sits on a Dirichlet face of the box.
  bool on_dirichlet_face(const Index& c) const {
    for (int a = 0; a < Dim; ++a) {
      if (c[a] == 0 && lo_[a] == Side::Dirichlet) return true;
      if (c[a] == nodes_[a] - 1 && hi_[a] == Side::Dirichlet) return true;
    }
    return false;
  }

  /// Number of mirror planes the node lies on.
  int mirror_count(const Index& c) const {
    int m = 0;
    for (int a = 0; a < Dim; ++a) {
      if (c[a] == 0 && lo_[a] == Side::Mirror) ++m;
      if (c[a] == nodes_[a] - 1 && hi_[a] == Side::Mirror) ++m;
    }
    return m;
  }

  /// Calls fn(base, c) for every grid line along axis 0; `base` is the index of the
  /// line's first node and `c` carries the coordinates of the remaining axes.
  template <typename Fn>
  void for_each_line(Fn&& fn) const {
    Index c{};
    const long lines = static_cast<long>(size_ / static_cast<std::size_t>(nodes_[0]));
    for (long l = 0; l < lines; ++l) {
      fn(index(c), c);
      for (int a = 1; a < Dim; ++a) {
        if (++c[a] < nodes_[a]) break;
        c[a] = 0;
      }
    }
  }

 private:
  void build_offsets(int a) {
    const long n = nodes_[a];
    offsets_[a].assign(static_cast<std::size_t>(n), {0, 0});
    for (long c = 0; c < n; ++c) {
      long minus = c - 1, plus = c + 1;
      if (minus < 0) {
        if (lo_[a] == Side::Periodic) minus = n - 1;
        else if (lo_[a] == Side::Mirror) minus = 1;
        else minus = c;
      }
      if (plus >= n) {
        if (hi_[a] == Side::Periodic) plus = 0;
        else if (hi_[a] == Side::Mirror) plus = n - 2;
        else plus = c;
      }
      offsets_[a][static_cast<std::size_t>(c)] = {(minus - c) * stride_[a], (plus - c) * stride_[a]};
    }
  }

  Index nodes_{};
  Index stride_{};
  double h_ = 1.0;
  Vec<Dim> origin_{};
  std::array<Side, Dim> lo_{}, hi_{};
  std::array<std::vector<std::array<long, 2>>, Dim> offsets_;
  std::size_t size_ = 0;
};

/// Periodic lattice of equal balls B_r(c + spacing*k); spacing 0 means a single ball at c.
template <int Dim>
struct SphereLattice {
  double spacing = 1.0;
  Vec<Dim> center{};
  double radius = 0.0;

  /// Displacement from the nearest lattice centre to x.
  Vec<Dim> displacement(const Vec<Dim>& x) const {
    Vec<Dim> d{};
    for (int a = 0; a < Dim; ++a) {
      double t = x[a] - center[a];
      if (spacing > 0.0) t -= spacing * std::round(t / spacing);
      d[a] = t;
    }
    return d;
  }

  double distance(const Vec<Dim>& x) const { return norm<Dim>(displacement(x)); }
  bool contains(const Vec<Dim>& x) const { return distance(x) <= radius; }

  /// Distance, as a fraction of h, from an outside point x to the sphere along
  /// direction s*e_a. Returns nullopt when the segment of length h misses the ball.
  std::optional<double> crossing(const Vec<Dim>& x, int a, int s, double h) const {
    Vec<Dim> d = displacement(x);
    // the neighbour may belong to a different lattice ball than x's nearest one
    Vec<Dim> xn = x;
    xn[a] += s * h;
    const Vec<Dim> dn = displacement(xn);
    for (int b = 0; b < Dim; ++b) d[b] = dn[b];
    d[a] = dn[a] - s * h;
    double perp2 = 0.0;
    for (int b = 0; b < Dim; ++b)
      if (b != a) perp2 += d[b] * d[b];
    const double disc = radius * radius - perp2;
    if (disc < 0.0) return std::nullopt;
    // points x + s t e_a on the sphere: (d_a + s t)^2 = disc
    const double root = std::sqrt(disc);
    double best = std::numeric_limits<double>::infinity();
    for (double target : {-root, root}) {
      const double t = s * (target - d[a]);
      if (t > 0.0 && t < best) best = t;
    }
    if (!(best <= h * (1.0 + 1e-12))) return std::nullopt;
    return std::min(best / h, 1.0);
  }
};

// ---------------------------------------------------------------------------
// scale laws

/// Length scales of the perforation at hole exponent alpha (alpha = 1 is critical).
struct ScaleSet {
  int n = 3;
  double eps = 0.5;
  double alpha = 1.0;
  double a_eps = 0.0;     // hole radius, slow variable
  double b_eps = 0.0;     // intermediate radius
  double abar_eps = 0.0;  // hole radius, fast variable
  double alphabar = 1.0;  // exponent whose critical cell problem carries these holes

  static ScaleSet make(int n, double eps, double alpha = 1.0) {
    if (n < 3) throw InvalidArgument("dimension must be at least 3");
    if (!(eps > 0.0 && eps < 1.0)) throw InvalidArgument("eps must lie in (0,1)");
    if (!(alpha > (n - 2.0) / n)) throw InvalidArgument("alpha must exceed (n-2)/n");
    ScaleSet s;
    s.n = n;
    s.eps = eps;
    s.alpha = alpha;
    s.a_eps = std::pow(eps, n * alpha / (n - 2.0));
    s.b_eps = std::sqrt(eps * s.a_eps);
    s.abar_eps = s.a_eps / eps;
    s.alphabar = 0.5 * n * alpha - 0.5 * (n - 2.0);
    return s;
  }

  /// Critical fast-variable hole radius at scale e: e^{2/(n-2)}.
  static double critical_abar(int n, double e) { return std::pow(e, 2.0 / (n - 2.0)); }
};

// ---------------------------------------------------------------------------
// periodic unit cell Q_1 = [-1/2, 1/2]^n

template <int Dim>
struct PeriodicCellGrid {
  BoxGrid<Dim> grid;
  long N = 0;
  double hole_radius = 0.0;
  std::vector<std::uint8_t> hole_mask;

  SphereLattice<Dim> holes() const { return {1.0, Vec<Dim>{}, hole_radius}; }
  std::size_t hole_count() const {
    return static_cast<std::size_t>(std::count(hole_mask.begin(), hole_mask.end(), std::uint8_t{1}));
  }
};

/// Periodic distance from y to the integer lattice.
template <int Dim>
double lattice_distance(const Vec<Dim>& y) {
  double s = 0.0;
  for (int a = 0; a < Dim; ++a) {
    const double t = y[a] - std::round(y[a]);
    s += t * t;
  }
  return std::sqrt(s);
}

template <int Dim>
PeriodicCellGrid<Dim> build_cell_grid(long N, double hole_radius) {
  static_assert(Dim >= 3, "the perforation theory needs n >= 3");
  if (N < 8) throw InvalidArgument("cell grid needs N >= 8");
  if (N % 2 != 0) throw InvalidArgument("cell grid needs even N (red-black ordering)");
  if (!(hole_radius >= 0.0 && hole_radius < 0.5)) throw InvalidArgument("hole radius must lie in [0, 1/2)");
  const double h = 1.0 / static_cast<double>(N);
  if (hole_radius > 0.0 && hole_radius < 2.0 * h * (1.0 - 1e-9)) {
    long min_n = static_cast<long>(std::ceil(2.0 / hole_radius));
    min_n += min_n % 2;
    throw UnderResolved("cell hole of radius " + std::to_string(hole_radius) + " is under-resolved", min_n);
  }
  PeriodicCellGrid<Dim> cell;
  typename BoxGrid<Dim>::Index nodes;
  nodes.fill(N);
  Vec<Dim> origin;
  origin.fill(-0.5);
  std::array<Side, Dim> per;
  per.fill(Side::Periodic);
  cell.grid = BoxGrid<Dim>(nodes, h, origin, per, per);
  cell.N = N;
  cell.hole_radius = hole_radius;
  cell.hole_mask.assign(cell.grid.size(), 0);
  if (hole_radius > 0.0) {
    for (std::size_t p = 0; p < cell.grid.size(); ++p)
      if (lattice_distance<Dim>(cell.grid.position(p)) <= hole_radius) cell.hole_mask[p] = 1;
  }
  return cell;
}

/// Multilinear interpolation of a periodic cell field at an arbitrary point.
template <int Dim>
double periodic_interpolate(const BoxGrid<Dim>& g, const NodeField& f, const Vec<Dim>& y) {
  std::array<long, Dim> base{};
  Vec<Dim> t{};
  for (int a = 0; a < Dim; ++a) {
    double s = (y[a] - g.origin()[a]) / g.h();
    const double fl = std::floor(s);
    t[a] = s - fl;
    long i = static_cast<long>(fl) % g.nodes(a);
    if (i < 0) i += g.nodes(a);
    base[a] = i;
  }
  double acc = 0.0;
  for (int corner = 0; corner < (1 << Dim); ++corner) {
    double w = 1.0;
    std::array<long, Dim> c{};
    for (int a = 0; a < Dim; ++a) {
      const int bit = (corner >> a) & 1;
      w *= bit ? t[a] : 1.0 - t[a];
      c[a] = (base[a] + bit) % g.nodes(a);
    }
    if (w != 0.0) acc += w * f[g.index(c)];
  }
  return acc;
}

// ---------------------------------------------------------------------------
// perforated domain Omega = [0, L]^n

enum class NodeClass : std::uint8_t { Free = 0, OuterBoundary = 1, Hole = 2, HoleBoundary = 3 };

inline bool is_hole(NodeClass c) { return c == NodeClass::Hole || c == NodeClass::HoleBoundary; }

template <int Dim>
struct PerforatedDomain {
  BoxGrid<Dim> grid;
  long M = 0;           // nodes-per-axis count of the full box is M + 1
  double side = 1.0;    // L
  bool symmetric = false;  // only [0, L/2]^n is stored, mirror planes at x_i = L/2
  ScaleSet scale;
  std::vector<NodeClass> cls;
  std::vector<std::uint8_t> away_mask;  // FREE nodes outside T_{b^eps}

  double h() const { return grid.h(); }
  SphereLattice<Dim> holes() const { return {scale.eps, Vec<Dim>{}, scale.a_eps}; }
  SphereLattice<Dim> intermediate_balls() const { return {scale.eps, Vec<Dim>{}, scale.b_eps}; }

  std::size_t count(NodeClass c) const {
    return static_cast<std::size_t>(std::count(cls.begin(), cls.end(), c));
  }

  /// Trapezoidal quadrature weights for integrals over the full box, folded onto the
  /// stored part when the domain is symmetric.
  std::vector<double> quadrature_weights() const {
    std::vector<double> w(grid.size());
    const double fold = symmetric ? std::pow(2.0, Dim) : 1.0;
    const double hn = std::pow(grid.h(), Dim);
    for (std::size_t p = 0; p < grid.size(); ++p) {
      const auto c = grid.coords(p);
      double v = hn * fold;
      for (int a = 0; a < Dim; ++a) {
        if (c[a] == 0 || c[a] == grid.nodes(a) - 1) v *= 0.5;
      }
      w[p] = v;
    }
    return w;
  }

  /// Lattice points eps*k whose ball of the given radius meets the stored nodes.
  std::vector<Vec<Dim>> lattice_points(double radius) const {
    const double eps = scale.eps;
    const double hi = symmetric ? 0.5 * side : side;
    const long kmin = static_cast<long>(std::floor(-radius / eps));
    const long kmax = static_cast<long>(std::ceil((hi + radius) / eps));
    std::vector<Vec<Dim>> pts;
    std::array<long, Dim> k;
    k.fill(kmin);
    while (true) {
      Vec<Dim> x;
      bool ok = true;
      for (int a = 0; a < Dim; ++a) {
        x[a] = eps * static_cast<double>(k[a]);
        if (x[a] < -radius || x[a] > hi + radius) ok = false;
      }
      if (ok) pts.push_back(x);
      int a = 0;
      for (; a < Dim; ++a) {
        if (++k[a] <= kmax) break;
        k[a] = kmin;
      }
      if (a == Dim) break;
    }
    return pts;
  }

  /// True when the ball of the given radius around x is cut by the outer boundary.
  bool clipped(const Vec<Dim>& x, double radius) const {
    for (int a = 0; a < Dim; ++a)
      if (x[a] - radius < 0.0 || x[a] + radius > side) return true;
    return false;
  }

  /// Visits every stored node within `radius` of centre x: fn(p, distance).
  template <typename Fn>
  void for_each_node_near(const Vec<Dim>& x, double radius, Fn&& fn) const {
    std::array<long, Dim> lo{}, hi{}, c{};
    for (int a = 0; a < Dim; ++a) {
      lo[a] = std::max(0L, static_cast<long>(std::floor((x[a] - radius - grid.origin()[a]) / grid.h())));
      hi[a] = std::min(grid.nodes(a) - 1,
                       static_cast<long>(std::ceil((x[a] + radius - grid.origin()[a]) / grid.h())));
      if (lo[a] > hi[a]) return;
    }
    c = lo;
    while (true) {
      const Vec<Dim> y = grid.position(c);
      double d2 = 0.0;
      for (int a = 0; a < Dim; ++a) d2 += (y[a] - x[a]) * (y[a] - x[a]);
      const double d = std::sqrt(d2);
      if (d <= radius) fn(grid.index(c), d);
      int a = 0;
      for (; a < Dim; ++a) {
        if (++c[a] <= hi[a]) break;
        c[a] = lo[a];
      }
      if (a == Dim) break;
    }
  }
};

/// Classifies the nodes of [0, L]^n (or its symmetric octant) against the holes T_{a^eps}.
template <int Dim>
PerforatedDomain<Dim> perforate(long M, const ScaleSet& scale, double side = 1.0, bool symmetric = false) {
  static_assert(Dim >= 3, "the perforation theory needs n >= 3");
  if (scale.n != Dim) throw InvalidArgument("scale set dimension does not match the grid");
  const double cells = side / scale.eps;
  if (std::abs(cells - std::round(cells)) > 1e-9 * cells)
    throw InvalidArgument("L/eps must be an integer so holes align with the box");
  const long ncell = std::lround(cells);
  if (M % ncell != 0) throw InvalidArgument("M must be a multiple of L/eps");
  if (symmetric && M % 2 != 0) throw InvalidArgument("symmetric domains need even M");
  const double h = side / static_cast<double>(M);
  if (scale.a_eps < 2.0 * h * (1.0 - 1e-9)) {
    const long per_cell = static_cast<long>(std::ceil(2.0 * side / scale.a_eps / static_cast<double>(ncell)));
    throw UnderResolved("hole radius a^eps = " + std::to_string(scale.a_eps) + " is under-resolved at M = " +
                            std::to_string(M),
                        per_cell * ncell);
  }

  PerforatedDomain<Dim> dom;
  dom.M = M;
  dom.side = side;
  dom.symmetric = symmetric;
  dom.scale = scale;
  typename BoxGrid<Dim>::Index nodes;
  nodes.fill(symmetric ? M / 2 + 1 : M + 1);
  std::array<Side, Dim> lo, hi;
  lo.fill(Side::Dirichlet);
  hi.fill(symmetric ? Side::Mirror : Side::Dirichlet);
  dom.grid = BoxGrid<Dim>(nodes, h, Vec<Dim>{}, lo, hi);

  const auto holes = dom.holes();
  const auto balls = dom.intermediate_balls();
  const std::size_t size = dom.grid.size();
  dom.cls.assign(size, NodeClass::Free);
  for (std::size_t p = 0; p < size; ++p) {
    const auto c = dom.grid.coords(p);
    if (dom.grid.on_dirichlet_face(c)) dom.cls[p] = NodeClass::OuterBoundary;
    else if (holes.contains(dom.grid.position(c))) dom.cls[p] = NodeClass::Hole;
  }
  // hole nodes with a non-hole axis neighbour form the hole boundary
  for (std::size_t p = 0; p < size; ++p) {
    if (dom.cls[p] != NodeClass::Hole) continue;
    const auto c = dom.grid.coords(p);
    bool touches = false;
    for (int a = 0; a < Dim && !touches; ++a)
      for (int dir = 0; dir < 2 && !touches; ++dir) {
        if (!dom.grid.has_neighbor(a, c[a], dir)) continue;
        const auto q = static_cast<std::size_t>(static_cast<long>(p) + dom.grid.offset(a, c[a], dir));
        if (!is_hole(dom.cls[q])) touches = true;
      }
    if (touches) dom.cls[p] = NodeClass::HoleBoundary;
  }
  dom.away_mask.assign(size, 0);
  for (std::size_t p = 0; p < size; ++p)
    if (dom.cls[p] == NodeClass::Free && balls.distance(dom.grid.position(p)) > scale.b_eps) dom.away_mask[p] = 1;
  return dom;
}

/// Flattens u inside every intermediate ball B_{b^eps}(eps k) to its minimum over the
/// discrete sphere shell {b - h sqrt(n) <= |x - eps k| <= b}.
template <int Dim>
NodeField underline_transform(const NodeField& u, const PerforatedDomain<Dim>& dom) {
  if (u.size() != dom.grid.size()) throw InvalidArgument("node field does not match the domain");
  NodeField out = u;
  const double b = dom.scale.b_eps;
  const double shell = dom.h() * std::sqrt(static_cast<double>(Dim));
  for (const auto& x : dom.lattice_points(b)) {
    double m = std::numeric_limits<double>::infinity();
    bool any_inside = false;
    dom.for_each_node_near(x, b, [&](std::size_t p, double d) {
      any_inside = true;
      if (d >= b - shell) m = std::min(m, u[p]);
    });
    if (!any_inside) continue;
    if (!std::isfinite(m)) throw UnderResolved("empty sphere shell in underline transform", 0);
    dom.for_each_node_near(x, b, [&](std::size_t p, double) { out[p] = m; });
  }
  return out;
}

/// Nodes inside an intermediate ball that is clipped by the outer boundary.
template <int Dim>
std::vector<std::uint8_t> clipped_ball_mask(const PerforatedDomain<Dim>& dom) {
  std::vector<std::uint8_t> mask(dom.grid.size(), 0);
  const double b = dom.scale.b_eps;
  for (const auto& x : dom.lattice_points(b))
    if (dom.clipped(x, b)) dom.for_each_node_near(x, b, [&](std::size_t p, double) { mask[p] = 1; });
  return mask;
}

}  // namespace homog
