#pragma once

#include <functional>
#include <unordered_map>

#include "homog/field.hpp"
#include "homog/grid.hpp"

namespace homog {

/// Iteration controls shared by the relaxation solvers.
struct SolveOptions {
  double tol_rel = 1e-8;
  long max_sweeps = 1000000;
  int check_every = 10;
  double omega = 0.0;        // 0 = choose from lambda_hint and adapt
  double omega_cap = 1.998;
  double lambda_hint = 0.0;  // lower spectral estimate of -L; 0 = derive from the grid
  const NodeField* initial = nullptr;
  std::function<void(long iter, double residual, long active_count)> log;
};

struct SolveStats {
  long sweeps = 0;
  double residual = 0.0;  // final residual, in the units of the convergence test
  double threshold = 0.0;
  double omega = 1.0;
  long active_count = 0;
};

/// Finite-difference realisation of u -> a_ij(x/eps) D_ij u on a BoxGrid.
///
/// Rows are written as (Lu)_p = sum_q w_pq u_q + b_p - D_p u_p with D_p > 0. Data
/// nodes (Dirichlet faces, user masks, sphere holes) are not unknowns; their values
/// come from the boundary field handed to the solvers.
template <int Dim>
class StencilOperator {
 public:
  static constexpr int kCross = Dim * (Dim - 1) / 2;
  static constexpr double kMinArm = 1e-3;
  enum Kind : std::uint8_t { Unknown = 0, Data = 1, Special = 2 };

  StencilOperator() = default;

  StencilOperator(const CoefficientField<Dim>& field, const BoxGrid<Dim>& grid, double eps_scale)
      : grid_(grid), eps_(eps_scale) {
    if (!(eps_scale > 0.0)) throw InvalidArgument("eps scale must be positive");
    const std::size_t n = grid_.size();
    constant_ = field.is_constant();
    cross_ = !field.is_diagonal();
    stride_ = cross_ ? Dim + kCross : Dim;
    coef_.assign(constant_ ? stride_ : stride_ * n, 0.0);
    const std::size_t nodes = constant_ ? 1 : n;
    dominance_ = true;
    min_diag_coef_ = std::numeric_limits<double>::infinity();
    max_diag_coef_ = 0.0;
    for (std::size_t p = 0; p < nodes; ++p) {
      Vec<Dim> y = grid_.position(p);
      for (auto& v : y) v /= eps_;
      const Mat<Dim> A = field(y);
      double* c = &coef_[p * stride_];
      for (int a = 0; a < Dim; ++a) {
        c[a] = A[a][a];
        min_diag_coef_ = std::min(min_diag_coef_, A[a][a]);
        max_diag_coef_ = std::max(max_diag_coef_, A[a][a]);
      }
      if (cross_) {
        int k = Dim;
        for (int a = 0; a < Dim; ++a)
          for (int b = a + 1; b < Dim; ++b) c[k++] = 0.5 * (A[a][b] + A[b][a]);
      }
      for (int a = 0; a < Dim; ++a) {
        double off = 0.0;
        for (int b = 0; b < Dim; ++b)
          if (b != a) off += std::abs(A[a][b]);
        if (A[a][a] - off < 0.0) dominance_ = false;
      }
    }
    kind_.assign(n, Unknown);
    for (std::size_t p = 0; p < n; ++p)
      if (grid_.on_dirichlet_face(grid_.coords(p))) kind_[p] = Data;
  }

  const BoxGrid<Dim>& grid() const { return grid_; }
  double eps_scale() const { return eps_; }
  bool dominance() const { return dominance_; }
  bool has_cross() const { return cross_; }
  bool is_constant() const { return constant_; }
  double min_diag_coef() const { return min_diag_coef_; }
  double max_diag_coef() const { return max_diag_coef_; }
  std::size_t size() const { return grid_.size(); }
  bool is_unknown(std::size_t p) const { return kind_[p] != Data; }
  const std::vector<std::uint8_t>& kinds() const { return kind_; }
  std::size_t special_count() const { return special_.size(); }
  int colours() const { return cross_ ? (1 << Dim) : 2; }

  std::size_t unknown_count() const {
    return static_cast<std::size_t>(std::count_if(kind_.begin(), kind_.end(), [](auto k) { return k != Data; }));
  }

  /// Coefficient a_ab at node p (a <= b).
  double coef(std::size_t p, int a, int b) const {
    const double* c = constant_ ? coef_.data() : &coef_[p * stride_];
    if (a == b) return c[a];
    if (!cross_) return 0.0;
    if (a > b) std::swap(a, b);
    return c[cross_index(a, b)];
  }

  /// Turns the masked nodes into data nodes.
  void add_data_nodes(const std::vector<std::uint8_t>& mask) {
    if (mask.size() != size()) throw InvalidArgument("data mask does not match the grid");
    if (!special_.empty()) throw InvalidArgument("add data nodes before sphere holes");
    for (std::size_t p = 0; p < size(); ++p)
      if (mask[p]) kind_[p] = Data;
  }

  /// Marks nodes inside the lattice balls as data nodes carrying `value` and gives
  /// their unknown axis neighbours Shortley-Weller arms ending on the sphere.
  /// Returns the data mask of the ball nodes.
  std::vector<std::uint8_t> add_sphere_holes(const SphereLattice<Dim>& balls, double value) {
    const std::size_t n = size();
    std::vector<std::uint8_t> inside(n, 0);
    for (std::size_t p = 0; p < n; ++p)
      if (balls.contains(grid_.position(p))) {
        inside[p] = 1;
        kind_[p] = Data;
      }
    const double h = grid_.h();
    // nodes hugging the sphere would get arms of vanishing length (and rows whose
    // roundoff swamps the residual); they take the sphere value directly
    std::vector<std::size_t> hugging;
    for (std::size_t p = 0; p < n; ++p) {
      if (kind_[p] == Data) continue;
      const auto c = grid_.coords(p);
      for (int a = 0; a < Dim; ++a)
        for (int dir = 0; dir < 2; ++dir) {
          if (!grid_.has_neighbor(a, c[a], dir)) continue;
          const auto q = static_cast<std::size_t>(static_cast<long>(p) + grid_.offset(a, c[a], dir));
          if (!inside[q]) continue;
          const auto t = balls.crossing(grid_.position(c), a, dir == 0 ? -1 : 1, h);
          if (t && *t < kMinArm) hugging.push_back(p);
        }
    }
    for (std::size_t p : hugging) {
      inside[p] = 1;
      kind_[p] = Data;
    }
    for (std::size_t p = 0; p < n; ++p) {
      if (kind_[p] == Data) continue;
      const auto c = grid_.coords(p);
      bool cut = false;
      std::array<double, 2 * Dim> theta;
      theta.fill(1.0);
      for (int a = 0; a < Dim; ++a)
        for (int dir = 0; dir < 2; ++dir) {
          if (!grid_.has_neighbor(a, c[a], dir)) continue;
          const auto q = static_cast<std::size_t>(static_cast<long>(p) + grid_.offset(a, c[a], dir));
          if (!inside[q]) continue;
          const auto t = balls.crossing(grid_.position(c), a, dir == 0 ? -1 : 1, h);
          theta[2 * a + dir] = std::max(t.value_or(1.0), kMinArm);
          cut = true;
        }
      if (!cut) continue;
      SpecialRow row;
      row.w.fill(0.0);
      row.b = 0.0;
      row.diag = 0.0;
      for (int a = 0; a < Dim; ++a) {
        const double tm = theta[2 * a], tp = theta[2 * a + 1];
        const double caa = coef(p, a, a);
        const double wm = 2.0 * caa / (h * h * tm * (tm + tp));
        const double wp = 2.0 * caa / (h * h * tp * (tm + tp));
        row.diag += wm + wp;
        const auto qm = static_cast<std::size_t>(static_cast<long>(p) + grid_.offset(a, c[a], 0));
        const auto qp = static_cast<std::size_t>(static_cast<long>(p) + grid_.offset(a, c[a], 1));
        if (inside[qm]) row.b += wm * value;
        else row.w[2 * a] = wm;
        if (inside[qp]) row.b += wp * value;
        else row.w[2 * a + 1] = wp;
      }
      kind_[p] = Special;
      special_.emplace(p, row);
    }
    return inside;
  }

  /// Diagonal D_p of the row at an unknown node.
  double diag(std::size_t p) const {
    if (kind_[p] == Special) return special_.at(p).diag;
    const double* c = constant_ ? coef_.data() : &coef_[p * stride_];
    double s = 0.0;
    for (int a = 0; a < Dim; ++a) s += c[a];
    return 2.0 * s / (grid_.h() * grid_.h());
  }

  /// Neighbour offsets of a node; nb[a][dir].
  using Offsets = std::array<std::array<long, 2>, Dim>;

  Offsets offsets(const typename BoxGrid<Dim>::Index& c) const {
    Offsets nb;
    for (int a = 0; a < Dim; ++a) nb[a] = {grid_.offset(a, c[a], 0), grid_.offset(a, c[a], 1)};
    return nb;
  }

  /// Off-diagonal part sum_q w_pq u_q + b_p of the row at unknown node p; sets D.
  double gather(const double* u, std::size_t p, const Offsets& nb, double& D) const {
    const double ih2 = 1.0 / (grid_.h() * grid_.h());
    if (kind_[p] == Special) {
      const SpecialRow& r = special_.find(p)->second;
      double s = r.b;
      for (int a = 0; a < Dim; ++a) {
        if (r.w[2 * a] != 0.0) s += r.w[2 * a] * u[p + nb[a][0]];
        if (r.w[2 * a + 1] != 0.0) s += r.w[2 * a + 1] * u[p + nb[a][1]];
      }
      s += cross_sum(u, p, nb);
      D = r.diag;
      return s;
    }
    const double* c = constant_ ? coef_.data() : &coef_[p * stride_];
    double s = 0.0, d = 0.0;
    for (int a = 0; a < Dim; ++a) {
      s += c[a] * (u[p + nb[a][0]] + u[p + nb[a][1]]);
      d += c[a];
    }
    D = 2.0 * d * ih2;
    return s * ih2 + cross_sum(u, p, nb);
  }

  /// (Lu)_p at an unknown node.
  double apply_at(const NodeField& u, std::size_t p) const {
    const auto nb = offsets(grid_.coords(p));
    double D;
    const double s = gather(u.data(), p, nb, D);
    return s - D * u[p];
  }

  /// Lu at unknown nodes, zero at data nodes.
  NodeField apply(const NodeField& u) const {
    check_size(u);
    NodeField out(size(), 0.0);
    for_each_unknown([&](std::size_t p, const Offsets& nb) {
      double D;
      out[p] = gather(u.data(), p, nb, D) - D * u[p];
    });
    return out;
  }

  /// Transposed action restricted to unknowns: (L^T m)_p = sum_q L_qp m_q.
  NodeField apply_transpose(const NodeField& m) const {
    check_size(m);
    NodeField out(size(), 0.0);
    // scatter each row; data-node columns are dropped
    for_each_unknown([&](std::size_t p, const Offsets& nb) {
      const double mp = m[p];
      if (mp == 0.0) return;
      for_each_stencil_neighbor(p, nb, [&](std::size_t q, double w) {
        if (kind_[q] != Data) out[q] += w * mp;
      });
      out[p] -= diag(p) * mp;
    });
    return out;
  }

  /// Calls fn(q, w_pq) for each off-diagonal stencil entry of unknown row p.
  template <typename Fn>
  void for_each_stencil_neighbor(std::size_t p, const Offsets& nb, Fn&& fn) const {
    const double ih2 = 1.0 / (grid_.h() * grid_.h());
    auto at = [&](long off) { return static_cast<std::size_t>(static_cast<long>(p) + off); };
    if (kind_[p] == Special) {
      const SpecialRow& r = special_.find(p)->second;
      for (int a = 0; a < Dim; ++a) {
        if (r.w[2 * a] != 0.0) fn(at(nb[a][0]), r.w[2 * a]);
        if (r.w[2 * a + 1] != 0.0) fn(at(nb[a][1]), r.w[2 * a + 1]);
      }
    } else {
      for (int a = 0; a < Dim; ++a) {
        const double w = coef(p, a, a) * ih2;
        fn(at(nb[a][0]), w);
        fn(at(nb[a][1]), w);
      }
    }
    if (cross_) {
      for (int a = 0; a < Dim; ++a)
        for (int b = a + 1; b < Dim; ++b) {
          const double w = 0.5 * coef(p, a, b) * ih2;
          if (w == 0.0) continue;
          fn(at(nb[a][1] + nb[b][1]), w);
          fn(at(nb[a][0] + nb[b][0]), w);
          fn(at(nb[a][1] + nb[b][0]), -w);
          fn(at(nb[a][0] + nb[b][1]), -w);
        }
    }
  }

  /// Visits unknown nodes in grid order: fn(p, offsets).
  template <typename Fn>
  void for_each_unknown(Fn&& fn) const {
    grid_.for_each_line([&](std::size_t base, typename BoxGrid<Dim>::Index c) {
      for (long i = 0; i < grid_.nodes(0); ++i) {
        const std::size_t p = base + static_cast<std::size_t>(i);
        if (kind_[p] == Data) continue;
        c[0] = i;
        fn(p, offsets(c));
      }
    });
  }

  /// Visits the unknown nodes of one colour class; rows of equal colour never
  /// reference each other, so any visiting order within a colour is equivalent.
  template <typename Fn>
  void for_each_unknown_of_colour(int colour, Fn&& fn) const {
    const long n0 = grid_.nodes(0);
    const long lines = static_cast<long>(size() / static_cast<std::size_t>(n0));
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long l = 0; l < lines; ++l) {
      typename BoxGrid<Dim>::Index c{};
      long rest = l;
      for (int a = 1; a < Dim; ++a) {
        c[a] = rest % grid_.nodes(a);
        rest /= grid_.nodes(a);
      }
      const std::size_t base = grid_.index(c);
      long first;
      if (cross_) {
        int rest_colour = 0;
        for (int a = 1; a < Dim; ++a) rest_colour |= static_cast<int>(c[a] & 1) << a;
        if (rest_colour != (colour & ~1)) continue;
        first = colour & 1;
      } else {
        long par = 0;
        for (int a = 1; a < Dim; ++a) par += c[a];
        first = (colour + par) & 1;
      }
      Offsets nb;
      for (int a = 1; a < Dim; ++a) nb[a] = {grid_.offset(a, c[a], 0), grid_.offset(a, c[a], 1)};
      for (long i = first; i < n0; i += 2) {
        const std::size_t p = base + static_cast<std::size_t>(i);
        if (kind_[p] == Data) continue;
        nb[0] = {grid_.offset(0, i, 0), grid_.offset(0, i, 1)};
        fn(p, nb);
      }
    }
  }

  /// Default lower spectral estimate of -L from the grid topology alone.
  double default_lambda_hint() const {
    double lam = 0.0;
    for (int a = 0; a < Dim; ++a) {
      const double len = grid_.h() * static_cast<double>(grid_.nodes(a) - 1);
      if (grid_.periodic(a)) continue;
      const bool lo_m = grid_.lo(a) == Side::Mirror, hi_m = grid_.hi(a) == Side::Mirror;
      if (lo_m && hi_m) continue;
      const double eff = (lo_m || hi_m) ? 2.0 * len : len;
      const double k = std::numbers::pi / eff;
      lam += min_diag_coef_ * k * k;
    }
    if (lam == 0.0) {
      // singular periodic problem: use the first non-trivial mode
      double L = grid_.h() * static_cast<double>(grid_.nodes(0));
      lam = min_diag_coef_ * std::pow(2.0 * std::numbers::pi / L, 2);
    }
    return lam;
  }

 private:
  struct SpecialRow {
    std::array<double, 2 * Dim> w;
    double b;
    double diag;
  };

  static constexpr int cross_index(int a, int b) {
    int k = Dim;
    for (int i = 0; i < a; ++i) k += Dim - 1 - i;
    return k + (b - a - 1);
  }

  double cross_sum(const double* u, std::size_t p, const Offsets& nb) const {
    if (!cross_) return 0.0;
    const double* c = constant_ ? coef_.data() : &coef_[p * stride_];
    const double f = 0.5 / (grid_.h() * grid_.h());
    double s = 0.0;
    int k = Dim;
    for (int a = 0; a < Dim; ++a)
      for (int b = a + 1; b < Dim; ++b, ++k) {
        if (c[k] == 0.0) continue;
        s += c[k] * f *
             (u[p + nb[a][1] + nb[b][1]] + u[p + nb[a][0] + nb[b][0]] - u[p + nb[a][1] + nb[b][0]] -
              u[p + nb[a][0] + nb[b][1]]);
      }
    return s;
  }

  void check_size(const NodeField& u) const {
    if (u.size() != size()) throw InvalidArgument("node field does not match the operator grid");
  }

  BoxGrid<Dim> grid_;
  double eps_ = 1.0;
  bool constant_ = false, cross_ = false, dominance_ = true;
  int stride_ = Dim;
  double min_diag_coef_ = 1.0, max_diag_coef_ = 1.0;
  std::vector<double> coef_;
  std::vector<std::uint8_t> kind_;
  std::unordered_map<std::size_t, SpecialRow> special_;
};

template <int Dim>
StencilOperator<Dim> assemble(const CoefficientField<Dim>& field, const BoxGrid<Dim>& grid, double eps_scale = 1.0) {
  return StencilOperator<Dim>(field, grid, eps_scale);
}

namespace detail {

inline double sor_omega(double lambda, double dmax_coef_sum, double h) {
  // Jacobi spectral radius of a (2n+1)-point operator with smallest eigenvalue lambda
  const double D = 2.0 * dmax_coef_sum / (h * h);
  const double mu = std::clamp(1.0 - lambda / D, 0.0, 1.0 - 1e-14);
  return 2.0 / (1.0 + std::sqrt(1.0 - mu * mu));
}

/// Relaxation driver shared by the linear, periodic and complementarity solves.
/// `psi` may be null (no obstacle). `shift` is added to every right side.
template <int Dim>
SolveStats relax(const StencilOperator<Dim>& op, NodeField& u, const NodeField& f, const double* psi, double shift,
                 double threshold, bool lcp, const SolveOptions& opt, const char* what, const double* react = nullptr,
                 const double* null_left = nullptr) {
  SolveStats st;
  st.threshold = threshold;
  const double h = op.grid().h();
  const double lam = opt.lambda_hint > 0.0 ? opt.lambda_hint : op.default_lambda_hint();
  double omega = opt.omega > 0.0 ? opt.omega : sor_omega(lam, Dim * op.max_diag_coef(), h);
  omega = std::clamp(omega, 1.0, opt.omega_cap);
  const bool adapt = opt.omega <= 0.0;
  double* U = u.data();
  const double* F = f.data();

  // singular periodic systems: the component of the residual along the left null vector
  // cannot be relaxed away and is excluded from the test
  NodeField Rbuf;
  if (null_left) Rbuf.assign(u.size(), 0.0);
  auto residual = [&](long* active) {
    double r = 0.0;
    long act = 0;
    if (null_left) {
      double rm = 0.0, mm = 0.0;
      op.for_each_unknown([&](std::size_t p, const typename StencilOperator<Dim>::Offsets& nb) {
        double D;
        const double s = op.gather(U, p, nb, D);
        Rbuf[p] = s + F[p] + shift - D * U[p];
        rm += Rbuf[p] * null_left[p];
        mm += null_left[p] * null_left[p];
      });
      const double c = mm > 0.0 ? rm / mm : 0.0;
      op.for_each_unknown([&](std::size_t p, const typename StencilOperator<Dim>::Offsets&) {
        r = std::max(r, std::abs(Rbuf[p] - c * null_left[p]));
      });
      if (active) *active = 0;
      return r;
    }
    op.for_each_unknown([&](std::size_t p, const typename StencilOperator<Dim>::Offsets& nb) {
      double D;
      const double s = op.gather(U, p, nb, D);
      if (react) D += react[p];
      const double R = s + F[p] + shift - D * U[p];
      double v;
      if (lcp) {
        const double gap = U[p] - psi[p];
        if (gap <= 1e-14 * (1.0 + std::abs(psi[p]))) ++act;
        v = std::abs(std::min(-R / D, gap));
      } else {
        v = std::abs(R);
      }
      r = std::max(r, v);
    });
    if (active) *active = act;
    return r;
  };

  long act = 0;
  double r = residual(&act);
  double best = r, prev = r;
  int since_change = 0;
  if (opt.log) opt.log(0, r, act);
  long sweep = 0;
  const int colours = op.colours();
  while (r > threshold) {
    if (sweep >= opt.max_sweeps) {
      st.sweeps = sweep;
      st.residual = r;
      st.omega = omega;
      throw NonConvergence(what, r, sweep);
    }
    for (int k = 0; k < opt.check_every; ++k) {
      for (int col = 0; col < colours; ++col) {
        op.for_each_unknown_of_colour(col, [&](std::size_t p, const typename StencilOperator<Dim>::Offsets& nb) {
          double D;
          const double s = op.gather(U, p, nb, D);
          if (react) D += react[p];
          double v = U[p] + omega * ((s + F[p] + shift) / D - U[p]);
          if (psi && v < psi[p]) v = psi[p];
          U[p] = v;
        });
      }
      ++sweep;
    }
    r = residual(&act);
    if (!std::isfinite(r)) throw NonConvergence(std::string(what) + ": residual is not finite", r, sweep);
    if (opt.log) opt.log(sweep, r, act);
    ++since_change;
    if (r > 1e3 * best && omega > 1.0) {
      // diverging: back off towards Gauss-Seidel
      omega = 1.0 + 0.5 * (omega - 1.0);
      if (omega < 1.0 + 1e-3) omega = 1.0;
      since_change = 0;
    } else if (adapt && since_change >= 2 && omega < opt.omega_cap && prev > 0.0 && r > 0.0 && r < prev) {
      const double rho = std::pow(r / prev, 1.0 / opt.check_every);
      if (rho > 1.05 * (omega - 1.0)) {
        const double mu2 = std::pow(rho + omega - 1.0, 2) / (rho * omega * omega);
        if (mu2 < 1.0) {
          const double w = std::min(opt.omega_cap, 2.0 / (1.0 + std::sqrt(1.0 - mu2)));
          if (w > omega + 1e-4) {
            omega = w;
            since_change = 0;
          }
        }
      }
    }
    best = std::min(best, r);
    prev = r;
  }
  st.sweeps = sweep;
  st.residual = r;
  st.omega = omega;
  st.active_count = act;
  return st;
}

}  // namespace detail

/// Solves Lu + f = 0 at unknown nodes with u = g at data nodes.
template <int Dim>
NodeField solve_dirichlet(const StencilOperator<Dim>& op, const NodeField& f, const NodeField& g,
                          const SolveOptions& opt = {}, SolveStats* stats = nullptr) {
  if (f.size() != op.size() || g.size() != op.size()) throw InvalidArgument("solve_dirichlet: size mismatch");
  const double h = op.grid().h();
  double fmax = 0.0, gmax = 0.0;
  for (std::size_t p = 0; p < op.size(); ++p) {
    if (op.is_unknown(p)) fmax = std::max(fmax, std::abs(f[p]));
    else gmax = std::max(gmax, std::abs(g[p]));
  }
  NodeField u = g;
  if (opt.initial) {
    if (opt.initial->size() != op.size()) throw InvalidArgument("initial guess size mismatch");
    for (std::size_t p = 0; p < op.size(); ++p)
      if (op.is_unknown(p)) u[p] = (*opt.initial)[p];
  } else {
    for (std::size_t p = 0; p < op.size(); ++p)
      if (op.is_unknown(p)) u[p] = 0.0;
  }
  const double thr = opt.tol_rel * (fmax + gmax / (h * h));
  const auto st = detail::relax(op, u, f, nullptr, 0.0, thr, false, opt, "dirichlet solve");
  if (stats) *stats = st;
  return u;
}

/// Solves Lu - c u + f = 0 at unknown nodes (c >= 0 nodewise), u = g at data nodes.
template <int Dim>
NodeField solve_dirichlet_reaction(const StencilOperator<Dim>& op, const NodeField& c, const NodeField& f,
                                   const NodeField& g, const SolveOptions& opt = {}, SolveStats* stats = nullptr) {
  if (c.size() != op.size() || f.size() != op.size() || g.size() != op.size())
    throw InvalidArgument("solve_dirichlet_reaction: size mismatch");
  const double h = op.grid().h();
  double fmax = 0.0, gmax = 0.0;
  NodeField u = g;
  for (std::size_t p = 0; p < op.size(); ++p) {
    if (op.is_unknown(p)) {
      if (c[p] < 0.0) throw InvalidArgument("reaction coefficient must be nonnegative");
      fmax = std::max(fmax, std::abs(f[p]));
      u[p] = opt.initial ? (*opt.initial)[p] : 0.0;
    } else {
      gmax = std::max(gmax, std::abs(g[p]));
    }
  }
  const double thr = opt.tol_rel * (fmax + gmax / (h * h));
  const auto st = detail::relax(op, u, f, nullptr, 0.0, thr, false, opt, "reaction solve", c.data());
  if (stats) *stats = st;
  return u;
}

/// Unit-mass nonnegative null vector of L^T on a periodic grid without data nodes.
template <int Dim>
NodeField invariant_measure(const StencilOperator<Dim>& op, const SolveOptions& opt = {}, SolveStats* stats = nullptr) {
  const auto& g = op.grid();
  for (int a = 0; a < Dim; ++a)
    if (!g.periodic(a)) throw InvalidArgument("invariant measure needs a fully periodic grid");
  if (op.unknown_count() != op.size() || op.special_count() != 0)
    throw InvalidArgument("invariant measure needs an operator without data nodes");
  const std::size_t n = op.size();
  const double hn = std::pow(g.h(), Dim);
  NodeField m(n, 1.0);
  if (op.is_constant()) {
    for (double& v : m) v = 1.0 / (hn * static_cast<double>(n));
    if (stats) *stats = SolveStats{};
    return m;
  }
  const double ih2 = 1.0 / (g.h() * g.h());
  // gather form of the transpose: column p collects the weights rows q put on p
  auto tgather = [&](const double* M, std::size_t p, const typename StencilOperator<Dim>::Offsets& nb,
                     double& D) {
    double s = 0.0;
    for (int a = 0; a < Dim; ++a) {
      const std::size_t qm = p + nb[a][0], qp = p + nb[a][1];
      s += op.coef(qm, a, a) * M[qm] + op.coef(qp, a, a) * M[qp];
    }
    s *= ih2;
    if (op.has_cross()) {
      for (int a = 0; a < Dim; ++a)
        for (int b = a + 1; b < Dim; ++b) {
          const std::size_t q1 = p + nb[a][1] + nb[b][1], q2 = p + nb[a][0] + nb[b][0];
          const std::size_t q3 = p + nb[a][1] + nb[b][0], q4 = p + nb[a][0] + nb[b][1];
          s += 0.5 * ih2 *
               (op.coef(q1, a, b) * M[q1] + op.coef(q2, a, b) * M[q2] - op.coef(q3, a, b) * M[q3] -
                op.coef(q4, a, b) * M[q4]);
        }
    }
    D = op.diag(p);
    return s;
  };
  auto normalise = [&] {
    double s = 0.0;
    for (double v : m) s += v;
    for (double& v : m) v /= s * hn;
  };
  normalise();
  const double lam = opt.lambda_hint > 0.0 ? opt.lambda_hint : op.default_lambda_hint();
  double omega = opt.omega > 0.0 ? opt.omega : detail::sor_omega(lam, Dim * op.max_diag_coef(), g.h());
  omega = std::clamp(omega, 1.0, opt.omega_cap);
  double* M = m.data();
  auto residual = [&] {
    double r = 0.0, scale = 0.0;
    op.for_each_unknown([&](std::size_t p, const typename StencilOperator<Dim>::Offsets& nb) {
      double D;
      const double s = tgather(M, p, nb, D);
      r = std::max(r, std::abs(s - D * M[p]));
      scale = std::max(scale, D * std::abs(M[p]));
    });
    return r / scale;
  };
  double r = residual(), best = r;
  long sweep = 0;
  while (r > opt.tol_rel) {
    if (sweep >= opt.max_sweeps) throw NonConvergence("invariant measure", r, sweep);
    for (int k = 0; k < opt.check_every; ++k) {
      for (int col = 0; col < op.colours(); ++col)
        op.for_each_unknown_of_colour(col, [&](std::size_t p, const typename StencilOperator<Dim>::Offsets& nb) {
          double D;
          const double s = tgather(M, p, nb, D);
          M[p] += omega * (s / D - M[p]);
        });
      ++sweep;
    }
    normalise();
    r = residual();
    if (opt.log) opt.log(sweep, r, 0);
    if (!std::isfinite(r)) throw NonConvergence("invariant measure: residual is not finite", r, sweep);
    if (r > 1e3 * best && omega > 1.0) omega = std::max(1.0, 1.0 + 0.5 * (omega - 1.0));
    best = std::min(best, r);
  }
  for (double v : m)
    if (v < 0.0) throw ConsistencyError("invariant measure has a negative entry");
  if (stats) {
    stats->sweeps = sweep;
    stats->residual = r;
    stats->threshold = opt.tol_rel;
    stats->omega = omega;
  }
  return m;
}

enum class Normalization { MinZero, MeanZero };

template <int Dim>
struct PeriodicSolution {
  NodeField u;
  double kappa = 0.0;
  SolveStats stats;
};

/// Periodic problem a_ij D_ij u = kappa - f, kappa = <m, f>. A precomputed invariant
/// measure may be passed to avoid recomputing it.
template <int Dim>
PeriodicSolution<Dim> solve_periodic(const StencilOperator<Dim>& op, const NodeField& f,
                                     Normalization norm = Normalization::MinZero, const NodeField* measure = nullptr,
                                     const SolveOptions& opt = {}) {
  if (f.size() != op.size()) throw InvalidArgument("solve_periodic: size mismatch");
  NodeField owned;
  if (!measure) {
    // kappa inherits the measure error, and the singular system stalls at that level
    SolveOptions mo = opt;
    mo.tol_rel = std::max(opt.tol_rel * 1e-3, 1e-14);
    mo.log = nullptr;
    owned = invariant_measure(op, mo);
    measure = &owned;
  }
  const double hn = std::pow(op.grid().h(), Dim);
  PeriodicSolution<Dim> out;
  double kappa = 0.0;
  for (std::size_t p = 0; p < f.size(); ++p) kappa += (*measure)[p] * f[p];
  kappa *= hn;
  out.kappa = kappa;
  out.u.assign(op.size(), 0.0);
  if (opt.initial) out.u = *opt.initial;
  const double fmax = max_abs(f);
  // the compatible singular system is semi-convergent under SOR; the null
  // component is fixed afterwards by the normalization
  out.stats = detail::relax(op, out.u, f, nullptr, -kappa, opt.tol_rel * fmax, false, opt, "periodic solve", nullptr,
                            measure->data());
  // kappa + <m, R>/<m, 1> removes the inconsistency left by the measure error to first order
  {
    double rm = 0.0, m1 = 0.0;
    op.for_each_unknown([&](std::size_t p, const typename StencilOperator<Dim>::Offsets& nb) {
      double D;
      const double s = op.gather(out.u.data(), p, nb, D);
      rm += (*measure)[p] * (s + f[p] - kappa - D * out.u[p]);
      m1 += (*measure)[p];
    });
    out.kappa = kappa + rm / m1;
  }
  if (norm == Normalization::MinZero) {
    const double mn = *std::min_element(out.u.begin(), out.u.end());
    for (double& v : out.u) v -= mn;
  } else {
    double s = 0.0;
    for (double v : out.u) s += v;
    s /= static_cast<double>(out.u.size());
    for (double& v : out.u) v -= s;
  }
  return out;
}

/// Discrete complementarity problem min(-(Lu + f), u - psi) = 0 at unknowns, u = g at data
/// nodes, by projected over-relaxation.
template <int Dim>
NodeField solve_lcp(const StencilOperator<Dim>& op, const NodeField& psi, const NodeField& g, const SolveOptions& opt = {},
                    SolveStats* stats = nullptr, const NodeField* f = nullptr) {
  if (psi.size() != op.size() || g.size() != op.size()) throw InvalidArgument("solve_lcp: size mismatch");
  NodeField zero;
  if (!f) {
    zero.assign(op.size(), 0.0);
    f = &zero;
  }
  double scale = 1.0;
  for (std::size_t p = 0; p < op.size(); ++p) {
    if (op.is_unknown(p)) scale = std::max(scale, std::max(psi[p], 0.0));
    else scale = std::max(scale, std::abs(g[p]));
  }
  NodeField u = g;
  for (std::size_t p = 0; p < op.size(); ++p) {
    if (!op.is_unknown(p)) continue;
    const double start = opt.initial ? (*opt.initial)[p] : 0.0;
    u[p] = std::max(start, psi[p]);
  }
  const auto st = detail::relax(op, u, *f, psi.data(), 0.0, opt.tol_rel * scale, true, opt, "complementarity solve");
  if (stats) *stats = st;
  return u;
}

}  // namespace homog
