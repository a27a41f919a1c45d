#pragma once

#include "homog/discretize.hpp"

namespace homog {

/// Dense solve by Gaussian elimination with partial pivoting; false if singular.
inline bool dense_solve(std::vector<double> A, std::vector<double> b, std::size_t n, std::vector<double>& x) {
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(A[i * n + k]) > std::abs(A[piv * n + k])) piv = i;
    if (std::abs(A[piv * n + k]) < 1e-300) return false;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(A[k * n + j], A[piv * n + j]);
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double m = A[i * n + k] / A[k * n + k];
      for (std::size_t j = k; j < n; ++j) A[i * n + j] -= m * A[k * n + j];
      b[i] -= m * b[k];
    }
  }
  x.assign(n, 0.0);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= A[k * n + j] * x[j];
    x[k] = s / A[k * n + k];
  }
  return true;
}

struct EnumerationResult {
  NodeField u;
  std::vector<std::size_t> candidates;
  std::vector<std::uint8_t> active;  // per candidate
  int feasible_sets = 0;
};

/// Exhaustive active-set enumeration for min(-Lu - f, u - psi) = 0 when psi <= base solution
/// everywhere except at a handful of candidate nodes. Every subset S of the candidates is
/// tried: u = psi on S, -Lu = f off S, and S is accepted when -Lu - f >= 0 on S and u >= psi off S.
template <int Dim>
EnumerationResult lcp_enumeration(const StencilOperator<Dim>& op, const NodeField& psi, const NodeField& g,
                                  const NodeField* f = nullptr, std::size_t max_candidates = 12,
                                  double tol = 1e-10) {
  const std::size_t n = op.grid().size();
  SolveOptions so;
  so.tol_rel = 1e-13;
  const NodeField zero(n, 0.0);
  const NodeField u0 = solve_dirichlet(op, f ? *f : zero, g, so);
  EnumerationResult out;
  for (std::size_t p = 0; p < n; ++p)
    if (op.is_unknown(p) && psi[p] > u0[p]) out.candidates.push_back(p);
  const std::size_t k = out.candidates.size();
  if (k > max_candidates) throw InvalidArgument("too many obstacle candidates for enumeration");
  std::vector<NodeField> cols;
  for (std::size_t s : out.candidates) {
    NodeField e(n, 0.0);
    e[s] = 1.0;
    cols.push_back(solve_dirichlet(op, e, zero, so));  // -L G_s = delta_s
  }
  bool found = false;
  for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
    std::vector<std::size_t> S;
    for (std::size_t i = 0; i < k; ++i)
      if (mask >> i & 1) S.push_back(i);
    std::vector<double> c;
    if (!S.empty()) {
      std::vector<double> A(S.size() * S.size()), b(S.size());
      for (std::size_t i = 0; i < S.size(); ++i) {
        const std::size_t pi = out.candidates[S[i]];
        b[i] = psi[pi] - u0[pi];
        for (std::size_t j = 0; j < S.size(); ++j) A[i * S.size() + j] = cols[S[j]][pi];
      }
      if (!dense_solve(A, b, S.size(), c)) continue;
    }
    bool ok = true;
    for (double v : c)
      if (v < -tol) ok = false;
    if (!ok) continue;
    NodeField u = u0;
    for (std::size_t j = 0; j < S.size(); ++j)
      for (std::size_t p = 0; p < n; ++p) u[p] += c[j] * cols[S[j]][p];
    for (std::size_t i = 0; i < k && ok; ++i)
      if (!(mask >> i & 1) && u[out.candidates[i]] < psi[out.candidates[i]] - tol) ok = false;
    if (!ok) continue;
    ++out.feasible_sets;
    if (!found) {
      found = true;
      out.u = std::move(u);
      out.active.assign(k, 0);
      for (std::size_t i : S) out.active[i] = 1;
    }
  }
  if (!found) throw ConsistencyError("no active set satisfies the complementarity conditions");
  return out;
}

}  // namespace homog
