#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace homog {

template <int Dim>
using Vec = std::array<double, Dim>;

template <int Dim>
using Mat = std::array<std::array<double, Dim>, Dim>;

/// Values attached to the nodes of a grid, in row-major (axis 0 fastest) order.
using NodeField = std::vector<double>;

// ---------------------------------------------------------------------------
// errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated precondition or malformed input.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A geometric feature (hole, source ball) is smaller than the grid can resolve.
class UnderResolved : public Error {
 public:
  UnderResolved(const std::string& what, long min_nodes)
      : Error(what + " (minimum admissible resolution: " + std::to_string(min_nodes) + ")"),
        min_nodes_(min_nodes) {}
  long min_nodes() const { return min_nodes_; }

 private:
  long min_nodes_;
};

/// An iterative solve exhausted its budget.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double residual, long sweeps)
      : Error(what + " (residual " + std::to_string(residual) + " after " +
              std::to_string(sweeps) + " sweeps)"),
        residual_(residual),
        sweeps_(sweeps) {}
  double residual() const { return residual_; }
  long sweeps() const { return sweeps_; }

 private:
  double residual_;
  long sweeps_;
};

/// Internal invariant broken (should be impossible for a correct discretization).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// small dense helpers

template <int Dim>
Mat<Dim> identity() {
  Mat<Dim> m{};
  for (int i = 0; i < Dim; ++i) m[i][i] = 1.0;
  return m;
}

template <int Dim>
Mat<Dim> scaled(const Mat<Dim>& a, double c) {
  Mat<Dim> m = a;
  for (auto& row : m)
    for (auto& v : row) v *= c;
  return m;
}

template <int Dim>
Mat<Dim> diagonal(const Vec<Dim>& d) {
  Mat<Dim> m{};
  for (int i = 0; i < Dim; ++i) m[i][i] = d[i];
  return m;
}

/// Frobenius inner product A:M = sum_ij A_ij M_ij.
template <int Dim>
double contract(const Mat<Dim>& a, const Mat<Dim>& m) {
  double s = 0.0;
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) s += a[i][j] * m[i][j];
  return s;
}

template <int Dim>
double max_asymmetry(const Mat<Dim>& a) {
  double s = 0.0;
  for (int i = 0; i < Dim; ++i)
    for (int j = i + 1; j < Dim; ++j) s = std::max(s, std::abs(a[i][j] - a[j][i]));
  return s;
}

template <int Dim>
bool is_diagonal(const Mat<Dim>& a) {
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j)
      if (i != j && a[i][j] != 0.0) return false;
  return true;
}

template <int Dim>
double max_abs_diff(const Mat<Dim>& a, const Mat<Dim>& b) {
  double s = 0.0;
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) s = std::max(s, std::abs(a[i][j] - b[i][j]));
  return s;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
template <int Dim>
Vec<Dim> symmetric_eigenvalues(Mat<Dim> a) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < Dim; ++p)
      for (int q = p + 1; q < Dim; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (int p = 0; p < Dim; ++p) {
      for (int q = p + 1; q < Dim; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < Dim; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < Dim; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  Vec<Dim> ev{};
  for (int i = 0; i < Dim; ++i) ev[i] = a[i][i];
  std::sort(ev.begin(), ev.end());
  return ev;
}

/// Determinant and inverse by Gauss-Jordan with partial pivoting.
template <int Dim>
double determinant(Mat<Dim> a) {
  double det = 1.0;
  for (int c = 0; c < Dim; ++c) {
    int piv = c;
    for (int r = c + 1; r < Dim; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    if (a[piv][c] == 0.0) return 0.0;
    if (piv != c) {
      std::swap(a[piv], a[c]);
      det = -det;
    }
    det *= a[c][c];
    for (int r = c + 1; r < Dim; ++r) {
      const double f = a[r][c] / a[c][c];
      for (int k = c; k < Dim; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return det;
}

template <int Dim>
Mat<Dim> inverse(Mat<Dim> a) {
  Mat<Dim> inv = identity<Dim>();
  for (int c = 0; c < Dim; ++c) {
    int piv = c;
    for (int r = c + 1; r < Dim; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    if (a[piv][c] == 0.0) throw InvalidArgument("singular matrix");
    std::swap(a[piv], a[c]);
    std::swap(inv[piv], inv[c]);
    const double d = a[c][c];
    for (int k = 0; k < Dim; ++k) {
      a[c][k] /= d;
      inv[c][k] /= d;
    }
    for (int r = 0; r < Dim; ++r) {
      if (r == c) continue;
      const double f = a[r][c];
      for (int k = 0; k < Dim; ++k) {
        a[r][k] -= f * a[c][k];
        inv[r][k] -= f * inv[c][k];
      }
    }
  }
  return inv;
}

template <int Dim>
double norm(const Vec<Dim>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Surface area of the unit sphere S^{n-1}.
inline double unit_sphere_area(int n) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n);
}

/// Volume of the unit ball in R^n.
inline double unit_ball_volume(int n) { return unit_sphere_area(n) / n; }

/// Capacity of the unit ball for the Laplacian, (n-2)|S^{n-1}|.
inline double laplacian_ball_capacity(int n) { return (n - 2) * unit_sphere_area(n); }

inline double max_abs_diff_fields(const NodeField& a, const NodeField& b) {
  if (a.size() != b.size()) throw InvalidArgument("node fields differ in size");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(const NodeField& f) {
  double m = 0.0;
  for (double v : f) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace homog
