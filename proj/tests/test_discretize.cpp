#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "eigen_oracle.hpp"

using namespace homog;

namespace {

using namespace homog::testing;

BoxGrid<3> dirichlet_box(long nodes, double lo = 0.0, double len = 1.0) {
  std::array<Side, 3> d;
  d.fill(Side::Dirichlet);
  Vec<3> o;
  o.fill(lo);
  return BoxGrid<3>({nodes, nodes, nodes}, len / static_cast<double>(nodes - 1), o, d, d);
}

BoxGrid<3> torus(long n) {
  std::array<Side, 3> p;
  p.fill(Side::Periodic);
  Vec<3> o;
  o.fill(-0.5);
  return BoxGrid<3>({n, n, n}, 1.0 / static_cast<double>(n), o, p, p);
}

Mat<3> cross_matrix() { return Mat<3>{{{2.0, 0.5, 0.0}, {0.5, 2.0, 0.3}, {0.0, 0.3, 1.5}}}; }

CoefficientField<3> oscillating_cross_field() {
  // c(y) B with B constant and non-diagonal
  const Mat<3> B = cross_matrix();
  ScalarProfile p;
  json d{{"kind", "test"}};
  typename CoefficientField<3>::Traits t;
  return CoefficientField<3>([B, p](const Vec<3>& y) { return scaled<3>(B, p.operator()<3>(y)); }, 1.0, 5.0, t, d);
}

}  // namespace

TEST(Discretize, StencilIsExactOnQuadratics) {
  const auto g = dirichlet_box(9);
  const Mat<3> A = cross_matrix();
  const Mat<3> B{{{1.0, -0.7, 0.2}, {-0.7, 0.3, 0.4}, {0.2, 0.4, -2.0}}};
  const auto op = assemble(make_constant_field<3>(A), g, 1.0);
  EXPECT_TRUE(op.has_cross());
  NodeField u(g.size());
  for (std::size_t p = 0; p < u.size(); ++p) {
    const Vec<3> x = g.position(p);
    double q = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) q += x[i] * B[i][j] * x[j];
    u[p] = q + 3.0 * x[0] - 1.0;
  }
  const double exact = 2.0 * contract<3>(A, B);
  const NodeField Lu = op.apply(u);
  for (std::size_t p = 0; p < u.size(); ++p)
    if (op.is_unknown(p)) EXPECT_NEAR(Lu[p], exact, 1e-10);
    else EXPECT_EQ(Lu[p], 0.0);
}

TEST(Discretize, DominanceFlag) {
  EXPECT_TRUE(assemble(make_constant_field<3>(cross_matrix()), dirichlet_box(5), 1.0).dominance());
  // positive definite, but row 1 has 1 < 0.9 + 0.3
  const Mat<3> A{{{2.0, 0.9, 0.0}, {0.9, 1.0, 0.3}, {0.0, 0.3, 1.0}}};
  EXPECT_FALSE(assemble(make_constant_field<3>(A), dirichlet_box(5), 1.0).dominance());
  EXPECT_EQ(assemble(make_constant_field<3>(A), dirichlet_box(5), 1.0).colours(), 8);
  EXPECT_EQ(assemble(make_constant_field<3>(identity<3>()), dirichlet_box(5), 1.0).colours(), 2);
}

TEST(Discretize, DirichletSolveMatchesSparseLU) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const auto g = dirichlet_box(13);
  ScalarProfile prof;
  for (const auto& field : {make_separable_field<3>(prof), oscillating_cross_field()}) {
    NodeField f(g.size()), bc(g.size());
    for (auto& v : f) v = U(rng);
    for (auto& v : bc) v = U(rng);
    const auto op = assemble(field, g, 0.5);
    SolveOptions o;
    o.tol_rel = 1e-13;
    const NodeField u = solve_dirichlet(op, f, bc, o);
    const NodeField ref = oracle_solve(assemble_oracle(field, g, 0.5, f, bc), bc);
    EXPECT_LE(max_abs_diff_fields(u, ref), 1e-10 * max_abs(ref));
  }
}

TEST(Discretize, ReactionSolveMatchesSparseLU) {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const auto g = dirichlet_box(11);
  const auto field = make_constant_field<3>(cross_matrix());
  NodeField c(g.size()), f(g.size()), bc(g.size(), 0.3);
  for (auto& v : c) v = 50.0 * U(rng);
  for (auto& v : f) v = U(rng) - 0.5;
  const auto op = assemble(field, g, 1.0);
  SolveOptions o;
  o.tol_rel = 1e-13;
  const NodeField u = solve_dirichlet_reaction(op, c, f, bc, o);
  const NodeField ref = oracle_solve(assemble_oracle(field, g, 1.0, f, bc, &c), bc);
  EXPECT_LE(max_abs_diff_fields(u, ref), 1e-10 * max_abs(ref));
  c[g.index({5, 5, 5})] = -1.0;
  EXPECT_THROW(solve_dirichlet_reaction(op, c, f, bc, o), InvalidArgument);
}

TEST(Discretize, NonConvergenceIsReported) {
  const auto g = dirichlet_box(17);
  const auto op = assemble(make_constant_field<3>(identity<3>()), g, 1.0);
  SolveOptions o;
  o.max_sweeps = 10;
  o.tol_rel = 1e-14;
  try {
    solve_dirichlet(op, NodeField(g.size(), 1.0), NodeField(g.size(), 0.0), o);
    FAIL() << "expected NonConvergence";
  } catch (const NonConvergence& e) {
    EXPECT_EQ(e.sweeps(), 10);
    EXPECT_GT(e.residual(), 0.0);
  }
}

// Exterior problem with exact solution 1/r: Shortley-Weller arms give second order.
TEST(Discretize, SphereHoleIsSecondOrder) {
  std::vector<double> err;
  for (long nodes : {17, 33}) {
    const auto g = dirichlet_box(nodes, -1.0, 2.0);
    auto op = assemble(make_constant_field<3>(identity<3>()), g, 1.0);
    const double R = 0.3;
    NodeField bc(g.size());
    for (std::size_t p = 0; p < g.size(); ++p) bc[p] = 1.0 / std::max(norm<3>(g.position(p)), R);
    const auto inside = op.add_sphere_holes(SphereLattice<3>{0.0, Vec<3>{}, R}, 1.0 / R);
    EXPECT_GT(op.special_count(), 0u);
    SolveOptions o;
    o.tol_rel = 1e-13;
    const NodeField u = solve_dirichlet(op, NodeField(g.size(), 0.0), bc, o);
    double e = 0.0;
    for (std::size_t p = 0; p < g.size(); ++p) {
      if (inside[p]) {
        EXPECT_EQ(u[p], 1.0 / R);
        continue;
      }
      e = std::max(e, std::abs(u[p] - 1.0 / norm<3>(g.position(p))));
    }
    err.push_back(e);
  }
  EXPECT_LT(err[1], 0.05);
  EXPECT_GT(err[0] / err[1], 2.5);
}

// Oracle: for a(y) = c(y) B the null vector of L^T is proportional to 1/c, exactly.
TEST(Discretize, InvariantMeasureOfScalarMultiple) {
  const auto g = torus(16);
  for (const auto& field : {make_separable_field<3>(ScalarProfile{}), oscillating_cross_field()}) {
    const auto op = assemble(field, g, 1.0);
    SolveOptions o;
    o.tol_rel = 1e-12;
    const NodeField m = invariant_measure(op, o);
    ScalarProfile prof;
    double mass = 0.0;
    for (std::size_t p = 0; p < m.size(); ++p) mass += 1.0 / prof.operator()<3>(g.position(p));
    const double hn = std::pow(g.h(), 3);
    for (std::size_t p = 0; p < m.size(); ++p) {
      const double want = 1.0 / prof.operator()<3>(g.position(p)) / (mass * hn);
      EXPECT_NEAR(m[p], want, 1e-8 * want);
    }
  }
}

// Oracle: dense null vector of L^T from Eigen for a field with variable cross terms.
TEST(Discretize, InvariantMeasureMatchesDenseKernel) {
  const auto g = torus(8);
  json d{{"kind", "test"}};
  typename CoefficientField<3>::Traits t;
  const CoefficientField<3> field(
      [](const Vec<3>& y) {
        Mat<3> A = identity<3>();
        A[0][0] = 2.0 + 0.5 * std::sin(2.0 * std::numbers::pi * y[1]);
        A[1][1] = 2.0 + 0.4 * std::cos(2.0 * std::numbers::pi * y[2]);
        A[2][2] = 1.5;
        A[0][1] = A[1][0] = 0.3 * std::cos(2.0 * std::numbers::pi * y[0]);
        return A;
      },
      1.0, 3.0, t, d);
  const auto op = assemble(field, g, 1.0);
  const long n = static_cast<long>(g.size());
  Eigen::MatrixXd L(n, n);
  for (long q = 0; q < n; ++q) {
    NodeField e(g.size(), 0.0);
    e[q] = 1.0;
    const NodeField col = op.apply(e);
    for (long p = 0; p < n; ++p) L(p, q) = col[p];
  }
  // the transposed action agrees with the dense transpose
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  NodeField v(g.size());
  for (auto& x : v) x = U(rng);
  const NodeField tv = op.apply_transpose(v);
  const Eigen::VectorXd ev = L.transpose() * Eigen::Map<const Eigen::VectorXd>(v.data(), n);
  for (long p = 0; p < n; ++p) EXPECT_NEAR(tv[p], ev(p), 1e-9 * ev.cwiseAbs().maxCoeff());

  Eigen::FullPivLU<Eigen::MatrixXd> lu(L.transpose());
  const Eigen::MatrixXd K = lu.kernel();
  ASSERT_EQ(K.cols(), 1);
  Eigen::VectorXd k = K.col(0);
  const double hn = std::pow(g.h(), 3);
  k /= k.sum() * hn;
  SolveOptions o;
  o.tol_rel = 1e-12;
  const NodeField m = invariant_measure(op, o);
  for (long p = 0; p < n; ++p) EXPECT_NEAR(m[p], k(p), 1e-8);
}

// Manufactured periodic solution: the discrete Laplacian has exact Fourier symbols.
TEST(Discretize, PeriodicSolveReproducesFourierModes) {
  const auto g = torus(24);
  const auto op = assemble(make_constant_field<3>(identity<3>()), g, 1.0);
  const double h = g.h(), tau = 2.0 * std::numbers::pi;
  const double s1 = 4.0 / (h * h) * std::pow(std::sin(0.5 * tau * h), 2);
  const double s2 = 4.0 / (h * h) * std::pow(std::sin(tau * h), 2);
  NodeField u(g.size()), f(g.size());
  for (std::size_t p = 0; p < u.size(); ++p) {
    const Vec<3> x = g.position(p);
    const double a = std::cos(tau * x[0]), b = std::sin(2.0 * tau * x[1]);
    u[p] = a + b;
    f[p] = s1 * a + s2 * b + 3.0;  // L u = kappa - f with kappa = 3
  }
  SolveOptions o;
  o.tol_rel = 1e-12;
  const auto sol = solve_periodic(op, f, Normalization::MeanZero, nullptr, o);
  EXPECT_NEAR(sol.kappa, 3.0, 1e-12);
  EXPECT_LE(max_abs_diff_fields(sol.u, u), 1e-8);
  const auto mz = solve_periodic(op, f, Normalization::MinZero, nullptr, o);
  EXPECT_EQ(*std::min_element(mz.u.begin(), mz.u.end()), 0.0);
}

// Property: the complementarity solution is feasible, supersolution and complementary.
TEST(Discretize, ComplementarityConditions) {
  const auto g = dirichlet_box(17);
  const auto op = assemble(make_separable_field<3>(ScalarProfile{}), g, 0.5);
  NodeField psi(g.size());
  for (std::size_t p = 0; p < g.size(); ++p) {
    const Vec<3> x = g.position(p);
    psi[p] = 1.0 - 8.0 * ((x[0] - 0.5) * (x[0] - 0.5) + (x[1] - 0.4) * (x[1] - 0.4) + (x[2] - 0.5) * (x[2] - 0.5));
  }
  SolveOptions o;
  o.tol_rel = 1e-12;
  SolveStats st;
  const NodeField u = solve_lcp(op, psi, NodeField(g.size(), 0.0), o, &st);
  EXPECT_GT(st.active_count, 0);
  const double scale = 2.0 * 3.0 / (g.h() * g.h());
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (!op.is_unknown(p)) {
      EXPECT_EQ(u[p], 0.0);
      continue;
    }
    const double mLu = -op.apply_at(u, p);
    EXPECT_GE(u[p] - psi[p], -1e-14);
    EXPECT_GE(mLu, -1e-9 * scale);
    EXPECT_LE(std::min(mLu / scale, u[p] - psi[p]), 1e-9);
  }
}

TEST(Discretize, SizeMismatchIsRejected) {
  const auto g = dirichlet_box(5);
  const auto op = assemble(make_constant_field<3>(identity<3>()), g, 1.0);
  EXPECT_THROW(solve_dirichlet(op, NodeField(3), NodeField(g.size())), InvalidArgument);
  EXPECT_THROW(solve_lcp(op, NodeField(3), NodeField(g.size())), InvalidArgument);
  EXPECT_THROW(invariant_measure(op), InvalidArgument);
  EXPECT_THROW(assemble(make_constant_field<3>(identity<3>()), g, 0.0), InvalidArgument);
}
