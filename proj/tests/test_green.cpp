#include <gtest/gtest.h>

#include "homog/green.hpp"

using namespace homog;

// Oracle: for the Laplacian the Green's function of B_1 is (1/|x| - 1) / (4 pi) away from the source.
TEST(Green, LaplacianMatchesClosedForm) {
  const auto field = make_constant_field<3>(identity<3>());
  const auto probe = approx_green<3>(field, Vec<3>{0.0, 0.0, 0.0}, 0.1, 32);
  EXPECT_NEAR(probe.source_mass, 1.0, 1e-12);
  EXPECT_GE(probe.min_value, 0.0);
  const auto& g = probe.grid;
  double worst = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    const double r = norm<3>(g.position(p));
    if (r >= 1.0) {
      EXPECT_EQ(probe.G[p], 0.0);
      continue;
    }
    if (r < 0.2 || r > 0.6) continue;
    const double exact = (1.0 / r - 1.0) / (4.0 * std::numbers::pi);
    worst = std::max(worst, std::abs(probe.G[p] - exact) / exact);
  }
  // node-based ball boundary and the smeared source limit the accuracy at N = 32
  EXPECT_LT(worst, 0.05);
  // the bound ratio is the sup of G |x| on 3 sigma <= r <= 0.4: at most (1 - 0.3)/(4 pi) plus discretization
  EXPECT_NEAR(probe.bound_ratio, 0.7 / (4.0 * std::numbers::pi), 0.05 * 0.7 / (4.0 * std::numbers::pi));
}

// Oracle: for constant A the whole-space Green's function is (x^T A^{-1} x)^{-1/2} / (4 pi sqrt(det A)).
// In B_1 a smooth correction is subtracted; differences between two radii along an axis cancel
// most of it, so their ratio between the stiff and soft axes is close to sqrt(a_33 / a_11).
TEST(Green, AnisotropicRadialDifferencesMatchFundamentalSolution) {
  const auto field = make_constant_field<3>(diagonal<3>(Vec<3>{1.0, 1.0, 3.0}));
  const auto probe = approx_green<3>(field, Vec<3>{}, 0.08, 32);
  const auto& g = probe.grid;
  auto at = [&](int axis, long k) {
    typename BoxGrid<3>::Index c;
    c.fill(32);
    c[axis] += k;
    return probe.G[g.index(c)];
  };
  // nodes at r = 0.25 and r = 0.375
  const double dz = at(2, 8) - at(2, 12), dx = at(0, 8) - at(0, 12);
  EXPECT_GT(dx, 0.0);
  EXPECT_NEAR(dz / dx, std::sqrt(3.0), 0.1 * std::sqrt(3.0));
  // the band of G |x| on a sphere exceeds the whole-space value because of the correction
  const auto rows = almost_homogeneity_probe(probe, {0.35});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_GT(rows[0].nodes, 0);
  EXPECT_GT(rows[0].band, std::sqrt(3.0));
  const auto iso = almost_homogeneity_probe<3>(make_constant_field<3>(identity<3>()), Vec<3>{0.0, 0.0, 0.0}, {0.35},
                                               0.08, 32);
  EXPECT_LT(iso[0].band, 1.15);
}

TEST(Green, ResolutionGuards) {
  const auto field = make_constant_field<3>(identity<3>());
  try {
    approx_green<3>(field, Vec<3>{}, 0.05, 16);
    FAIL() << "expected UnderResolved";
  } catch (const UnderResolved& e) {
    EXPECT_EQ(e.min_nodes(), 40);
  }
  const auto probe = approx_green<3>(field, Vec<3>{}, 0.2, 12);
  EXPECT_THROW(almost_homogeneity_probe(probe, {0.5}), InvalidArgument);
  EXPECT_THROW(almost_homogeneity_probe(probe, {0.5 * 0.2}), InvalidArgument);
  EXPECT_THROW(l1_gradient_test(field, {1.5}, {0.01}, 40), UnderResolved);
}

// Oracle: ||grad u_r||_q for the Laplacian tends to the norm of the Green's gradient when q < n/(n-1)
// and grows like r^{(n - q(n-1))/q} when q > n/(n-1).
TEST(Green, GradientNormTrends) {
  const auto field = make_constant_field<3>(identity<3>());
  const auto rows = l1_gradient_test(field, {1.2, 1.8}, {0.2, 0.1, 0.05}, 64);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows)
    for (double v : r.norms) EXPECT_TRUE(std::isfinite(v) && v > 0.0);
  const double inc_low = (rows[2].norms[0] - rows[1].norms[0]) / (rows[1].norms[0] - rows[0].norms[0]);
  const double inc_high = (rows[2].norms[1] - rows[1].norms[1]) / (rows[1].norms[1] - rows[0].norms[1]);
  EXPECT_LT(inc_low, 1.0);   // bounded: increments shrink geometrically
  EXPECT_GT(inc_high, 1.0);  // unbounded: increments grow
  EXPECT_GT(rows[2].norms[1] / rows[0].norms[1], rows[2].norms[0] / rows[0].norms[0]);
}

TEST(Green, SymmetricAndFullGradientGridsAgree) {
  const auto sym = make_separable_field<3>(ScalarProfile{"cosine_sum", 2.0, 0.5});
  ASSERT_TRUE(reflection_symmetric(sym));
  // same values, but not flagged diagonal, so the full grid is used
  const CoefficientField<3> full([&sym](const Vec<3>& y) { return sym(y); }, sym.lambda(), sym.Lambda(), {},
                                 json{{"kind", "test"}});
  ASSERT_FALSE(reflection_symmetric(full));
  const auto a = l1_gradient_test(sym, {1.0, 1.5}, {0.2}, 32);
  const auto b = l1_gradient_test(full, {1.0, 1.5}, {0.2}, 32);
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(a[0].norms[k], b[0].norms[k], 1e-6 * b[0].norms[k]);
}
