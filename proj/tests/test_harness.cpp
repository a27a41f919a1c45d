#include <gtest/gtest.h>

#include "homog/harness.hpp"

using namespace homog;

TEST(Harness, FrozenCheckCalibratesOnTheCoarsestPoint) {
  const auto c = frozen_check("q", {0.5, 0.25, 0.125}, {1.0, 0.6, 0.5}, {1.0, 0.5, 0.25}, 2.0);
  EXPECT_DOUBLE_EQ(c.constant, 2.0);
  EXPECT_TRUE(c.pass);  // 0.5 <= 2 * 0.25
  const auto f = frozen_check("q", {0.5, 0.25, 0.125}, {1.0, 0.6, 0.51}, {1.0, 0.5, 0.25}, 2.0);
  EXPECT_FALSE(f.pass);
  EXPECT_TRUE(frozen_check("z", {0.5, 0.25}, {0.0, 0.0}, {1.0, 1.0}, 2.0).pass);
  EXPECT_THROW(frozen_check("q", {0.5}, {1.0, 2.0}, {1.0, 1.0}, 2.0), InvalidArgument);
  EXPECT_THROW(frozen_check("q", {}, {}, {}, 2.0), InvalidArgument);
  const json j = c.to_json();
  EXPECT_EQ(j["name"], "q");
  EXPECT_EQ(j["pass"], true);
}

TEST(Harness, LogLogFitIsExactOnPowerLaws) {
  const std::vector<double> x{0.5, 0.25, 0.125, 1.0 / 6.0};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 2.5));
  const auto f = loglog_fit(x, y);
  EXPECT_NEAR(f[0], 2.5, 1e-12);
  EXPECT_NEAR(f[1], std::log(3.0), 1e-12);
  EXPECT_NEAR(f[2], 0.0, 1e-12);
  EXPECT_THROW(loglog_fit({0.5, 0.25}, {1.0, 0.0}), InvalidArgument);
}

TEST(Harness, DiscreteGradientOfAffineFields) {
  const auto s = ScaleSet::make(3, 0.5);
  for (bool sym : {false, true}) {
    const auto dom = perforate<3>(16, s, 1.0, sym);
    EXPECT_EQ(verify_discrete_gradient(NodeField(dom.grid.size(), 0.7), dom), 0.0);
    // u = 2 x_1 - x_2: a step of eps along e_1 changes u by 2 eps
    NodeField u(dom.grid.size());
    for (std::size_t p = 0; p < u.size(); ++p) {
      const Vec<3> x = dom.grid.position(p);
      u[p] = 2.0 * x[0] - x[1];
    }
    if (!sym) {
      EXPECT_NEAR(verify_discrete_gradient(u, dom), 2.0, 1e-12);
    }
  }
  const auto dom = perforate<3>(16, s);
  EXPECT_THROW(verify_discrete_gradient(NodeField(3, 0.0), dom), InvalidArgument);
}

TEST(Harness, FlatnessOfConstantsIsZero) {
  const auto dom = perforate<3>(128, ScaleSet::make(3, 0.25));
  const auto fl = verify_flatness(NodeField(dom.grid.size(), 1.5), dom);
  EXPECT_FALSE(fl.osc.empty());
  EXPECT_EQ(fl.max_osc, 0.0);
  EXPECT_NEAR(fl.reference, 0.5, 1e-14);  // (a/eps)^{1/2} + eps with a = eps^3
}

TEST(Harness, ObstacleSymmetry) {
  EXPECT_TRUE(obstacle_symmetric(make_obstacle<3>(json{{"family", "paraboloid"}, {"height", 1.0}, {"rho", 0.3}})));
  const ObstacleFunction<3> tilted([](const Vec<3>& x) { return x[0]; }, json{{"family", "tilted"}});
  EXPECT_FALSE(obstacle_symmetric(tilted));
}

// With phi <= 0 every solution is 0, so every error vanishes and no rate is fitted.
TEST(Harness, ConvergenceWithNonpositiveObstacle) {
  ConvergenceInputs<3> in(make_constant_field<3>(identity<3>()),
                          make_obstacle<3>(json{{"family", "constant"}, {"height", -0.5}}));
  in.eps_list = {0.5, 1.0 / 3.0, 0.25};
  in.M_list = {16, 54, 128};
  in.N_cell = {16, 24, 32};
  in.M_reference = 32;
  const auto rep = run_convergence(in);
  ASSERT_TRUE(rep.complete) << rep.failure;
  ASSERT_EQ(rep.rows.size(), 3u);
  for (const auto& r : rep.rows) {
    EXPECT_EQ(r.sup_bar_error, 0.0);
    EXPECT_EQ(r.l1_error, 0.0);
    EXPECT_EQ(r.near_hole_l1, 0.0);
    EXPECT_GT(r.beta_eps, 0.0);
  }
  EXPECT_TRUE(std::isnan(rep.rate_slope));
  EXPECT_FALSE(rep.rate_pass);
  const json j = rep.to_json();
  EXPECT_EQ(j["rows"].size(), 3u);
  EXPECT_TRUE(j.contains("frozen_checks"));
  EXPECT_EQ(j["rate"]["quantity"], "near_hole_l1");
}

TEST(Harness, ConvergenceRejectsMismatchedLists) {
  ConvergenceInputs<3> in(make_constant_field<3>(identity<3>()),
                          make_obstacle<3>(json{{"family", "constant"}, {"height", -0.5}}));
  in.eps_list = {0.5, 0.25};
  in.M_list = {16};
  in.N_cell = {16};
  EXPECT_THROW(run_convergence(in), InvalidArgument);
}

// Control: with psi = 0 the field is 2 I, I1 and I2 vanish and the flux alone balances |Q \ B| beta.
TEST(Harness, FlatRemarkFieldBalancesByFluxAlone) {
  const auto rf = flat_remark_field<3>(32);
  CellOptions opt;
  opt.solve.tol_rel = 1e-10;
  const auto r = detail::remark_integrals(rf, 0.5, 32, opt);
  EXPECT_EQ(r.I1, 0.0);
  EXPECT_EQ(r.I2_volume, 0.0);
  EXPECT_EQ(r.I2_surface, 0.0);
  const double lhs = (1.0 - unit_ball_volume(3) * std::pow(r.abar, 3)) * r.beta;
  EXPECT_LE(std::abs(lhs - r.I3) / lhs, 0.10);
}

TEST(Harness, NoncriticalSweepGuards) {
  NoncriticalInputs<3> in(make_constant_field<3>(identity<3>()),
                          make_obstacle<3>(json{{"family", "paraboloid"}, {"height", 1.0}, {"rho", 0.3}}));
  in.alpha = 1.0;
  in.eps_list = {0.5, 0.25, 1.0 / 6.0};
  in.N_cell = {16};
  EXPECT_THROW(noncritical_sweep(in), InvalidArgument);
  in.alpha = 1.2;
  in.eps_list = {0.5, 0.25};
  EXPECT_THROW(noncritical_sweep(in), InvalidArgument);
}

// alpha > 1 without domain solves: beta_hat follows the eps-power law built into the scaling.
TEST(Harness, NoncriticalSweepSlopeStructure) {
  NoncriticalInputs<3> in(make_constant_field<3>(identity<3>()),
                          make_obstacle<3>(json{{"family", "paraboloid"}, {"height", 1.0}, {"rho", 0.3}}));
  in.alpha = 1.2;
  // hole radius eps^{2 alphabar}: 0.165, 0.092, 0.058 in cell units
  in.eps_list = {0.5, 0.4, 1.0 / 3.0};
  in.N_cell = {16, 24, 40};
  in.cell_opt.solve.tol_rel = 1e-10;
  const auto rep = noncritical_sweep(in);
  ASSERT_EQ(rep.rows.size(), 3u);
  for (const auto& r : rep.rows) {
    EXPECT_EQ(r.bound_violations, -1);
    EXPECT_NEAR(r.beta_hat, std::pow(r.eps, 2.0 * (rep.alphabar - 1.0)) * r.beta_prime, 1e-12 * r.beta_prime);
  }
  EXPECT_NEAR(rep.alphabar, 1.3, 1e-14);
  EXPECT_TRUE(std::isfinite(rep.slope));
  EXPECT_EQ(rep.to_json()["rows"].size(), 3u);
}
