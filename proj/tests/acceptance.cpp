// Acceptance gate: one PASS/FAIL line per criterion, report in <out>/acceptance.json.
// Exit 0 only when the failing set equals the pinned --expect-fail set.

#include <chrono>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "homog/app.hpp"
#include "homog/oracle.hpp"

using namespace homog;

namespace {

// pinned thresholds
constexpr double kTensorTol = 1e-10;
constexpr double kEllipticityTol = 1e-6;
constexpr double kKappaTol = 1e-8;
constexpr double kCapacityRel = 0.05;
constexpr double kScalingTol = 1e-6;
constexpr double kBeta0Rel = 0.10;
constexpr double kFrozenMargin = 2.0;
constexpr double kEnvelopeRatioMax = 20.0;
constexpr double kRateTarget = 3.0, kRateTol = 0.5;
constexpr double kOracleTol = 1e-7;
constexpr double kSupersolutionTol = 1e-8;
constexpr int kSupersolutions = 20;
constexpr std::size_t kMaxCandidates = 12;
constexpr double kQuarterLo = 3.2, kQuarterHi = 4.8;
constexpr double kSlopeTol = 0.3;
constexpr double kBoundRatioDrift = 0.25;  // |bound(sigma/2) / bound(sigma) - 1|

const double kPi = std::numbers::pi;
const double kFourPi = 4.0 * kPi;

struct Outcome {
  bool pass = false;
  std::string line;
  json detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

CellOptions cell_opt(double tol = 1e-10) {
  CellOptions o;
  o.solve.tol_rel = tol;
  return o;
}

SolveOptions solve_opt(double tol) {
  SolveOptions o;
  o.tol_rel = tol;
  return o;
}

Mat<3> random_symmetric(std::mt19937& rng) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Mat<3> M{};
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) M[i][j] = M[j][i] = U(rng);
  return M;
}

CoefficientField<3> separable() { return make_separable_field<3>(ScalarProfile{}); }

// Shared state: the identity sweep feeds several criteria.
struct Shared {
  std::optional<Beta0Estimate<3>> est;
  std::vector<CriticalValueResult<3>> cells;  // eps = 1/2, 1/4, 1/6 at N = 96
  std::optional<CapacityResult<3>> cap;
};

const std::vector<double> kSweep{0.5, 0.25, 1.0 / 6.0};
constexpr long kSweepN = 96;

void ensure_sweep(Shared& sh) {
  if (sh.est) return;
  sh.est = estimate_beta0(make_constant_field<3>(identity<3>()), kSweep, {kSweepN}, cell_opt(), &sh.cells);
}

void ensure_capacity(Shared& sh) {
  if (sh.cap) return;
  sh.cap = capacity_potential<3>(identity<3>(), 16.0, 8, solve_opt(1e-10));
}

Outcome ac1(Shared&) {
  Outcome o;
  double worst = 0.0;
  const Mat<3> cross{{{2.0, 0.5, 0.0}, {0.5, 2.0, 0.3}, {0.0, 0.3, 1.5}}};
  for (const auto& A : {identity<3>(), cross, diagonal<3>(Vec<3>{1.0, 2.0, 3.0})})
    worst = std::max(worst, max_abs_diff<3>(effective_tensor(make_constant_field<3>(A), 16, cell_opt(1e-12)).abar, A));
  const auto rf = build_remark_coefficient<3>(0.1, 48);
  double slack = -1e300;
  for (const auto& f : {rf.field, separable()}) {
    const auto a = audit_field(f, 400, 3);
    slack = std::max(slack, std::max(f.lambda() - a.lambda_hat, a.Lambda_hat - f.Lambda()));
  }
  o.pass = worst <= kTensorTol && slack <= kEllipticityTol;
  o.line = "abar error " + fmt(worst) + " (tol 1e-10), ellipticity slack " + fmt(slack) + " (tol 1e-6)";
  o.detail = {{"abar_error", worst}, {"ellipticity_slack", slack}};
  return o;
}

// kappa from three independent corrector solves per pair
Outcome ac2(Shared&) {
  Outcome o;
  std::mt19937 rng(2024);
  const auto field = separable();
  double worst = 0.0;
  for (int t = 0; t < 5; ++t) {
    const Mat<3> M1 = random_symmetric(rng), M2 = random_symmetric(rng);
    Mat<3> S{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) S[i][j] = M1[i][j] + M2[i][j];
    const double k1 = corrector_w1<3>(field, M1, 24, nullptr, cell_opt(1e-11)).kappa;
    const double k2 = corrector_w1<3>(field, M2, 24, nullptr, cell_opt(1e-11)).kappa;
    const double ks = corrector_w1<3>(field, S, 24, nullptr, cell_opt(1e-11)).kappa;
    worst = std::max(worst, std::abs(ks - k1 - k2));
  }
  o.pass = worst <= kKappaTol;
  o.line = "max |kappa(M1+M2) - kappa(M1) - kappa(M2)| = " + fmt(worst) + " over 5 pairs (tol 1e-8)";
  o.detail = {{"worst", worst}};
  return o;
}

Outcome ac3(Shared& sh) {
  Outcome o;
  ensure_capacity(sh);
  const double g = sh.cap->gamma0;
  const auto c2 = capacity_potential<3>(scaled<3>(identity<3>(), 2.5), 16.0, 8, solve_opt(1e-10));
  const double scal = std::abs(c2.gamma0 / (2.5 * g) - 1.0);
  const double rel = std::abs(g - kFourPi) / kFourPi;
  o.pass = rel <= kCapacityRel && scal <= kScalingTol;
  o.line = "gamma0 = " + fmt(g) + " vs 4 pi (rel " + fmt(rel) + ", tol 0.05); scaling error " + fmt(scal) +
           " (tol 1e-6)";
  o.detail = {{"gamma0", g}, {"rel_error", rel}, {"scaling_error", scal}, {"flux_spread", sh.cap->flux_spread}};
  return o;
}

Outcome ac4(Shared& sh) {
  Outcome o;
  ensure_sweep(sh);
  ensure_capacity(sh);
  const double b0 = sh.est->beta0, g = sh.cap->gamma0;
  const double gap = std::abs(b0 - g);
  const double allowed = sh.est->tolerance + sh.cap->flux_spread * g;
  const double rel = std::abs(b0 - kFourPi) / kFourPi;
  o.pass = gap <= allowed && rel <= kBeta0Rel;
  o.line = "beta0 = " + fmt(b0) + ", gamma0 = " + fmt(g) + ", gap " + fmt(gap) + " <= " + fmt(allowed) +
           "; beta0 vs 4 pi rel " + fmt(rel) + " (tol 0.10)";
  json rows = json::array();
  for (const auto& r : sh.est->rows) rows.push_back({{"eps", r.eps}, {"N", r.N}, {"beta", r.beta}});
  o.detail = {{"beta0", b0}, {"gamma0", g}, {"gap", gap}, {"allowed", allowed}, {"rel_to_4pi", rel}, {"rows", rows}};
  return o;
}

Outcome ac5(Shared& sh) {
  Outcome o;
  ensure_sweep(sh);
  std::vector<double> eps, beta, one;
  bool positive = true;
  for (const auto& r : sh.est->rows) {
    eps.push_back(r.eps);
    beta.push_back(r.beta);
    one.push_back(1.0);
    positive = positive && r.beta > 0.0;
  }
  const auto fc = frozen_check("beta_bound", eps, beta, one, kFrozenMargin);
  o.pass = positive && fc.pass && sh.est->cauchy_decreasing;
  std::string c;
  for (double v : sh.est->cauchy) c += fmt(v) + " ";
  o.line = "beta > 0: " + std::string(positive ? "yes" : "no") + ", frozen bound " + fmt(fc.constant) +
           (fc.pass ? " holds" : " broken") + ", Cauchy differences " + c +
           (sh.est->cauchy_decreasing ? "decreasing" : "not decreasing");
  o.detail = {{"frozen", fc.to_json()}, {"cauchy", sh.est->cauchy}, {"cauchy_decreasing", sh.est->cauchy_decreasing}};
  return o;
}

Outcome ac6(Shared& sh) {
  Outcome o;
  ensure_sweep(sh);
  std::vector<double> eps, outer, one;
  double worst_ratio = 0.0, min_w = 1e300;
  for (const auto& c : sh.cells) {
    eps.push_back(c.eps);
    outer.push_back(c.outer_max);
    one.push_back(1.0);
    worst_ratio = std::max(worst_ratio, c.envelope_c2 / c.envelope_c1);
    min_w = std::min(min_w, *std::min_element(c.W.values.begin(), c.W.values.end()));
  }
  const auto fc = frozen_check("outer_bound", eps, outer, one, kFrozenMargin);
  o.pass = worst_ratio <= kEnvelopeRatioMax && min_w >= 0.0 && fc.pass;
  o.line = "envelope ratio max " + fmt(worst_ratio) + " (<= 20), min W " + fmt(min_w) + ", outer frozen bound " +
           (fc.pass ? "holds" : "broken");
  o.detail = {{"envelope_ratio_max", worst_ratio}, {"min_W", min_w}, {"frozen", fc.to_json()}};
  return o;
}

// eps = 1/3 replaces 1/2: at 1/2 the intermediate balls leave only the cell corners.
Outcome ac7(Shared& sh) {
  Outcome o;
  ensure_sweep(sh);
  const auto field = make_constant_field<3>(identity<3>());
  const std::vector<double> eps{1.0 / 3.0, 0.25, 1.0 / 6.0};
  const std::vector<long> M{54, 128, 432};
  std::vector<double> decay;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const auto cell = i == 0 ? critical_value(field, eps[0], kSweepN, cell_opt()) : sh.cells[i];
    const auto dom = perforate<3>(M[i], ScaleSet::make(3, eps[i]), 1.0, true);
    decay.push_back(corrector_decay(cell, dom));
  }
  const auto fc = frozen_check("corrector_decay", eps, decay, eps, kFrozenMargin);
  o.pass = fc.pass;
  o.line = "max w over away region " + fmt(decay[0]) + ", " + fmt(decay[1]) + ", " + fmt(decay[2]) + "; C = " +
           fmt(fc.constant) + (fc.pass ? " holds" : " broken");
  o.detail = fc.to_json();
  return o;
}

Outcome ac8(Shared& sh) {
  Outcome o;
  ensure_sweep(sh);
  ConvergenceInputs<3> in(make_constant_field<3>(identity<3>()),
                          make_obstacle<3>(json{{"family", "paraboloid"}, {"height", 1.0}, {"rho", 0.4}}));
  in.eps_list = kSweep;
  in.M_list = {64, 128, 432};
  in.N_cell = {kSweepN};
  in.M_reference = 192;
  in.abar = identity<3>();
  in.beta0 = sh.est->beta0;
  in.cells = &sh.cells;
  in.solve = solve_opt(1e-8);
  in.thresholds.rate_target = kRateTarget;
  in.thresholds.rate_tol = kRateTol;
  const auto rep = run_convergence(in);
  o.pass = rep.complete && rep.rate_pass && rep.sup_decreasing;
  std::string sup;
  for (const auto& r : rep.rows) sup += fmt(r.sup_bar_error) + " ";
  o.line = "L1 slope " + fmt(rep.rate_slope) + " (target 3 +- 0.5), sup errors " + sup +
           (rep.sup_decreasing ? "decreasing" : "not decreasing") + (rep.complete ? "" : ", failed: " + rep.failure);
  o.detail = rep.to_json();
  return o;
}

Outcome ac9(Shared&) {
  Outcome o;
  const auto field = separable();
  const auto dom = perforate<3>(16, ScaleSet::make(3, 0.5));
  const auto phi = make_obstacle<3>(json{{"family", "paraboloid"}, {"height", 1.0}, {"rho", 0.08}});
  const EpsProblemSpec<3> spec{field, phi, dom};
  const NodeField psi = spec.obstacle_eps();
  const auto tight = solve_opt(1e-12);
  const NodeField u = solve_eps_problem(spec, tight);
  const auto op = assemble(field, dom.grid, 0.5);
  const NodeField zero(psi.size(), 0.0);
  const auto orc = lcp_enumeration(op, psi, zero, nullptr, kMaxCandidates);
  const double d = max_abs_diff_fields(u, orc.u);
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> B(0.0, 0.5);
  std::uniform_int_distribution<std::size_t> P(0, psi.size() - 1);
  double worst = 0.0;
  for (int t = 0; t < kSupersolutions; ++t) {
    NodeField big = psi;
    for (int k = 0; k < 40; ++k) {
      const std::size_t p = P(rng);
      if (op.is_unknown(p)) big[p] += B(rng);
    }
    const NodeField v = solve_lcp(op, big, zero, tight);
    for (std::size_t p = 0; p < u.size(); ++p) worst = std::max(worst, u[p] - v[p]);
  }
  o.pass = orc.candidates.size() <= kMaxCandidates && orc.feasible_sets == 1 && d <= kOracleTol && worst <= kSupersolutionTol;
  o.line = std::to_string(orc.candidates.size()) + " candidates, " + std::to_string(orc.feasible_sets) +
           " feasible set, oracle gap " + fmt(d) + " (tol 1e-7), supersolution violation " + fmt(worst) + " (tol 1e-8)";
  o.detail = {{"candidates", orc.candidates.size()}, {"feasible_sets", orc.feasible_sets}, {"oracle_gap", d},
              {"supersolution_violation", worst}};
  return o;
}

// u* = prod sin(pi x_i), phi = u* - d with d sign-changing, F chosen so u* solves the equation.
Outcome ac10(Shared&) {
  Outcome o;
  const Mat<3> abar = diagonal<3>(Vec<3>{1.0, 1.5, 2.0});
  const double beta0 = kFourPi;
  auto ustar = [](const Vec<3>& x) { return std::sin(kPi * x[0]) * std::sin(kPi * x[1]) * std::sin(kPi * x[2]); };
  auto d = [](const Vec<3>& x) { return 0.3 * std::cos(2.0 * kPi * x[0]); };
  const ObstacleFunction<3> phi([&](const Vec<3>& x) { return ustar(x) - d(x); }, json{{"family", "manufactured"}});
  std::vector<double> err;
  for (long M : {16, 32, 64}) {
    HomogenizedSpec<3> hs;
    hs.abar = abar;
    hs.beta0 = beta0;
    hs.phi = phi;
    hs.grid = unit_box<3>(M);
    const NodeField F = sample<3>(hs.grid, [&](const Vec<3>& x) {
      return 4.5 * kPi * kPi * ustar(x) - beta0 * std::max(-d(x), 0.0);
    });
    hs.forcing = &F;
    const NodeField u = solve_homogenized(hs, solve_opt(1e-11));
    double e = 0.0;
    for (std::size_t p = 0; p < u.size(); ++p) e = std::max(e, std::abs(u[p] - ustar(hs.grid.position(p))));
    err.push_back(e);
  }
  const double r1 = err[0] / err[1], r2 = err[1] / err[2];
  HomogenizedSpec<3> z;
  z.beta0 = beta0;
  z.grid = unit_box<3>(32);
  z.phi = make_obstacle<3>(json{{"family", "constant"}, {"height", -0.5}});
  const double zmax = max_abs(solve_homogenized(z, solve_opt(1e-11)));
  o.pass = r1 >= kQuarterLo && r1 <= kQuarterHi && r2 >= kQuarterLo && r2 <= kQuarterHi && zmax == 0.0;
  o.line = "errors " + fmt(err[0]) + ", " + fmt(err[1]) + ", " + fmt(err[2]) + "; ratios " + fmt(r1) + ", " +
           fmt(r2) + " (in [3.2, 4.8]); phi <= 0 gives max |u| = " + fmt(zmax);
  o.detail = {{"errors", err}, {"ratios", {r1, r2}}, {"nonpositive_max", zmax}};
  return o;
}

Outcome ac11(Shared&) {
  Outcome o;
  Thresholds th;
  const auto rep = remark_experiment({0.1}, kSweep, 96, 72, 0, th, cell_opt());
  o.pass = rep.pass;
  const auto& s = rep.summary[0];
  const auto& last = rep.rows.back();
  o.line = "I1 " + fmt(last.I1) + " (delta " + fmt(last.I1_delta) + "), I2 " + fmt(last.I2_surface) + ", I3 " +
           fmt(last.I3) + " vs gamma0 " + fmt(s["gamma0"].get<double>()) + ", checks i1/i2/i3/identity " +
           (s["I1_positive_with_margin"].get<bool>() ? "y" : "n") + (s["I2_vanishing"].get<bool>() ? "y" : "n") +
           (s["I3_near_gamma0"].get<bool>() ? "y" : "n") + (s["identity_balanced"].get<bool>() ? "y" : "n");
  o.detail = rep.to_json();
  return o;
}

Outcome ac12(Shared&) {
  Outcome o;
  const auto field = make_constant_field<3>(identity<3>());
  const auto phi = make_obstacle<3>(json{{"family", "paraboloid"}, {"height", 1.0}, {"rho", 0.4}});
  NoncriticalInputs<3> hi(field, phi);
  hi.alpha = 1.2;
  hi.eps_list = {0.25, 0.2, 1.0 / 6.0};
  hi.N_cell = {80, 132, 212};
  hi.cell_opt = cell_opt();
  hi.cell_opt.octant = true;
  hi.thresholds.noncritical_slope_tol = kSlopeTol;
  const auto rh = noncritical_sweep(hi);
  NoncriticalInputs<3> lo(field, phi);
  lo.alpha = 0.8;
  // eps = 1/2 puts a single hole of radius 0.19 on the apex of phi; calibration starts at 1/4
  lo.eps_list = {0.25, 1.0 / 6.0, 0.125};
  lo.N_cell = {48, 48, 48};
  lo.M_list = {64, 150, 304};
  lo.cell_opt = cell_opt();
  lo.solve = solve_opt(1e-8);
  lo.thresholds.frozen_margin = kFrozenMargin;
  const auto rl = noncritical_sweep(lo);
  o.pass = rh.pass && rl.pass;
  long viol = 0;
  for (const auto& r : rl.rows) viol += r.bound_violations;
  o.line = "alpha 1.2 slope " + fmt(rh.slope) + " (target 0.6 +- 0.3); alpha 0.8 bound violations " +
           std::to_string(viol) + ", obstacle gap " + (rl.obstacle_gap && rl.obstacle_gap->pass ? "holds" : "broken");
  o.detail = {{"alpha_1.2", rh.to_json()}, {"alpha_0.8", rl.to_json()}};
  return o;
}

Outcome ac13(Shared&) {
  Outcome o;
  const auto field = separable();
  const Vec<3> x0{0.5, 0.5, 0.5};
  const auto p1 = approx_green<3>(field, x0, 0.1, 48, solve_opt(1e-10));
  const auto p2 = approx_green<3>(field, x0, 0.05, 48, solve_opt(1e-10));
  const bool nonneg = p1.min_value >= 0.0 && p2.min_value >= 0.0;
  const double change = p2.bound_ratio / p1.bound_ratio;
  const bool stable = std::isfinite(change) && std::abs(change - 1.0) <= kBoundRatioDrift;
  const auto rows = l1_gradient_test(field, {1.2, 1.8}, {0.1, 0.05, 0.025}, 80, solve_opt(1e-10));
  auto inc_ratio = [&](int k) {
    return (rows[2].norms[k] - rows[1].norms[k]) / (rows[1].norms[k] - rows[0].norms[k]);
  };
  const double lo = inc_ratio(0), hi = inc_ratio(1);
  // bounded: increments shrink (ratio < 1); divergent: positive increments that grow (ratio > 1)
  const bool trend = lo < 1.0 && hi > 1.0 && rows[2].norms[1] > rows[1].norms[1];
  o.pass = nonneg && stable && trend;
  o.line = "G >= 0: " + std::string(nonneg ? "yes" : "no") + ", bound ratio change " + fmt(change) +
           " (within 0.25), increment ratios q=1.2: " + fmt(lo) + " (< 1), q=1.8: " + fmt(hi) + " (> 1)";
  o.detail = {{"bound_ratio", {p1.bound_ratio, p2.bound_ratio}}, {"change", change}, {"increment_ratio_q1.2", lo},
              {"increment_ratio_q1.8", hi}};
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome ac14(Shared&, const fs::path& out) {
  Outcome o;
  const fs::path dir = out / "determinism";
  fs::create_directories(dir);
  const fs::path cfg = dir / "config.json";
  write_json(cfg, json{{"n", 3},
                       {"field", {{"kind", "separable"}, {"profile", "sine_product"}}},
                       {"phi", {{"family", "paraboloid"}, {"height", 1.0}, {"rho", 0.4}}},
                       {"seed", 7}});
  int rc[2];
  for (int k = 0; k < 2; ++k) {
    const std::string o_dir = (dir / (k ? "b" : "a")).string(), c = cfg.string();
    const char* argv[] = {"homog", "--config", c.c_str(), "--out", o_dir.c_str(), "--threads", "1", "--quiet", "verify"};
    rc[k] = app::run(9, argv);
  }
  bool same = rc[0] == 0 && rc[1] == 0;
  std::size_t bytes = 0;
  for (const char* f : {"summary.json", "tables/verify.csv"}) {
    const std::string a = slurp(dir / "a" / f), b = slurp(dir / "b" / f);
    same = same && !a.empty() && a == b;
    bytes += a.size();
  }
  o.pass = same;
  o.line = "two verify runs: exit " + std::to_string(rc[0]) + "/" + std::to_string(rc[1]) + ", " +
           std::to_string(bytes) + " bytes " + (same ? "identical" : "differ");
  o.detail = {{"exit_codes", {rc[0], rc[1]}}, {"identical", same}};
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"acceptance gate"};
  std::string out = "acceptance_out";
  std::vector<int> only, expect_fail;
  cli.add_option("--out", out, "report directory");
  cli.add_option("--only", only, "run only these criteria");
  cli.add_option("--expect-fail", expect_fail, "criteria known to fail; exit 0 only if exactly these fail");
  CLI11_PARSE(cli, argc, argv);
  fs::create_directories(out);

  Shared sh;
  json report = json::object();
  std::set<int> failed;
  for (int k = 1; k <= 14; ++k) {
    if (!only.empty() && std::find(only.begin(), only.end(), k) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      switch (k) {
        case 1: o = ac1(sh); break;
        case 2: o = ac2(sh); break;
        case 3: o = ac3(sh); break;
        case 4: o = ac4(sh); break;
        case 5: o = ac5(sh); break;
        case 6: o = ac6(sh); break;
        case 7: o = ac7(sh); break;
        case 8: o = ac8(sh); break;
        case 9: o = ac9(sh); break;
        case 10: o = ac10(sh); break;
        case 11: o = ac11(sh); break;
        case 12: o = ac12(sh); break;
        case 13: o = ac13(sh); break;
        default: o = ac14(sh, out); break;
      }
    } catch (const std::exception& e) {
      o.pass = false;
      o.line = std::string("error: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) failed.insert(k);
    std::cout << "AC" << k << (k < 10 ? "  " : " ") << (o.pass ? "PASS" : "FAIL") << "  " << o.line << "  ["
              << fmt(secs) << " s]" << std::endl;
    report["AC" + std::to_string(k)] = {{"pass", o.pass}, {"summary", o.line}, {"seconds", secs}, {"detail", o.detail}};
  }
  const std::set<int> expected(expect_fail.begin(), expect_fail.end());
  std::set<int> expected_run;
  for (int k : expected)
    if (only.empty() || std::find(only.begin(), only.end(), k) != only.end()) expected_run.insert(k);
  report["expected_failures"] = std::vector<int>(expected_run.begin(), expected_run.end());
  report["failures"] = std::vector<int>(failed.begin(), failed.end());
  write_json(fs::path(out) / "acceptance.json", report);
  std::cout << failed.size() << " failing criteria";
  if (!expected_run.empty()) std::cout << " (" << expected_run.size() << " expected)";
  std::cout << std::endl;
  return failed == expected_run ? 0 : 1;
}
