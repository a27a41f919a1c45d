#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>

#include <json.hpp>

#include "homog/core.hpp"

namespace homog {

using json = nlohmann::ordered_json;

/// 1-periodic symmetric matrix field a(y) with ellipticity bounds.
template <int Dim>
class CoefficientField {
 public:
  using Eval = std::function<Mat<Dim>(const Vec<Dim>&)>;

  struct Traits {
    bool constant = false;
    bool diagonal = false;
    bool scalar = false;  // a(y) = c(y) I
  };

  CoefficientField() = default;
  CoefficientField(Eval eval, double lambda, double Lambda, Traits traits, json descriptor,
                   std::string smoothness_note = "smooth")
      : eval_(std::move(eval)),
        lambda_(lambda),
        Lambda_(Lambda),
        traits_(traits),
        descriptor_(std::move(descriptor)),
        note_(std::move(smoothness_note)) {}

  Mat<Dim> operator()(const Vec<Dim>& y) const { return eval_(y); }
  double lambda() const { return lambda_; }
  double Lambda() const { return Lambda_; }
  bool is_constant() const { return traits_.constant; }
  bool is_diagonal() const { return traits_.diagonal; }
  bool is_scalar() const { return traits_.scalar; }
  const json& descriptor() const { return descriptor_; }
  const std::string& smoothness_note() const { return note_; }
  static constexpr int dim() { return Dim; }

 private:
  Eval eval_;
  double lambda_ = 1.0, Lambda_ = 1.0;
  Traits traits_;
  json descriptor_;
  std::string note_;
};

template <int Dim>
CoefficientField<Dim> make_constant_field(const Mat<Dim>& A) {
  double scale = 0.0;
  for (const auto& row : A)
    for (double v : row) scale = std::max(scale, std::abs(v));
  if (max_asymmetry<Dim>(A) > 1e-12 * std::max(scale, 1.0)) throw InvalidArgument("coefficient matrix is not symmetric");
  const Vec<Dim> ev = symmetric_eigenvalues<Dim>(A);
  if (!(ev[0] > 0.0)) throw InvalidArgument("coefficient matrix is not positive definite");
  json d;
  d["kind"] = "constant";
  json rows = json::array();
  for (const auto& row : A) rows.push_back(json(std::vector<double>(row.begin(), row.end())));
  d["matrix"] = rows;
  typename CoefficientField<Dim>::Traits t;
  t.constant = true;
  t.diagonal = is_diagonal<Dim>(A);
  t.scalar = t.diagonal;
  for (int i = 1; i < Dim && t.scalar; ++i) t.scalar = A[i][i] == A[0][0];
  return CoefficientField<Dim>([A](const Vec<Dim>&) { return A; }, ev[0], ev[Dim - 1], t, std::move(d));
}

/// Named periodic scalar profiles for separable fields c(y) I.
///   sine_product: base + amplitude * prod_i sin(2 pi y_i)
///   cosine_sum:   base + amplitude * (1/n) sum_i cos(2 pi y_i)
///   constant:     base
struct ScalarProfile {
  std::string name = "sine_product";
  double base = 2.0;
  double amplitude = 0.5;

  template <int Dim>
  double operator()(const Vec<Dim>& y) const {
    const double tau = 2.0 * std::numbers::pi;
    if (name == "constant") return base;
    if (name == "sine_product") {
      double p = 1.0;
      for (double v : y) p *= std::sin(tau * v);
      return base + amplitude * p;
    }
    if (name == "cosine_sum") {
      double s = 0.0;
      for (double v : y) s += std::cos(tau * v);
      return base + amplitude * s / Dim;
    }
    throw InvalidArgument("unknown scalar profile '" + name + "'");
  }
};

/// Minimum and maximum of a scalar function over the nodes of a k^n sample of Q_1.
template <int Dim, typename Fn>
std::pair<double, double> sample_extrema(Fn&& c, int k = 32) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::array<int, Dim> idx{};
  while (true) {
    Vec<Dim> y;
    for (int a = 0; a < Dim; ++a) y[a] = static_cast<double>(idx[a]) / k;
    const double v = c(y);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    int a = 0;
    for (; a < Dim; ++a) {
      if (++idx[a] < k) break;
      idx[a] = 0;
    }
    if (a == Dim) break;
  }
  return {lo, hi};
}

template <int Dim>
CoefficientField<Dim> make_separable_field(std::function<double(const Vec<Dim>&)> c, json descriptor,
                                           int sample = 32) {
  const auto [lo, hi] = sample_extrema<Dim>(c, sample);
  if (!(lo > 0.0)) throw InvalidArgument("separable coefficient is not strictly positive on the sample");
  typename CoefficientField<Dim>::Traits t;
  t.diagonal = true;
  t.scalar = true;
  t.constant = lo == hi;
  return CoefficientField<Dim>(
      [c = std::move(c)](const Vec<Dim>& y) { return scaled<Dim>(identity<Dim>(), c(y)); }, lo, hi, t,
      std::move(descriptor));
}

template <int Dim>
CoefficientField<Dim> make_separable_field(const ScalarProfile& p, int sample = 32) {
  json d;
  d["kind"] = "separable";
  d["profile"] = p.name;
  d["base"] = p.base;
  d["amplitude"] = p.amplitude;
  return make_separable_field<Dim>([p](const Vec<Dim>& y) { return p.template operator()<Dim>(y); }, std::move(d),
                                   sample);
}

/// Result of a sampling audit of a coefficient field.
struct EllipticityAudit {
  double lambda_hat = 0.0;
  double Lambda_hat = 0.0;
  double max_asymmetry = 0.0;
  double max_period_defect = 0.0;
};

/// Samples random points y, integer shifts k and unit vectors xi.
template <int Dim>
EllipticityAudit audit_field(const CoefficientField<Dim>& f, int samples = 100, unsigned seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  std::uniform_int_distribution<int> shift(-2, 2);
  std::normal_distribution<double> gauss;
  EllipticityAudit out;
  out.lambda_hat = std::numeric_limits<double>::infinity();
  out.Lambda_hat = -out.lambda_hat;
  for (int s = 0; s < samples; ++s) {
    Vec<Dim> y, yk, xi;
    for (int a = 0; a < Dim; ++a) {
      y[a] = unit(rng);
      yk[a] = y[a] + shift(rng);
      xi[a] = gauss(rng);
    }
    const double nx = norm<Dim>(xi);
    for (auto& v : xi) v /= nx;
    const Mat<Dim> A = f(y);
    out.max_asymmetry = std::max(out.max_asymmetry, max_asymmetry<Dim>(A));
    out.max_period_defect = std::max(out.max_period_defect, max_abs_diff<Dim>(A, f(yk)));
    const Vec<Dim> ev = symmetric_eigenvalues<Dim>(A);
    out.lambda_hat = std::min(out.lambda_hat, ev[0]);
    out.Lambda_hat = std::max(out.Lambda_hat, ev[Dim - 1]);
    double q = 0.0;
    for (int i = 0; i < Dim; ++i)
      for (int j = 0; j < Dim; ++j) q += xi[i] * A[i][j] * xi[j];
    out.lambda_hat = std::min(out.lambda_hat, q);
    out.Lambda_hat = std::max(out.Lambda_hat, q);
  }
  return out;
}

// ---------------------------------------------------------------------------
// obstacles

template <int Dim>
class ObstacleFunction {
 public:
  using Eval = std::function<double(const Vec<Dim>&)>;

  ObstacleFunction() = default;
  /// Certifies phi <= tol on sampled points of the boundary of [0, side]^n.
  ObstacleFunction(Eval eval, json descriptor, double side = 1.0, double tol = 1e-12)
      : eval_(std::move(eval)), descriptor_(std::move(descriptor)) {
    boundary_sign_ = certify(side, tol);
  }

  double operator()(const Vec<Dim>& x) const { return eval_(x); }
  bool boundary_sign() const { return boundary_sign_; }
  const json& descriptor() const { return descriptor_; }

 private:
  bool certify(double side, double tol) const {
    const int k = 24;
    std::array<int, Dim> idx{};
    while (true) {
      bool on_face = false;
      Vec<Dim> x;
      for (int a = 0; a < Dim; ++a) {
        x[a] = side * idx[a] / k;
        on_face = on_face || idx[a] == 0 || idx[a] == k;
      }
      if (on_face && eval_(x) > tol) return false;
      int a = 0;
      for (; a < Dim; ++a) {
        if (++idx[a] <= k) break;
        idx[a] = 0;
      }
      if (a == Dim) break;
    }
    return true;
  }

  Eval eval_;
  json descriptor_;
  bool boundary_sign_ = false;
};

/// Named obstacle families on [0, side]^n, centre c = side/2 unless given.
///   paraboloid: height * (1 - |x - c|^2 / rho^2)
///   plateau:    -low + (height + low) * S((rho - |x - c|) / width), S a smooth step
///   constant:   height
template <int Dim>
ObstacleFunction<Dim> make_obstacle(const json& spec, double side = 1.0) {
  const std::string family = spec.value("family", std::string("paraboloid"));
  const double height = spec.value("height", 1.0);
  const double rho = spec.value("rho", 0.4);
  Vec<Dim> c;
  c.fill(0.5 * side);
  if (spec.contains("center")) {
    const auto v = spec.at("center").get<std::vector<double>>();
    if (v.size() != static_cast<std::size_t>(Dim)) throw InvalidArgument("obstacle center has wrong dimension");
    std::copy(v.begin(), v.end(), c.begin());
  }
  json d = spec;
  d["family"] = family;
  if (family == "paraboloid") {
    if (!(rho > 0.0)) throw InvalidArgument("paraboloid radius must be positive");
    d["height"] = height;
    d["rho"] = rho;
    return ObstacleFunction<Dim>(
        [=](const Vec<Dim>& x) {
          double r2 = 0.0;
          for (int a = 0; a < Dim; ++a) r2 += (x[a] - c[a]) * (x[a] - c[a]);
          return height * (1.0 - r2 / (rho * rho));
        },
        d, side);
  }
  if (family == "plateau") {
    const double width = spec.value("width", 0.1);
    const double low = spec.value("low", 0.5);
    if (!(width > 0.0)) throw InvalidArgument("plateau width must be positive");
    return ObstacleFunction<Dim>(
        [=](const Vec<Dim>& x) {
          double r2 = 0.0;
          for (int a = 0; a < Dim; ++a) r2 += (x[a] - c[a]) * (x[a] - c[a]);
          const double t = std::clamp((rho - std::sqrt(r2)) / width, 0.0, 1.0);
          const double s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
          return -low + (height + low) * s;
        },
        d, side);
  }
  if (family == "constant") {
    return ObstacleFunction<Dim>([=](const Vec<Dim>&) { return height; }, d, side);
  }
  throw InvalidArgument("unknown obstacle family '" + family + "'");
}

}  // namespace homog
