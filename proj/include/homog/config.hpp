#pragma once

#include <set>

#include "homog/harness.hpp"
#include "homog/io.hpp"

namespace homog {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Resolutions {
  std::vector<long> M;          // domain grid per eps
  long M_reference = 96;        // homogenized reference grid
  std::vector<long> N_cell{48};  // cell grid per eps (one entry = shared)
  long N_coarse = 0;            // refinement partner for the remark integrals
  double R_capacity = 16.0;
  long capacity_nodes_per_unit = 8;
};

struct GreenConfig {
  std::vector<double> x0{0.0, 0.0, 0.0};
  double sigma = 0.1;
  long N = 48;                  // nodes per unit length on B_1(x0)
  std::vector<double> radii{0.35, 0.4};
  std::vector<double> q{1.2, 1.8};
  std::vector<double> shrink{0.1, 0.05, 0.025};
  long M = 80;                  // grid of [0,1]^n for the gradient test
};

struct RemarkConfig {
  std::vector<double> delta{0.1};
  long N = 96;
  long N_coarse = 72;
  long N_psi = 0;               // grid of psi; 0 uses N
};

struct VerifyConfig {
  long oracle_M = 6;            // grid of the enumeration oracle
  int supersolutions = 20;
  long smoke_N = 16;            // cell grid of the smoke checks
};

struct ExperimentConfig {
  int n = 3;
  json field = json{{"kind", "constant"}, {"scalar", 1.0}};
  json phi = json{{"family", "paraboloid"}, {"height", 1.0}, {"rho", 0.4}};
  double alpha = 1.0;
  std::vector<double> eps_list{0.5, 0.25, 1.0 / 6.0};
  Resolutions res;
  double solve_tol = 1e-8;
  double cell_tol = 1e-10;
  std::optional<double> beta0;  // skips the extrapolation when given
  Thresholds thresholds;
  std::string output = "out";
  unsigned seed = 1;
  GreenConfig green;
  RemarkConfig remark;
  VerifyConfig verify;
  json raw;

  SolveOptions solve_options() const {
    SolveOptions o;
    o.tol_rel = solve_tol;
    return o;
  }
  CellOptions cell_options() const {
    CellOptions o;
    o.solve.tol_rel = cell_tol;
    return o;
  }
};

namespace detail {

template <typename T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

template <typename T>
void read_opt(const json& j, const std::string& key, T& dst, const std::string& where) {
  if (j.contains(key)) dst = get_as<T>(j, key, where);
}

inline void allow_keys(const json& j, const std::set<std::string>& keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!keys.count(it.key())) throw ConfigError("unknown key " + where + "." + it.key());
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using detail::allow_keys;
  using detail::read_opt;
  ExperimentConfig c;
  c.raw = j;
  allow_keys(j,
             {"n", "field", "phi", "alpha", "eps_list", "resolutions", "tolerances", "thresholds", "output",
              "seed", "beta0", "green", "remark", "verify"},
             "config");
  read_opt(j, "n", c.n, "config");
  if (c.n != 3) throw ConfigError("only n = 3 is compiled into this tool");
  if (j.contains("field")) c.field = j.at("field");
  if (!c.field.is_object() || !c.field.contains("kind")) throw ConfigError("config.field needs a kind");
  if (j.contains("phi")) c.phi = j.at("phi");
  if (!c.phi.is_object()) throw ConfigError("config.phi must be an object");
  read_opt(j, "alpha", c.alpha, "config");
  if (!(c.alpha > (c.n - 2.0) / c.n)) throw ConfigError("alpha must exceed (n-2)/n");
  read_opt(j, "eps_list", c.eps_list, "config");
  for (std::size_t i = 0; i < c.eps_list.size(); ++i) {
    const double e = c.eps_list[i];
    if (!(e > 0.0 && e < 1.0)) throw ConfigError("eps values must lie in (0,1)");
    if (std::abs(1.0 / e - std::round(1.0 / e)) > 1e-9) throw ConfigError("1/eps must be an integer");
    if (i && !(e < c.eps_list[i - 1])) throw ConfigError("eps_list must be strictly decreasing");
  }
  if (j.contains("resolutions")) {
    const auto& r = j.at("resolutions");
    allow_keys(r, {"M", "M_reference", "N_cell", "N_coarse", "R_capacity", "capacity_nodes_per_unit"},
               "resolutions");
    read_opt(r, "M", c.res.M, "resolutions");
    read_opt(r, "M_reference", c.res.M_reference, "resolutions");
    if (r.contains("N_cell")) {
      if (r.at("N_cell").is_array()) c.res.N_cell = detail::get_as<std::vector<long>>(r, "N_cell", "resolutions");
      else c.res.N_cell = {detail::get_as<long>(r, "N_cell", "resolutions")};
    }
    read_opt(r, "N_coarse", c.res.N_coarse, "resolutions");
    read_opt(r, "R_capacity", c.res.R_capacity, "resolutions");
    read_opt(r, "capacity_nodes_per_unit", c.res.capacity_nodes_per_unit, "resolutions");
  }
  if (!c.res.M.empty() && c.res.M.size() != c.eps_list.size())
    throw ConfigError("resolutions.M needs one entry per eps");
  if (c.res.N_cell.size() != 1 && c.res.N_cell.size() != c.eps_list.size())
    throw ConfigError("resolutions.N_cell needs one entry or one per eps");
  if (j.contains("tolerances")) {
    const auto& t = j.at("tolerances");
    allow_keys(t, {"solve", "cell"}, "tolerances");
    read_opt(t, "solve", c.solve_tol, "tolerances");
    read_opt(t, "cell", c.cell_tol, "tolerances");
    if (!(c.solve_tol > 0.0 && c.cell_tol > 0.0)) throw ConfigError("tolerances must be positive");
  }
  if (j.contains("thresholds")) {
    allow_keys(j.at("thresholds"),
               {"frozen_margin", "rate_target", "rate_tol", "envelope_ratio_max", "identity_tol", "capacity_tol",
                "i1_margin", "noncritical_slope_tol", "bound_tol"},
               "thresholds");
    try {
      c.thresholds = Thresholds::from_json(j.at("thresholds"));
    } catch (const json::exception&) {
      throw ConfigError("thresholds has a value of the wrong type");
    }
  }
  read_opt(j, "output", c.output, "config");
  read_opt(j, "seed", c.seed, "config");
  if (j.contains("beta0")) c.beta0 = detail::get_as<double>(j, "beta0", "config");
  if (j.contains("green")) {
    const auto& g = j.at("green");
    allow_keys(g, {"x0", "sigma", "N", "radii", "q", "shrink", "M"}, "green");
    read_opt(g, "x0", c.green.x0, "green");
    read_opt(g, "sigma", c.green.sigma, "green");
    read_opt(g, "N", c.green.N, "green");
    read_opt(g, "radii", c.green.radii, "green");
    read_opt(g, "q", c.green.q, "green");
    read_opt(g, "shrink", c.green.shrink, "green");
    read_opt(g, "M", c.green.M, "green");
    if (c.green.x0.size() != static_cast<std::size_t>(c.n)) throw ConfigError("green.x0 has the wrong dimension");
  }
  if (j.contains("remark")) {
    const auto& r = j.at("remark");
    allow_keys(r, {"delta", "N", "N_coarse", "N_psi"}, "remark");
    read_opt(r, "delta", c.remark.delta, "remark");
    read_opt(r, "N", c.remark.N, "remark");
    read_opt(r, "N_coarse", c.remark.N_coarse, "remark");
    read_opt(r, "N_psi", c.remark.N_psi, "remark");
  }
  if (j.contains("verify")) {
    const auto& v = j.at("verify");
    allow_keys(v, {"oracle_M", "supersolutions", "smoke_N"}, "verify");
    read_opt(v, "oracle_M", c.verify.oracle_M, "verify");
    read_opt(v, "supersolutions", c.verify.supersolutions, "verify");
    read_opt(v, "smoke_N", c.verify.smoke_N, "verify");
  }
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(j);
}

/// Coefficient field from its JSON descriptor:
///   {"kind": "constant", "matrix": [[...]]} or {"kind": "constant", "scalar": c}
///   {"kind": "separable", "profile": name, "base": b, "amplitude": a}
///   {"kind": "remark", "delta": d, "N": N}
template <int Dim>
CoefficientField<Dim> make_field(const json& spec) {
  const std::string kind = spec.value("kind", std::string());
  try {
    if (kind == "constant") {
      Mat<Dim> A = identity<Dim>();
      if (spec.contains("matrix")) {
        const auto rows = spec.at("matrix").get<std::vector<std::vector<double>>>();
        if (rows.size() != static_cast<std::size_t>(Dim)) throw ConfigError("field.matrix has the wrong shape");
        for (int i = 0; i < Dim; ++i) {
          if (rows[i].size() != static_cast<std::size_t>(Dim)) throw ConfigError("field.matrix has the wrong shape");
          for (int j = 0; j < Dim; ++j) A[i][j] = rows[i][j];
        }
      } else {
        A = scaled<Dim>(A, spec.value("scalar", 1.0));
      }
      return make_constant_field<Dim>(A);
    }
    if (kind == "separable") {
      ScalarProfile p;
      p.name = spec.value("profile", p.name);
      p.base = spec.value("base", p.base);
      p.amplitude = spec.value("amplitude", p.amplitude);
      if (p.name != "sine_product" && p.name != "cosine_sum" && p.name != "constant")
        throw ConfigError("unknown profile '" + p.name + "'");
      return make_separable_field<Dim>(p);
    }
    if (kind == "remark") {
      return build_remark_coefficient<Dim>(spec.value("delta", 0.1), spec.value("N", 64L)).field;
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field spec: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("field spec: ") + e.what());
  }
  throw ConfigError("unknown field kind '" + kind + "'");
}

template <int Dim>
ObstacleFunction<Dim> make_phi(const json& spec) {
  try {
    return make_obstacle<Dim>(spec);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("phi spec: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("phi spec: ") + e.what());
  }
}

}  // namespace homog
