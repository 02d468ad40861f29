// Sectioned key-value configuration: parsing with line-precise errors,
// shipped presets, and the canonical re-serialization used for the run
// manifest hash. Model functions are selected from the preset registry by
// name plus numeric parameters; no expressions are parsed.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pomfg/benes.hpp"
#include "pomfg/control.hpp"
#include "pomfg/errors.hpp"
#include "pomfg/scenario.hpp"

namespace pomfg::config {

// ---- raw sectioned key-value text ------------------------------------------------

struct RawConfig {
  // section -> key -> (value, line number)
  std::map<std::string, std::map<std::string, std::pair<std::string, int>>> sections;

  bool has(const std::string& sec, const std::string& key) const {
    const auto s = sections.find(sec);
    return s != sections.end() && s->second.count(key) > 0;
  }

  std::string canonical() const {
    std::ostringstream out;
    for (const auto& [sec, kvs] : sections) {
      out << '[' << sec << "]\n";
      for (const auto& [k, v] : kvs) out << k << " = " << v.first << '\n';
    }
    return out.str();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace detail

inline RawConfig parse_raw(const std::string& text) {
  RawConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      section = detail::trim(t.substr(1, t.size() - 2));
      if (section.empty())
        throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
      cfg.sections[section];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key outside any [section]");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string val = detail::trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    cfg.sections[section][key] = {val, lineno};
  }
  return cfg;
}

// FNV-1a over the canonical serialization; stable across reordering and
// whitespace changes of the source text.
inline std::uint64_t config_hash(const RawConfig& cfg) {
  const std::string c = cfg.canonical();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : c) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---- typed reader with unknown-key detection ---------------------------------------

class Reader {
 public:
  explicit Reader(const RawConfig& cfg) : cfg_(cfg) {}

  double number(const std::string& sec, const std::string& key, double fallback) {
    mark(sec, key);
    if (!cfg_.has(sec, key)) return fallback;
    return to_number(sec, key);
  }

  std::uint64_t integer(const std::string& sec, const std::string& key,
                        std::uint64_t fallback) {
    const double v = number(sec, key, static_cast<double>(fallback));
    return static_cast<std::uint64_t>(v);
  }

  std::string text(const std::string& sec, const std::string& key,
                   const std::string& fallback) {
    mark(sec, key);
    if (!cfg_.has(sec, key)) return fallback;
    return cfg_.sections.at(sec).at(key).first;
  }

  bool flag(const std::string& sec, const std::string& key, bool fallback) {
    const std::string v = text(sec, key, fallback ? "true" : "false");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(where(sec, key) + ": expected a boolean, got '" + v + "'");
  }

  std::vector<int> int_list(const std::string& sec, const std::string& key,
                            std::vector<int> fallback) {
    mark(sec, key);
    if (!cfg_.has(sec, key)) return fallback;
    std::vector<int> out;
    std::stringstream ss(cfg_.sections.at(sec).at(key).first);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        out.push_back(std::stoi(detail::trim(cell)));
      } catch (const std::exception&) {
        throw ConfigError(where(sec, key) + ": expected a comma-separated integer list");
      }
    }
    if (out.empty()) throw ConfigError(where(sec, key) + ": empty list");
    return out;
  }

  std::vector<double> number_list(const std::string& sec, const std::string& key,
                                  std::vector<double> fallback) {
    mark(sec, key);
    if (!cfg_.has(sec, key)) return fallback;
    std::vector<double> out;
    std::stringstream ss(cfg_.sections.at(sec).at(key).first);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        out.push_back(std::stod(detail::trim(cell)));
      } catch (const std::exception&) {
        throw ConfigError(where(sec, key) + ": expected a comma-separated number list");
      }
    }
    if (out.empty()) throw ConfigError(where(sec, key) + ": empty list");
    return out;
  }

  // Every key must have been touched by one of the readers above.
  void reject_unknown() const {
    for (const auto& [sec, kvs] : cfg_.sections) {
      for (const auto& [key, val] : kvs) {
        if (!seen_.count(sec + "/" + key))
          throw ConfigError("line " + std::to_string(val.second) + ": unknown key '" + key +
                            "' in [" + sec + "]");
      }
    }
  }

 private:
  void mark(const std::string& sec, const std::string& key) { seen_.insert(sec + "/" + key); }

  std::string where(const std::string& sec, const std::string& key) const {
    const auto& entry = cfg_.sections.at(sec).at(key);
    return "line " + std::to_string(entry.second) + " ([" + sec + "] " + key + ")";
  }

  double to_number(const std::string& sec, const std::string& key) const {
    const auto& entry = cfg_.sections.at(sec).at(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(entry.first, &used);
      if (used != entry.first.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where(sec, key) + ": expected a number, got '" + entry.first + "'");
    }
  }

  const RawConfig& cfg_;
  std::set<std::string> seen_;
};

// ---- experiment description ----------------------------------------------------------

enum class Lane { kScalar, kBenes };

struct Experiment {
  Lane lane = Lane::kScalar;
  std::string preset = "driftless";
  Scenario scenario;                 // scalar lane
  benes::BenesModel benes_model;     // benes lane
  control::HjbGrids grids;
  benes::FilterStepMode mode = benes::FilterStepMode::kInnovation;
  ScalarPolicy scalar_policy = ScalarPolicy::zero();

  // experiment knobs
  double mfg_tol = 1e-3;
  int mfg_max_iter = 10;
  int mfg_paths = 2048;
  double mfg_damping = 1.0;
  std::vector<int> rate_N{8, 16, 32, 64, 128, 256, 512};
  int rate_replications = 8;
  int nash_replications = 16;
  std::vector<int> nash_N{32, 512};
  std::vector<double> nash_alphas{0.5, 1.0, 1.5};
  std::vector<double> nash_betas{-0.2, -0.1, 0.0, 0.1, 0.2};
  int snapshots = 8;
  bool flow_snapshots = false;
  int mc_paths = 512;
  std::string kernel_csv;  // optional separated-control gradient kernel
  std::string distances_flow_a;
  std::string distances_flow_b;

  std::uint64_t config_hash_value = 0;
};

// ---- presets ---------------------------------------------------------------------------

inline const std::map<std::string, std::string>& preset_registry() {
  static const std::map<std::string, std::string> presets{
      {"driftless",
       "[scenario]\n"
       "preset = driftless\n"
       "T = 1.0\n"
       "sigma = 1.0\n"
       "drift = zero\n"
       "obs = zero\n"
       "cost = zero\n"
       "u_min = -1\n"
       "u_max = 1\n"
       "init_mean = 0\n"
       "init_var = 0.25\n"
       "[filter]\n"
       "grid_lo = -10\n"
       "grid_hi = 10\n"
       "grid_nodes = 400\n"},
      {"linear-gaussian",
       "[scenario]\n"
       "preset = linear-gaussian\n"
       "T = 1.0\n"
       "sigma = 1.0\n"
       "drift = linear\n"
       "drift_a = -1.0\n"
       "obs = linear\n"
       "obs_c = 1.0\n"
       "cost = zero\n"
       "u_min = -1\n"
       "u_max = 1\n"
       "init_mean = 0.5\n"
       "init_var = 0.25\n"
       "[filter]\n"
       "grid_lo = -10\n"
       "grid_hi = 10\n"
       "grid_nodes = 400\n"
       "particles = 5000\n"},
      {"mean-reversion-coupled",
       "[scenario]\n"
       "preset = mean-reversion-coupled\n"
       "T = 1.0\n"
       "dt = 2e-3\n"
       "sigma = 1.0\n"
       "drift = mean_reversion\n"
       "drift_gamma = 0.5\n"
       "obs = linear\n"
       "obs_c = 1.0\n"
       "cost = quadratic_target\n"
       "cost_q = 1.0\n"
       "cost_c = 0.0\n"
       "lambda_u = 1.0\n"
       "u_min = -1\n"
       "u_max = 1\n"
       "init_mean = 0\n"
       "init_var = 0.25\n"
       "[filter]\n"
       "grid_lo = -8\n"
       "grid_hi = 8\n"
       "grid_nodes = 200\n"
       "filter = grid\n"
       "[policy]\n"
       "kind = mean_feedback\n"
       "kp = 0.5\n"
       "target = 0\n"},
      {"benes-quadratic",
       "[benes]\n"
       "preset = benes-quadratic\n"
       "T = 1.0\n"
       "dt = 5e-3\n"
       "G11 = 0.5\n"
       "G22 = 0.3\n"
       "H1 = 1\n"
       "H2 = 0\n"
       "Nobs = 1\n"
       "Delta = 0\n"
       "varsigma = 1\n"
       "eta = 2.5\n"
       "Q = 0\n"
       "m = 0\n"
       "delta = 0\n"
       "xi1 = 1.0\n"
       "xi2 = 0.0\n"
       "P0_11 = 0.04\n"
       "P0_22 = 0.04\n"
       "u_min = -2\n"
       "u_max = 2\n"
       "z1_lo = -2\n"
       "z1_hi = 4\n"
       "coupling = 0.1\n"
       "track_q = 1.0\n"
       "track_c = 0.5\n"
       "lambda_u = 0.5\n"
       "[hjb]\n"
       "r1_nodes = 41\n"
       "r2_lo = -3\n"
       "r2_hi = 3\n"
       "r2_nodes = 301\n"
       "a_nodes = 41\n"},
  };
  return presets;
}

inline std::string preset_text(const std::string& name) {
  const auto& reg = preset_registry();
  const auto it = reg.find(name);
  if (it == reg.end()) {
    std::string names;
    for (const auto& [k, v] : reg) names += (names.empty() ? "" : ", ") + k;
    throw ConfigError("unknown preset '" + name + "' (available: " + names + ")");
  }
  return it->second;
}

// Overlay: keys present in `over` replace keys in `base`.
inline RawConfig merge(RawConfig base, const RawConfig& over) {
  for (const auto& [sec, kvs] : over.sections)
    for (const auto& [k, v] : kvs) base.sections[sec][k] = v;
  return base;
}

// ---- typed parse -------------------------------------------------------------------------

inline Experiment parse_config(const RawConfig& raw) {
  Reader r(raw);
  Experiment exp;
  exp.config_hash_value = config_hash(raw);

  const bool has_benes = raw.sections.count("benes") > 0;
  const bool has_scenario = raw.sections.count("scenario") > 0;
  if (has_benes && has_scenario)
    throw ConfigError("config must describe one lane: [scenario] or [benes], not both");
  exp.lane = has_benes ? Lane::kBenes : Lane::kScalar;

  if (exp.lane == Lane::kScalar) {
    Scenario& s = exp.scenario;
    exp.preset = r.text("scenario", "preset", "custom");
    s.T = r.number("scenario", "T", 1.0);
    s.dt = r.number("scenario", "dt", 1e-3);
    s.sigma = r.number("scenario", "sigma", 1.0);
    const std::string drift = r.text("scenario", "drift", "zero");
    if (drift == "zero") s.drift.kind = DriftSpec::Kind::kZero;
    else if (drift == "linear") s.drift.kind = DriftSpec::Kind::kLinear;
    else if (drift == "mean_reversion") s.drift.kind = DriftSpec::Kind::kMeanReversion;
    else if (drift == "identity_coupling") s.drift.kind = DriftSpec::Kind::kIdentityCoupling;
    else if (drift == "sin_coupling") s.drift.kind = DriftSpec::Kind::kSinCoupling;
    else if (drift == "benes_rational") s.drift.kind = DriftSpec::Kind::kBenesRational;
    else throw ConfigError("unknown drift preset '" + drift + "'");
    s.drift.a = r.number("scenario", "drift_a", 0.0);
    s.drift.gamma = r.number("scenario", "drift_gamma", 0.0);
    s.drift.g11 = r.number("scenario", "drift_g11", 1.0);
    s.drift.delta_coef = r.number("scenario", "drift_delta", 0.0);
    s.drift.varsigma = r.number("scenario", "drift_varsigma", 0.0);
    s.drift.eta = r.number("scenario", "drift_eta", 1.0);

    const std::string obs = r.text("scenario", "obs", "zero");
    if (obs == "zero") s.obs.kind = ObsSpec::Kind::kZero;
    else if (obs == "linear") s.obs.kind = ObsSpec::Kind::kLinear;
    else if (obs == "tanh") s.obs.kind = ObsSpec::Kind::kTanh;
    else throw ConfigError("unknown obs preset '" + obs + "'");
    s.obs.c = r.number("scenario", "obs_c", 1.0);

    const std::string cost = r.text("scenario", "cost", "zero");
    if (cost == "zero") s.cost.kind = CostForm::Kind::kZero;
    else if (cost == "constant") s.cost.kind = CostForm::Kind::kConstant;
    else if (cost == "quadratic_target") s.cost.kind = CostForm::Kind::kQuadraticTarget;
    else if (cost == "quadratic_coupling") s.cost.kind = CostForm::Kind::kQuadraticCoupling;
    else throw ConfigError("unknown cost preset '" + cost + "'");
    s.cost.c0 = r.number("scenario", "cost_c0", 1.0);
    s.cost.q = r.number("scenario", "cost_q", 1.0);
    s.cost.target = r.number("scenario", "cost_c", 0.0);
    s.cost.gamma_c = r.number("scenario", "cost_gamma", 0.0);
    s.cost.lambda_u = r.number("scenario", "lambda_u", 0.0);

    s.u_min = r.number("scenario", "u_min", -1.0);
    s.u_max = r.number("scenario", "u_max", 1.0);
    const double mean = r.number("scenario", "init_mean", 0.0);
    s.init.mean_lo = r.number("scenario", "init_mean_lo", mean);
    s.init.mean_hi = r.number("scenario", "init_mean_hi", mean);
    s.init.var = r.number("scenario", "init_var", 0.25);
    s.seed = r.integer("scenario", "seed", 1);

    s.grid.x_lo = r.number("filter", "grid_lo", -10.0);
    s.grid.x_hi = r.number("filter", "grid_hi", 10.0);
    s.grid.nodes = static_cast<int>(r.number("filter", "grid_nodes", 400));
    s.particles = static_cast<int>(r.number("filter", "particles", 2000));
    s.resample_threshold = r.number("filter", "resample_threshold", 0.5);
    s.k_norm = static_cast<int>(r.number("filter", "k", 2));
    const std::string fm = r.text("filter", "filter", "grid");
    if (fm == "none") s.filter_mode = FilterMode::kNone;
    else if (fm == "grid") s.filter_mode = FilterMode::kGrid;
    else if (fm == "particle") s.filter_mode = FilterMode::kParticle;
    else throw ConfigError("unknown filter kind '" + fm + "'");
    const std::string mode = r.text("filter", "mode", "innovation");
    if (mode == "innovation") exp.mode = benes::FilterStepMode::kInnovation;
    else if (mode == "literal") exp.mode = benes::FilterStepMode::kLiteral;
    else throw ConfigError("filter mode must be 'innovation' or 'literal'");

    const std::string pk = r.text("policy", "kind", "zero");
    if (pk == "zero") exp.scalar_policy = ScalarPolicy::zero();
    else if (pk == "constant")
      exp.scalar_policy = ScalarPolicy::constant(r.number("policy", "value", 0.0));
    else if (pk == "mean_feedback")
      exp.scalar_policy = ScalarPolicy::mean_feedback(r.number("policy", "kp", 0.5),
                                                      r.number("policy", "target", 0.0));
    else throw ConfigError("unknown policy kind '" + pk + "'");

    s.validate();
  } else {
    benes::BenesModel& b = exp.benes_model;
    exp.preset = r.text("benes", "preset", "custom");
    b.T = r.number("benes", "T", 1.0);
    b.dt = r.number("benes", "dt", 5e-3);
    b.G11 = benes::constant_path(r.number("benes", "G11", 0.5));
    b.G22 = benes::constant_path(r.number("benes", "G22", 0.3));
    b.H1 = benes::constant_path(r.number("benes", "H1", 1.0));
    b.H2 = benes::constant_path(r.number("benes", "H2", 0.0));
    const double nobs = r.number("benes", "Nobs", 1.0);
    if (!(nobs > 0.0))
      throw ConfigError("observation covariance N must be positive definite");
    b.Nobs = benes::constant_path(nobs);
    b.Q = benes::constant_path(r.number("benes", "Q", 0.0));
    b.m = benes::constant_path(r.number("benes", "m", 0.0));
    b.delta = benes::constant_path(r.number("benes", "delta", 0.0));
    b.Delta = benes::constant_path(r.number("benes", "Delta", 0.0));
    b.varsigma = benes::constant_path(r.number("benes", "varsigma", 1.0));
    b.eta = benes::constant_path(r.number("benes", "eta", 2.5));
    b.xi = {r.number("benes", "xi1", 1.0), r.number("benes", "xi2", 0.0)};
    b.P0 = benes::Mat2::diag(r.number("benes", "P0_11", 0.04),
                             r.number("benes", "P0_22", 0.04));
    b.u_min = r.number("benes", "u_min", -2.0);
    b.u_max = r.number("benes", "u_max", 2.0);
    b.z1_lo = r.number("benes", "z1_lo", -2.0);
    b.z1_hi = r.number("benes", "z1_hi", 4.0);
    b.cost.coupling = r.number("benes", "coupling", 0.1);
    b.cost.track_q = r.number("benes", "track_q", 1.0);
    b.cost.track_c = r.number("benes", "track_c", 0.5);
    b.cost.lambda_u = r.number("benes", "lambda_u", 0.5);
    b.seed = r.integer("benes", "seed", 1);

    const std::string mode = r.text("benes", "mode", "innovation");
    if (mode == "innovation") exp.mode = benes::FilterStepMode::kInnovation;
    else if (mode == "literal") exp.mode = benes::FilterStepMode::kLiteral;
    else throw ConfigError("benes mode must be 'innovation' or 'literal'");

    b.validate();
    exp.grids = control::HjbGrids::defaults_for(b, exp.mode);
    exp.grids.r1_lo = r.number("hjb", "r1_lo", exp.grids.r1_lo);
    exp.grids.r1_hi = r.number("hjb", "r1_hi", exp.grids.r1_hi);
    exp.grids.r1_nodes = static_cast<int>(r.number("hjb", "r1_nodes", 41));
    exp.grids.r2_lo = r.number("hjb", "r2_lo", exp.grids.r2_lo);
    exp.grids.r2_hi = r.number("hjb", "r2_hi", exp.grids.r2_hi);
    exp.grids.r2_nodes = static_cast<int>(r.number("hjb", "r2_nodes", 301));
    exp.grids.a_nodes = static_cast<int>(r.number("hjb", "a_nodes", 41));
  }

  exp.mfg_tol = r.number("mfg", "tol", 1e-3);
  exp.mfg_max_iter = static_cast<int>(r.number("mfg", "max_iter", 10));
  exp.mfg_paths = static_cast<int>(r.number("mfg", "paths", 2048));
  exp.mfg_damping = r.number("mfg", "damping", 1.0);
  exp.rate_N = r.int_list("rate", "N_values", exp.rate_N);
  exp.rate_replications = static_cast<int>(r.number("rate", "replications", 8));
  exp.nash_N = r.int_list("nash", "N_values", exp.nash_N);
  exp.nash_replications = static_cast<int>(r.number("nash", "replications", 16));
  exp.nash_alphas = r.number_list("nash", "alphas", exp.nash_alphas);
  exp.nash_betas = r.number_list("nash", "betas", exp.nash_betas);
  exp.snapshots = static_cast<int>(r.number("output", "snapshots", 8));
  exp.flow_snapshots = r.flag("output", "flow_snapshots", false);
  exp.mc_paths = static_cast<int>(r.number("output", "mc_paths", 512));
  exp.kernel_csv = r.text("output", "kernel_csv", "");
  exp.distances_flow_a = r.text("distances", "flow_a", "");
  exp.distances_flow_b = r.text("distances", "flow_b", "");

  r.reject_unknown();
  return exp;
}

inline Experiment parse_config_text(const std::string& text) {
  return parse_config(parse_raw(text));
}

}  // namespace pomfg::config
