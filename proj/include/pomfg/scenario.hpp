// Scalar-lane model description: drift f(t,x,u,y) = fdag(t,x,y) + u with a
// mean-field coupling in y, observation dy = h(x) dt + dnu, and running cost
// L(x,u,y) = l0(x,y) + 0.5 * lambda_u * u^2. Model functions are drawn from a
// registry of named presets with numeric parameters; configs never carry
// expressions.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pomfg/errors.hpp"
#include "pomfg/measure.hpp"

namespace pomfg {

// ---- drift component fdag(t, x, y) ------------------------------------------

struct DriftSpec {
  enum class Kind {
    kZero,            // 0
    kLinear,          // a * x                     (no coupling)
    kMeanReversion,   // gamma * (y - x)
    kIdentityCoupling,// y
    kSinCoupling,     // sin(y)
    kBenesRational,   // G11^2 (Delta x + varsigma) / (0.5 Delta x^2 + varsigma x + eta)
  };

  Kind kind = Kind::kZero;
  double a = 0.0;
  double gamma = 0.0;
  double g11 = 1.0;
  double delta_coef = 0.0;   // Delta
  double varsigma = 0.0;     // varsigma
  double eta = 1.0;          // eta
  // Declared constants for (A2)-style envelope checks on the working domain.
  double declared_bound = 1.0;
  double declared_lipschitz = 1.0;

  bool couples() const {
    return kind == Kind::kMeanReversion || kind == Kind::kIdentityCoupling ||
           kind == Kind::kSinCoupling;
  }

  double gamma_fn(double x) const {  // Gamma(x) of the rational drift
    return 0.5 * delta_coef * x * x + varsigma * x + eta;
  }

  double operator()(double /*t*/, double x, double y) const {
    switch (kind) {
      case Kind::kZero: return 0.0;
      case Kind::kLinear: return a * x;
      case Kind::kMeanReversion: return gamma * (y - x);
      case Kind::kIdentityCoupling: return y;
      case Kind::kSinCoupling: return std::sin(y);
      case Kind::kBenesRational: {
        const double g = gamma_fn(x);
        if (!(g > 0.0)) throw DomainError("rational drift: Gamma(x) <= 0");
        return g11 * g11 * (delta_coef * x + varsigma) / g;
      }
    }
    return 0.0;
  }

  // Coupling integral against a measure; exact for the y-affine kinds given
  // the measure mean, generic quadrature otherwise.
  double couple_with_measure(double t, double x, const measure::Measure& mu,
                             double mu_mean) const {
    switch (kind) {
      case Kind::kMeanReversion: return gamma * (mu_mean - x);
      case Kind::kIdentityCoupling: return mu_mean;
      case Kind::kSinCoupling:
        return mu.integrate([](double y) { return std::sin(y); }) / mu.mass();
      default: return (*this)(t, x, 0.0);
    }
  }

  // Population coupling (1/N) sum_j fdag(t, x, z_j); affine kinds collapse to
  // the population mean.
  double couple_with_population(double t, double x, double pop_mean,
                                std::span<const double> z_all) const {
    switch (kind) {
      case Kind::kMeanReversion: return gamma * (pop_mean - x);
      case Kind::kIdentityCoupling: return pop_mean;
      case Kind::kSinCoupling: {
        double s = 0.0;
        for (double z : z_all) s += std::sin(z);
        return s / static_cast<double>(z_all.size());
      }
      default: return (*this)(t, x, 0.0);
    }
  }
};

// Coupling integral int fdag(t, x, y) mu(dy) by the measure's native
// quadrature. The measure must be normalized.
inline double mean_field_drift(const DriftSpec& fdag, double t, double x,
                               const measure::Measure& mu) {
  if (!mu.is_normalized()) throw InvalidInput("mean_field_drift: measure not normalized");
  if (!fdag.couples()) return fdag(t, x, 0.0);
  return mu.integrate([&](double y) { return fdag(t, x, y); });
}

// ---- observation function h(x) ----------------------------------------------

struct ObsSpec {
  enum class Kind { kZero, kLinear, kTanh };
  Kind kind = Kind::kZero;
  double c = 1.0;

  double operator()(double x) const {
    switch (kind) {
      case Kind::kZero: return 0.0;
      case Kind::kLinear: return c * x;
      case Kind::kTanh: return c * std::tanh(x);
    }
    return 0.0;
  }
  bool is_zero() const { return kind == Kind::kZero; }
};

// ---- running cost L(x, u, y) = l0(x, y) + 0.5 lambda_u u^2 -------------------

struct CostForm {
  enum class Kind {
    kZero,              // 0
    kConstant,          // c0
    kQuadraticTarget,   // q (x - target)^2        (no coupling)
    kQuadraticCoupling, // gamma_c (x - y)^2
  };

  Kind kind = Kind::kZero;
  double c0 = 1.0;
  double q = 1.0;
  double target = 0.0;
  double gamma_c = 0.0;
  double lambda_u = 0.0;  // control weight, >= 0

  bool couples() const { return kind == Kind::kQuadraticCoupling; }

  double l0(double x, double y) const {
    switch (kind) {
      case Kind::kZero: return 0.0;
      case Kind::kConstant: return c0;
      case Kind::kQuadraticTarget: return q * (x - target) * (x - target);
      case Kind::kQuadraticCoupling: return gamma_c * (x - y) * (x - y);
    }
    return 0.0;
  }

  // int l0(x, y) mu(dy) for a normalized mu, using cached first/second
  // moments of mu (exact; all l0 presets are at most quadratic in y).
  double l0_vs_measure(double x, double mu_mean, double mu_second) const {
    switch (kind) {
      case Kind::kQuadraticCoupling:
        return gamma_c * (x * x - 2.0 * x * mu_mean + mu_second);
      default: return l0(x, 0.0);
    }
  }

  double total(double x, double u, double y) const {
    return l0(x, y) + 0.5 * lambda_u * u * u;
  }
};

// ---- initial law: per-agent Gaussian means with a common variance ------------

struct InitSpec {
  double mean_lo = 0.0;
  double mean_hi = 0.0;
  double var = 0.25;

  // Midpoint-spaced means; their empirical distribution converges weakly to
  // Uniform[mean_lo, mean_hi] (degenerate when lo == hi).
  std::vector<double> means(int n) const {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      out[static_cast<std::size_t>(i)] =
          mean_lo + (mean_hi - mean_lo) * ((static_cast<double>(i) + 0.5) / static_cast<double>(n));
    return out;
  }
  double limit_mean() const { return 0.5 * (mean_lo + mean_hi); }
};

// ---- filter discretization ----------------------------------------------------

struct GridSpec {
  double x_lo = -10.0;
  double x_hi = 10.0;
  int nodes = 400;

  double dx() const { return (x_hi - x_lo) / static_cast<double>(nodes - 1); }
  void validate() const {
    if (nodes < 3) throw ConfigError("grid must have at least 3 nodes");
    if (!(x_hi > x_lo)) throw ConfigError("grid upper bound must exceed lower bound");
  }
};

enum class FilterMode { kNone, kGrid, kParticle };

// ---- scenario -----------------------------------------------------------------

struct Scenario {
  double T = 1.0;
  double dt = 1e-3;
  DriftSpec drift;
  double sigma = 1.0;
  ObsSpec obs;
  CostForm cost;
  double u_min = -1.0;
  double u_max = 1.0;
  InitSpec init;
  GridSpec grid;
  int particles = 2000;
  double resample_threshold = 0.5;  // resample when ess < threshold * n
  int k_norm = 2;                   // E_k weight exponent
  FilterMode filter_mode = FilterMode::kNone;
  std::uint64_t seed = 1;

  int steps() const {
    const double raw = T / dt;
    const double rounded = std::round(raw);
    if (std::abs(raw - rounded) > 1e-9 * std::max(1.0, raw))
      throw ConfigError("T/dt must be an integer number of steps");
    return static_cast<int>(rounded);
  }

  double clip_control(double u) const { return std::min(u_max, std::max(u_min, u)); }

  double cfl_number() const { return sigma * sigma * dt / (grid.dx() * grid.dx()); }

  void validate() const {
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(T > 0.0)) throw ConfigError("T must be positive");
    (void)steps();
    if (!(u_min < u_max)) throw ConfigError("control interval requires u_min < u_max");
    if (!(init.var >= 0.0)) throw ConfigError("initial variance must be nonnegative");
    if (cost.lambda_u < 0.0) throw ConfigError("control weight lambda_u must be nonnegative");
    grid.validate();
    if (filter_mode == FilterMode::kGrid && cfl_number() > 0.5)
      throw ConfigError("CFL bound violated: sigma^2 dt / dx^2 = " +
                        csv::fmt_double(cfl_number()) + " > 0.5");
    if (filter_mode == FilterMode::kParticle && particles < 2)
      throw ConfigError("particle filter needs at least 2 particles");
    if (k_norm < 0) throw ConfigError("E_k exponent must be nonnegative");
  }

  std::vector<double> time_grid() const {
    const int n = steps();
    std::vector<double> t(static_cast<std::size_t>(n) + 1);
    for (int s = 0; s <= n; ++s) t[static_cast<std::size_t>(s)] = dt * static_cast<double>(s);
    return t;
  }
};

// ---- scalar-lane feedback policies ---------------------------------------------

// What a separated (filter-fed) policy may read: summary statistics of the
// agent's own conditional density.
struct InfoState {
  double mean = 0.0;
  double var = 0.0;
};

struct ScalarPolicy {
  std::string name = "zero";
  bool reads_info = false;
  std::function<double(double, const InfoState&)> fn;

  double operator()(double t, const InfoState& s) const { return fn ? fn(t, s) : 0.0; }

  static ScalarPolicy zero() {
    return {"zero", false, [](double, const InfoState&) { return 0.0; }};
  }
  static ScalarPolicy constant(double c) {
    return {"constant", false, [c](double, const InfoState&) { return c; }};
  }
  // u = kp * (target - posterior mean); Lipschitz in the information state
  // with constant kp.
  static ScalarPolicy mean_feedback(double kp, double target) {
    return {"mean_feedback", true,
            [kp, target](double, const InfoState& s) { return kp * (target - s.mean); }};
  }
};

}  // namespace pomfg
