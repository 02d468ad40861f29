// Nonlinear filtering for the scalar lane: a conservative finite-difference
// solver for the Zakai equation of the unnormalized conditional density, a
// Girsanov-reweighted particle filter, and a Kalman-Bucy closed form used as
// the oracle on linear-Gaussian sub-cases.
//
// The Zakai step splits into (i) a transport-diffusion step in conservative
// flux form with zero-flux boundaries and (ii) a multiplicative observation
// correction exp(h dy - 0.5 h^2 dt), which keeps the density nonnegative.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pomfg/errors.hpp"
#include "pomfg/measure.hpp"
#include "pomfg/rng.hpp"
#include "pomfg/scenario.hpp"

namespace pomfg::filtering {

// Unnormalized conditional density phi(t, .) sampled on a uniform grid.
class DensityGrid {
 public:
  static DensityGrid from_values(double x_lo, double dx, std::vector<double> values,
                                 int k = 2, double t = 0.0) {
    if (values.size() < 3) throw InvalidInput("density grid needs at least 3 nodes");
    if (!(dx > 0.0)) throw InvalidInput("density grid spacing must be positive");
    DensityGrid d;
    d.x_lo_ = x_lo;
    d.dx_ = dx;
    d.values_ = std::move(values);
    d.k_ = k;
    d.t_ = t;
    for (double v : d.values_) {
      if (!std::isfinite(v)) throw InvalidInput("density grid has non-finite values");
      if (v < 0.0) throw InvalidInput("density grid values must be nonnegative");
    }
    d.update_mass();
    if (!(d.mass_ > 0.0)) throw InvalidInput("density grid must have positive mass");
    return d;
  }

  static DensityGrid gaussian(const GridSpec& g, double mean, double var, int k = 2) {
    g.validate();
    if (!(var > 0.0)) throw InvalidInput("gaussian init needs positive variance");
    std::vector<double> v(static_cast<std::size_t>(g.nodes));
    const double dx = g.dx();
    const double norm = 1.0 / std::sqrt(2.0 * M_PI * var);
    for (int j = 0; j < g.nodes; ++j) {
      const double x = g.x_lo + dx * static_cast<double>(j);
      v[static_cast<std::size_t>(j)] = norm * std::exp(-0.5 * (x - mean) * (x - mean) / var);
    }
    return from_values(g.x_lo, dx, std::move(v), k);
  }

  std::size_t size() const { return values_.size(); }
  double x_lo() const { return x_lo_; }
  double dx() const { return dx_; }
  double node(std::size_t j) const { return x_lo_ + dx_ * static_cast<double>(j); }
  const std::vector<double>& values() const { return values_; }
  double t() const { return t_; }
  double mass() const { return mass_; }
  int k() const { return k_; }
  long clamp_events() const { return clamp_events_; }

  double trapezoid_weight(std::size_t j) const {
    return (j == 0 || j + 1 == values_.size()) ? 0.5 * dx_ : dx_;
  }

  double integrate(const std::function<double(double)>& f) const {
    double s = 0.0;
    for (std::size_t j = 0; j < values_.size(); ++j)
      s += trapezoid_weight(j) * values_[j] * f(node(j));
    return s;
  }

  double mean() const { return integrate([](double x) { return x; }) / mass_; }

  double variance() const {
    const double m = mean();
    return integrate([m](double x) { return (x - m) * (x - m); }) / mass_;
  }

  // E_k norm: int (1 + |x|^k) |p(x)| dx.
  double ek_norm() const {
    const double kk = static_cast<double>(k_);
    return integrate([kk](double x) { return 1.0 + std::pow(std::abs(x), kk); });
  }

  InfoState info() const { return {mean(), variance()}; }

  measure::Measure as_measure() const {
    return measure::Measure::grid(x_lo_, dx_, values_).normalized();
  }

  // Support containment: boundary values must stay negligible relative to
  // the peak.
  bool boundary_contained(double rel = 1e-8) const {
    double mx = 0.0;
    for (double v : values_) mx = std::max(mx, v);
    return values_.front() <= rel * mx && values_.back() <= rel * mx;
  }

 private:
  friend DensityGrid zakai_step(const DensityGrid&, double, double, double,
                                const Scenario&, const measure::Measure&);
  friend DensityGrid normalize(const DensityGrid&);

  void update_mass() {
    double s = 0.0;
    for (std::size_t j = 0; j < values_.size(); ++j) s += trapezoid_weight(j) * values_[j];
    mass_ = s;
  }

  double x_lo_ = 0.0;
  double dx_ = 1.0;
  std::vector<double> values_;
  int k_ = 2;
  double t_ = 0.0;
  double mass_ = 0.0;
  long clamp_events_ = 0;
};

// E_k distance between two densities on the same grid.
inline double ek_distance(const DensityGrid& a, const DensityGrid& b) {
  if (a.size() != b.size() || std::abs(a.dx() - b.dx()) > 1e-14 ||
      std::abs(a.x_lo() - b.x_lo()) > 1e-12)
    throw InvalidInput("ek_distance requires identical grids");
  const double kk = static_cast<double>(a.k());
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double x = a.node(j);
    s += a.trapezoid_weight(j) * (1.0 + std::pow(std::abs(x), kk)) *
         std::abs(a.values()[j] - b.values()[j]);
  }
  return s;
}

inline double l1_distance(const DensityGrid& a, const DensityGrid& b) {
  if (a.size() != b.size()) throw InvalidInput("l1_distance requires identical grids");
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j)
    s += a.trapezoid_weight(j) * std::abs(a.values()[j] - b.values()[j]);
  return s;
}

// One Zakai step: conservative transport-diffusion with drift
// fstar(t,x) + u, fstar = int fdag(t,x,y) mu(dy), then the multiplicative
// observation correction. Mass is conserved exactly (up to roundoff) by the
// transport stage when h == 0.
inline DensityGrid zakai_step(const DensityGrid& d, double u, double dy, double dt,
                              const Scenario& scen, const measure::Measure& mu) {
  const double dx = d.dx();
  const double cfl = scen.sigma * scen.sigma * dt / (dx * dx);
  if (cfl > 0.5)
    throw ConfigError("CFL bound violated: sigma^2 dt / dx^2 = " + csv::fmt_double(cfl) +
                      " > 0.5");
  if (scen.drift.couples() && !mu.is_normalized())
    throw InvalidInput("zakai_step: coupling measure not normalized");
  if (u < scen.u_min - 1e-12 || u > scen.u_max + 1e-12)
    throw InvalidInput("zakai_step: control outside U");

  const std::size_t n = d.size();
  const double t = d.t();
  const double mu_mean = scen.drift.couples() ? mu.mean() : 0.0;

  // Node drift values v_j = fstar(t, x_j) + u.
  std::vector<double> v(n);
  for (std::size_t j = 0; j < n; ++j)
    v[j] = scen.drift.couple_with_measure(t, d.node(j), mu, mu_mean) + u;

  DensityGrid out = d;
  out.t_ = t + dt;

  // Fluxes at cell interfaces, zero at the domain boundary.
  const double half_sig2 = 0.5 * scen.sigma * scen.sigma;
  std::vector<double> flux(n + 1, 0.0);
  const auto& p = d.values();
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double vmid = 0.5 * (v[j] + v[j + 1]);
    flux[j + 1] = vmid * 0.5 * (p[j] + p[j + 1]) - half_sig2 * (p[j + 1] - p[j]) / dx;
  }

  double peak = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double val = p[j] - dt / dx * (flux[j + 1] - flux[j]);
    peak = std::max(peak, std::abs(val));
    out.values_[j] = val;
  }
  for (std::size_t j = 0; j < n; ++j) {
    double& val = out.values_[j];
    if (val < 0.0) {
      if (val < -1e-12 * peak) ++out.clamp_events_;
      val = 0.0;
    }
  }

  if (!scen.obs.is_zero()) {
    for (std::size_t j = 0; j < n; ++j) {
      const double h = scen.obs(d.node(j));
      out.values_[j] *= std::exp(h * dy - 0.5 * h * h * dt);
    }
  }

  out.update_mass();
  if (!std::isfinite(out.mass_) || out.mass_ < 1e-300 || out.mass_ > 1e300)
    throw FilterBlowup("zakai_step: density mass under/overflow", out.t_);
  const double boundary_mass =
      out.trapezoid_weight(0) * out.values_.front() +
      out.trapezoid_weight(n - 1) * out.values_.back();
  if (boundary_mass > 1e-6 * out.mass_)
    throw FilterBlowup("zakai_step: mass reached the boundary cells", out.t_);
  return out;
}

inline DensityGrid normalize(const DensityGrid& d) {
  if (!(d.mass() > 0.0)) throw FilterBlowup("normalize: zero-mass density", d.t());
  DensityGrid out = d;
  const double m = d.mass();
  for (double& v : out.values_) v /= m;
  out.update_mass();
  return out;
}

// Normalized (Kushner-Stratonovich) step, realized as a Zakai step followed
// by normalization; equivalent to stepping the innovation form since the
// normalization absorbs every x-independent factor of the correction.
inline DensityGrid kushner_step(const DensityGrid& d, double u, double dy, double dt,
                                const Scenario& scen, const measure::Measure& mu) {
  return normalize(zakai_step(d, u, dy, dt, scen, mu));
}

// ---- particle filter ---------------------------------------------------------

// Weighted particle representation of the conditional law, with Girsanov
// log-weights h(x) dy - 0.5 h(x)^2 dt and systematic resampling.
struct ParticleCloud {
  std::vector<double> positions;
  std::vector<double> log_weights;
  double t = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t agent = 0;
  std::uint64_t step_index = 0;
  long resample_events = 0;

  static ParticleCloud init_gaussian(const Scenario& scen, std::uint64_t agent_id,
                                     double mean, double var) {
    ParticleCloud c;
    c.seed = scen.seed;
    c.agent = agent_id;
    c.positions.resize(static_cast<std::size_t>(scen.particles));
    c.log_weights.assign(static_cast<std::size_t>(scen.particles), 0.0);
    const double sd = std::sqrt(var);
    const auto stream = rng::stream_id(agent_id, rng::NoiseKind::kInit);
    // Counter 0 of the init stream belongs to the true state draw; particles
    // use counters 1..n.
    for (std::size_t i = 0; i < c.positions.size(); ++i)
      c.positions[i] = mean + sd * rng::standard_normal(c.seed, stream, i + 1);
    return c;
  }

  std::vector<double> normalized_weights() const {
    double mx = -std::numeric_limits<double>::infinity();
    for (double lw : log_weights) mx = std::max(mx, lw);
    if (!std::isfinite(mx)) throw FilterBlowup("particle filter: all weights underflowed", t);
    std::vector<double> w(log_weights.size());
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = std::exp(log_weights[i] - mx);
      s += w[i];
    }
    if (!(s > 0.0) || !std::isfinite(s))
      throw FilterBlowup("particle filter: weight normalization failed", t);
    for (double& x : w) x /= s;
    return w;
  }

  double ess() const {
    const auto w = normalized_weights();
    double s2 = 0.0;
    for (double x : w) s2 += x * x;
    return 1.0 / s2;
  }

  InfoState info() const {
    const auto w = normalized_weights();
    double m = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) m += w[i] * positions[i];
    double v = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
      v += w[i] * (positions[i] - m) * (positions[i] - m);
    return {m, v};
  }
};

inline ParticleCloud particle_filter_step(const ParticleCloud& c, double u, double dy,
                                          double dt, const Scenario& scen,
                                          const measure::Measure& mu) {
  if (scen.drift.couples() && !mu.is_normalized())
    throw InvalidInput("particle_filter_step: coupling measure not normalized");
  ParticleCloud out = c;
  const double sqdt = std::sqrt(dt);
  const double mu_mean = scen.drift.couples() ? mu.mean() : 0.0;
  const auto stream = rng::stream_id(c.agent, rng::NoiseKind::kAux);
  const std::size_t n = c.positions.size();

  for (std::size_t i = 0; i < n; ++i) {
    const double x = c.positions[i];
    const double drift = scen.drift.couple_with_measure(c.t, x, mu, mu_mean) + u;
    const double xi =
        rng::standard_normal(c.seed, stream, c.step_index * n + i);
    const double xn = x + drift * dt + scen.sigma * sqdt * xi;
    if (!std::isfinite(xn))
      throw FilterBlowup("particle filter: non-finite particle position", c.t + dt);
    out.positions[i] = xn;
    const double h = scen.obs(xn);
    out.log_weights[i] += h * dy - 0.5 * h * h * dt;
  }
  out.t = c.t + dt;
  out.step_index = c.step_index + 1;

  const double threshold = scen.resample_threshold * static_cast<double>(n);
  if (out.ess() < threshold) {
    const auto w = out.normalized_weights();
    std::vector<double> cum(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += w[i];
      cum[i] = acc;
    }
    const double u0 =
        rng::uniform01(c.seed, rng::stream_id(c.agent, rng::NoiseKind::kResample),
                       out.step_index) /
        static_cast<double>(n);
    std::vector<double> newpos(n);
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double target = u0 + static_cast<double>(i) / static_cast<double>(n);
      while (j + 1 < n && cum[j] < target) ++j;
      newpos[i] = out.positions[j];
    }
    out.positions = std::move(newpos);
    out.log_weights.assign(n, 0.0);
    ++out.resample_events;
  }
  return out;
}

// ---- Kalman-Bucy oracle --------------------------------------------------------

// Closed-form filter for dz = a z dt + sigma dw, dy = c z dt + sqrt(R) dnu.
// The variance ODE is deterministic (RK4); the mean is driven by the given
// observation increments.
struct KalmanBucyResult {
  std::vector<double> times;
  std::vector<double> mean;
  std::vector<double> var;
};

inline KalmanBucyResult kalman_bucy_oracle(double a, double c, double sigma, double R,
                                           std::span<const double> dy, double dt,
                                           double mean0, double var0) {
  if (!(R > 0.0)) throw ConfigError("kalman_bucy_oracle: observation covariance R must be positive");
  const std::size_t n = dy.size();
  KalmanBucyResult out;
  out.times.resize(n + 1);
  out.mean.resize(n + 1);
  out.var.resize(n + 1);
  out.times[0] = 0.0;
  out.mean[0] = mean0;
  out.var[0] = var0;
  const auto vdot = [&](double v) { return 2.0 * a * v + sigma * sigma - c * c * v * v / R; };
  double m = mean0, v = var0;
  for (std::size_t s = 0; s < n; ++s) {
    const double gain = v * c / R;
    m += a * m * dt + gain * (dy[s] - c * m * dt);
    const double k1 = vdot(v);
    const double k2 = vdot(v + 0.5 * dt * k1);
    const double k3 = vdot(v + 0.5 * dt * k2);
    const double k4 = vdot(v + dt * k3);
    v += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!std::isfinite(m) || !std::isfinite(v))
      throw NumericalError("kalman_bucy_oracle: non-finite state");
    out.times[s + 1] = dt * static_cast<double>(s + 1);
    out.mean[s + 1] = m;
    out.var[s + 1] = v;
  }
  return out;
}

}  // namespace pomfg::filtering
