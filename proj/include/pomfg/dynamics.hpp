// Euler-Maruyama simulation of the coupled N-agent system and of the
// McKean-Vlasov limit driven by a frozen measure flow, with per-agent
// observation paths and optional filter-in-the-loop feedback policies.
//
// All noise is addressed as (seed, agent, kind, step), so the population run
// and the MV run consume bitwise-identical Brownian increments per agent
// index. That common-random-number coupling is what the O(1/sqrt(N)) rate
// study measures.
#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "pomfg/csv.hpp"
#include "pomfg/errors.hpp"
#include "pomfg/filtering.hpp"
#include "pomfg/measure.hpp"
#include "pomfg/parallel.hpp"
#include "pomfg/rng.hpp"
#include "pomfg/scenario.hpp"

namespace pomfg::dynamics {

struct TrajectoryBundle {
  std::vector<double> times;
  // [agent][step], steps()+1 samples per agent.
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> observations;
  std::vector<std::vector<double>> controls;
  // Retained noise increments (steps() entries), for coupling checks.
  std::vector<std::vector<double>> state_noise;
  std::vector<std::vector<double>> obs_noise;
  std::uint64_t seed = 0;

  std::size_t agents() const { return states.size(); }

  measure::PathEnsemble state_ensemble() const {
    measure::PathEnsemble e;
    e.times = times;
    e.paths = states;
    e.seed = seed;
    return e;
  }
};

// Per-time empirical measures of the ensemble states.
inline measure::MeasureFlow induced_flow(const TrajectoryBundle& bundle) {
  if (bundle.states.empty()) throw InvalidInput("induced_flow: empty bundle");
  measure::MeasureFlow flow;
  flow.times = bundle.times;
  flow.measures.reserve(bundle.times.size());
  std::vector<double> xs(bundle.states.size());
  for (std::size_t t = 0; t < bundle.times.size(); ++t) {
    for (std::size_t i = 0; i < bundle.states.size(); ++i) xs[i] = bundle.states[i][t];
    flow.measures.push_back(measure::empirical_measure(xs));
  }
  return flow;
}

namespace detail {

// Filter-in-the-loop state for one agent; which representation is live
// depends on the scenario's filter mode.
struct AgentFilter {
  FilterMode mode = FilterMode::kNone;
  std::optional<filtering::DensityGrid> grid;
  std::optional<filtering::ParticleCloud> cloud;

  static AgentFilter make(const Scenario& scen, FilterMode mode, std::uint64_t agent,
                          double mean, double var) {
    AgentFilter f;
    f.mode = mode;
    if (mode == FilterMode::kGrid)
      f.grid = filtering::DensityGrid::gaussian(scen.grid, mean, var, scen.k_norm);
    else if (mode == FilterMode::kParticle)
      f.cloud = filtering::ParticleCloud::init_gaussian(scen, agent, mean, var);
    return f;
  }

  InfoState info() const {
    switch (mode) {
      case FilterMode::kGrid: return grid->info();
      case FilterMode::kParticle: return cloud->info();
      case FilterMode::kNone: return {};
    }
    return {};
  }

  void step(double u, double dy, double dt, const Scenario& scen,
            const measure::Measure& mu) {
    if (mode == FilterMode::kGrid)
      grid = filtering::kushner_step(*grid, u, dy, dt, scen, mu);
    else if (mode == FilterMode::kParticle)
      cloud = filtering::particle_filter_step(*cloud, u, dy, dt, scen, mu);
  }
};

inline const measure::Measure& flow_measure_at(const measure::MeasureFlow& flow,
                                               std::size_t step, double t) {
  if (step < flow.times.size() && std::abs(flow.times[step] - t) <= 1e-9)
    return flow.measures[step];
  return flow.measures[flow.index_of_time(t)];
}

}  // namespace detail

// Simulates the N coupled SDEs; each agent's control is its policy evaluated
// on its own filter state. Filters, being part of the separated control
// design, run against the frozen design flow (agents do not observe the
// population). `policies` holds either one policy (broadcast) or N.
inline TrajectoryBundle simulate_population(const Scenario& scen,
                                            std::span<const ScalarPolicy> policies, int N,
                                            FilterMode filter_mode,
                                            const measure::MeasureFlow* design_flow = nullptr,
                                            int threads = 1) {
  scen.validate();
  if (N < 1) throw InvalidInput("simulate_population: N must be >= 1");
  if (policies.size() != 1 && policies.size() != static_cast<std::size_t>(N))
    throw InvalidInput("simulate_population: need one policy or one per agent");
  const int steps = scen.steps();
  const auto n = static_cast<std::size_t>(N);

  bool needs_filter = false;
  for (const auto& p : policies) needs_filter = needs_filter || p.reads_info;
  if (needs_filter && filter_mode == FilterMode::kNone)
    throw ConfigError("policy reads the information state but filter mode is none");
  if (needs_filter && scen.drift.couples() && design_flow == nullptr)
    throw ConfigError("coupled drift with filter feedback requires a design flow");

  TrajectoryBundle out;
  out.seed = scen.seed;
  out.times = scen.time_grid();
  out.states.assign(n, std::vector<double>(static_cast<std::size_t>(steps) + 1));
  out.observations.assign(n, std::vector<double>(static_cast<std::size_t>(steps) + 1, 0.0));
  out.controls.assign(n, std::vector<double>(static_cast<std::size_t>(steps) + 1, 0.0));
  out.state_noise.assign(n, std::vector<double>(static_cast<std::size_t>(steps)));
  out.obs_noise.assign(n, std::vector<double>(static_cast<std::size_t>(steps)));

  const auto means = scen.init.means(N);
  const double init_sd = std::sqrt(scen.init.var);
  std::vector<detail::AgentFilter> filters(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.states[i][0] = means[i] + init_sd * rng::standard_normal(
        scen.seed, rng::stream_id(i, rng::NoiseKind::kInit), 0);
    filters[i] = detail::AgentFilter::make(scen, filter_mode, i, means[i], scen.init.var);
  }

  const double sqdt = std::sqrt(scen.dt);
  const measure::Measure unit = measure::Measure::dirac(0.0);
  std::vector<double> z_cur(n), z_next(n);
  for (std::size_t i = 0; i < n; ++i) z_cur[i] = out.states[i][0];

  for (int s = 0; s < steps; ++s) {
    const double t = scen.dt * static_cast<double>(s);
    double pop_mean = 0.0;
    for (double z : z_cur) pop_mean += z;
    pop_mean /= static_cast<double>(n);
    const measure::Measure& mu_t =
        design_flow ? detail::flow_measure_at(*design_flow, static_cast<std::size_t>(s), t)
                    : unit;

    parallel_for(n, threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        const ScalarPolicy& pol = policies[policies.size() == 1 ? 0 : i];
        const double u = scen.clip_control(pol(t, filters[i].info()));
        const double coupling =
            scen.drift.couple_with_population(t, z_cur[i], pop_mean, z_cur);
        const double dw = sqdt * rng::standard_normal(
            scen.seed, rng::stream_id(i, rng::NoiseKind::kStateW),
            static_cast<std::uint64_t>(s));
        const double dnu = sqdt * rng::standard_normal(
            scen.seed, rng::stream_id(i, rng::NoiseKind::kObs),
            static_cast<std::uint64_t>(s));
        const double dy = scen.obs(z_cur[i]) * scen.dt + dnu;
        z_next[i] = z_cur[i] + (coupling + u) * scen.dt + scen.sigma * dw;
        if (!std::isfinite(z_next[i]))
          throw NumericalError("simulate_population: non-finite state");
        filters[i].step(u, dy, scen.dt, scen, mu_t);

        out.controls[i][static_cast<std::size_t>(s)] = u;
        out.state_noise[i][static_cast<std::size_t>(s)] = dw;
        out.obs_noise[i][static_cast<std::size_t>(s)] = dnu;
        out.states[i][static_cast<std::size_t>(s) + 1] = z_next[i];
        out.observations[i][static_cast<std::size_t>(s) + 1] =
            out.observations[i][static_cast<std::size_t>(s)] + dy;
      }
    });
    std::swap(z_cur, z_next);
  }
  // Terminal control resamples the final info state for completeness.
  for (std::size_t i = 0; i < n; ++i) {
    const ScalarPolicy& pol = policies[policies.size() == 1 ? 0 : i];
    out.controls[i][static_cast<std::size_t>(steps)] =
        scen.clip_control(pol(scen.T, filters[i].info()));
  }
  return out;
}

// M independent copies of the MV dynamics driven by the frozen flow. Path j
// shares its Brownian increments with agent j of simulate_population for the
// same scenario and seed.
inline TrajectoryBundle simulate_mckean_vlasov(const Scenario& scen,
                                               const ScalarPolicy& policy,
                                               const measure::MeasureFlow& flow, int M,
                                               FilterMode filter_mode, int threads = 1) {
  scen.validate();
  flow.validate();
  if (M < 1) throw InvalidInput("simulate_mckean_vlasov: M must be >= 1");
  if (policy.reads_info && filter_mode == FilterMode::kNone)
    throw ConfigError("policy reads the information state but filter mode is none");
  const int steps = scen.steps();
  const auto n = static_cast<std::size_t>(M);

  TrajectoryBundle out;
  out.seed = scen.seed;
  out.times = scen.time_grid();
  out.states.assign(n, std::vector<double>(static_cast<std::size_t>(steps) + 1));
  out.observations.assign(n, std::vector<double>(static_cast<std::size_t>(steps) + 1, 0.0));
  out.controls.assign(n, std::vector<double>(static_cast<std::size_t>(steps) + 1, 0.0));
  out.state_noise.assign(n, std::vector<double>(static_cast<std::size_t>(steps)));
  out.obs_noise.assign(n, std::vector<double>(static_cast<std::size_t>(steps)));

  const auto means = scen.init.means(M);
  const double init_sd = std::sqrt(scen.init.var);
  const double sqdt = std::sqrt(scen.dt);

  // Flow means per step, reused by the affine couplings.
  std::vector<const measure::Measure*> mu_at(static_cast<std::size_t>(steps));
  std::vector<double> mu_mean(static_cast<std::size_t>(steps), 0.0);
  for (int s = 0; s < steps; ++s) {
    const double t = scen.dt * static_cast<double>(s);
    mu_at[static_cast<std::size_t>(s)] =
        &detail::flow_measure_at(flow, static_cast<std::size_t>(s), t);
    if (scen.drift.couples())
      mu_mean[static_cast<std::size_t>(s)] = mu_at[static_cast<std::size_t>(s)]->mean();
  }

  parallel_for(n, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double z = means[i] + init_sd * rng::standard_normal(
          scen.seed, rng::stream_id(i, rng::NoiseKind::kInit), 0);
      out.states[i][0] = z;
      auto filt = detail::AgentFilter::make(scen, filter_mode, i, means[i], scen.init.var);
      for (int s = 0; s < steps; ++s) {
        const double t = scen.dt * static_cast<double>(s);
        const measure::Measure& mu = *mu_at[static_cast<std::size_t>(s)];
        const double u = scen.clip_control(policy(t, filt.info()));
        const double coupling = scen.drift.couple_with_measure(
            t, z, mu, mu_mean[static_cast<std::size_t>(s)]);
        const double dw = sqdt * rng::standard_normal(
            scen.seed, rng::stream_id(i, rng::NoiseKind::kStateW),
            static_cast<std::uint64_t>(s));
        const double dnu = sqdt * rng::standard_normal(
            scen.seed, rng::stream_id(i, rng::NoiseKind::kObs),
            static_cast<std::uint64_t>(s));
        const double dy = scen.obs(z) * scen.dt + dnu;
        z += (coupling + u) * scen.dt + scen.sigma * dw;
        if (!std::isfinite(z)) throw NumericalError("simulate_mckean_vlasov: non-finite state");
        filt.step(u, dy, scen.dt, scen, mu);

        out.controls[i][static_cast<std::size_t>(s)] = u;
        out.state_noise[i][static_cast<std::size_t>(s)] = dw;
        out.obs_noise[i][static_cast<std::size_t>(s)] = dnu;
        out.states[i][static_cast<std::size_t>(s) + 1] = z;
        out.observations[i][static_cast<std::size_t>(s) + 1] =
            out.observations[i][static_cast<std::size_t>(s)] + dy;
      }
      out.controls[i][static_cast<std::size_t>(steps)] =
          scen.clip_control(policy(scen.T, filt.info()));
    }
  });
  return out;
}

inline void write_bundle_csv(const TrajectoryBundle& b, const std::string& path) {
  csv::Writer w(path);
  w.header({"path_id", "t", "z", "y", "u"});
  for (std::size_t i = 0; i < b.agents(); ++i)
    for (std::size_t s = 0; s < b.times.size(); ++s)
      w.row({static_cast<double>(i), b.times[s], b.states[i][s], b.observations[i][s],
             b.controls[i][s]});
}

}  // namespace pomfg::dynamics
