// Nash Certainty Equivalence loop for the Benes lane: best-respond to a
// frozen measure flow via the sufficient-statistic HJB, regenerate the flow
// from the closed loop, and iterate to a fixed point. Common random numbers
// across iterations make the recorded distances reflect flow changes rather
// than Monte Carlo noise.
#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pomfg/control.hpp"
#include "pomfg/measure.hpp"

namespace pomfg::mfg {

using control::BenesPolicy;
using control::BenesRunOptions;
using control::BenesRunResult;
using control::HjbGrids;
using control::PolicyTable;
using benes::BenesModel;
using benes::FilterStepMode;

struct GainEstimate {
  double c1 = 0.0;
  double c2 = 0.0;
  double product = 0.0;
  bool gain_condition_pass = false;
  int pairs_used_c1 = 0;
  int pairs_used_c2 = 0;
  int pairs_skipped = 0;
};

struct FixedPointReport {
  std::vector<measure::MeasureFlow> iterates;  // flow after each iteration
  std::vector<double> distances;               // sup_t marginal distance per iteration
  bool converged = false;
  int iterations = 0;
  bool noncontractive_warning = false;
  double tolerance = 0.0;
  double final_path_distance_DT = 0.0;  // full D_T on the last flow pair
  int ensemble_size = 0;                // estimator M reported with every distance
  std::optional<GainEstimate> gain_estimate;
};

struct NceOptions {
  double tol = 1e-3;
  int max_iter = 10;
  int paths = 2048;
  std::uint64_t seed = 1;
  double damping = 1.0;  // flow <- (1-theta) flow + theta flow'; 1 = plain map
  FilterStepMode mode = FilterStepMode::kInnovation;
  HjbGrids grids;
  int threads = 1;
  int dt_paths_cap = 256;  // ensemble size for the final D_T report
};

// Upsilon: frozen flow -> best-response feedback law (argmin policy of the
// sufficient-statistic HJB).
inline PolicyTable best_response_map(const measure::MeasureFlow& flow, const BenesModel& model,
                                     const HjbGrids& grids, FilterStepMode mode,
                                     int threads = 1) {
  return control::solve_hjb_sufficient_stats(model, flow, grids, mode, threads).policy;
}

// Upsilon-bar: policy -> empirical law of the closed-loop coupling variable.
inline BenesRunResult closed_loop_run(const BenesModel& model, const BenesPolicy& policy,
                                      int paths, std::uint64_t seed, FilterStepMode mode,
                                      int threads = 1, bool keep_stats = false) {
  BenesRunOptions opt;
  opt.paths = paths;
  opt.seed = seed;
  opt.mode = mode;
  opt.threads = threads;
  opt.keep_stats = keep_stats;
  return control::simulate_benes_closed_loop(
      model, std::span<const BenesPolicy>(&policy, 1), opt);
}

inline measure::MeasureFlow induced_flow_of_policy(const BenesPolicy& policy,
                                                   const BenesModel& model, int paths,
                                                   std::uint64_t seed,
                                                   FilterStepMode mode = FilterStepMode::kInnovation,
                                                   int threads = 1) {
  return closed_loop_run(model, policy, paths, seed, mode, threads).z2_flow();
}

// A flow of point masses at the initial mean of the coupling variable; the
// standard cold start for the iteration.
inline measure::MeasureFlow degenerate_initial_flow(const BenesModel& model) {
  measure::MeasureFlow flow;
  const int steps = model.steps();
  flow.times.resize(static_cast<std::size_t>(steps) + 1);
  for (int s = 0; s <= steps; ++s) flow.times[static_cast<std::size_t>(s)] = model.dt * s;
  flow.measures.assign(flow.times.size(), measure::Measure::dirac(model.xi.y));
  return flow;
}

namespace detail {

inline measure::PathEnsemble thin_ensemble(const measure::PathEnsemble& e, int cap) {
  if (e.paths.size() <= static_cast<std::size_t>(cap)) return e;
  measure::PathEnsemble out;
  out.times = e.times;
  out.seed = e.seed;
  const std::size_t stride = (e.paths.size() + static_cast<std::size_t>(cap) - 1) /
                             static_cast<std::size_t>(cap);
  for (std::size_t i = 0; i < e.paths.size(); i += stride) out.paths.push_back(e.paths[i]);
  return out;
}

// Particle-union mixture (1 - theta) a + theta b, per time.
inline measure::MeasureFlow mix_flows(const measure::MeasureFlow& a,
                                      const measure::MeasureFlow& b, double theta) {
  measure::MeasureFlow out;
  out.times = a.times;
  for (std::size_t i = 0; i < a.times.size(); ++i) {
    const auto pa = a.measures[i].as_particles().normalized();
    const auto pb = b.measures[i].as_particles().normalized();
    std::vector<double> xs(pa.points());
    std::vector<double> ws(pa.values());
    for (double& w : ws) w *= (1.0 - theta);
    xs.insert(xs.end(), pb.points().begin(), pb.points().end());
    for (double w : pb.values()) ws.push_back(w * theta);
    out.measures.push_back(measure::Measure::particles(std::move(xs), std::move(ws)));
  }
  return out;
}

}  // namespace detail

// The fixed-point iteration for Upsilon-bar composed with Upsilon. The same
// seed is reused every iteration, so a coupling-free model reproduces its
// own flow exactly after one pass.
inline FixedPointReport nce_iterate(const measure::MeasureFlow& initial_flow,
                                    const BenesModel& model, const NceOptions& opt) {
  if (!(opt.tol > 0.0)) throw InvalidInput("nce_iterate: tol must be positive");
  if (opt.max_iter < 1) throw InvalidInput("nce_iterate: max_iter must be >= 1");
  if (!(opt.damping > 0.0 && opt.damping <= 1.0))
    throw InvalidInput("nce_iterate: damping must lie in (0, 1]");
  initial_flow.validate();

  FixedPointReport rep;
  rep.tolerance = opt.tol;
  rep.ensemble_size = opt.paths;

  measure::MeasureFlow flow = initial_flow;
  measure::PathEnsemble prev_ensemble, last_ensemble;
  for (int it = 0; it < opt.max_iter; ++it) {
    const PolicyTable pol_table =
        best_response_map(flow, model, opt.grids, opt.mode, opt.threads);
    const BenesPolicy policy =
        BenesPolicy::from_table(std::make_shared<PolicyTable>(pol_table));
    const BenesRunResult run =
        closed_loop_run(model, policy, opt.paths, opt.seed, opt.mode, opt.threads);
    measure::MeasureFlow next = run.z2_flow();

    const double d = measure::sup_marginal_distance(flow, next);
    rep.distances.push_back(d);
    rep.iterates.push_back(next);
    prev_ensemble = last_ensemble;
    last_ensemble = detail::thin_ensemble(run.z2_ensemble(), opt.dt_paths_cap);
    rep.iterations = it + 1;

    // Non-decreasing distances over 5 consecutive iterations: diagnostic
    // only, the iteration keeps going.
    if (rep.distances.size() >= 5) {
      bool nondecreasing = true;
      for (std::size_t k = rep.distances.size() - 4; k < rep.distances.size(); ++k)
        nondecreasing = nondecreasing && rep.distances[k] >= rep.distances[k - 1] - 1e-15;
      if (nondecreasing) rep.noncontractive_warning = true;
    }

    flow = opt.damping >= 1.0 ? std::move(next) : detail::mix_flows(flow, next, opt.damping);
    if (d < opt.tol) {
      rep.converged = true;
      break;
    }
  }

  if (!prev_ensemble.paths.empty() && !last_ensemble.paths.empty())
    rep.final_path_distance_DT = measure::path_distance_DT(prev_ensemble, last_ensemble);
  return rep;
}

// A measure flow together with the path ensemble it came from; D_T needs the
// path structure.
struct FlowSample {
  measure::MeasureFlow flow;
  measure::PathEnsemble ensemble;
};

inline FlowSample flow_sample_of_policy(const BenesModel& model, const BenesPolicy& policy,
                                        int paths, std::uint64_t seed, FilterStepMode mode,
                                        int threads = 1, int ensemble_cap = 256) {
  const auto run = closed_loop_run(model, policy, paths, seed, mode, threads);
  return {run.z2_flow(), detail::thin_ensemble(run.z2_ensemble(), ensemble_cap)};
}

// Perturbation flows induced by constant offsets of a base policy, all with
// the base sample's seed.
inline std::vector<FlowSample> make_perturbation_flows(const BenesModel& model,
                                                       const BenesPolicy& base_policy,
                                                       std::span<const double> betas,
                                                       int paths, std::uint64_t seed,
                                                       FilterStepMode mode, int threads = 1) {
  std::vector<FlowSample> out;
  out.reserve(betas.size());
  for (double b : betas)
    out.push_back(flow_sample_of_policy(model, BenesPolicy::affine_of(base_policy, 1.0, b),
                                        paths, seed, mode, threads));
  return out;
}

struct GainEstimateOptions {
  FilterStepMode mode = FilterStepMode::kInnovation;
  HjbGrids grids;
  int paths = 512;
  std::uint64_t seed = 1;
  int threads = 1;
  int probe_agents = 8;
};

// Empirical estimates of the sensitivity constants: c1 bounds the policy
// response to a flow change, c2 the flow response to a policy change. Probes
// are information states visited by simulated filter trajectories; both
// maxima over finite probe sets are lower bounds on the paper's worst-case
// constants and are reported as such.
inline GainEstimate estimate_gain_constants(const BenesModel& model, const FlowSample& base,
                                            std::span<const FlowSample> perturbations,
                                            const GainEstimateOptions& opt) {
  if (perturbations.size() < 1)
    throw InvalidInput("estimate_gain_constants: need at least one perturbation flow");

  std::vector<const FlowSample*> samples;
  samples.push_back(&base);
  for (const auto& p : perturbations) samples.push_back(&p);

  // Best-response policy for each flow.
  std::vector<PolicyTable> policies;
  policies.reserve(samples.size());
  for (const auto* s : samples)
    policies.push_back(best_response_map(s->flow, model, opt.grids, opt.mode, opt.threads));

  // Probe states from filter trajectories under the base best response.
  const BenesPolicy base_policy =
      BenesPolicy::from_table(std::make_shared<PolicyTable>(policies.front()));
  BenesRunOptions run_opt;
  run_opt.paths = opt.probe_agents;
  run_opt.seed = rng::derive_seed(opt.seed, 0xBEE5);
  run_opt.mode = opt.mode;
  run_opt.threads = opt.threads;
  run_opt.keep_stats = true;
  run_opt.stats_stride = 5;
  const auto probe_run = control::simulate_benes_closed_loop(
      model, std::span<const BenesPolicy>(&base_policy, 1), run_opt);
  struct Probe {
    double t, r1, r2;
  };
  std::vector<Probe> probes;
  for (const auto& traj : probe_run.stats)
    for (const auto& st : traj) probes.push_back({st.t, st.r.x, st.r.y});
  if (probes.empty()) throw NumericalError("estimate_gain_constants: no probe states");

  const auto sup_policy_diff = [&](const PolicyTable& a, const PolicyTable& b) {
    double sup = 0.0;
    for (const auto& pr : probes)
      sup = std::max(sup, std::abs(a.at(pr.t, pr.r1, pr.r2) - b.at(pr.t, pr.r1, pr.r2)));
    return sup;
  };

  GainEstimate est;
  // c1: policy sensitivity to the flow.
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      const double dflow = measure::path_distance_DT(samples[i]->ensemble, samples[j]->ensemble);
      if (dflow < 1e-12) {
        ++est.pairs_skipped;
        continue;
      }
      est.c1 = std::max(est.c1, sup_policy_diff(policies[i], policies[j]) / dflow);
      ++est.pairs_used_c1;
    }
  }
  // c2: flow sensitivity to the policy. Induced flows share a seed so the
  // distances isolate the policy change.
  std::vector<FlowSample> induced;
  induced.reserve(samples.size());
  for (const auto& p : policies)
    induced.push_back(flow_sample_of_policy(model,
                                            BenesPolicy::from_table(
                                                std::make_shared<PolicyTable>(p)),
                                            opt.paths, opt.seed, opt.mode, opt.threads));
  for (std::size_t i = 0; i < induced.size(); ++i) {
    for (std::size_t j = i + 1; j < induced.size(); ++j) {
      const double du = sup_policy_diff(policies[i], policies[j]);
      if (du < 1e-12) {
        ++est.pairs_skipped;
        continue;
      }
      est.c2 = std::max(
          est.c2, measure::path_distance_DT(induced[i].ensemble, induced[j].ensemble) / du);
      ++est.pairs_used_c2;
    }
  }
  est.product = est.c1 * est.c2;
  est.gain_condition_pass = est.product < 1.0;
  return est;
}

inline void write_fixed_point_csv(const FixedPointReport& rep, const std::string& path) {
  csv::Writer w(path);
  w.comment("ensemble_size=" + std::to_string(rep.ensemble_size) +
            ",final_path_distance_DT=" + csv::fmt_double(rep.final_path_distance_DT) +
            ",noncontractive_warning=" + std::to_string(rep.noncontractive_warning ? 1 : 0));
  w.header({"iteration", "distance", "c1_hat", "c2_hat"});
  for (std::size_t i = 0; i < rep.distances.size(); ++i) {
    const double c1 = rep.gain_estimate ? rep.gain_estimate->c1 : 0.0;
    const double c2 = rep.gain_estimate ? rep.gain_estimate->c2 : 0.0;
    w.row({static_cast<double>(i + 1), rep.distances[i], c1, c2});
  }
}

}  // namespace pomfg::mfg
