// Empirical audits of the two asymptotic guarantees: the O(1/sqrt(N))
// population-vs-McKean-Vlasov coupling rate on the scalar lane, and the
// epsilon-Nash property of the MFG best response on the Benes lane.
//
// The infimum over all admissible deviations is not computable; the Nash
// audit searches a declared deviation family (affine perturbations reading
// only the deviator's own filter, plus one best response re-solved against
// the empirical flow of the others), so a reported gap is a lower bound on
// how far the profile is from Nash.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pomfg/control.hpp"
#include "pomfg/dynamics.hpp"
#include "pomfg/measure.hpp"
#include "pomfg/mfg.hpp"

namespace pomfg::nash {

using control::BenesPolicy;
using control::BenesRunOptions;
using control::CostCouplingMode;
using benes::BenesModel;
using benes::FilterStepMode;

// ---- rate reports -------------------------------------------------------------

struct RateReport {
  std::vector<int> N_values;
  std::vector<double> errors;
  std::vector<double> std_errors;
  double slope = 0.0;
  double intercept = 0.0;

  void validate() const {
    for (std::size_t i = 1; i < N_values.size(); ++i)
      if (N_values[i] <= N_values[i - 1])
        throw InvalidInput("rate report N values must be strictly increasing");
    for (double e : errors)
      if (!(e > 0.0)) throw InvalidInput("rate report errors must be positive");
  }
};

namespace detail {

inline void fit_loglog(const std::vector<int>& ns, const std::vector<double>& errs,
                       double* slope, double* intercept) {
  const std::size_t n = ns.size();
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::log(static_cast<double>(ns[i]));
    const double y = std::log(errs[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = static_cast<double>(n) * sxx - sx * sx;
  *slope = denom != 0.0 ? (static_cast<double>(n) * sxy - sx * sy) / denom : 0.0;
  *intercept = (sy - *slope * sx) / static_cast<double>(n);
}

}  // namespace detail

struct MvRateOptions {
  int replications = 8;
  std::uint64_t seed = 1;
  FilterMode filter_mode = FilterMode::kNone;
  int picard_iterations = 3;
  int reference_paths = 4096;
  int threads = 1;
};

// Reference MV flow for a fixed feedback policy, solved by Picard iteration
// of the consistency condition (flow in, empirical law of the closed loop
// out). Reference paths use a disjoint stream block so study agents keep
// their own noise.
inline measure::MeasureFlow solve_reference_flow(const Scenario& scen,
                                                 const ScalarPolicy& policy,
                                                 const MvRateOptions& opt) {
  Scenario ref = scen;
  ref.seed = rng::derive_seed(scen.seed, 0x5EEDF10Eull);
  measure::MeasureFlow flow;
  {
    const int steps = ref.steps();
    flow.times = ref.time_grid();
    flow.measures.assign(static_cast<std::size_t>(steps) + 1,
                         measure::Measure::dirac(ref.init.limit_mean()));
  }
  for (int it = 0; it < opt.picard_iterations; ++it) {
    const auto bundle = dynamics::simulate_mckean_vlasov(
        ref, policy, flow, opt.reference_paths, opt.filter_mode, opt.threads);
    flow = dynamics::induced_flow(bundle);
  }
  return flow;
}

// Coupled-gap study of the population system against N independent MV copies
// sharing the same Brownian increments. errors[N] is the replication average
// of sup_t (1/N) sum_j |z_j^N(t) - zhat_j(t)|.
inline RateReport mv_rate_study(const Scenario& scen, const ScalarPolicy& policy,
                                std::span<const int> N_values, const MvRateOptions& opt,
                                const measure::MeasureFlow* reference_flow = nullptr) {
  if (N_values.empty()) throw InvalidInput("mv_rate_study: empty N list");
  for (int n : N_values)
    if (n < 4 || n > 4096) throw InvalidInput("mv_rate_study: N values must lie in {4..4096}");
  if (opt.replications < 4) throw InvalidInput("mv_rate_study: need at least 4 replications");

  measure::MeasureFlow flow;
  if (reference_flow) {
    flow = *reference_flow;
  } else {
    flow = solve_reference_flow(scen, policy, opt);
  }

  RateReport rep;
  rep.N_values.assign(N_values.begin(), N_values.end());
  for (int N : N_values) {
    std::vector<double> per_rep;
    per_rep.reserve(static_cast<std::size_t>(opt.replications));
    for (int r = 0; r < opt.replications; ++r) {
      Scenario s = scen;
      s.seed = rng::derive_seed(scen.seed, static_cast<std::uint64_t>(r) + 1);
      const auto pop = dynamics::simulate_population(
          s, std::span<const ScalarPolicy>(&policy, 1), N, opt.filter_mode, &flow,
          opt.threads);
      const auto mv = dynamics::simulate_mckean_vlasov(s, policy, flow, N, opt.filter_mode,
                                                       opt.threads);
      double sup_gap = 0.0;
      for (std::size_t t = 0; t < pop.times.size(); ++t) {
        double g = 0.0;
        for (std::size_t j = 0; j < pop.agents(); ++j)
          g += std::abs(pop.states[j][t] - mv.states[j][t]);
        sup_gap = std::max(sup_gap, g / static_cast<double>(N));
      }
      per_rep.push_back(sup_gap);
    }
    double mean = 0.0;
    for (double e : per_rep) mean += e;
    mean /= static_cast<double>(per_rep.size());
    double var = 0.0;
    for (double e : per_rep) var += (e - mean) * (e - mean);
    const double se = per_rep.size() > 1
                          ? std::sqrt(var / static_cast<double>(per_rep.size() - 1) /
                                      static_cast<double>(per_rep.size()))
                          : 0.0;
    rep.errors.push_back(mean);
    rep.std_errors.push_back(se);
  }
  detail::fit_loglog(rep.N_values, rep.errors, &rep.slope, &rep.intercept);
  return rep;
}

// ---- epsilon_N ------------------------------------------------------------------

// Literal evaluation of eps_N = |int x^2 dF_N - 2 zbar int x dF_N + zbar^2|
// with F_N the empirical distribution of the initial means.
inline double epsilon_N(std::span<const double> initial_means, double z_bar) {
  if (initial_means.empty()) throw InvalidInput("epsilon_N: empty mean list");
  double m1 = 0.0, m2 = 0.0;
  for (double x : initial_means) {
    m1 += x;
    m2 += x * x;
  }
  const double n = static_cast<double>(initial_means.size());
  return std::abs(m2 / n - 2.0 * z_bar * m1 / n + z_bar * z_bar);
}

// ---- Nash gap audit ----------------------------------------------------------------

struct DeviationDescriptor {
  std::string kind;        // "affine" or "best-response"
  double alpha = 1.0;
  double beta = 0.0;
  std::string info_class;  // which information the deviation may read
};

struct NashGapReport {
  int N = 0;
  double baseline_cost = 0.0;
  double baseline_std_error = 0.0;
  double best_deviation_cost = 0.0;
  double gap = 0.0;            // baseline - best deviation; positive = profitable
  double gap_std_error = 0.0;  // paired (common-random-number) standard error
  double epsilon_N_value = 0.0;
  int replications = 0;
  std::vector<DeviationDescriptor> family;
  std::vector<double> family_costs;
  std::size_t best_index = 0;

  bool profitable(double abs_tol) const {
    return gap > 2.0 * gap_std_error + abs_tol;
  }
};

struct NashGapOptions {
  std::vector<double> alphas{0.5, 1.0, 1.5};
  std::vector<double> betas{-0.2, -0.1, 0.0, 0.1, 0.2};
  int deviation_budget = 16;
  bool include_best_response = true;
  int replications = 16;
  std::uint64_t seed = 1;
  FilterStepMode mode = FilterStepMode::kInnovation;
  control::HjbGrids grids;
  int threads = 1;
  int flow_particle_cap = 2048;
};

namespace detail {

// Empirical flow of the non-deviating agents pooled across replications,
// thinned to the particle cap.
inline measure::MeasureFlow others_flow(const std::vector<control::BenesRunResult>& runs,
                                        int cap) {
  measure::MeasureFlow flow;
  flow.times = runs.front().times;
  const std::size_t total_agents = runs.front().z2.size();
  std::vector<double> xs;
  for (std::size_t t = 0; t < flow.times.size(); ++t) {
    xs.clear();
    for (const auto& run : runs)
      for (std::size_t i = 1; i < total_agents; ++i) xs.push_back(run.z2[i][t]);
    if (xs.size() > static_cast<std::size_t>(cap)) {
      const std::size_t stride = xs.size() / static_cast<std::size_t>(cap);
      std::vector<double> thin;
      for (std::size_t k = 0; k < xs.size(); k += stride) thin.push_back(xs[k]);
      xs.swap(thin);
    }
    flow.measures.push_back(measure::empirical_measure(xs));
  }
  return flow;
}

}  // namespace detail

// Unilateral-deviation audit for agent 1 with all other agents playing the
// MFG policy. Costs are estimated with common random numbers, paired per
// replication, under the population (empirical) coupling.
inline NashGapReport nash_gap(const BenesModel& model, const BenesPolicy& mfg_policy,
                              const measure::MeasureFlow& /*flow*/, int N,
                              const NashGapOptions& opt) {
  if (N < 2) throw InvalidInput("nash_gap: N must be >= 2");
  if (opt.deviation_budget < 1) throw InvalidInput("nash_gap: deviation budget must be >= 1");
  if (opt.replications < 2) throw InvalidInput("nash_gap: need at least 2 replications");

  // Deviation family (a): affine perturbations reading only agent 1's own
  // filter; the (1, 0) member is the baseline itself.
  std::vector<DeviationDescriptor> family;
  for (double a : opt.alphas) {
    for (double b : opt.betas) {
      if (static_cast<int>(family.size()) >= opt.deviation_budget) break;
      family.push_back({"affine", a, b, "own-filter"});
    }
  }

  // Baseline runs per replication.
  std::vector<control::BenesRunResult> baseline_runs;
  std::vector<double> baseline_costs;
  const std::vector<BenesPolicy> base_policies{mfg_policy};
  for (int r = 0; r < opt.replications; ++r) {
    BenesRunOptions ro;
    ro.paths = N;
    ro.seed = rng::derive_seed(opt.seed, static_cast<std::uint64_t>(r) + 101);
    ro.mode = opt.mode;
    ro.threads = opt.threads;
    baseline_runs.push_back(control::simulate_benes_closed_loop(
        model, std::span<const BenesPolicy>(base_policies.data(), 1), ro));
    const auto costs = control::benes_run_costs(model, baseline_runs.back(),
                                                CostCouplingMode::kPopulation, nullptr);
    baseline_costs.push_back(costs[0]);
  }

  // Deviation family (b): one best response re-solved against the empirical
  // flow of the N-1 others; this deviation reads the population flow.
  std::vector<BenesPolicy> deviation_policies;
  for (const auto& d : family)
    deviation_policies.push_back(BenesPolicy::affine_of(mfg_policy, d.alpha, d.beta));
  if (opt.include_best_response) {
    const auto flow_others = detail::others_flow(baseline_runs, opt.flow_particle_cap);
    const auto table = mfg::best_response_map(flow_others, model, opt.grids, opt.mode,
                                              opt.threads);
    deviation_policies.push_back(
        BenesPolicy::from_table(std::make_shared<control::PolicyTable>(table)));
    family.push_back({"best-response", 0.0, 0.0, "own-filter + empirical flow"});
  }

  // Evaluate each deviation with agent 1 switched; identical streams keep
  // the other agents' paths bitwise equal to the baseline.
  NashGapReport rep;
  rep.N = N;
  rep.replications = opt.replications;
  rep.family = family;
  rep.family_costs.assign(family.size(), 0.0);

  std::vector<std::vector<double>> dev_costs(family.size());
  for (std::size_t d = 0; d < family.size(); ++d) {
    std::vector<BenesPolicy> per_agent;
    per_agent.reserve(static_cast<std::size_t>(N));
    per_agent.push_back(deviation_policies[d]);
    for (int i = 1; i < N; ++i) per_agent.push_back(mfg_policy);
    for (int r = 0; r < opt.replications; ++r) {
      BenesRunOptions ro;
      ro.paths = N;
      ro.seed = rng::derive_seed(opt.seed, static_cast<std::uint64_t>(r) + 101);
      ro.mode = opt.mode;
      ro.threads = opt.threads;
      const auto run = control::simulate_benes_closed_loop(
          model, std::span<const BenesPolicy>(per_agent.data(), per_agent.size()), ro);
      const auto costs =
          control::benes_run_costs(model, run, CostCouplingMode::kPopulation, nullptr);
      dev_costs[d].push_back(costs[0]);
    }
    double m = 0.0;
    for (double c : dev_costs[d]) m += c;
    rep.family_costs[d] = m / static_cast<double>(opt.replications);
  }

  double base_mean = 0.0;
  for (double c : baseline_costs) base_mean += c;
  base_mean /= static_cast<double>(opt.replications);
  double base_var = 0.0;
  for (double c : baseline_costs) base_var += (c - base_mean) * (c - base_mean);
  rep.baseline_cost = base_mean;
  rep.baseline_std_error =
      std::sqrt(base_var / static_cast<double>(opt.replications - 1) /
                static_cast<double>(opt.replications));

  rep.best_index = 0;
  for (std::size_t d = 1; d < family.size(); ++d)
    if (rep.family_costs[d] < rep.family_costs[rep.best_index]) rep.best_index = d;
  rep.best_deviation_cost = rep.family_costs[rep.best_index];
  rep.gap = rep.baseline_cost - rep.best_deviation_cost;

  // Paired standard error of the winning gap.
  double dvar = 0.0;
  for (int r = 0; r < opt.replications; ++r) {
    const double diff = baseline_costs[static_cast<std::size_t>(r)] -
                        dev_costs[rep.best_index][static_cast<std::size_t>(r)];
    dvar += (diff - rep.gap) * (diff - rep.gap);
  }
  rep.gap_std_error = std::sqrt(dvar / static_cast<double>(opt.replications - 1) /
                                static_cast<double>(opt.replications));

  // eps_N from the initial means of the coupling variable; all agents share
  // xi, so the limit mean equals it.
  const std::vector<double> means(static_cast<std::size_t>(N), model.xi.y);
  rep.epsilon_N_value = epsilon_N(means, model.xi.y);
  return rep;
}

struct NashRateReport {
  RateReport base;  // errors hold the positive-part gaps (floored for logs)
  std::vector<NashGapReport> per_N;
  bool no_profitable_deviation = false;
  bool slope_defined = false;
  double fitted_C = 0.0;   // least-squares coefficient of (eps_N + C/sqrt(N))
  bool bound_pass = false; // gap <= eps_N + C/sqrt(N) within 2 se at every N
  double profit_tolerance = 0.0;
};

inline NashRateReport nash_rate_study(const BenesModel& model, const BenesPolicy& mfg_policy,
                                      const measure::MeasureFlow& flow,
                                      std::span<const int> N_values,
                                      const NashGapOptions& opt) {
  if (N_values.empty()) throw InvalidInput("nash_rate_study: empty N list");
  NashRateReport rep;
  rep.base.N_values.assign(N_values.begin(), N_values.end());
  for (int N : N_values) rep.per_N.push_back(nash_gap(model, mfg_policy, flow, N, opt));

  // Numerical audit tolerance: deviations below the DP discretization scale
  // are not "profitable".
  double base_scale = 0.0;
  for (const auto& g : rep.per_N) base_scale = std::max(base_scale, std::abs(g.baseline_cost));
  rep.profit_tolerance = 2e-3 * base_scale;

  bool any_profitable = false;
  for (const auto& g : rep.per_N) any_profitable = any_profitable || g.profitable(rep.profit_tolerance);
  rep.no_profitable_deviation = !any_profitable;

  // Single fitted C: least squares of gap - eps_N against 1/sqrt(N) through
  // the origin, then the bound is re-checked pointwise.
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < rep.per_N.size(); ++i) {
    const double x = 1.0 / std::sqrt(static_cast<double>(rep.per_N[i].N));
    num += x * (rep.per_N[i].gap - rep.per_N[i].epsilon_N_value);
    den += x * x;
  }
  rep.fitted_C = std::max(num / den, 0.0);
  rep.bound_pass = true;
  for (const auto& g : rep.per_N) {
    const double bound = g.epsilon_N_value + rep.fitted_C / std::sqrt(static_cast<double>(g.N)) +
                         2.0 * g.gap_std_error;
    rep.bound_pass = rep.bound_pass && g.gap <= bound;
  }

  std::vector<double> positive;
  bool all_positive = true;
  for (const auto& g : rep.per_N) {
    const double p = std::max(g.gap, 0.0);
    all_positive = all_positive && p > 0.0;
    positive.push_back(std::max(p, 1e-12));
  }
  rep.base.errors = positive;
  rep.base.std_errors.assign(positive.size(), 0.0);
  for (std::size_t i = 0; i < rep.per_N.size(); ++i)
    rep.base.std_errors[i] = rep.per_N[i].gap_std_error;
  rep.slope_defined = all_positive;
  if (rep.slope_defined)
    detail::fit_loglog(rep.base.N_values, rep.base.errors, &rep.base.slope,
                       &rep.base.intercept);
  return rep;
}

// ---- CSV export -------------------------------------------------------------------

inline void write_rate_csv(const RateReport& rep, const std::string& path) {
  csv::Writer w(path);
  w.comment("slope=" + csv::fmt_double(rep.slope) +
            ",intercept=" + csv::fmt_double(rep.intercept));
  w.header({"N", "error", "stderr"});
  for (std::size_t i = 0; i < rep.N_values.size(); ++i)
    w.row({static_cast<double>(rep.N_values[i]), rep.errors[i], rep.std_errors[i]});
}

inline void write_nash_csv(const NashRateReport& rep, const std::string& path) {
  csv::Writer w(path);
  w.comment("fitted_C=" + csv::fmt_double(rep.fitted_C) +
            ",no_profitable_deviation=" + std::to_string(rep.no_profitable_deviation ? 1 : 0) +
            ",bound_pass=" + std::to_string(rep.bound_pass ? 1 : 0));
  w.header({"N", "gap", "epsilon_N", "bound"});
  for (const auto& g : rep.per_N)
    w.row({static_cast<double>(g.N), g.gap, g.epsilon_N_value,
           g.epsilon_N_value + rep.fitted_C / std::sqrt(static_cast<double>(g.N))});
}

}  // namespace pomfg::nash
