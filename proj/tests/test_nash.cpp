#include <cmath>
#include <memory>

#include "doctest.h"
#include "oracles.hpp"
#include "pomfg/nash.hpp"

using namespace pomfg;
using benes::BenesModel;
using benes::FilterStepMode;
using benes::Mat2;

namespace {

Scenario rate_scenario(double gamma) {
  Scenario s;
  s.T = 1.0;
  s.dt = 2e-3;
  s.sigma = 1.0;
  s.drift.kind = gamma == 0.0 ? DriftSpec::Kind::kZero : DriftSpec::Kind::kMeanReversion;
  s.drift.gamma = gamma;
  s.obs.kind = ObsSpec::Kind::kLinear;
  s.obs.c = 1.0;
  s.grid = GridSpec{-8.0, 8.0, 120};
  s.u_min = -1.0;
  s.u_max = 1.0;
  s.init.mean_lo = s.init.mean_hi = 0.0;
  s.init.var = 0.25;
  s.seed = 12;
  return s;
}

BenesModel audit_model(double coupling, std::uint64_t seed) {
  BenesModel m;
  m.G11 = benes::constant_path(0.5);
  m.G22 = benes::constant_path(0.3);
  m.Delta = benes::constant_path(0.0);
  m.varsigma = benes::constant_path(1.0);
  m.eta = benes::constant_path(2.5);
  m.xi = {1.0, 0.0};
  m.P0 = Mat2::diag(0.04, 0.04);
  m.z1_lo = -2.0;
  m.z1_hi = 4.0;
  m.T = 1.0;
  m.dt = 5e-3;
  m.u_min = -2.0;
  m.u_max = 2.0;
  m.cost.coupling = coupling;
  m.cost.track_q = 1.0;
  m.cost.track_c = 0.5;
  m.cost.lambda_u = 0.5;
  m.seed = seed;
  return m;
}

nash::NashGapOptions fast_nash_options(const BenesModel& m) {
  nash::NashGapOptions opt;
  opt.replications = 6;
  opt.seed = m.seed;
  opt.grids = control::HjbGrids::defaults_for(m, FilterStepMode::kInnovation);
  opt.grids.r1_nodes = 25;
  opt.grids.r2_nodes = 151;
  opt.grids.a_nodes = 21;
  opt.alphas = {1.0};
  opt.betas = {-0.1, 0.0, 0.1};
  return opt;
}

control::BenesPolicy solved_policy(const BenesModel& m, const nash::NashGapOptions& opt,
                                   measure::MeasureFlow* flow_out) {
  mfg::NceOptions nce;
  nce.paths = 512;
  nce.seed = m.seed;
  nce.grids = opt.grids;
  const auto fp = mfg::nce_iterate(mfg::degenerate_initial_flow(m), m, nce);
  *flow_out = fp.iterates.back();
  const auto table =
      mfg::best_response_map(fp.iterates.back(), m, opt.grids, FilterStepMode::kInnovation);
  return control::BenesPolicy::from_table(std::make_shared<control::PolicyTable>(table));
}

}  // namespace

TEST_CASE("epsilon_N literal evaluation") {
  CHECK(nash::epsilon_N(std::vector<double>{0.7, 0.7, 0.7}, 0.7) == doctest::Approx(0.0));
  CHECK(nash::epsilon_N(std::vector<double>{0.0, 1.0}, 0.5) == doctest::Approx(0.25));
  CHECK(nash::epsilon_N(std::vector<double>{0.3}, 0.3) == doctest::Approx(0.0));
  // Permutation invariance.
  CHECK(nash::epsilon_N(std::vector<double>{0.1, 0.9, 0.4}, 0.2) ==
        doctest::Approx(nash::epsilon_N(std::vector<double>{0.9, 0.4, 0.1}, 0.2)));
  CHECK_THROWS_AS(nash::epsilon_N(std::vector<double>{}, 0.0), InvalidInput);
}

TEST_CASE("mv_rate_study: coupling-free gaps vanish") {
  const Scenario s = rate_scenario(0.0);
  const auto pol = ScalarPolicy::zero();
  nash::MvRateOptions opt;
  opt.replications = 4;
  opt.picard_iterations = 1;
  opt.reference_paths = 64;
  const std::vector<int> ns{8, 16, 32};
  const auto rep = nash::mv_rate_study(s, pol, ns, opt);
  for (double e : rep.errors) CHECK(e <= 1e-12);
}

TEST_CASE("mv_rate_study input validation") {
  const Scenario s = rate_scenario(0.0);
  const auto pol = ScalarPolicy::zero();
  nash::MvRateOptions opt;
  opt.replications = 2;
  CHECK_THROWS_AS(nash::mv_rate_study(s, pol, std::vector<int>{8, 16}, opt), InvalidInput);
  opt.replications = 4;
  CHECK_THROWS_AS(nash::mv_rate_study(s, pol, std::vector<int>{2}, opt), InvalidInput);
}

TEST_CASE("mv_rate_study recovers a square-root-like rate on the coupled model") {
  Scenario s = rate_scenario(0.5);
  s.dt = 4e-3;
  s.filter_mode = FilterMode::kGrid;
  const auto pol = ScalarPolicy::mean_feedback(0.5, 0.0);
  nash::MvRateOptions opt;
  opt.replications = 4;
  opt.picard_iterations = 2;
  opt.reference_paths = 1024;
  opt.filter_mode = FilterMode::kGrid;
  opt.threads = 4;
  const std::vector<int> ns{8, 16, 32, 64, 128};
  const auto rep = nash::mv_rate_study(s, pol, ns, opt);
  rep.validate();
  CHECK(rep.slope >= -0.85);
  CHECK(rep.slope <= -0.20);

  // Monotone decrease up to Monte Carlo noise: Spearman correlation of
  // (N, error) strongly negative.
  std::vector<double> ns_d(ns.begin(), ns.end());
  CHECK(oracles::spearman_rho(ns_d, rep.errors) <= -0.8);

  // Replication scatter consistent with the reported standard errors.
  for (std::size_t i = 0; i < rep.errors.size(); ++i)
    CHECK(rep.std_errors[i] <= rep.errors[i]);
}

TEST_CASE("nash_gap: degenerate family reports zero gap") {
  const BenesModel m = audit_model(0.0, 21);
  auto opt = fast_nash_options(m);
  opt.alphas = {1.0};
  opt.betas = {0.0};
  opt.include_best_response = false;
  opt.replications = 3;
  measure::MeasureFlow flow;
  const auto policy = solved_policy(m, opt, &flow);
  const auto rep = nash::nash_gap(m, policy, flow, 8, opt);
  CHECK(rep.gap == doctest::Approx(0.0));
  CHECK(rep.epsilon_N_value == doctest::Approx(0.0));
}

TEST_CASE("nash_gap: pure control penalty has no profitable deviation") {
  BenesModel m = audit_model(0.0, 22);
  m.cost.track_q = 0.0;
  m.cost.coupling = 0.0;
  m.cost.lambda_u = 1.0;
  auto opt = fast_nash_options(m);
  opt.include_best_response = false;
  opt.replications = 4;
  opt.alphas = {1.0};
  opt.betas = {-0.3, 0.0, 0.3};
  measure::MeasureFlow flow = mfg::degenerate_initial_flow(m);
  // Zero is globally optimal for a pure control penalty.
  const auto rep = nash::nash_gap(m, control::BenesPolicy::zero(), flow, 8, opt);
  CHECK(rep.gap <= 2.0 * rep.gap_std_error + 1e-12);
  CHECK(rep.baseline_cost == doctest::Approx(0.0));
}

TEST_CASE("nash_gap baseline equals the population-mode policy cost") {
  const BenesModel m = audit_model(0.1, 23);
  auto opt = fast_nash_options(m);
  opt.include_best_response = false;
  opt.replications = 2;
  measure::MeasureFlow flow;
  const auto policy = solved_policy(m, opt, &flow);
  const auto rep = nash::nash_gap(m, policy, flow, 8, opt);

  // Rebuild replication 0's baseline cost directly from the shared engine.
  control::BenesRunOptions ro;
  ro.paths = 8;
  ro.seed = rng::derive_seed(opt.seed, 101);
  const std::vector<control::BenesPolicy> pols{policy};
  const auto run = control::simulate_benes_closed_loop(
      m, std::span<const control::BenesPolicy>(pols.data(), 1), ro);
  const auto costs =
      control::benes_run_costs(m, run, control::CostCouplingMode::kPopulation, nullptr);
  // rep.baseline averages over replications; with 2 reps, agent 0 of rep 0
  // contributes exactly this value.
  control::BenesRunOptions r1 = ro;
  r1.seed = rng::derive_seed(opt.seed, 102);
  const auto run1 = control::simulate_benes_closed_loop(
      m, std::span<const control::BenesPolicy>(pols.data(), 1), r1);
  const auto costs1 =
      control::benes_run_costs(m, run1, control::CostCouplingMode::kPopulation, nullptr);
  CHECK(rep.baseline_cost == doctest::Approx(0.5 * (costs[0] + costs1[0])).epsilon(1e-12));
}

TEST_CASE("nash_rate_study: coupling-free pass and determinism") {
  const BenesModel m = audit_model(0.0, 24);
  auto opt = fast_nash_options(m);
  opt.replications = 4;
  measure::MeasureFlow flow;
  const auto policy = solved_policy(m, opt, &flow);
  const std::vector<int> ns{8, 16};
  const auto rep = nash::nash_rate_study(m, policy, flow, ns, opt);
  CHECK(rep.no_profitable_deviation);
  CHECK(rep.bound_pass);

  const auto rep2 = nash::nash_rate_study(m, policy, flow, ns, opt);
  for (std::size_t i = 0; i < rep.per_N.size(); ++i) {
    CHECK(rep.per_N[i].gap == rep2.per_N[i].gap);
    CHECK(rep.per_N[i].baseline_cost == rep2.per_N[i].baseline_cost);
  }
}

TEST_CASE("nash_gap shrinks with population size under weak coupling") {
  const BenesModel m = audit_model(0.1, 25);
  auto opt = fast_nash_options(m);
  opt.replications = 8;
  measure::MeasureFlow flow;
  const auto policy = solved_policy(m, opt, &flow);
  const std::vector<int> ns{16, 128};
  const auto rep = nash::nash_rate_study(m, policy, flow, ns, opt);
  const double g_small = std::max(rep.per_N[0].gap, 0.0);
  const double g_large = std::max(rep.per_N[1].gap, 0.0);
  CHECK(g_large <= g_small + 2.0 * (rep.per_N[0].gap_std_error + rep.per_N[1].gap_std_error) +
                       1e-9);
  CHECK(rep.bound_pass);
}
