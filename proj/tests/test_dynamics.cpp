#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pomfg/dynamics.hpp"

using namespace pomfg;

namespace {

Scenario base_scenario() {
  Scenario s;
  s.T = 1.0;
  s.dt = 1e-3;
  s.sigma = 1.0;
  s.u_min = -1.0;
  s.u_max = 1.0;
  s.init.mean_lo = 0.0;
  s.init.mean_hi = 0.0;
  s.init.var = 0.0;
  s.seed = 42;
  return s;
}

measure::MeasureFlow constant_flow(const Scenario& s, const measure::Measure& m) {
  measure::MeasureFlow flow;
  flow.times = s.time_grid();
  flow.measures.assign(flow.times.size(), m);
  return flow;
}

}  // namespace

TEST_CASE("mean_field_drift quadrature") {
  DriftSpec identity;
  identity.kind = DriftSpec::Kind::kIdentityCoupling;
  CHECK(mean_field_drift(identity, 0.0, 3.0, measure::Measure::dirac(1.7)) ==
        doctest::Approx(1.7));

  DriftSpec zero;
  CHECK(mean_field_drift(zero, 0.0, 3.0, measure::Measure::dirac(1.7)) == doctest::Approx(0.0));

  DriftSpec sine;
  sine.kind = DriftSpec::Kind::kSinCoupling;
  const auto two_point =
      measure::empirical_measure(std::vector<double>{0.0, M_PI / 2.0});
  CHECK(mean_field_drift(sine, 0.0, 0.0, two_point) == doctest::Approx(0.5));
}

TEST_CASE("driftless population is a Brownian ensemble") {
  Scenario s = base_scenario();
  const int N = 2000;
  const auto pol = ScalarPolicy::zero();
  const auto bundle = dynamics::simulate_population(
      s, std::span<const ScalarPolicy>(&pol, 1), N, FilterMode::kNone);

  // Terminal sample mean within 3 sigma / sqrt(N) of the start.
  double mean_T = 0.0;
  for (const auto& path : bundle.states) mean_T += path.back();
  mean_T /= N;
  CHECK(std::abs(mean_T) <= 3.0 * s.sigma / std::sqrt(static_cast<double>(N)));

  // Increment kurtosis within Monte Carlo bands of the Gaussian value 3.
  std::vector<double> incs;
  for (int i = 0; i < 50; ++i)
    for (std::size_t t = 0; t + 1 < bundle.times.size(); ++t)
      incs.push_back(bundle.states[i][t + 1] - bundle.states[i][t]);
  const double m = oracles::mean_of(incs);
  double m2 = 0.0, m4 = 0.0;
  for (double x : incs) {
    m2 += (x - m) * (x - m);
    m4 += (x - m) * (x - m) * (x - m) * (x - m);
  }
  m2 /= static_cast<double>(incs.size());
  m4 /= static_cast<double>(incs.size());
  const double kurt = m4 / (m2 * m2);
  const double band = 3.0 * std::sqrt(24.0 / static_cast<double>(incs.size()));
  CHECK(std::abs(kurt - 3.0) <= band);
  CHECK(m2 == doctest::Approx(s.sigma * s.sigma * s.dt).epsilon(0.05));
}

TEST_CASE("two-agent mean reversion cancels in the sum") {
  Scenario s = base_scenario();
  s.drift.kind = DriftSpec::Kind::kMeanReversion;
  s.drift.gamma = 1.0;
  const auto pol = ScalarPolicy::zero();
  const auto bundle = dynamics::simulate_population(
      s, std::span<const ScalarPolicy>(&pol, 1), 2, FilterMode::kNone);

  // The pairwise couplings cancel, so z1 + z2 is exactly the sum of the
  // retained Brownian increments.
  double noise_sum = 0.0;
  for (std::size_t t = 0; t + 1 < bundle.times.size(); ++t) {
    noise_sum += s.sigma * (bundle.state_noise[0][t] + bundle.state_noise[1][t]);
    const double drifted = bundle.states[0][t + 1] + bundle.states[1][t + 1] -
                           bundle.states[0][0] - bundle.states[1][0];
    CHECK(drifted == doctest::Approx(noise_sum).epsilon(1e-12));
  }
}

TEST_CASE("constant policy is recorded verbatim") {
  Scenario s = base_scenario();
  s.T = 0.05;
  const auto pol = ScalarPolicy::constant(s.u_max);
  const auto bundle = dynamics::simulate_population(
      s, std::span<const ScalarPolicy>(&pol, 1), 3, FilterMode::kNone);
  for (const auto& path : bundle.controls)
    for (double u : path) CHECK(u == doctest::Approx(s.u_max));
}

TEST_CASE("MV run shares Brownian increments with the population run") {
  Scenario s = base_scenario();
  s.drift.kind = DriftSpec::Kind::kZero;
  const auto pol = ScalarPolicy::zero();
  const auto flow = constant_flow(s, measure::Measure::dirac(0.0));
  const int N = 16;
  const auto pop = dynamics::simulate_population(
      s, std::span<const ScalarPolicy>(&pol, 1), N, FilterMode::kNone);
  const auto mv = dynamics::simulate_mckean_vlasov(s, pol, flow, N, FilterMode::kNone);
  for (int i = 0; i < N; ++i) {
    for (std::size_t t = 0; t + 1 < pop.times.size(); ++t) {
      CHECK(pop.state_noise[i][t] == mv.state_noise[i][t]);
      CHECK(pop.obs_noise[i][t] == mv.obs_noise[i][t]);
    }
    // Coupling-free dynamics: paths coincide bitwise.
    for (std::size_t t = 0; t < pop.times.size(); ++t)
      CHECK(pop.states[i][t] == mv.states[i][t]);
  }
}

TEST_CASE("MV drift follows the frozen flow mean") {
  Scenario s = base_scenario();
  s.drift.kind = DriftSpec::Kind::kIdentityCoupling;
  const auto pol = ScalarPolicy::zero();

  // Flow = delta_0 for all t: driftless.
  const auto flow0 = constant_flow(s, measure::Measure::dirac(0.0));
  const auto b0 = dynamics::simulate_mckean_vlasov(s, pol, flow0, 500, FilterMode::kNone);
  double mean_T = 0.0;
  for (const auto& p : b0.states) mean_T += p.back();
  mean_T /= 500.0;
  CHECK(std::abs(mean_T) <= 3.0 / std::sqrt(500.0));

  // Flow mean m(t) = t: terminal mean z(0) + T^2/2.
  measure::MeasureFlow ramp;
  ramp.times = s.time_grid();
  for (double t : ramp.times) ramp.measures.push_back(measure::Measure::dirac(t));
  const auto b1 = dynamics::simulate_mckean_vlasov(s, pol, ramp, 500, FilterMode::kNone);
  double mean_T1 = 0.0;
  for (const auto& p : b1.states) mean_T1 += p.back();
  mean_T1 /= 500.0;
  CHECK(std::abs(mean_T1 - 0.5 * s.T * s.T) <= 3.0 / std::sqrt(500.0));
}

TEST_CASE("induced_flow marginals") {
  Scenario s = base_scenario();
  s.T = 0.01;
  s.dt = 1e-3;

  dynamics::TrajectoryBundle constant;
  constant.times = s.time_grid();
  constant.states.assign(1, std::vector<double>(constant.times.size(), 2.5));
  const auto flow_c = dynamics::induced_flow(constant);
  for (const auto& m : flow_c.measures) {
    CHECK(m.mean() == doctest::Approx(2.5));
    CHECK(m.variance() == doctest::Approx(0.0));
  }

  dynamics::TrajectoryBundle mirrored = constant;
  mirrored.states.assign(2, std::vector<double>(constant.times.size()));
  for (std::size_t t = 0; t < constant.times.size(); ++t) {
    mirrored.states[0][t] = 1.0 + static_cast<double>(t);
    mirrored.states[1][t] = -mirrored.states[0][t];
  }
  for (const auto& m : dynamics::induced_flow(mirrored).measures)
    CHECK(m.mean() == doctest::Approx(0.0));
}

TEST_CASE("Brownian variance law of the induced flow") {
  Scenario s = base_scenario();
  const auto pol = ScalarPolicy::zero();
  const auto bundle = dynamics::simulate_population(
      s, std::span<const ScalarPolicy>(&pol, 1), 1000, FilterMode::kNone);
  const auto flow = dynamics::induced_flow(bundle);
  for (double t : {0.25, 0.5, 1.0}) {
    const std::size_t idx = flow.index_of_time(t);
    CHECK(flow.measures[idx].variance() == doctest::Approx(t).epsilon(0.10));
  }
}

TEST_CASE("bounded drift keeps paths inside the linear-growth envelope") {
  Scenario s = base_scenario();
  s.drift.kind = DriftSpec::Kind::kSinCoupling;  // |fdag| <= 1
  s.drift.declared_bound = 1.0;
  s.T = 1.0;
  s.dt = 1e-2;
  const auto pol = ScalarPolicy::constant(0.3);
  const auto bundle = dynamics::simulate_population(
      s, std::span<const ScalarPolicy>(&pol, 1), 10000, FilterMode::kNone);
  const double envelope = (s.drift.declared_bound + s.u_max) * s.T +
                          6.0 * s.sigma * std::sqrt(s.T);
  for (const auto& path : bundle.states)
    for (double z : path) CHECK(std::abs(z - path.front()) <= envelope);
}

TEST_CASE("determinism and thread independence") {
  Scenario s = base_scenario();
  s.drift.kind = DriftSpec::Kind::kMeanReversion;
  s.drift.gamma = 0.5;
  s.T = 0.1;
  const auto pol = ScalarPolicy::zero();
  const auto a = dynamics::simulate_population(
      s, std::span<const ScalarPolicy>(&pol, 1), 32, FilterMode::kNone, nullptr, 1);
  const auto b = dynamics::simulate_population(
      s, std::span<const ScalarPolicy>(&pol, 1), 32, FilterMode::kNone, nullptr, 4);
  for (int i = 0; i < 32; ++i)
    for (std::size_t t = 0; t < a.times.size(); ++t)
      CHECK(a.states[i][t] == b.states[i][t]);
}

TEST_CASE("filter blowup carries the offending time") {
  Scenario s = base_scenario();
  // A grid far too small for the diffusion: mass reaches the boundary.
  s.grid = GridSpec{-0.5, 0.5, 64};
  s.dt = 1e-4;
  s.T = 0.05;
  s.filter_mode = FilterMode::kGrid;
  s.init.var = 0.01;
  const auto pol = ScalarPolicy::mean_feedback(0.1, 0.0);
  bool threw = false;
  try {
    dynamics::simulate_population(s, std::span<const ScalarPolicy>(&pol, 1), 1,
                                  FilterMode::kGrid);
  } catch (const FilterBlowup& e) {
    threw = true;
    CHECK(e.t > 0.0);
    CHECK(e.t <= s.T + 1e-9);
  }
  CHECK(threw);
}
