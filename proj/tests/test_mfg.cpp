#include <cmath>
#include <memory>

#include "doctest.h"
#include "oracles.hpp"
#include "pomfg/mfg.hpp"

using namespace pomfg;
using benes::BenesModel;
using benes::FilterStepMode;
using benes::Mat2;

namespace {

BenesModel audit_model(double coupling) {
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
  m.seed = 4;
  return m;
}

mfg::NceOptions fast_options(const BenesModel& m) {
  mfg::NceOptions opt;
  opt.tol = 1e-3;
  opt.max_iter = 10;
  opt.paths = 512;
  opt.seed = m.seed;
  opt.grids = control::HjbGrids::defaults_for(m, FilterStepMode::kInnovation);
  opt.grids.r1_nodes = 25;
  opt.grids.r2_nodes = 151;
  opt.grids.a_nodes = 21;
  return opt;
}

}  // namespace

TEST_CASE("induced flow of the zero policy follows the prior law") {
  const BenesModel m = audit_model(0.0);
  const auto flow = mfg::induced_flow_of_policy(control::BenesPolicy::zero(), m, 2000,
                                                m.seed, FilterStepMode::kInnovation);
  // z2 = xi2 + G22 w2: variance P0_22 + G22^2 t.
  for (double t : {0.25, 1.0}) {
    const auto& mu = flow.measures[flow.index_of_time(t)];
    CHECK(std::abs(mu.mean() - m.xi.y) <= 0.05);
    CHECK(mu.variance() ==
          doctest::Approx(m.P0.d + m.G22(0.0) * m.G22(0.0) * t).epsilon(0.12));
  }
}

TEST_CASE("induced flow is deterministic in the seed") {
  const BenesModel m = audit_model(0.1);
  const auto pol = control::BenesPolicy::constant(0.2);
  const auto f1 = mfg::induced_flow_of_policy(pol, m, 1, 77, FilterStepMode::kInnovation);
  const auto f2 = mfg::induced_flow_of_policy(pol, m, 1, 77, FilterStepMode::kInnovation);
  for (std::size_t t = 0; t < f1.times.size(); ++t)
    CHECK(f1.measures[t].points()[0] == f2.measures[t].points()[0]);
}

TEST_CASE("flow Monte Carlo error scales like 1/sqrt(M)") {
  const BenesModel m = audit_model(0.0);
  const auto pol = control::BenesPolicy::zero();
  const auto small = mfg::closed_loop_run(m, pol, 500, m.seed, FilterStepMode::kInnovation);
  const auto big = mfg::closed_loop_run(m, pol, 1000, m.seed, FilterStepMode::kInnovation);
  const auto sem = [](const control::BenesRunResult& r) {
    std::vector<double> finals;
    for (const auto& p : r.z2) finals.push_back(p.back());
    return std::sqrt(oracles::var_of(finals) / static_cast<double>(finals.size()));
  };
  CHECK(sem(small) / sem(big) == doctest::Approx(std::sqrt(2.0)).epsilon(0.20));
}

TEST_CASE("coupling-free model reaches the fixed point in one iteration") {
  const BenesModel m = audit_model(0.0);
  const auto opt = fast_options(m);
  const auto rep = mfg::nce_iterate(mfg::degenerate_initial_flow(m), m, opt);
  CHECK(rep.converged);
  CHECK(rep.iterations <= 2);
  // With no coupling on the second pass the same seed reproduces the flow
  // exactly; the fixed point is certified by a zero distance.
  if (rep.iterations == 2) CHECK(rep.distances.back() == doctest::Approx(0.0));
}

TEST_CASE("weak coupling contracts and strong coupling warns") {
  const BenesModel weak = audit_model(0.1);
  auto opt = fast_options(weak);
  const auto rep = mfg::nce_iterate(mfg::degenerate_initial_flow(weak), weak, opt);
  CHECK(rep.converged);
  CHECK(rep.iterations <= 10);
  for (std::size_t k = 1; k + 1 < rep.distances.size(); ++k)
    CHECK(rep.distances[k + 1] <= rep.distances[k] + 1e-12);

  // Determinism: bitwise identical distance sequences across runs.
  const auto rep2 = mfg::nce_iterate(mfg::degenerate_initial_flow(weak), weak, opt);
  REQUIRE(rep2.distances.size() == rep.distances.size());
  for (std::size_t k = 0; k < rep.distances.size(); ++k)
    CHECK(rep.distances[k] == rep2.distances[k]);

  // A strongly coupled, cheap-control model exercises the non-contraction
  // diagnostic; the warning is not fatal.
  BenesModel strong = audit_model(40.0);
  strong.cost.track_q = 0.0;
  strong.cost.track_c = 0.0;
  strong.cost.lambda_u = 0.01;
  strong.u_min = -8.0;
  strong.u_max = 8.0;
  auto sopt = fast_options(strong);
  sopt.grids = control::HjbGrids::defaults_for(strong, FilterStepMode::kInnovation);
  sopt.grids.r1_nodes = 25;
  sopt.grids.r2_lo = strong.xi.y - 12.0;
  sopt.grids.r2_hi = strong.xi.y + 12.0;
  sopt.grids.r2_nodes = 201;
  sopt.grids.a_nodes = 17;
  sopt.tol = 1e-9;
  sopt.max_iter = 8;
  sopt.paths = 256;
  const auto srep = mfg::nce_iterate(mfg::degenerate_initial_flow(strong), strong, sopt);
  CHECK((srep.noncontractive_warning || !srep.converged));
}

TEST_CASE("damped iteration mixes particle flows") {
  const BenesModel m = audit_model(0.1);
  auto opt = fast_options(m);
  opt.damping = 0.5;
  opt.max_iter = 3;
  opt.tol = 1e-9;
  const auto rep = mfg::nce_iterate(mfg::degenerate_initial_flow(m), m, opt);
  CHECK(rep.iterations == 3);
  for (double d : rep.distances) CHECK(std::isfinite(d));
}

TEST_CASE("gain constants: coupling-free policies are flow-independent") {
  const BenesModel m = audit_model(0.0);
  mfg::GainEstimateOptions gopt;
  gopt.grids = fast_options(m).grids;
  gopt.paths = 256;
  gopt.seed = m.seed;

  const auto base_policy = control::BenesPolicy::zero();
  const auto base = mfg::flow_sample_of_policy(m, base_policy, 256, m.seed,
                                               FilterStepMode::kInnovation);
  const std::vector<double> betas{0.15};
  const auto perts = mfg::make_perturbation_flows(m, base_policy, betas, 256, m.seed,
                                                  FilterStepMode::kInnovation);
  const auto est = mfg::estimate_gain_constants(m, base, perts, gopt);
  CHECK(est.c1 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(est.product == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(est.gain_condition_pass);
}

TEST_CASE("gain constants on the weak-coupling model satisfy c1 c2 < 1") {
  const BenesModel m = audit_model(0.1);
  auto opt = fast_options(m);
  const auto fixed = mfg::nce_iterate(mfg::degenerate_initial_flow(m), m, opt);
  const auto table = mfg::best_response_map(fixed.iterates.back(), m, opt.grids,
                                            FilterStepMode::kInnovation);
  const auto base_policy =
      control::BenesPolicy::from_table(std::make_shared<control::PolicyTable>(table));
  const auto base = mfg::flow_sample_of_policy(m, base_policy, 256, m.seed,
                                               FilterStepMode::kInnovation);
  const std::vector<double> betas{-0.1, 0.1};
  const auto perts = mfg::make_perturbation_flows(m, base_policy, betas, 256, m.seed,
                                                  FilterStepMode::kInnovation);
  mfg::GainEstimateOptions gopt;
  gopt.grids = opt.grids;
  gopt.paths = 256;
  gopt.seed = m.seed;
  const auto est = mfg::estimate_gain_constants(m, base, perts, gopt);
  CHECK(est.c1 > 0.0);
  CHECK(est.c2 > 0.0);
  CHECK(est.product < 1.0);

  // Observed contraction ratio is consistent with the gain estimate.
  if (fixed.distances.size() >= 3) {
    for (std::size_t k = 1; k + 1 < fixed.distances.size(); ++k) {
      if (fixed.distances[k] > 1e-12)
        CHECK(fixed.distances[k + 1] / fixed.distances[k] <= est.product + 0.2);
    }
  }
}
