#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "pomfg/measure.hpp"

using namespace pomfg;
using measure::Measure;
using measure::MeasureFlow;
using measure::PathEnsemble;

namespace {

Measure random_uniform_particles(std::mt19937_64& gen, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> xs(n);
  for (double& x : xs) x = dist(gen);
  return measure::empirical_measure(xs);
}

PathEnsemble random_ensemble(std::mt19937_64& gen, std::size_t m, std::size_t steps,
                             double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  PathEnsemble e;
  e.times.resize(steps + 1);
  for (std::size_t t = 0; t <= steps; ++t) e.times[t] = 0.1 * static_cast<double>(t);
  e.paths.assign(m, std::vector<double>(steps + 1, 0.0));
  for (auto& p : e.paths)
    for (std::size_t t = 1; t <= steps; ++t) p[t] = p[t - 1] + dist(gen);
  return e;
}

}  // namespace

TEST_CASE("empirical_measure basics") {
  const auto d0 = measure::empirical_measure(std::vector<double>{0.0});
  CHECK(d0.size() == 1);
  CHECK(d0.values()[0] == doctest::Approx(1.0));
  CHECK(d0.mass() == doctest::Approx(1.0));

  const auto ones = measure::empirical_measure(std::vector<double>{1.0, 1.0, 1.0});
  CHECK(ones.mass() == doctest::Approx(1.0));
  CHECK(ones.mean() == doctest::Approx(1.0));

  const auto two = measure::empirical_measure(std::vector<double>{0.0, 1.0});
  CHECK(two.values()[0] == doctest::Approx(0.5));
  CHECK(two.mean() == doctest::Approx(0.5));

  CHECK_THROWS_AS(measure::empirical_measure(std::vector<double>{}), InvalidInput);
  CHECK_THROWS_AS(measure::empirical_measure(std::vector<double>{1.0, std::nan("")}),
                  InvalidInput);
}

TEST_CASE("marginal_distance point masses") {
  const auto d0 = Measure::dirac(0.0);
  CHECK(measure::marginal_distance(d0, d0) == doctest::Approx(0.0));
  CHECK(measure::marginal_distance(d0, Measure::dirac(0.3)) == doctest::Approx(0.3));
  CHECK(measure::marginal_distance(d0, Measure::dirac(5.0)) == doctest::Approx(1.0));
}

TEST_CASE("marginal_distance rejects unnormalized input") {
  const auto raw = Measure::particles({0.0, 1.0}, {1.0, 1.0});  // mass 2
  CHECK_THROWS_AS(measure::marginal_distance(raw, Measure::dirac(0.0)), InvalidInput);
}

TEST_CASE("marginal_distance matches brute-force truncated assignment") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> dist(-1.5, 1.5);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 2 + static_cast<std::size_t>(rep % 5);
    std::vector<double> xs(n), ys(n);
    for (double& x : xs) x = dist(gen);
    for (double& y : ys) y = dist(gen);
    const double got = measure::marginal_distance(measure::empirical_measure(xs),
                                                  measure::empirical_measure(ys));
    const double want = oracles::brute_force_marginal_distance(xs, ys);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("grid measures couple through mass-weighted nodes") {
  // Grid Gaussian vs the same Gaussian shifted; W1 of a location shift is
  // the shift itself.
  const int n = 401;
  const double lo = -8.0, dx = 16.0 / (n - 1);
  std::vector<double> a(n), b(n);
  for (int j = 0; j < n; ++j) {
    const double x = lo + dx * j;
    a[j] = std::exp(-0.5 * x * x);
    b[j] = std::exp(-0.5 * (x - 0.25) * (x - 0.25));
  }
  const auto ma = Measure::grid(lo, dx, a).normalized();
  const auto mb = Measure::grid(lo, dx, b).normalized();
  CHECK(measure::marginal_distance(ma, mb) == doctest::Approx(0.25).epsilon(2e-2));
}

TEST_CASE("path_distance_DT identity and constant shift") {
  std::mt19937_64 gen(11);
  const auto a = random_ensemble(gen, 5, 6, 0.3);
  CHECK(measure::path_distance_DT(a, a) == doctest::Approx(0.0));

  PathEnsemble shifted = a;
  for (auto& p : shifted.paths)
    for (double& x : p) x += 0.4;
  CHECK(measure::path_distance_DT(a, shifted) == doctest::Approx(0.4).epsilon(1e-12));

  PathEnsemble bad = a;
  bad.paths.pop_back();
  CHECK_THROWS_AS(measure::path_distance_DT(a, bad), InvalidInput);
}

TEST_CASE("path_distance_DT equals the exhaustive permutation oracle for M <= 6") {
  std::mt19937_64 gen(13);
  for (int rep = 0; rep < 12; ++rep) {
    const std::size_t m = 2 + static_cast<std::size_t>(rep % 5);
    const auto a = random_ensemble(gen, m, 5, 0.5);
    const auto b = random_ensemble(gen, m, 5, 0.5);
    CHECK(measure::path_distance_DT(a, b) ==
          doctest::Approx(oracles::brute_force_path_distance(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("metric axioms on randomized instances") {
  std::mt19937_64 gen(17);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 3 + static_cast<std::size_t>(rep % 4);
    const auto a = random_uniform_particles(gen, n, -2.0, 2.0);
    const auto b = random_uniform_particles(gen, n, -2.0, 2.0);
    const auto c = random_uniform_particles(gen, n, -2.0, 2.0);
    const double ab = measure::marginal_distance(a, b);
    const double ba = measure::marginal_distance(b, a);
    const double ac = measure::marginal_distance(a, c);
    const double cb = measure::marginal_distance(c, b);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0 + 1e-15);
    CHECK(measure::marginal_distance(a, a) == doctest::Approx(0.0));
    CHECK(ab <= ac + cb + 1e-9);
  }
}

TEST_CASE("path metric axioms and marginal lower bound") {
  std::mt19937_64 gen(19);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t m = 3 + static_cast<std::size_t>(rep % 4);
    const auto a = random_ensemble(gen, m, 4, 0.4);
    const auto b = random_ensemble(gen, m, 4, 0.4);
    const auto c = random_ensemble(gen, m, 4, 0.4);
    const double ab = measure::path_distance_DT(a, b);
    CHECK(ab == doctest::Approx(measure::path_distance_DT(b, a)).epsilon(1e-12));
    CHECK(ab <= measure::path_distance_DT(a, c) + measure::path_distance_DT(c, b) + 1e-9);
    CHECK(ab >= -1e-15);
    CHECK(ab <= 1.0 + 1e-15);

    // sup-over-time inside the coupling dominates any per-time marginal
    // coupling.
    double sup_marginal = 0.0;
    for (std::size_t t = 0; t < a.times.size(); ++t)
      sup_marginal = std::max(
          sup_marginal, measure::marginal_distance(a.marginal_at(t), b.marginal_at(t)));
    CHECK(ab + 1e-12 >= sup_marginal);
  }
}

TEST_CASE("holder_check on flows") {
  const std::vector<measure::BoundedLipschitzFn> fns{
      {"clipped_identity", [](double x) { return std::clamp(x, -10.0, 10.0); }, 10.0, 1.0},
  };
  const std::vector<measure::BoundedLipschitzFn> unit_fn{
      {"unit", [](double) { return 1.0; }, 1.0, 0.0},
  };

  // Constant flow: ratio 0, passes any positive bound.
  MeasureFlow constant;
  for (int i = 0; i <= 10; ++i) {
    constant.times.push_back(0.1 * i);
    constant.measures.push_back(Measure::dirac(0.7));
  }
  const auto rep_const = measure::holder_check(constant, 0.5, 1e-6, fns);
  CHECK(rep_const.max_ratio == doctest::Approx(0.0));
  CHECK(rep_const.pass);

  // Gaussian flow with mean t on a grid: ratio of the clipped-identity
  // integral is the mean difference over dt, i.e. 1 for beta = 1.
  MeasureFlow moving;
  const int n = 801;
  const double lo = -12.0, dx = 24.0 / (n - 1);
  for (int i = 0; i <= 10; ++i) {
    const double t = 0.1 * i;
    std::vector<double> vals(n);
    for (int j = 0; j < n; ++j) {
      const double x = lo + dx * j;
      vals[j] = std::exp(-0.5 * (x - t) * (x - t));
    }
    moving.times.push_back(t);
    moving.measures.push_back(Measure::grid(lo, dx, vals).normalized());
  }
  const auto rep_moving = measure::holder_check(moving, 1.0, 1.05, fns);
  CHECK(rep_moving.max_ratio == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(rep_moving.pass);
  CHECK_FALSE(measure::holder_check(moving, 1.0, 0.9, fns).pass);

  // psi == 1: mass is constant along the flow.
  const auto rep_unit = measure::holder_check(moving, 0.5, 1.0, unit_fn);
  CHECK(rep_unit.max_ratio == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(
      measure::holder_check(moving, 0.5, 1.0, std::span<const measure::BoundedLipschitzFn>{}),
      InvalidInput);
}

TEST_CASE("measure and flow csv round trip") {
  std::mt19937_64 gen(23);
  const auto m = random_uniform_particles(gen, 7, -1.0, 3.0);
  const std::string path = "/tmp/pomfg_measure_test.csv";
  measure::write_measure_csv(m, path);
  const auto back = measure::read_measure_csv(path);
  REQUIRE(back.size() == m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(back.points()[i] == doctest::Approx(m.points()[i]).epsilon(1e-15));
    CHECK(back.values()[i] == doctest::Approx(m.values()[i]).epsilon(1e-15));
  }

  MeasureFlow flow;
  for (int i = 0; i < 4; ++i) {
    flow.times.push_back(0.25 * i);
    flow.measures.push_back(random_uniform_particles(gen, 5, -2.0, 2.0));
  }
  const std::string fpath = "/tmp/pomfg_flow_test.csv";
  measure::write_flow_csv(flow, fpath);
  const auto fback = measure::read_flow_csv(fpath);
  REQUIRE(fback.times.size() == flow.times.size());
  CHECK(measure::sup_marginal_distance(flow, fback) == doctest::Approx(0.0).epsilon(1e-12));
}
