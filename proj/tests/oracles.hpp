// Test-only oracles, independent of the implementation paths they check:
// exhaustive-permutation transport costs, a direct innovation-form Kushner
// stepper, the closed-form scalar LQ regulator, and small statistics
// helpers.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "pomfg/filtering.hpp"
#include "pomfg/measure.hpp"
#include "pomfg/scenario.hpp"

namespace oracles {

// Minimal average assignment cost by brute force over all permutations.
inline double brute_force_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost[i][perm[i]];
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

inline double brute_force_path_distance(const pomfg::measure::PathEnsemble& a,
                                        const pomfg::measure::PathEnsemble& b) {
  const std::size_t m = a.paths.size();
  std::vector<std::vector<double>> cost(m, std::vector<double>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double sup = 0.0;
      for (std::size_t t = 0; t < a.times.size(); ++t)
        sup = std::max(sup, std::abs(a.paths[i][t] - b.paths[j][t]));
      cost[i][j] = std::min(sup, 1.0);
    }
  return brute_force_assignment(cost);
}

inline double brute_force_marginal_distance(const std::vector<double>& xs,
                                            const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i][j] = std::min(std::abs(xs[i] - ys[j]), 1.0);
  return brute_force_assignment(cost);
}

// Innovation-form Kushner step: same transport stage as the Zakai solver but
// the observation correction is written against the innovation increment
// dI = dy - <h, p> dt. Analytically equal to zakai-then-normalize after
// normalization; numerically an independent route through the algebra.
inline pomfg::filtering::DensityGrid kushner_innovation_step(
    const pomfg::filtering::DensityGrid& d, double u, double dy, double dt,
    const pomfg::Scenario& scen, const pomfg::measure::Measure& mu) {
  using pomfg::filtering::DensityGrid;
  pomfg::Scenario transport_only = scen;
  transport_only.obs.kind = pomfg::ObsSpec::Kind::kZero;
  DensityGrid moved = pomfg::filtering::zakai_step(d, u, dy, dt, transport_only, mu);

  double hbar = 0.0;
  for (std::size_t j = 0; j < moved.size(); ++j)
    hbar += moved.trapezoid_weight(j) * moved.values()[j] * scen.obs(moved.node(j));
  hbar /= moved.mass();

  std::vector<double> vals(moved.values());
  const double dI = dy - hbar * dt;
  for (std::size_t j = 0; j < vals.size(); ++j) {
    const double h = scen.obs(moved.node(j));
    vals[j] *= std::exp(h * dI - 0.5 * (h - hbar) * (h - hbar) * dt);
  }
  auto out = DensityGrid::from_values(moved.x_lo(), moved.dx(), std::move(vals), moved.k(),
                                      moved.t());
  return pomfg::filtering::normalize(out);
}

// Closed-form value of min integral of q (x - c)^2 + 0.5 lam u^2 subject to
// xdot = u on [t, T]: V(t, x) = S(t) (x - c)^2 with
// S(t) = sqrt(q lam / 2) tanh(sqrt(2 q / lam) (T - t)).
inline double lq_riccati_S(double t, double T, double q, double lam) {
  return std::sqrt(q * lam / 2.0) * std::tanh(std::sqrt(2.0 * q / lam) * (T - t));
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  const auto ranks = [n](const std::vector<double>& v) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    for (std::size_t k = 0; k < n; ++k) r[idx[k]] = static_cast<double>(k);
    return r;
  };
  const auto rx = ranks(xs), ry = ranks(ys);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double dn = static_cast<double>(n);
  return 1.0 - 6.0 * d2 / (dn * (dn * dn - 1.0));
}

}  // namespace oracles
