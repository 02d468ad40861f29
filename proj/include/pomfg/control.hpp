// Separated control: Hamiltonian evaluation and minimization over the
// compact control set, backward dynamic programming for the Benes-lane HJB
// equation on the sufficient-statistic reduction (r, P_t, lambda_t), and
// Monte Carlo policy-cost evaluation for both lanes.
//
// The value table lives on forward time with V(T, .) = 0 (the paper's
// time-reversed initial condition mapped to the horizon end). Transport of
// the value through the r dynamics is semi-Lagrangian with multilinear
// interpolation; innovation mode adds the explicit diffusion term with
// covariance (P H' N^-1) N (P H' N^-1)' dt, guarded by a CFL check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pomfg/benes.hpp"
#include "pomfg/dynamics.hpp"
#include "pomfg/errors.hpp"
#include "pomfg/filtering.hpp"
#include "pomfg/measure.hpp"
#include "pomfg/parallel.hpp"

namespace pomfg::control {

using benes::BenesCostForm;
using benes::BenesModel;
using benes::FilterStepMode;
using benes::Mat2;
using benes::SufficientStats;
using benes::Vec2;

// ---- Hamiltonian over density information states -------------------------------

// H(t, p, a) = a <d/dx V_p, p> + <L[., a, mu], p>, both inner products by
// grid quadrature with the unnormalized density p.
inline double hamiltonian(double /*t*/, const filtering::DensityGrid& p, double a,
                          const std::function<double(double)>& grad_value_kernel,
                          const measure::Measure& mu, const CostForm& cost) {
  if (!mu.is_normalized()) throw InvalidInput("hamiltonian: measure not normalized");
  const double mu_mean = mu.integrate([](double y) { return y; });
  const double mu_second = mu.integrate([](double y) { return y * y; });
  double drift_pairing = 0.0;
  double cost_pairing = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double w = p.trapezoid_weight(j) * p.values()[j];
    const double x = p.node(j);
    drift_pairing += w * grad_value_kernel(x);
    cost_pairing += w * (cost.l0_vs_measure(x, mu_mean, mu_second) + 0.5 * cost.lambda_u * a * a);
  }
  return a * drift_pairing + cost_pairing;
}

// argmin_a H(t, p, a) over [u_min, u_max]. Closed form for lambda_u > 0;
// otherwise a 1001-point grid search with deterministic tie-breaking
// (smallest |a|, then smallest a). Invariant under positive rescaling of p.
inline double minimize_hamiltonian(double t, const filtering::DensityGrid& p,
                                   const std::function<double(double)>& grad_value_kernel,
                                   const measure::Measure& mu, const CostForm& cost,
                                   double u_min, double u_max,
                                   int grid_points = 1001) {
  if (!(u_min < u_max)) throw InvalidInput("minimize_hamiltonian: empty control interval");
  if (cost.lambda_u > 0.0) {
    double drift_pairing = 0.0;
    double mass_pairing = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double w = p.trapezoid_weight(j) * p.values()[j];
      drift_pairing += w * grad_value_kernel(p.node(j));
      mass_pairing += w;
    }
    if (!(mass_pairing > 0.0)) throw InvalidInput("minimize_hamiltonian: zero-mass density");
    const double unconstrained = -drift_pairing / (cost.lambda_u * mass_pairing);
    return std::min(u_max, std::max(u_min, unconstrained));
  }
  double best_a = u_min;
  double best_v = hamiltonian(t, p, u_min, grad_value_kernel, mu, cost);
  for (int i = 1; i < grid_points; ++i) {
    const double a = u_min + (u_max - u_min) * static_cast<double>(i) /
                                 static_cast<double>(grid_points - 1);
    const double v = hamiltonian(t, p, a, grad_value_kernel, mu, cost);
    const bool tie = v == best_v;
    if (v < best_v ||
        (tie && (std::abs(a) < std::abs(best_a) ||
                 (std::abs(a) == std::abs(best_a) && a < best_a)))) {
      best_v = v;
      best_a = a;
    }
  }
  return best_a;
}

// Reads a user-supplied gradient kernel x -> dV_p/dx from CSV (x, gradV);
// evaluated by linear interpolation, clamped at the ends.
inline std::function<double(double)> read_grad_kernel_csv(const std::string& path) {
  const csv::Table t = csv::read(path);
  if (t.columns.size() != 2 || t.rows.empty())
    throw InvalidInput("gradient kernel csv must have columns (x, gradV)");
  auto xs = std::make_shared<std::vector<double>>();
  auto gs = std::make_shared<std::vector<double>>();
  for (const auto& r : t.rows) {
    xs->push_back(r.at(0));
    gs->push_back(r.at(1));
  }
  for (std::size_t i = 1; i < xs->size(); ++i)
    if (!((*xs)[i] > (*xs)[i - 1]))
      throw InvalidInput("gradient kernel csv must have increasing x");
  return [xs, gs](double x) {
    if (x <= xs->front()) return gs->front();
    if (x >= xs->back()) return gs->back();
    const auto it = std::upper_bound(xs->begin(), xs->end(), x);
    const std::size_t hi = static_cast<std::size_t>(it - xs->begin());
    const std::size_t lo = hi - 1;
    const double w = (x - (*xs)[lo]) / ((*xs)[hi] - (*xs)[lo]);
    return (1.0 - w) * (*gs)[lo] + w * (*gs)[hi];
  };
}

// ---- tables ---------------------------------------------------------------------

namespace detail {

inline std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 2 || !(hi > lo)) throw ConfigError("grid axis needs hi > lo and >= 2 nodes");
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    v[static_cast<std::size_t>(i)] =
        lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

// Locate x on a sorted axis; returns (index, fraction) with clamping.
inline std::pair<std::size_t, double> locate(const std::vector<double>& axis, double x,
                                             bool* clamped = nullptr) {
  if (x <= axis.front()) {
    if (clamped && x < axis.front() - 1e-12) *clamped = true;
    return {0, 0.0};
  }
  if (x >= axis.back()) {
    if (clamped && x > axis.back() + 1e-12) *clamped = true;
    return {axis.size() - 2, 1.0};
  }
  const auto it = std::upper_bound(axis.begin(), axis.end(), x);
  const std::size_t hi = static_cast<std::size_t>(it - axis.begin());
  const std::size_t lo = hi - 1;
  return {lo, (x - axis[lo]) / (axis[hi] - axis[lo])};
}

}  // namespace detail

// Control values in U on a (time) x (r1) x (r2) grid; multilinear in r,
// piecewise constant in t (the slice covering [t_s, t_{s+1})).
struct PolicyTable {
  std::vector<double> times;  // slice left endpoints, uniform
  std::vector<double> r1;
  std::vector<double> r2;
  std::vector<double> values;  // [t][i][j]
  double u_min = -1.0;
  double u_max = 1.0;

  std::size_t idx(std::size_t s, std::size_t i, std::size_t j) const {
    return (s * r1.size() + i) * r2.size() + j;
  }

  std::size_t slice_of_time(double t) const {
    if (times.size() == 1) return 0;
    const double dt = times[1] - times[0];
    const auto s = static_cast<long>(std::floor((t - times.front()) / dt + 1e-12));
    return static_cast<std::size_t>(std::clamp<long>(s, 0, static_cast<long>(times.size()) - 1));
  }

  double at(double t, double x1, double x2, bool* clamped = nullptr) const {
    const std::size_t s = slice_of_time(t);
    const auto [i, fi] = detail::locate(r1, x1, clamped);
    const auto [j, fj] = detail::locate(r2, x2, clamped);
    const double v00 = values[idx(s, i, j)];
    const double v01 = values[idx(s, i, j + 1)];
    const double v10 = values[idx(s, i + 1, j)];
    const double v11 = values[idx(s, i + 1, j + 1)];
    const double v = (1 - fi) * ((1 - fj) * v00 + fj * v01) + fi * ((1 - fj) * v10 + fj * v11);
    return std::min(u_max, std::max(u_min, v));
  }

  // Largest finite-difference slope across the state axes; the reported
  // Lipschitz estimate of the feedback law.
  double lipschitz_estimate() const {
    double lip = 0.0;
    for (std::size_t s = 0; s < times.size(); ++s) {
      for (std::size_t i = 0; i < r1.size(); ++i)
        for (std::size_t j = 0; j + 1 < r2.size(); ++j)
          lip = std::max(lip, std::abs(values[idx(s, i, j + 1)] - values[idx(s, i, j)]) /
                                  (r2[j + 1] - r2[j]));
      for (std::size_t i = 0; i + 1 < r1.size(); ++i)
        for (std::size_t j = 0; j < r2.size(); ++j)
          lip = std::max(lip, std::abs(values[idx(s, i + 1, j)] - values[idx(s, i, j)]) /
                                  (r1[i + 1] - r1[i]));
    }
    return lip;
  }

  double sup_difference(const PolicyTable& o) const {
    if (values.size() != o.values.size())
      throw InvalidInput("policy tables must share a grid for comparison");
    double sup = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k)
      sup = std::max(sup, std::abs(values[k] - o.values[k]));
    return sup;
  }
};

// Value function V(t, r) with terminal slice zero, plus central-difference
// gradient tables.
struct ValueTable {
  std::vector<double> times;  // slice times 0..T (steps+1 entries)
  std::vector<double> r1;
  std::vector<double> r2;
  std::vector<double> values;   // [t][i][j]
  std::vector<double> grad_r1;  // same layout
  std::vector<double> grad_r2;
  long boundary_clamp_events = 0;

  std::size_t idx(std::size_t s, std::size_t i, std::size_t j) const {
    return (s * r1.size() + i) * r2.size() + j;
  }

  double at(double t, double x1, double x2) const {
    const double dt = times.size() > 1 ? times[1] - times[0] : 1.0;
    const auto sraw = static_cast<long>(std::llround((t - times.front()) / dt));
    const std::size_t s =
        static_cast<std::size_t>(std::clamp<long>(sraw, 0, static_cast<long>(times.size()) - 1));
    const auto [i, fi] = detail::locate(r1, x1);
    const auto [j, fj] = detail::locate(r2, x2);
    const double v00 = values[idx(s, i, j)];
    const double v01 = values[idx(s, i, j + 1)];
    const double v10 = values[idx(s, i + 1, j)];
    const double v11 = values[idx(s, i + 1, j + 1)];
    return (1 - fi) * ((1 - fj) * v00 + fj * v01) + fi * ((1 - fj) * v10 + fj * v11);
  }
};

struct HjbGrids {
  double r1_lo = -4.0, r1_hi = 6.0;
  int r1_nodes = 41;
  double r2_lo = -3.0, r2_hi = 3.0;
  int r2_nodes = 301;
  int a_nodes = 41;

  // Bounds wide enough to contain xi +- 6 sqrt(max P) on each component.
  static HjbGrids defaults_for(const BenesModel& model, FilterStepMode mode);
};

// Covariance parameter path P_t on the model's time grid for the given mode
// (innovation mode folds the observation information into the coefficient).
inline std::vector<Mat2> riccati_path(const BenesModel& model, FilterStepMode mode) {
  const int steps = model.steps();
  std::vector<Mat2> out(static_cast<std::size_t>(steps) + 1);
  out[0] = model.P0;
  for (int s = 0; s < steps; ++s) {
    const double t = model.dt * static_cast<double>(s);
    Mat2 Qm = model.q_matrix(t);
    if (mode == FilterStepMode::kInnovation) {
      const Vec2 h = model.h_row(t);
      const double n = model.Nobs(t);
      Qm = Qm + Mat2{h.x * h.x / n, h.x * h.y / n, h.x * h.y / n, h.y * h.y / n};
    }
    out[static_cast<std::size_t>(s) + 1] =
        benes::riccati_step(out[static_cast<std::size_t>(s)], Qm, model.g_matrix(t), model.dt);
  }
  return out;
}

inline HjbGrids HjbGrids::defaults_for(const BenesModel& model, FilterStepMode mode) {
  const auto P = riccati_path(model, mode);
  double p11 = 0.0, p22 = 0.0;
  for (const auto& m : P) {
    p11 = std::max(p11, m.a);
    p22 = std::max(p22, m.d);
  }
  HjbGrids g;
  const double s1 = 6.0 * std::sqrt(std::max(p11, 1e-12)) + 0.5;
  const double s2 = 6.0 * std::sqrt(std::max(p22, 1e-12)) + 3.0;
  g.r1_lo = model.xi.x - s1;
  g.r1_hi = model.xi.x + s1;
  g.r2_lo = model.xi.y - s2;
  g.r2_hi = model.xi.y + s2;
  return g;
}

namespace detail {

// Exact first and second moments of z2 under the normalized information
// state exp(phi(z1)) N(z; r, P): Gamma is quadratic in z1 and the cost is
// quadratic in z2, so Gaussian product moments close the integrals.
struct Z2Moments {
  double mean = 0.0;
  double second = 0.0;
};

inline Z2Moments tilted_z2_moments(const BenesModel& model, double t, const Vec2& r,
                                   const Mat2& P) {
  const double Dl = model.Delta(t), vs = model.varsigma(t), et = model.eta(t);
  const double r1 = r.x, r2 = r.y;
  const Mat2 Ps = P.symmetrized();
  const double p11 = Ps.a, p12 = Ps.b, p22 = Ps.d;
  const double e_g = 0.5 * Dl * (p11 + r1 * r1) + vs * r1 + et;  // E Gamma(z1)
  if (!(e_g > 0.0)) throw DomainError("tilted_z2_moments: E[Gamma] <= 0");
  const double e_z2_g = 0.5 * Dl * (r2 * (p11 + r1 * r1) + 2.0 * p12 * r1) +
                        vs * (r1 * r2 + p12) + et * r2;
  const double e_z2z2_g =
      0.5 * Dl * ((p22 + r2 * r2) * (p11 + r1 * r1) + 2.0 * p12 * p12 +
                  4.0 * r1 * r2 * p12) +
      vs * (r1 * (p22 + r2 * r2) + 2.0 * r2 * p12) + et * (p22 + r2 * r2);
  return {e_z2_g / e_g, e_z2z2_g / e_g};
}

}  // namespace detail

struct HjbSolution {
  ValueTable value;
  PolicyTable policy;
};

// Backward dynamic programming for the Benes-lane HJB on the sufficient
// statistics. Terminal value zero; each step minimizes over a discretized U
// the expected running cost against the information state plus the value
// propagated through the r dynamics of the chosen filter mode.
inline HjbSolution solve_hjb_sufficient_stats(const BenesModel& model,
                                              const measure::MeasureFlow& flow,
                                              const HjbGrids& grids, FilterStepMode mode,
                                              int threads = 1) {
  model.validate();
  flow.validate();
  const int steps = model.steps();
  const auto P = riccati_path(model, mode);

  // Grid bounds must contain xi +- 6 sqrt(max P) componentwise.
  double p11 = 0.0, p22 = 0.0;
  for (const auto& m : P) {
    p11 = std::max(p11, m.a);
    p22 = std::max(p22, m.d);
  }
  if (grids.r1_lo > model.xi.x - 6.0 * std::sqrt(p11) ||
      grids.r1_hi < model.xi.x + 6.0 * std::sqrt(p11) ||
      grids.r2_lo > model.xi.y - 6.0 * std::sqrt(p22) ||
      grids.r2_hi < model.xi.y + 6.0 * std::sqrt(p22))
    throw ConfigError("HJB r grid must contain xi +- 6 sqrt(max P)");

  const auto r1 = detail::linspace(grids.r1_lo, grids.r1_hi, grids.r1_nodes);
  const auto r2 = detail::linspace(grids.r2_lo, grids.r2_hi, grids.r2_nodes);
  if (grids.a_nodes < 2) throw ConfigError("HJB needs at least 2 control nodes");
  const auto a_grid = detail::linspace(model.u_min, model.u_max, grids.a_nodes);
  const double dr1 = r1[1] - r1[0];
  const double dr2 = r2[1] - r2[0];

  // Innovation-mode diffusion: D = (P H' / N) N (P H' / N)' = (P H')(P H')' / N.
  std::vector<Mat2> Dmat(static_cast<std::size_t>(steps) + 1, Mat2::zero());
  if (mode == FilterStepMode::kInnovation) {
    double worst = 0.0;
    for (int s = 0; s <= steps; ++s) {
      const double t = model.dt * static_cast<double>(s);
      const Vec2 ph = P[static_cast<std::size_t>(s)] * model.h_row(t);
      const double n = model.Nobs(t);
      Dmat[static_cast<std::size_t>(s)] =
          Mat2{ph.x * ph.x / n, ph.x * ph.y / n, ph.x * ph.y / n, ph.y * ph.y / n};
      const Mat2& D = Dmat[static_cast<std::size_t>(s)];
      worst = std::max(worst, model.dt * (D.a / (dr1 * dr1) + D.d / (dr2 * dr2) +
                                          std::abs(D.b) / (dr1 * dr2)));
    }
    if (worst > 0.5)
      throw ConfigError("HJB diffusion CFL bound violated: dt tr(D/dr^2) = " +
                        csv::fmt_double(worst) + " > 0.5");
  }

  // Flow moments per step (cost couples through the first two moments).
  std::vector<double> mu_mean(static_cast<std::size_t>(steps), 0.0);
  std::vector<double> mu_second(static_cast<std::size_t>(steps), 0.0);
  for (int s = 0; s < steps; ++s) {
    const double t = model.dt * static_cast<double>(s);
    const measure::Measure& mu =
        dynamics::detail::flow_measure_at(flow, static_cast<std::size_t>(s), t);
    const double mass = mu.mass();
    mu_mean[static_cast<std::size_t>(s)] = mu.integrate([](double y) { return y; }) / mass;
    mu_second[static_cast<std::size_t>(s)] =
        mu.integrate([](double y) { return y * y; }) / mass;
  }

  HjbSolution sol;
  ValueTable& V = sol.value;
  PolicyTable& U = sol.policy;
  V.times.resize(static_cast<std::size_t>(steps) + 1);
  for (int s = 0; s <= steps; ++s) V.times[static_cast<std::size_t>(s)] = model.dt * s;
  V.r1 = r1;
  V.r2 = r2;
  V.values.assign((static_cast<std::size_t>(steps) + 1) * r1.size() * r2.size(), 0.0);
  V.grad_r1.assign(V.values.size(), 0.0);
  V.grad_r2.assign(V.values.size(), 0.0);
  U.times.assign(V.times.begin(), V.times.end() - 1);
  U.r1 = r1;
  U.r2 = r2;
  U.values.assign(static_cast<std::size_t>(steps) * r1.size() * r2.size(), 0.0);
  U.u_min = model.u_min;
  U.u_max = model.u_max;

  std::vector<double> next(r1.size() * r2.size(), 0.0);  // V(t_{s+1}, .)
  std::vector<double> diff_term(r1.size() * r2.size(), 0.0);
  std::atomic<long> clamp_events{0};

  const auto node_index = [&](std::size_t i, std::size_t j) { return i * r2.size() + j; };

  for (int s = steps - 1; s >= 0; --s) {
    const double t = model.dt * static_cast<double>(s);
    const Mat2& Ps = P[static_cast<std::size_t>(s)];
    const Mat2 Qm = model.q_matrix(t);
    const Vec2 mv = model.m_vector(t);
    const Vec2 pm = Ps * mv;
    const Mat2& D = Dmat[static_cast<std::size_t>(s)];

    // Explicit diffusion contribution evaluated on the known slice.
    if (mode == FilterStepMode::kInnovation) {
      for (std::size_t i = 0; i < r1.size(); ++i) {
        for (std::size_t j = 0; j < r2.size(); ++j) {
          const std::size_t im = i == 0 ? 0 : i - 1;
          const std::size_t ip = i + 1 == r1.size() ? i : i + 1;
          const std::size_t jm = j == 0 ? 0 : j - 1;
          const std::size_t jp = j + 1 == r2.size() ? j : j + 1;
          const double vxx =
              (next[node_index(ip, j)] - 2.0 * next[node_index(i, j)] +
               next[node_index(im, j)]) / (dr1 * dr1);
          const double vyy =
              (next[node_index(i, jp)] - 2.0 * next[node_index(i, j)] +
               next[node_index(i, jm)]) / (dr2 * dr2);
          const double vxy = (next[node_index(ip, jp)] - next[node_index(ip, jm)] -
                              next[node_index(im, jp)] + next[node_index(im, jm)]) /
                             (4.0 * dr1 * dr2);
          diff_term[node_index(i, j)] =
              model.dt * (0.5 * D.a * vxx + D.b * vxy + 0.5 * D.d * vyy);
        }
      }
    }

    parallel_for(r1.size(), threads, [&](std::size_t lo, std::size_t hi) {
      long local_clamps = 0;
      for (std::size_t i = lo; i < hi; ++i) {
        for (std::size_t j = 0; j < r2.size(); ++j) {
          const Vec2 r{r1[i], r2[j]};
          const auto zmom = detail::tilted_z2_moments(model, t, r, Ps);
          const double state_cost = model.cost.coupling *
                                        (zmom.second -
                                         2.0 * zmom.mean * mu_mean[static_cast<std::size_t>(s)] +
                                         mu_second[static_cast<std::size_t>(s)]) +
                                    model.cost.track_q *
                                        (zmom.second - 2.0 * model.cost.track_c * zmom.mean +
                                         model.cost.track_c * model.cost.track_c);
          const Vec2 base_drift = (Ps * (Qm * r)) - pm;
          double best_v = 0.0;
          double best_a = 0.0;
          bool first = true;
          for (double a : a_grid) {
            const double f1 = r.x + (base_drift.x) * model.dt;
            const double f2 = r.y + (base_drift.y + a) * model.dt;
            bool clamped = false;
            const auto [ii, fi] = detail::locate(r1, f1, &clamped);
            const auto [jj, fj] = detail::locate(r2, f2, &clamped);
            if (clamped) ++local_clamps;
            const double v00 = next[node_index(ii, jj)];
            const double v01 = next[node_index(ii, jj + 1)];
            const double v10 = next[node_index(ii + 1, jj)];
            const double v11 = next[node_index(ii + 1, jj + 1)];
            const double transported =
                (1 - fi) * ((1 - fj) * v00 + fj * v01) + fi * ((1 - fj) * v10 + fj * v11);
            const double q = model.dt * (state_cost + 0.5 * model.cost.lambda_u * a * a) +
                             transported + diff_term[node_index(i, j)];
            const bool tie = !first && q == best_v;
            if (first || q < best_v ||
                (tie && (std::abs(a) < std::abs(best_a) ||
                         (std::abs(a) == std::abs(best_a) && a < best_a)))) {
              best_v = q;
              best_a = a;
              first = false;
            }
          }
          V.values[V.idx(static_cast<std::size_t>(s), i, j)] = best_v;
          U.values[U.idx(static_cast<std::size_t>(s), i, j)] = best_a;
        }
      }
      clamp_events += local_clamps;
    });

    for (std::size_t i = 0; i < r1.size(); ++i)
      for (std::size_t j = 0; j < r2.size(); ++j)
        next[node_index(i, j)] = V.values[V.idx(static_cast<std::size_t>(s), i, j)];
  }

  V.boundary_clamp_events = clamp_events.load();

  // Central-difference gradients.
  for (std::size_t s = 0; s <= static_cast<std::size_t>(steps); ++s) {
    for (std::size_t i = 0; i < r1.size(); ++i) {
      for (std::size_t j = 0; j < r2.size(); ++j) {
        const std::size_t im = i == 0 ? 0 : i - 1;
        const std::size_t ip = i + 1 == r1.size() ? i : i + 1;
        const std::size_t jm = j == 0 ? 0 : j - 1;
        const std::size_t jp = j + 1 == r2.size() ? j : j + 1;
        V.grad_r1[V.idx(s, i, j)] = (V.values[V.idx(s, ip, j)] - V.values[V.idx(s, im, j)]) /
                                    (r1[ip] - r1[im]);
        V.grad_r2[V.idx(s, i, j)] = (V.values[V.idx(s, i, jp)] - V.values[V.idx(s, i, jm)]) /
                                    (r2[jp] - r2[jm]);
      }
    }
  }
  for (double v : V.values)
    if (!std::isfinite(v)) throw NumericalError("solve_hjb_sufficient_stats: non-finite value");
  return sol;
}

// ---- Benes-lane closed loop ------------------------------------------------------

// Feedback law on the sufficient statistics; table-backed or functional.
struct BenesPolicy {
  std::string name = "zero";
  std::function<double(double, const SufficientStats&)> fn;

  double operator()(double t, const SufficientStats& s) const { return fn ? fn(t, s) : 0.0; }

  static BenesPolicy zero() {
    return {"zero", [](double, const SufficientStats&) { return 0.0; }};
  }
  static BenesPolicy constant(double c) {
    return {"constant", [c](double, const SufficientStats&) { return c; }};
  }
  static BenesPolicy from_table(std::shared_ptr<const PolicyTable> table) {
    return {"table", [table](double t, const SufficientStats& s) {
              return table->at(t, s.r.x, s.r.y);
            }};
  }
  // clip(alpha * base + beta) into U is applied by the simulator's clip.
  static BenesPolicy affine_of(const BenesPolicy& base, double alpha, double beta) {
    auto inner = base.fn;
    return {"affine", [inner, alpha, beta](double t, const SufficientStats& s) {
              return alpha * inner(t, s) + beta;
            }};
  }
};

struct BenesRunOptions {
  int paths = 256;
  std::uint64_t seed = 1;
  FilterStepMode mode = FilterStepMode::kInnovation;
  int threads = 1;
  bool keep_stats = false;  // retain sufficient-statistic trajectories
  int stats_stride = 10;
};

// Closed-loop sample paths of the two-dimensional state, its scalar
// observation, the finite-dimensional filter, and the policy controls.
struct BenesRunResult {
  std::vector<double> times;
  std::vector<std::vector<double>> z1;        // [agent][step]
  std::vector<std::vector<double>> z2;
  std::vector<std::vector<double>> controls;  // [agent][step] (left endpoints)
  std::vector<std::vector<SufficientStats>> stats;  // thinned, when requested

  measure::MeasureFlow z2_flow() const {
    measure::MeasureFlow flow;
    flow.times = times;
    std::vector<double> xs(z2.size());
    for (std::size_t t = 0; t < times.size(); ++t) {
      for (std::size_t i = 0; i < z2.size(); ++i) xs[i] = z2[i][t];
      flow.measures.push_back(measure::empirical_measure(xs));
    }
    return flow;
  }

  measure::PathEnsemble z2_ensemble() const {
    measure::PathEnsemble e;
    e.times = times;
    e.paths = z2;
    return e;
  }
};

// Simulates `paths` agents; `policies` holds one policy (broadcast) or one
// per agent. Dynamics are mean-field free (the Benes model couples only in
// cost), so population and MV paths coincide for shared seeds.
inline BenesRunResult simulate_benes_closed_loop(const BenesModel& model,
                                                 std::span<const BenesPolicy> policies,
                                                 const BenesRunOptions& opt) {
  model.validate();
  if (opt.paths < 1) throw InvalidInput("simulate_benes_closed_loop: paths must be >= 1");
  if (policies.size() != 1 && policies.size() != static_cast<std::size_t>(opt.paths))
    throw InvalidInput("simulate_benes_closed_loop: need one policy or one per agent");
  const int steps = model.steps();
  const auto n = static_cast<std::size_t>(opt.paths);

  BenesRunResult out;
  out.times.resize(static_cast<std::size_t>(steps) + 1);
  for (int s = 0; s <= steps; ++s) out.times[static_cast<std::size_t>(s)] = model.dt * s;
  out.z1.assign(n, std::vector<double>(static_cast<std::size_t>(steps) + 1));
  out.z2.assign(n, std::vector<double>(static_cast<std::size_t>(steps) + 1));
  out.controls.assign(n, std::vector<double>(static_cast<std::size_t>(steps) + 1, 0.0));
  if (opt.keep_stats) out.stats.assign(n, {});

  parallel_for(n, opt.threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const BenesPolicy& pol = policies[policies.size() == 1 ? 0 : i];
      Vec2 z = benes::sample_initial_state(model, opt.seed, i);
      SufficientStats st = SufficientStats::initial(model);
      out.z1[i][0] = z.x;
      out.z2[i][0] = z.y;
      if (opt.keep_stats) out.stats[i].push_back(st);
      const double sqdt = std::sqrt(model.dt);
      for (int s = 0; s < steps; ++s) {
        const double t = model.dt * static_cast<double>(s);
        const double u = model.clip_control(pol(t, st));
        const double xi1 = rng::standard_normal(
            opt.seed, rng::stream_id(i, rng::NoiseKind::kStateW), static_cast<std::uint64_t>(s));
        const double xi2 = rng::standard_normal(
            opt.seed, rng::stream_id(i, rng::NoiseKind::kStateW2), static_cast<std::uint64_t>(s));
        const double xio = rng::standard_normal(
            opt.seed, rng::stream_id(i, rng::NoiseKind::kObs), static_cast<std::uint64_t>(s));
        const Vec2 h = model.h_row(t);
        const double dy = h.dot(z) * model.dt + std::sqrt(model.Nobs(t)) * sqdt * xio;
        const double g = benes_drift(model, t, z.x);
        z.x += g * model.dt + model.G11(t) * sqdt * xi1;
        z.y += u * model.dt + model.G22(t) * sqdt * xi2;
        if (!z.finite())
          throw NumericalError("simulate_benes_closed_loop: non-finite state");
        st = benes_filter_step(st, u, dy, model.dt, model, opt.mode);

        out.controls[i][static_cast<std::size_t>(s)] = u;
        out.z1[i][static_cast<std::size_t>(s) + 1] = z.x;
        out.z2[i][static_cast<std::size_t>(s) + 1] = z.y;
        if (opt.keep_stats && ((s + 1) % opt.stats_stride == 0 || s + 1 == steps))
          out.stats[i].push_back(st);
      }
      out.controls[i][static_cast<std::size_t>(steps)] =
          model.clip_control(pol(model.T, st));
    }
  });
  return out;
}

// ---- policy cost evaluation -------------------------------------------------------

struct CostEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int paths = 0;
};

namespace detail {

inline CostEstimate summarize(std::span<const double> costs) {
  CostEstimate e;
  e.paths = static_cast<int>(costs.size());
  double s = 0.0;
  for (double c : costs) s += c;
  e.mean = s / static_cast<double>(costs.size());
  double v = 0.0;
  for (double c : costs) v += (c - e.mean) * (c - e.mean);
  e.std_error = costs.size() > 1
                    ? std::sqrt(v / static_cast<double>(costs.size() - 1) /
                                static_cast<double>(costs.size()))
                    : 0.0;
  return e;
}

}  // namespace detail

enum class CostCouplingMode { kMeanField, kPopulation };

// Monte Carlo running-cost average for the scalar lane. MV mode evaluates
// the cost against the frozen flow; population mode against the empirical
// coupling of the simulated agents. Left-endpoint time quadrature.
inline CostEstimate evaluate_policy_cost(const Scenario& scen, const ScalarPolicy& policy,
                                         const measure::MeasureFlow& flow, int M,
                                         CostCouplingMode which,
                                         FilterMode filter_mode = FilterMode::kNone,
                                         int threads = 1) {
  const dynamics::TrajectoryBundle bundle =
      which == CostCouplingMode::kMeanField
          ? dynamics::simulate_mckean_vlasov(scen, policy, flow, M, filter_mode, threads)
          : dynamics::simulate_population(scen, std::span<const ScalarPolicy>(&policy, 1), M,
                                          filter_mode, &flow, threads);
  const int steps = scen.steps();
  const auto n = bundle.agents();

  std::vector<double> mu_mean(static_cast<std::size_t>(steps), 0.0);
  std::vector<double> mu_second(static_cast<std::size_t>(steps), 0.0);
  for (int s = 0; s < steps; ++s) {
    const double t = scen.dt * static_cast<double>(s);
    if (which == CostCouplingMode::kMeanField) {
      if (scen.cost.couples()) {
        const measure::Measure& mu =
            dynamics::detail::flow_measure_at(flow, static_cast<std::size_t>(s), t);
        const double mass = mu.mass();
        mu_mean[static_cast<std::size_t>(s)] =
            mu.integrate([](double y) { return y; }) / mass;
        mu_second[static_cast<std::size_t>(s)] =
            mu.integrate([](double y) { return y * y; }) / mass;
      }
    } else {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double z = bundle.states[i][static_cast<std::size_t>(s)];
        m1 += z;
        m2 += z * z;
      }
      mu_mean[static_cast<std::size_t>(s)] = m1 / static_cast<double>(n);
      mu_second[static_cast<std::size_t>(s)] = m2 / static_cast<double>(n);
    }
  }

  std::vector<double> costs(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int s = 0; s < steps; ++s) {
      const double z = bundle.states[i][static_cast<std::size_t>(s)];
      const double u = bundle.controls[i][static_cast<std::size_t>(s)];
      acc += scen.dt * (scen.cost.l0_vs_measure(z, mu_mean[static_cast<std::size_t>(s)],
                                                mu_second[static_cast<std::size_t>(s)]) +
                        0.5 * scen.cost.lambda_u * u * u);
    }
    costs[i] = acc;
  }
  return detail::summarize(costs);
}

// Per-agent total costs of a Benes closed-loop run.
inline std::vector<double> benes_run_costs(const BenesModel& model,
                                           const BenesRunResult& run,
                                           CostCouplingMode which,
                                           const measure::MeasureFlow* flow) {
  const std::size_t steps = run.times.size() - 1;
  const std::size_t n = run.z2.size();
  std::vector<double> mu_mean(steps, 0.0), mu_second(steps, 0.0);
  for (std::size_t s = 0; s < steps; ++s) {
    if (which == CostCouplingMode::kPopulation) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        m1 += run.z2[i][s];
        m2 += run.z2[i][s] * run.z2[i][s];
      }
      mu_mean[s] = m1 / static_cast<double>(n);
      mu_second[s] = m2 / static_cast<double>(n);
    } else {
      if (!flow) throw InvalidInput("benes_run_costs: mean-field mode needs a flow");
      const measure::Measure& mu =
          dynamics::detail::flow_measure_at(*flow, s, run.times[s]);
      const double mass = mu.mass();
      mu_mean[s] = mu.integrate([](double y) { return y; }) / mass;
      mu_second[s] = mu.integrate([](double y) { return y * y; }) / mass;
    }
  }
  const double dt = run.times[1] - run.times[0];
  std::vector<double> costs(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const Vec2 z{run.z1[i][s], run.z2[i][s]};
      acc += dt * model.cost.l2_vs_measure(run.times[s], z, run.controls[i][s], mu_mean[s],
                                           mu_second[s]);
    }
    costs[i] = acc;
  }
  return costs;
}

inline CostEstimate evaluate_policy_cost(const BenesModel& model, const BenesPolicy& policy,
                                         const measure::MeasureFlow& flow, int M,
                                         CostCouplingMode which,
                                         const BenesRunOptions& opt_in = {}) {
  BenesRunOptions opt = opt_in;
  opt.paths = M;
  if (opt.seed == 1) opt.seed = model.seed;
  const auto run =
      simulate_benes_closed_loop(model, std::span<const BenesPolicy>(&policy, 1), opt);
  const auto costs = benes_run_costs(model, run, which, &flow);
  return detail::summarize(costs);
}

// ---- CSV export ---------------------------------------------------------------------

inline void write_value_table_csv(const ValueTable& v, const std::string& path,
                                  int t_stride = 1) {
  csv::Writer w(path);
  w.header({"t", "r1", "r2", "V"});
  for (std::size_t s = 0; s < v.times.size(); s += static_cast<std::size_t>(t_stride))
    for (std::size_t i = 0; i < v.r1.size(); ++i)
      for (std::size_t j = 0; j < v.r2.size(); ++j)
        w.row({v.times[s], v.r1[i], v.r2[j], v.values[v.idx(s, i, j)]});
}

inline void write_policy_table_csv(const PolicyTable& p, const std::string& path,
                                   int t_stride = 1) {
  csv::Writer w(path);
  w.header({"t", "r1", "r2", "u"});
  for (std::size_t s = 0; s < p.times.size(); s += static_cast<std::size_t>(t_stride))
    for (std::size_t i = 0; i < p.r1.size(); ++i)
      for (std::size_t j = 0; j < p.r2.size(); ++j)
        w.row({p.times[s], p.r1[i], p.r2[j], p.values[p.idx(s, i, j)]});
}

}  // namespace pomfg::control
