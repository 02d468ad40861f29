// Measure flows on [0, T] and the truncated Wasserstein machinery.
//
// Measures are one-dimensional, represented either as weighted particles or
// as densities on a uniform grid. Distances use the cost |x - y| ^ 1 (wedge
// 1): per-time marginals via the monotone quantile coupling (cross-checked
// against an exact assignment solve for small equal-size particle sets), and
// path ensembles via an optimal assignment with sup-over-time cost.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pomfg/csv.hpp"
#include "pomfg/errors.hpp"
#include "pomfg/rng.hpp"

namespace pomfg::measure {

namespace detail {

// Exact linear assignment (Jonker-Volgenant style shortest augmenting
// paths, O(n^3)). Returns the minimal total cost; `match`, when given,
// receives for each column the assigned row.
inline double solve_assignment(const std::vector<std::vector<double>>& cost,
                               std::vector<int>* match = nullptr) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) return 0.0;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  if (match) match->assign(n, -1);
  for (int j = 1; j <= n; ++j) {
    total += cost[p[j] - 1][j - 1];
    if (match) (*match)[j - 1] = p[j] - 1;
  }
  return total;
}

inline void require_finite(std::span<const double> xs, const char* what) {
  for (double x : xs)
    if (!std::isfinite(x)) throw InvalidInput(std::string(what) + " contains a non-finite value");
}

}  // namespace detail

enum class MeasureKind { kParticle, kGrid };

// A probability measure on the line. Particle form stores (x_k, w_k) with
// w_k >= 0; grid form stores density values on a uniform grid and integrates
// by the trapezoid rule.
class Measure {
 public:
  static Measure particles(std::vector<double> xs, std::vector<double> ws) {
    if (xs.empty() || xs.size() != ws.size())
      throw InvalidInput("particle measure needs matching nonempty x/w arrays");
    detail::require_finite(xs, "particle positions");
    detail::require_finite(ws, "particle weights");
    for (double w : ws)
      if (w < 0.0) throw InvalidInput("particle weights must be nonnegative");
    Measure m;
    m.kind_ = MeasureKind::kParticle;
    m.xs_ = std::move(xs);
    m.ws_ = std::move(ws);
    if (m.mass() <= 0.0) throw InvalidInput("particle measure has zero mass");
    return m;
  }

  static Measure grid(double x_lo, double dx, std::vector<double> density) {
    if (density.size() < 2) throw InvalidInput("grid measure needs at least two nodes");
    if (!(dx > 0.0)) throw InvalidInput("grid spacing must be strictly positive");
    detail::require_finite(density, "grid density");
    for (double p : density)
      if (p < 0.0) throw InvalidInput("grid density must be nonnegative");
    Measure m;
    m.kind_ = MeasureKind::kGrid;
    m.dx_ = dx;
    m.xs_.resize(density.size());
    for (std::size_t j = 0; j < density.size(); ++j) m.xs_[j] = x_lo + dx * static_cast<double>(j);
    m.ws_ = std::move(density);
    if (m.mass() <= 0.0) throw InvalidInput("grid measure has zero mass");
    return m;
  }

  static Measure dirac(double x) { return particles({x}, {1.0}); }

  MeasureKind kind() const { return kind_; }
  std::size_t size() const { return xs_.size(); }
  const std::vector<double>& points() const { return xs_; }
  // Weights (particle) or density values (grid).
  const std::vector<double>& values() const { return ws_; }
  double spacing() const { return dx_; }

  double mass() const {
    if (kind_ == MeasureKind::kParticle)
      return std::accumulate(ws_.begin(), ws_.end(), 0.0);
    double s = std::accumulate(ws_.begin(), ws_.end(), 0.0);
    s -= 0.5 * (ws_.front() + ws_.back());
    return s * dx_;
  }

  bool is_normalized(double tol = 1e-9) const { return std::abs(mass() - 1.0) <= tol; }

  Measure normalized() const {
    const double m = mass();
    if (!(m > 0.0)) throw InvalidInput("cannot normalize zero-mass measure");
    Measure out = *this;
    for (double& w : out.ws_) w /= m;
    return out;
  }

  // Native quadrature of f against the measure.
  double integrate(const std::function<double(double)>& f) const {
    double s = 0.0;
    if (kind_ == MeasureKind::kParticle) {
      for (std::size_t k = 0; k < xs_.size(); ++k) s += ws_[k] * f(xs_[k]);
      return s;
    }
    for (std::size_t j = 0; j < xs_.size(); ++j) {
      const double trap = (j == 0 || j + 1 == xs_.size()) ? 0.5 * dx_ : dx_;
      s += trap * ws_[j] * f(xs_[j]);
    }
    return s;
  }

  double mean() const { return integrate([](double x) { return x; }) / mass(); }

  double variance() const {
    const double m1 = mean();
    return integrate([m1](double x) { return (x - m1) * (x - m1); }) / mass();
  }

  // Grid nodes weighted by their trapezoid mass; particle form is returned
  // unchanged. Couplings run on this single representation.
  Measure as_particles() const {
    if (kind_ == MeasureKind::kParticle) return *this;
    std::vector<double> ws(ws_.size());
    for (std::size_t j = 0; j < ws_.size(); ++j) {
      const double trap = (j == 0 || j + 1 == ws_.size()) ? 0.5 * dx_ : dx_;
      ws[j] = trap * ws_[j];
    }
    return particles(xs_, std::move(ws));
  }

  bool uniform_weights(double tol = 1e-12) const {
    if (kind_ != MeasureKind::kParticle) return false;
    const double w0 = ws_.front();
    for (double w : ws_)
      if (std::abs(w - w0) > tol * std::max(1.0, std::abs(w0))) return false;
    return true;
  }

 private:
  MeasureKind kind_ = MeasureKind::kParticle;
  std::vector<double> xs_;
  std::vector<double> ws_;
  double dx_ = 0.0;
};

inline Measure empirical_measure(std::span<const double> samples) {
  if (samples.empty()) throw InvalidInput("empirical_measure: empty sample set");
  detail::require_finite(samples, "samples");
  const double w = 1.0 / static_cast<double>(samples.size());
  return Measure::particles(std::vector<double>(samples.begin(), samples.end()),
                            std::vector<double>(samples.size(), w));
}

namespace detail {

// Truncated cost evaluated under the monotone (quantile) coupling. For the
// untruncated |x-y| cost the monotone coupling is the optimal one in 1-D;
// with the wedge-1 cap it is an upper bound on the optimal coupling cost and
// still a metric (the cap commutes with the pointwise triangle inequality).
inline double quantile_coupling_cost(const Measure& a, const Measure& b) {
  const Measure pa = a.as_particles().normalized();
  const Measure pb = b.as_particles().normalized();
  std::vector<std::size_t> ia(pa.size()), ib(pb.size());
  std::iota(ia.begin(), ia.end(), 0);
  std::iota(ib.begin(), ib.end(), 0);
  std::sort(ia.begin(), ia.end(),
            [&](std::size_t l, std::size_t r) { return pa.points()[l] < pa.points()[r]; });
  std::sort(ib.begin(), ib.end(),
            [&](std::size_t l, std::size_t r) { return pb.points()[l] < pb.points()[r]; });
  double cost = 0.0;
  std::size_t ka = 0, kb = 0;
  double ra = pa.values()[ia[0]], rb = pb.values()[ib[0]];
  while (true) {
    // Skip exhausted atoms (zero-weight particles are legal).
    while (ka < ia.size() && ra <= 0.0) {
      ++ka;
      if (ka < ia.size()) ra = pa.values()[ia[ka]];
    }
    while (kb < ib.size() && rb <= 0.0) {
      ++kb;
      if (kb < ib.size()) rb = pb.values()[ib[kb]];
    }
    if (ka >= ia.size() || kb >= ib.size()) break;
    const double m = std::min(ra, rb);
    const double d = std::abs(pa.points()[ia[ka]] - pb.points()[ib[kb]]);
    cost += m * std::min(d, 1.0);
    ra -= m;
    rb -= m;
  }
  return cost;
}

}  // namespace detail

// Particle-count threshold below which equal-size uniform-weight inputs are
// also solved as an exact assignment (the truncated cost is concave, so the
// monotone coupling need not be optimal for it).
inline constexpr std::size_t kExactAssignmentThreshold = 256;

// Wasserstein distance between single-time marginals with cost |x-y| ^ 1.
inline double marginal_distance(const Measure& a, const Measure& b) {
  if (!a.is_normalized() || !b.is_normalized())
    throw InvalidInput("marginal_distance requires normalized measures");
  double best = detail::quantile_coupling_cost(a, b);
  if (a.kind() == MeasureKind::kParticle && b.kind() == MeasureKind::kParticle &&
      a.size() == b.size() && a.size() <= kExactAssignmentThreshold &&
      a.uniform_weights() && b.uniform_weights()) {
    const std::size_t n = a.size();
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        cost[i][j] = std::min(std::abs(a.points()[i] - b.points()[j]), 1.0);
    const double exact = detail::solve_assignment(cost) / static_cast<double>(n);
    best = std::min(best, exact);
  }
  return std::min(best, 1.0);
}

// An ensemble of sample paths sharing one time grid; the empirical stand-in
// for a path-space law.
struct PathEnsemble {
  std::vector<double> times;
  std::vector<std::vector<double>> paths;  // [path][time index]
  std::uint64_t seed = 0;

  void validate() const {
    if (paths.empty()) throw InvalidInput("path ensemble must contain at least one path");
    for (const auto& p : paths)
      if (p.size() != times.size())
        throw InvalidInput("path ensemble rows must match the time grid");
  }

  Measure marginal_at(std::size_t t_index) const {
    std::vector<double> xs(paths.size());
    for (std::size_t m = 0; m < paths.size(); ++m) xs[m] = paths[m].at(t_index);
    return empirical_measure(xs);
  }
};

// Empirical truncated Wasserstein path distance D_T: optimal assignment of
// paths under the cost sup_t |x(t) - y(t)| ^ 1.
inline double path_distance_DT(const PathEnsemble& a, const PathEnsemble& b) {
  a.validate();
  b.validate();
  if (a.paths.size() != b.paths.size())
    throw InvalidInput("path_distance_DT requires equal ensemble sizes");
  if (a.times.size() != b.times.size())
    throw InvalidInput("path_distance_DT requires a shared time grid");
  for (std::size_t i = 0; i < a.times.size(); ++i)
    if (std::abs(a.times[i] - b.times[i]) > 1e-12)
      throw InvalidInput("path_distance_DT requires a shared time grid");
  const std::size_t m = a.paths.size();
  std::vector<std::vector<double>> cost(m, std::vector<double>(m));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double sup = 0.0;
      for (std::size_t t = 0; t < a.times.size(); ++t)
        sup = std::max(sup, std::abs(a.paths[i][t] - b.paths[j][t]));
      cost[i][j] = std::min(sup, 1.0);
    }
  }
  return detail::solve_assignment(cost) / static_cast<double>(m);
}

// A time-indexed family of measures on [0, T].
struct MeasureFlow {
  std::vector<double> times;
  std::vector<Measure> measures;
  std::optional<double> holder_beta;

  void validate() const {
    if (times.empty() || times.size() != measures.size())
      throw InvalidInput("measure flow needs one measure per time point");
    if (std::abs(times.front()) > 1e-12)
      throw InvalidInput("measure flow must start at t = 0");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1]))
        throw InvalidInput("measure flow times must be strictly increasing");
    if (holder_beta && !(*holder_beta > 0.0 && *holder_beta <= 1.0))
      throw InvalidInput("holder exponent must lie in (0, 1]");
  }

  std::size_t index_of_time(double t, double tol = 1e-9) const {
    for (std::size_t i = 0; i < times.size(); ++i)
      if (std::abs(times[i] - t) <= tol) return i;
    throw InvalidInput("time not on the flow grid");
  }
};

inline double sup_marginal_distance(const MeasureFlow& a, const MeasureFlow& b) {
  a.validate();
  b.validate();
  if (a.times.size() != b.times.size())
    throw InvalidInput("flows must share a time grid");
  double sup = 0.0;
  for (std::size_t i = 0; i < a.times.size(); ++i)
    sup = std::max(sup, marginal_distance(a.measures[i], b.measures[i]));
  return sup;
}

// Bounded Lipschitz test function with its declared constants.
struct BoundedLipschitzFn {
  std::string name;
  std::function<double(double)> fn;
  double bound = 1.0;
  double lipschitz = 1.0;
};

struct HolderReport {
  double max_ratio = 0.0;
  bool pass = false;
  double beta = 0.0;
  double bound = 0.0;
  std::string worst_function;
  double worst_t_a = 0.0;
  double worst_t_b = 0.0;
  std::size_t pairs_checked = 0;
};

// Empirical check of the Holder-in-time regularity |int psi dmu_t' -
// int psi dmu_t''| <= B |t' - t''|^beta over adjacent time pairs plus a
// seeded random selection of distant pairs.
inline HolderReport holder_check(const MeasureFlow& flow, double beta, double bound,
                                 std::span<const BoundedLipschitzFn> test_functions,
                                 std::size_t distant_pairs = 32,
                                 std::uint64_t seed = 2026) {
  flow.validate();
  if (test_functions.empty()) throw InvalidInput("holder_check: empty test function set");
  if (!(beta > 0.0 && beta <= 1.0)) throw InvalidInput("holder_check: beta must be in (0, 1]");
  if (!(bound > 0.0)) throw InvalidInput("holder_check: B must be positive");

  HolderReport rep;
  rep.beta = beta;
  rep.bound = bound;

  const std::size_t n = flow.times.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i + 1 < n; ++i) pairs.emplace_back(i, i + 1);
  for (std::size_t k = 0; k < distant_pairs && n > 2; ++k) {
    const auto i = static_cast<std::size_t>(rng::uniform01(seed, 17, 2 * k) * static_cast<double>(n));
    const auto j = static_cast<std::size_t>(rng::uniform01(seed, 17, 2 * k + 1) * static_cast<double>(n));
    const std::size_t lo = std::min(i, j), hi = std::max(i, j);
    if (lo < hi && hi < n) pairs.emplace_back(lo, hi);
  }

  // Integrals cached per (function, time).
  std::vector<std::vector<double>> ints(test_functions.size(), std::vector<double>(n));
  for (std::size_t f = 0; f < test_functions.size(); ++f)
    for (std::size_t i = 0; i < n; ++i)
      ints[f][i] = flow.measures[i].integrate(test_functions[f].fn);

  for (const auto& [i, j] : pairs) {
    const double dt = std::abs(flow.times[i] - flow.times[j]);
    if (dt <= 0.0) continue;
    for (std::size_t f = 0; f < test_functions.size(); ++f) {
      const double ratio = std::abs(ints[f][i] - ints[f][j]) / std::pow(dt, beta);
      if (ratio > rep.max_ratio) {
        rep.max_ratio = ratio;
        rep.worst_function = test_functions[f].name;
        rep.worst_t_a = flow.times[i];
        rep.worst_t_b = flow.times[j];
      }
    }
    ++rep.pairs_checked;
  }
  rep.pass = rep.max_ratio <= bound;
  return rep;
}

// ---- CSV serialization -----------------------------------------------------

inline void write_measure_csv(const Measure& m, const std::string& path) {
  csv::Writer w(path);
  w.comment(std::string("kind=") + (m.kind() == MeasureKind::kParticle ? "particle" : "grid"));
  w.header({"x", m.kind() == MeasureKind::kParticle ? "weight" : "density"});
  for (std::size_t i = 0; i < m.size(); ++i) w.row({m.points()[i], m.values()[i]});
}

inline void write_flow_csv(const MeasureFlow& flow, const std::string& path) {
  flow.validate();
  csv::Writer w(path);
  const bool particle = flow.measures.front().kind() == MeasureKind::kParticle;
  w.comment(std::string("kind=") + (particle ? "particle" : "grid"));
  w.header({"t", "x", particle ? "weight" : "density"});
  for (std::size_t i = 0; i < flow.times.size(); ++i) {
    const Measure& m = flow.measures[i];
    for (std::size_t j = 0; j < m.size(); ++j)
      w.row({flow.times[i], m.points()[j], m.values()[j]});
  }
}

inline Measure read_measure_csv(const std::string& path) {
  const csv::Table t = csv::read(path);
  if (t.columns.size() != 2) throw InvalidInput("measure csv must have two columns");
  std::vector<double> xs, ws;
  for (const auto& r : t.rows) {
    xs.push_back(r.at(0));
    ws.push_back(r.at(1));
  }
  if (t.columns[1] == "density") {
    if (xs.size() < 2) throw InvalidInput("grid measure csv needs at least two rows");
    return Measure::grid(xs.front(), xs[1] - xs[0], ws);
  }
  return Measure::particles(std::move(xs), std::move(ws));
}

inline MeasureFlow read_flow_csv(const std::string& path) {
  const csv::Table t = csv::read(path);
  if (t.columns.size() != 3) throw InvalidInput("flow csv must have three columns");
  const bool grid_kind = t.columns[2] == "density";
  MeasureFlow flow;
  std::vector<double> xs, ws;
  double cur_t = 0.0;
  bool open = false;
  auto flush = [&]() {
    if (!open) return;
    flow.times.push_back(cur_t);
    flow.measures.push_back(grid_kind ? Measure::grid(xs.front(), xs[1] - xs[0], ws)
                                      : Measure::particles(xs, ws));
    xs.clear();
    ws.clear();
  };
  for (const auto& r : t.rows) {
    if (!open || std::abs(r.at(0) - cur_t) > 1e-12) {
      flush();
      cur_t = r.at(0);
      open = true;
    }
    xs.push_back(r.at(1));
    ws.push_back(r.at(2));
  }
  flush();
  flow.validate();
  return flow;
}

}  // namespace pomfg::measure
