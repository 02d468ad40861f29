// Finite-dimensional nonlinear filter for the two-dimensional Benes-type
// model: state z = (z1, z2) with dz1 = g(t, z1) dt + G11 dw1,
// dz2 = u dt + G22 dw2, scalar observation dy = H z dt + sqrt(N) db, and
// g(t, x) = G11^2 (Delta_t x + varsigma_t) / Gamma(t, x) for the quadratic
// Gamma(t, x) = 0.5 Delta_t x^2 + varsigma_t x + eta_t. The information
// state is exp(phi(t, z1) + lambda_t) times a Gaussian with parameters
// (r_t, P_t), phi = log Gamma.
//
// The filter ODEs ship in two modes. "literal" advances r exactly by the
// printed ODE dr = (P Q) r dt - P m dt + u dt, with no observation term.
// "innovation" adds the gain P H' N^-1 (dy - H r dt) and advances P with the
// observation-information term folded into the Riccati coefficient
// (Q + H' N^-1 H); that mode reduces exactly to the Kalman-Bucy filter on
// the linear-Gaussian sub-case.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pomfg/errors.hpp"
#include "pomfg/filtering.hpp"
#include "pomfg/scenario.hpp"

namespace pomfg::benes {

// ---- small dense 2x2 / 2-vector helpers --------------------------------------

struct Vec2 {
  double x = 0.0, y = 0.0;
  double operator[](int i) const { return i == 0 ? x : y; }
  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

struct Mat2 {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;  // [[a, b], [c, d]]

  static Mat2 diag(double p, double q) { return {p, 0.0, 0.0, q}; }
  static Mat2 zero() { return {}; }

  Mat2 operator+(const Mat2& o) const { return {a + o.a, b + o.b, c + o.c, d + o.d}; }
  Mat2 operator-(const Mat2& o) const { return {a - o.a, b - o.b, c - o.c, d - o.d}; }
  Mat2 operator*(double s) const { return {a * s, b * s, c * s, d * s}; }
  Mat2 operator*(const Mat2& o) const {
    return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
  }
  Vec2 operator*(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }

  Mat2 transpose() const { return {a, c, b, d}; }
  double trace() const { return a + d; }
  double det() const { return a * d - b * c; }
  bool finite() const {
    return std::isfinite(a) && std::isfinite(b) && std::isfinite(c) && std::isfinite(d);
  }

  Mat2 inverse() const {
    const double dt = det();
    if (!(std::abs(dt) > 1e-300)) throw NumericalError("Mat2: singular matrix");
    return {d / dt, -b / dt, -c / dt, a / dt};
  }

  Mat2 symmetrized() const {
    const double off = 0.5 * (b + c);
    return {a, off, off, d};
  }

  // Eigenvalues of the symmetrized matrix, ascending.
  std::array<double, 2> sym_eigenvalues() const {
    const Mat2 s = symmetrized();
    const double mid = 0.5 * (s.a + s.d);
    const double rad = std::sqrt(0.25 * (s.a - s.d) * (s.a - s.d) + s.b * s.b);
    return {mid - rad, mid + rad};
  }

  // Projects the symmetrized matrix onto the PSD cone (negative eigenvalues
  // clamped at zero). Returns the projection and sets `clamped` when a
  // negative eigenvalue was present.
  Mat2 psd_projected(bool* clamped = nullptr) const {
    const Mat2 s = symmetrized();
    auto ev = s.sym_eigenvalues();
    if (clamped) *clamped = ev[0] < 0.0;
    if (ev[0] >= 0.0) return s;
    // Eigenvector for ev[1] (the larger one).
    double vx, vy;
    if (std::abs(s.b) > 1e-300) {
      vx = ev[1] - s.d;
      vy = s.b;
    } else {
      vx = s.a >= s.d ? 1.0 : 0.0;
      vy = s.a >= s.d ? 0.0 : 1.0;
    }
    const double nrm = std::sqrt(vx * vx + vy * vy);
    vx /= nrm;
    vy /= nrm;
    const double lam = std::max(ev[1], 0.0);
    return {lam * vx * vx, lam * vx * vy, lam * vx * vy, lam * vy * vy};
  }
};

using Path = std::function<double(double)>;

inline Path constant_path(double c) {
  return [c](double) { return c; };
}

// ---- running cost for the Benes lane ------------------------------------------

// l2(t, z, a, y) = coupling (z2 - y)^2 + track_q (z2 - track_c)^2
//                  + 0.5 lambda_u a^2, coupled to the mean field through the
// scalar y (the other agents' z2).
struct BenesCostForm {
  double coupling = 0.0;
  double track_q = 0.0;
  double track_c = 0.0;
  double lambda_u = 0.0;

  double l2(double /*t*/, const Vec2& z, double a, double y) const {
    const double dz = z.y - y;
    const double dc = z.y - track_c;
    return coupling * dz * dz + track_q * dc * dc + 0.5 * lambda_u * a * a;
  }

  // int l2 dmu with mu summarized by its first two moments (exact: l2 is
  // quadratic in y).
  double l2_vs_measure(double /*t*/, const Vec2& z, double a, double mu_mean,
                       double mu_second) const {
    const double dc = z.y - track_c;
    return coupling * (z.y * z.y - 2.0 * z.y * mu_mean + mu_second) +
           track_q * dc * dc + 0.5 * lambda_u * a * a;
  }

  // State-cost part integrated against the information state's z2-marginal
  // N(r2, P22): E (z2 - b)^2 = (r2 - b)^2 + P22.
  double expected_state_cost(double r2, double p22, double mu_mean, double mu_second) const {
    return coupling * (r2 * r2 + p22 - 2.0 * r2 * mu_mean + mu_second) +
           track_q * ((r2 - track_c) * (r2 - track_c) + p22);
  }
};

// ---- model --------------------------------------------------------------------

struct BenesModel {
  // Diffusion and observation coefficient paths.
  Path G11 = constant_path(0.5);
  Path G22 = constant_path(0.3);
  Path H1 = constant_path(1.0);
  Path H2 = constant_path(0.0);
  Path Nobs = constant_path(1.0);
  // Quadratic-potential coefficient paths of the phi equation.
  Path Q = constant_path(0.0);
  Path m = constant_path(0.0);
  Path delta = constant_path(0.0);
  // Gamma coefficients.
  Path Delta = constant_path(0.0);
  Path varsigma = constant_path(1.0);
  Path eta = constant_path(2.5);

  Vec2 xi{1.0, 0.0};
  Mat2 P0 = Mat2::diag(0.04, 0.04);
  BenesCostForm cost;
  double u_min = -2.0;
  double u_max = 2.0;

  double T = 1.0;
  double dt = 5e-3;
  std::uint64_t seed = 1;

  // Working interval for z1 (grid filters, Gamma-positivity checks).
  double z1_lo = -2.0;
  double z1_hi = 4.0;

  double gamma_fn(double t, double x) const {
    return 0.5 * Delta(t) * x * x + varsigma(t) * x + eta(t);
  }
  double phi(double t, double x) const {
    const double g = gamma_fn(t, x);
    if (!(g > 0.0)) throw DomainError("phi: Gamma(t, x) <= 0");
    return std::log(g);
  }

  double clip_control(double u) const { return std::min(u_max, std::max(u_min, u)); }

  int steps() const {
    const double raw = T / dt;
    const double rounded = std::round(raw);
    if (std::abs(raw - rounded) > 1e-9 * std::max(1.0, raw))
      throw ConfigError("T/dt must be an integer number of steps");
    return static_cast<int>(rounded);
  }

  void validate() const {
    if (!(T > 0.0) || !(dt > 0.0)) throw ConfigError("T and dt must be positive");
    (void)steps();
    if (!(u_min < u_max)) throw ConfigError("control interval requires u_min < u_max");
    if (cost.lambda_u < 0.0 || cost.coupling < 0.0 || cost.track_q < 0.0)
      throw ConfigError("cost weights must be nonnegative");
    for (double t : {0.0, 0.5 * T, T}) {
      if (!(G11(t) > 0.0) || !(G22(t) > 0.0))
        throw ConfigError("diffusion coefficients G11, G22 must be positive");
      if (!(Nobs(t) > 0.0))
        throw ConfigError("observation covariance N must be positive definite");
    }
    // Gamma must stay positive on the working interval and across the
    // initial sampling range.
    const double span = z1_hi - z1_lo;
    if (!(span > 0.0)) throw ConfigError("z1 working interval is empty");
    const double sd0 = std::sqrt(std::max(P0.a, 1e-12));
    const double lo = std::min(z1_lo, xi.x - 12.0 * sd0);
    const double hi = std::max(z1_hi, xi.x + 12.0 * sd0);
    for (int it = 0; it <= 16; ++it) {
      const double t = T * static_cast<double>(it) / 16.0;
      for (int ix = 0; ix <= 64; ++ix) {
        const double x = lo + (hi - lo) * static_cast<double>(ix) / 64.0;
        if (!(gamma_fn(t, x) > 0.0))
          throw ConfigError("Gamma(t, x) must be positive on the working grid");
      }
    }
    auto ev = P0.sym_eigenvalues();
    if (ev[0] < -1e-12) throw ConfigError("P0 must be PSD");
  }

  Mat2 q_matrix(double t) const { return Mat2::diag(Q(t), 0.0); }
  Vec2 m_vector(double t) const { return {m(t), 0.0}; }
  Mat2 g_matrix(double t) const { return Mat2::diag(G11(t), G22(t)); }
  Vec2 h_row(double t) const { return {H1(t), H2(t)}; }
};

// Nonlinear drift of the first state component,
// g(t, x) = G11^2 (Delta_t x + varsigma_t) / Gamma(t, x); identically equal
// to G11^2 d/dx log Gamma.
inline double benes_drift(const BenesModel& model, double t, double x) {
  const double g = model.gamma_fn(t, x);
  if (!(g > 0.0)) throw DomainError("benes_drift: Gamma(t, x) <= 0");
  const double g11 = model.G11(t);
  return g11 * g11 * (model.Delta(t) * x + model.varsigma(t)) / g;
}

// ---- sufficient statistics and their evolution ---------------------------------

struct SufficientStats {
  Vec2 r{};
  Mat2 P = Mat2::zero();
  double lambda = 0.0;
  double t = 0.0;
  long psd_clamp_events = 0;

  static SufficientStats initial(const BenesModel& model) {
    SufficientStats s;
    s.r = model.xi;
    s.P = model.P0;
    s.lambda = 0.0;
    s.t = 0.0;
    return s;
  }

  void validate() const {
    if (!r.finite() || !P.finite() || !std::isfinite(lambda))
      throw NumericalError("sufficient statistics contain non-finite entries");
    if (P.sym_eigenvalues()[0] < -1e-10)
      throw NumericalError("sufficient statistics covariance lost PSD");
  }
};

// One explicit 4th-order step of dP/dt = -P Q P + G G^T with coefficients
// frozen over the step. The output is symmetrized and projected onto the PSD
// cone (negative eigenvalues clamped at zero).
inline Mat2 riccati_step(const Mat2& P, const Mat2& Qm, const Mat2& Gm, double dt,
                         bool* clamped = nullptr) {
  const Mat2 GG = Gm * Gm.transpose();
  const auto rhs = [&](const Mat2& X) { return GG - X * Qm * X; };
  const Mat2 k1 = rhs(P);
  const Mat2 k2 = rhs(P + k1 * (0.5 * dt));
  const Mat2 k3 = rhs(P + k2 * (0.5 * dt));
  const Mat2 k4 = rhs(P + k3 * dt);
  Mat2 out = P + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
  if (!out.finite()) throw NumericalError("riccati_step: non-finite entries");
  return out.psd_projected(clamped);
}

enum class FilterStepMode { kLiteral, kInnovation };

// One step of the finite-dimensional filter. The control enters the second
// component of r, matching the state drift (g, u).
inline SufficientStats benes_filter_step(const SufficientStats& s, double u, double dy,
                                         double dt, const BenesModel& model,
                                         FilterStepMode mode) {
  s.validate();
  const double t = s.t;
  const double nobs = model.Nobs(t);
  if (!(nobs > 0.0)) throw ConfigError("benes_filter_step: singular observation covariance");

  const Mat2 Qm = model.q_matrix(t);
  const Vec2 mv = model.m_vector(t);
  const Mat2 Gm = model.g_matrix(t);
  const Vec2 h = model.h_row(t);

  SufficientStats out = s;
  out.t = t + dt;

  Vec2 dr = (s.P * (Qm * s.r)) * dt - (s.P * mv) * dt + Vec2{0.0, u * dt};
  Mat2 riccati_Q = Qm;
  if (mode == FilterStepMode::kInnovation) {
    const Vec2 gain = (s.P * h) * (1.0 / nobs);
    const double innovation = dy - h.dot(s.r) * dt;
    dr = dr + gain * innovation;
    // Observation information folded into the Riccati coefficient; this is
    // what makes the linear-Gaussian sub-case reduce to Kalman-Bucy.
    const Mat2 theta{h.x * h.x / nobs, h.x * h.y / nobs, h.x * h.y / nobs, h.y * h.y / nobs};
    riccati_Q = Qm + theta;
  }
  out.r = s.r + dr;
  bool clamped = false;
  out.P = riccati_step(s.P, riccati_Q, Gm, dt, &clamped);
  if (clamped) ++out.psd_clamp_events;

  const auto lambda_integrand = [&](const SufficientStats& st, double tt) {
    const Mat2 Qt = model.q_matrix(tt);
    const Vec2 mt = model.m_vector(tt);
    return 0.5 * (st.r.dot(Qt * st.r) + 2.0 * mt.dot(st.r) + model.delta(tt) +
                  (st.P * Qt).trace());
  };
  out.lambda = s.lambda + 0.5 * dt * (lambda_integrand(s, t) + lambda_integrand(out, out.t));
  out.validate();
  return out;
}

// Pointwise unnormalized information-state value
// q(x) = exp(phi(t, x1) + lambda) N(x; r, P).
inline double benes_density(const SufficientStats& s, const BenesModel& model,
                            const Vec2& x) {
  const double gam = model.gamma_fn(s.t, x.x);
  if (!(gam > 0.0)) throw DomainError("benes_density: Gamma(t, x1) <= 0");
  const double det = s.P.det();
  if (!(det > 1e-300)) throw DomainError("benes_density: P is singular");
  const Mat2 Pinv = s.P.inverse();
  const Vec2 d = x - s.r;
  const double quad = d.dot(Pinv * d);
  const double gauss = std::exp(-0.5 * quad) / (2.0 * M_PI * std::sqrt(det));
  return std::exp(s.lambda) * gam * gauss;
}

// Normalized z1-marginal of the information state on a grid: proportional to
// Gamma(t, x) N(x; r1, P11). This is what the one-dimensional grid Zakai
// solver estimates on the same model when H = (H1, 0).
inline filtering::DensityGrid benes_z1_marginal(const SufficientStats& s,
                                                const BenesModel& model,
                                                const GridSpec& grid, int k = 2) {
  grid.validate();
  const double p11 = s.P.a;
  if (!(p11 > 0.0)) throw DomainError("benes_z1_marginal: P11 must be positive");
  std::vector<double> vals(static_cast<std::size_t>(grid.nodes));
  const double dx = grid.dx();
  for (int j = 0; j < grid.nodes; ++j) {
    const double x = grid.x_lo + dx * static_cast<double>(j);
    const double gam = std::max(model.gamma_fn(s.t, x), 0.0);
    vals[static_cast<std::size_t>(j)] =
        gam * std::exp(-0.5 * (x - s.r.x) * (x - s.r.x) / p11);
  }
  auto d = filtering::DensityGrid::from_values(grid.x_lo, dx, std::move(vals), k, s.t);
  return filtering::normalize(d);
}

// ---- phi-equation residual -----------------------------------------------------

struct PhiResidualReport {
  double max_residual = 0.0;
  bool pass = false;
  double tolerance = 0.0;
  double worst_t = 0.0;
  double worst_x = 0.0;
  std::size_t points_checked = 0;
};

// Max-norm residual of
//   dphi/dt + 0.5 G11^2 phi_xx + 0.5 |G11 phi_x|^2 - 0.5 (Q x^2 + 2 m x + delta)
// over the sampled grid x times. Spatial derivatives of phi = log Gamma are
// analytic in the Gamma coefficients; the time derivative uses finite
// differences of the coefficient paths.
inline PhiResidualReport phi_residual_check(const BenesModel& model,
                                            std::span<const double> xs,
                                            std::span<const double> times,
                                            double tolerance = 1e-6) {
  if (xs.empty() || times.empty())
    throw InvalidInput("phi_residual_check: empty sample sets");
  PhiResidualReport rep;
  rep.tolerance = tolerance;
  const double h = 1e-6 * std::max(1.0, model.T);
  for (double t : times) {
    // Central difference where possible, one-sided at the horizon ends.
    const double tl = std::max(0.0, t - h);
    const double tr = std::min(model.T, t + h);
    const double span = tr - tl;
    const double g11 = model.G11(t);
    for (double x : xs) {
      const double gam = model.gamma_fn(t, x);
      if (!(gam > 0.0)) throw DomainError("phi_residual_check: Gamma <= 0 at sample point");
      const double dphi_dt =
          span > 0.0 ? (model.phi(tr, x) - model.phi(tl, x)) / span : 0.0;
      const double gp = model.Delta(t) * x + model.varsigma(t);
      const double phi_x = gp / gam;
      const double phi_xx = model.Delta(t) / gam - gp * gp / (gam * gam);
      const double lhs = dphi_dt + 0.5 * g11 * g11 * phi_xx + 0.5 * g11 * g11 * phi_x * phi_x;
      const double rhs =
          0.5 * (model.Q(t) * x * x + 2.0 * model.m(t) * x + model.delta(t));
      const double res = std::abs(lhs - rhs);
      if (res > rep.max_residual) {
        rep.max_residual = res;
        rep.worst_t = t;
        rep.worst_x = x;
      }
      ++rep.points_checked;
    }
  }
  rep.pass = rep.max_residual < tolerance;
  return rep;
}

// ---- initial law ----------------------------------------------------------------

// The information state at t = 0 is exp(phi(0, x1)) N(x; xi, P0), so the
// initial conditional density is the Gamma-tilted Gaussian. Samples z1 by
// Newton inversion of the closed-form tilted CDF, then z2 from the Gaussian
// conditional given z1 (the tilt does not involve z2).
inline double sample_tilted_z1(const BenesModel& model, double u01) {
  const double mmean = model.xi.x;
  const double v = model.P0.a;
  const double sd = std::sqrt(v);
  const double Dl = model.Delta(0.0), vs = model.varsigma(0.0), et = model.eta(0.0);

  // Unnormalized CDF of Gamma(0, s) N(s; mmean, v) via Gaussian partial
  // moments; valid while Gamma > 0 over the effective support.
  const auto cdf = [&](double x) {
    const double z = (x - mmean) / sd;
    const double Phi = 0.5 * std::erfc(-z / std::sqrt(2.0));
    const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    const double i0 = Phi;
    const double i1 = mmean * Phi - sd * phi;
    const double i2 = (mmean * mmean + v) * Phi - sd * (x + mmean) * phi;
    return 0.5 * Dl * i2 + vs * i1 + et * i0;
  };
  const double lo = mmean - 12.0 * sd;
  const double hi = mmean + 12.0 * sd;
  const double z_lo = cdf(lo);
  const double z_hi = cdf(hi);
  const double target = z_lo + u01 * (z_hi - z_lo);

  double a = lo, b = hi, x = mmean;
  for (int it = 0; it < 80; ++it) {
    const double f = cdf(x) - target;
    if (f > 0.0) b = x; else a = x;
    const double dens = std::max(model.gamma_fn(0.0, x), 1e-300) *
                        std::exp(-0.5 * (x - mmean) * (x - mmean) / v) /
                        std::sqrt(2.0 * M_PI * v);
    double step = f / dens;
    double xn = x - step;
    if (!(xn > a) || !(xn < b)) xn = 0.5 * (a + b);
    if (std::abs(xn - x) < 1e-14 * std::max(1.0, std::abs(x))) return xn;
    x = xn;
  }
  return x;
}

inline Vec2 sample_initial_state(const BenesModel& model, std::uint64_t seed,
                                 std::uint64_t agent) {
  const double u01 =
      rng::uniform01(seed, rng::stream_id(agent, rng::NoiseKind::kInit), 0);
  const double z1 = sample_tilted_z1(model, u01);
  // Gaussian conditional z2 | z1 under N(xi, P0).
  const double p11 = model.P0.a, p12 = model.P0.symmetrized().b, p22 = model.P0.d;
  const double cond_mean = model.xi.y + (p11 > 0.0 ? p12 / p11 * (z1 - model.xi.x) : 0.0);
  const double cond_var = std::max(p22 - (p11 > 0.0 ? p12 * p12 / p11 : 0.0), 0.0);
  const double z2 = cond_mean + std::sqrt(cond_var) *
      rng::standard_normal(seed, rng::stream_id(agent, rng::NoiseKind::kInit2), 0);
  return {z1, z2};
}

inline void write_stats_csv(std::span<const SufficientStats> stats, const std::string& path) {
  csv::Writer w(path);
  w.header({"t", "r1", "r2", "P11", "P12", "P22", "lambda"});
  for (const auto& s : stats)
    w.row({s.t, s.r.x, s.r.y, s.P.a, s.P.symmetrized().b, s.P.d, s.lambda});
}

}  // namespace pomfg::benes
