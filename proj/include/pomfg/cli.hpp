// Experiment dispatch behind the command-line front end: each subcommand
// turns a parsed configuration into CSV artifacts plus a run manifest.
// Everything a run writes is a pure function of (config, seed); the manifest
// wall-time field is the only line that differs between reruns.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pomfg/config.hpp"
#include "pomfg/control.hpp"
#include "pomfg/csv.hpp"
#include "pomfg/dynamics.hpp"
#include "pomfg/mfg.hpp"
#include "pomfg/nash.hpp"

namespace pomfg::cli {

inline constexpr const char* kVersion = "0.1.0";

struct RunManifest {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string subcommand;
  std::string preset;
  std::string version = kVersion;
  double wall_time_s = 0.0;
  std::vector<std::string> outputs;

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write manifest: " + path);
    out << "config_hash = " << config_hash << "\n";
    std::string joined;
    for (const auto& o : outputs) joined += (joined.empty() ? "" : ";") + o;
    out << "outputs = " << joined << "\n";
    out << "preset = " << preset << "\n";
    out << "seed = " << seed << "\n";
    out << "subcommand = " << subcommand << "\n";
    out << "tool_version = " << version << "\n";
    out << "wall_time_s = " << csv::fmt_double(wall_time_s) << "\n";
  }
};

namespace detail {

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// Cross-check of the finite-dimensional filter against the grid Zakai solver
// on the z1 sub-model (autonomous when H2 = 0): both consume the same
// fine-grained observation path, and the L1 distance of the normalized
// densities at T is reported.
struct CrossFilterResult {
  double l1_at_T = 0.0;
  filtering::DensityGrid grid_density;
  filtering::DensityGrid marginal_density;
};

inline CrossFilterResult benes_cross_filter_check(const benes::BenesModel& model,
                                                  int grid_nodes, std::uint64_t seed) {
  if (std::abs(model.H2(0.0)) > 1e-12)
    throw InvalidInput("cross-filter check needs H2 = 0 (z1 autonomous)");
  for (double t : {0.0, 0.5 * model.T, model.T}) {
    if (std::abs(model.Delta(t) - model.Delta(0.0)) > 1e-12 ||
        std::abs(model.varsigma(t) - model.varsigma(0.0)) > 1e-12 ||
        std::abs(model.eta(t) - model.eta(0.0)) > 1e-12 ||
        std::abs(model.G11(t) - model.G11(0.0)) > 1e-12)
      throw InvalidInput("cross-filter check supports constant Gamma and G11 paths");
  }

  GridSpec grid{model.z1_lo, model.z1_hi, grid_nodes};
  grid.validate();
  const double sigma = model.G11(0.0);
  const double dx = grid.dx();
  // Fine time step satisfying the diffusion CFL bound with margin.
  const double dt_cap = 0.45 * dx * dx / (sigma * sigma);
  const int steps = static_cast<int>(std::ceil(model.T / std::min(model.dt, dt_cap)));
  const double dt = model.T / static_cast<double>(steps);

  Scenario scen;
  scen.T = model.T;
  scen.dt = dt;
  scen.sigma = sigma;
  scen.drift.kind = DriftSpec::Kind::kBenesRational;
  scen.drift.g11 = sigma;
  scen.drift.delta_coef = model.Delta(0.0);
  scen.drift.varsigma = model.varsigma(0.0);
  scen.drift.eta = model.eta(0.0);
  const double nobs = model.Nobs(0.0);
  scen.obs.kind = ObsSpec::Kind::kLinear;
  scen.obs.c = model.H1(0.0) / std::sqrt(nobs);
  scen.grid = grid;
  scen.u_min = -1.0;
  scen.u_max = 1.0;
  scen.filter_mode = FilterMode::kGrid;
  scen.seed = seed;
  scen.validate();

  // Initial conditional density: the Gamma-tilted Gaussian, matching the
  // information state at t = 0.
  std::vector<double> init(static_cast<std::size_t>(grid.nodes));
  const double p11 = model.P0.a;
  for (int j = 0; j < grid.nodes; ++j) {
    const double x = grid.x_lo + dx * static_cast<double>(j);
    init[static_cast<std::size_t>(j)] =
        std::max(model.gamma_fn(0.0, x), 0.0) *
        std::exp(-0.5 * (x - model.xi.x) * (x - model.xi.x) / p11);
  }
  auto density = filtering::normalize(
      filtering::DensityGrid::from_values(grid.x_lo, dx, std::move(init), 2, 0.0));

  double z1 = benes::sample_tilted_z1(
      model, rng::uniform01(seed, rng::stream_id(0, rng::NoiseKind::kInit), 0));
  benes::SufficientStats stats = benes::SufficientStats::initial(model);
  const measure::Measure unit = measure::Measure::dirac(0.0);
  const double sqdt = std::sqrt(dt);
  for (int s = 0; s < steps; ++s) {
    const double t = dt * static_cast<double>(s);
    const double xi1 = rng::standard_normal(
        seed, rng::stream_id(0, rng::NoiseKind::kStateW), static_cast<std::uint64_t>(s));
    const double xio = rng::standard_normal(
        seed, rng::stream_id(0, rng::NoiseKind::kObs), static_cast<std::uint64_t>(s));
    const double dy = model.H1(t) * z1 * dt + std::sqrt(nobs) * sqdt * xio;
    density = filtering::kushner_step(density, 0.0, dy / std::sqrt(nobs), dt, scen, unit);
    stats = benes::benes_filter_step(stats, 0.0, dy, dt, model,
                                     benes::FilterStepMode::kInnovation);
    z1 += benes::benes_drift(model, t, z1) * dt + sigma * sqdt * xi1;
  }

  CrossFilterResult out{0.0, density, benes::benes_z1_marginal(stats, model, grid)};
  out.l1_at_T = filtering::l1_distance(out.grid_density, out.marginal_density);
  return out;
}

inline void write_density_snapshot(const filtering::DensityGrid& d, const std::string& path) {
  csv::Writer w(path);
  w.comment("t=" + csv::fmt_double(d.t()) + ",mass=" + csv::fmt_double(d.mass()) +
            ",knorm=" + csv::fmt_double(d.ek_norm()));
  w.header({"x", "value"});
  for (std::size_t j = 0; j < d.size(); ++j) w.row({d.node(j), d.values()[j]});
}

}  // namespace detail

// ---- subcommands ------------------------------------------------------------------

inline void run_filter_demo(const config::Experiment& exp, const std::string& out_dir,
                            int threads, RunManifest& manifest) {
  (void)threads;
  if (exp.lane != config::Lane::kScalar)
    throw ConfigError("filter-demo runs on the scalar lane ([scenario] config)");
  const Scenario& scen = exp.scenario;
  const int steps = scen.steps();

  // One truth/observation path shared by every filter and the oracle.
  measure::MeasureFlow flow;
  flow.times = scen.time_grid();
  flow.measures.assign(flow.times.size(), measure::Measure::dirac(scen.init.limit_mean()));

  const double mean0 = scen.init.means(1)[0];
  double z = mean0 + std::sqrt(scen.init.var) *
                         rng::standard_normal(scen.seed, rng::stream_id(0, rng::NoiseKind::kInit), 0);
  auto grid_density = filtering::DensityGrid::gaussian(scen.grid, mean0, scen.init.var,
                                                       scen.k_norm);
  auto cloud = filtering::ParticleCloud::init_gaussian(scen, 0, mean0, scen.init.var);

  const bool kb_applicable = (scen.drift.kind == DriftSpec::Kind::kLinear ||
                              scen.drift.kind == DriftSpec::Kind::kZero) &&
                             scen.obs.kind == ObsSpec::Kind::kLinear;
  const double kb_a = scen.drift.kind == DriftSpec::Kind::kLinear ? scen.drift.a : 0.0;

  std::function<double(double)> kernel;
  if (!exp.kernel_csv.empty()) kernel = control::read_grad_kernel_csv(exp.kernel_csv);

  std::vector<double> dys(static_cast<std::size_t>(steps));
  std::vector<double> zs(static_cast<std::size_t>(steps) + 1), ys(static_cast<std::size_t>(steps) + 1, 0.0);
  std::vector<double> us(static_cast<std::size_t>(steps) + 1, 0.0);
  std::vector<double> gm(static_cast<std::size_t>(steps) + 1), gv(static_cast<std::size_t>(steps) + 1);
  std::vector<double> pm(static_cast<std::size_t>(steps) + 1), pv(static_cast<std::size_t>(steps) + 1);
  std::vector<double> ustar(static_cast<std::size_t>(steps) + 1, 0.0);
  zs[0] = z;
  gm[0] = grid_density.mean();
  gv[0] = grid_density.variance();
  const auto info0 = cloud.info();
  pm[0] = info0.mean;
  pv[0] = info0.var;

  const int snap_stride = std::max(1, steps / std::max(1, exp.snapshots));
  int snap_id = 0;
  const double sqdt = std::sqrt(scen.dt);
  for (int s = 0; s < steps; ++s) {
    const double t = scen.dt * static_cast<double>(s);
    const measure::Measure& mu = flow.measures[static_cast<std::size_t>(s)];
    InfoState info = scen.filter_mode == FilterMode::kParticle ? cloud.info()
                                                               : grid_density.info();
    const double u = scen.clip_control(exp.scalar_policy(t, info));
    if (kernel)
      ustar[static_cast<std::size_t>(s)] = control::minimize_hamiltonian(
          t, grid_density, kernel, mu, scen.cost, scen.u_min, scen.u_max);

    const double dw = sqdt * rng::standard_normal(
        scen.seed, rng::stream_id(0, rng::NoiseKind::kStateW), static_cast<std::uint64_t>(s));
    const double dnu = sqdt * rng::standard_normal(
        scen.seed, rng::stream_id(0, rng::NoiseKind::kObs), static_cast<std::uint64_t>(s));
    const double dy = scen.obs(z) * scen.dt + dnu;
    const double coupling = scen.drift.couple_with_measure(t, z, mu, mu.mean());
    z += (coupling + u) * scen.dt + scen.sigma * dw;

    grid_density = filtering::kushner_step(grid_density, u, dy, scen.dt, scen, mu);
    cloud = filtering::particle_filter_step(cloud, u, dy, scen.dt, scen, mu);

    dys[static_cast<std::size_t>(s)] = dy;
    us[static_cast<std::size_t>(s)] = u;
    zs[static_cast<std::size_t>(s) + 1] = z;
    ys[static_cast<std::size_t>(s) + 1] = ys[static_cast<std::size_t>(s)] + dy;
    gm[static_cast<std::size_t>(s) + 1] = grid_density.mean();
    gv[static_cast<std::size_t>(s) + 1] = grid_density.variance();
    const auto pinfo = cloud.info();
    pm[static_cast<std::size_t>(s) + 1] = pinfo.mean;
    pv[static_cast<std::size_t>(s) + 1] = pinfo.var;

    if ((s + 1) % snap_stride == 0 || s + 1 == steps) {
      const std::string name = "density_snapshot_" + std::to_string(snap_id++) + ".csv";
      detail::write_density_snapshot(grid_density, detail::join_path(out_dir, name));
      manifest.outputs.push_back(name);
    }
  }

  filtering::KalmanBucyResult kb;
  if (kb_applicable)
    kb = filtering::kalman_bucy_oracle(kb_a, scen.obs.c, scen.sigma, 1.0, dys, scen.dt,
                                       mean0, scen.init.var);

  csv::Writer w(detail::join_path(out_dir, "filter_summary.csv"));
  std::vector<std::string> cols{"t",        "z_true",   "y",        "u",
                                "mean_grid", "var_grid", "mean_pf",  "var_pf"};
  if (kb_applicable) {
    cols.push_back("mean_kb");
    cols.push_back("var_kb");
  }
  if (kernel) cols.push_back("u_star_kernel");
  w.header(cols);
  for (int s = 0; s <= steps; ++s) {
    const auto i = static_cast<std::size_t>(s);
    std::vector<double> row{scen.dt * static_cast<double>(s), zs[i], ys[i], us[i],
                            gm[i], gv[i], pm[i], pv[i]};
    if (kb_applicable) {
      row.push_back(kb.mean[i]);
      row.push_back(kb.var[i]);
    }
    if (kernel) row.push_back(ustar[i]);
    w.row(row);
  }
  manifest.outputs.push_back("filter_summary.csv");
}

inline void run_benes_demo(const config::Experiment& exp, const std::string& out_dir,
                           int threads, RunManifest& manifest) {
  if (exp.lane != config::Lane::kBenes)
    throw ConfigError("benes-demo runs on the Benes lane ([benes] config)");
  const benes::BenesModel& model = exp.benes_model;

  // phi-equation residual over the working grid.
  std::vector<double> xs, ts;
  for (int i = 0; i <= 128; ++i)
    xs.push_back(model.z1_lo + (model.z1_hi - model.z1_lo) * i / 128.0);
  for (int i = 0; i <= 32; ++i) ts.push_back(model.T * i / 32.0);
  const auto residual = benes::phi_residual_check(model, xs, ts, 1e-6);

  // One closed-loop filter trajectory with full sufficient statistics.
  control::BenesRunOptions ro;
  ro.paths = 1;
  ro.seed = model.seed;
  ro.mode = exp.mode;
  ro.threads = 1;
  ro.keep_stats = true;
  ro.stats_stride = 1;
  const auto policy = control::BenesPolicy::zero();
  const auto run = control::simulate_benes_closed_loop(
      model, std::span<const control::BenesPolicy>(&policy, 1), ro);
  benes::write_stats_csv(run.stats[0], detail::join_path(out_dir, "sufficient_stats.csv"));
  manifest.outputs.push_back("sufficient_stats.csv");

  // HJB against the degenerate initial flow, plus the extracted policy.
  const auto flow = mfg::degenerate_initial_flow(model);
  const auto sol = control::solve_hjb_sufficient_stats(model, flow, exp.grids, exp.mode,
                                                       threads);
  const int stride = std::max(1, model.steps() / 10);
  control::write_value_table_csv(sol.value, detail::join_path(out_dir, "value_table.csv"),
                                 stride);
  control::write_policy_table_csv(sol.policy, detail::join_path(out_dir, "policy_table.csv"),
                                  stride);
  manifest.outputs.push_back("value_table.csv");
  manifest.outputs.push_back("policy_table.csv");

  // Cross-filter consistency of the finite-dimensional information state.
  const auto cross = detail::benes_cross_filter_check(model, 400, model.seed);
  detail::write_density_snapshot(cross.grid_density,
                                 detail::join_path(out_dir, "zakai_density_T.csv"));
  detail::write_density_snapshot(cross.marginal_density,
                                 detail::join_path(out_dir, "information_state_T.csv"));
  manifest.outputs.push_back("zakai_density_T.csv");
  manifest.outputs.push_back("information_state_T.csv");

  csv::Writer w(detail::join_path(out_dir, "benes_report.csv"));
  w.header({"phi_residual", "phi_pass", "cross_filter_l1_at_T", "value_at_xi",
            "policy_lipschitz"});
  w.row({residual.max_residual, residual.pass ? 1.0 : 0.0, cross.l1_at_T,
         sol.value.at(0.0, model.xi.x, model.xi.y), sol.policy.lipschitz_estimate()});
  manifest.outputs.push_back("benes_report.csv");
}

inline void run_solve_mfg(const config::Experiment& exp, const std::string& out_dir,
                          int threads, RunManifest& manifest) {
  if (exp.lane != config::Lane::kBenes)
    throw ConfigError("solve-mfg runs on the Benes lane ([benes] config)");
  const benes::BenesModel& model = exp.benes_model;

  mfg::NceOptions opt;
  opt.tol = exp.mfg_tol;
  opt.max_iter = exp.mfg_max_iter;
  opt.paths = exp.mfg_paths;
  opt.seed = model.seed;
  opt.damping = exp.mfg_damping;
  opt.mode = exp.mode;
  opt.grids = exp.grids;
  opt.threads = threads;

  auto report = mfg::nce_iterate(mfg::degenerate_initial_flow(model), model, opt);

  // Gain-constant estimates around the converged flow.
  const auto final_policy = mfg::best_response_map(report.iterates.back(), model, exp.grids,
                                                   exp.mode, threads);
  const auto base_policy = control::BenesPolicy::from_table(
      std::make_shared<control::PolicyTable>(final_policy));
  const int gain_paths = std::min(exp.mfg_paths, 512);
  const auto base_sample = mfg::flow_sample_of_policy(model, base_policy, gain_paths,
                                                      model.seed, exp.mode, threads);
  const std::vector<double> betas{-0.1, 0.1};
  const auto perturbations = mfg::make_perturbation_flows(model, base_policy, betas,
                                                          gain_paths, model.seed, exp.mode,
                                                          threads);
  mfg::GainEstimateOptions gopt;
  gopt.mode = exp.mode;
  gopt.grids = exp.grids;
  gopt.paths = gain_paths;
  gopt.seed = model.seed;
  gopt.threads = threads;
  report.gain_estimate = mfg::estimate_gain_constants(model, base_sample, perturbations, gopt);

  mfg::write_fixed_point_csv(report, detail::join_path(out_dir, "mfg_report.csv"));
  manifest.outputs.push_back("mfg_report.csv");
  if (exp.flow_snapshots) {
    for (std::size_t i = 0; i < report.iterates.size(); ++i) {
      const std::string name = "flow_iter_" + std::to_string(i + 1) + ".csv";
      measure::write_flow_csv(report.iterates[i], detail::join_path(out_dir, name));
      manifest.outputs.push_back(name);
    }
  }
}

inline void run_mv_rate(const config::Experiment& exp, const std::string& out_dir,
                        int threads, RunManifest& manifest) {
  if (exp.lane != config::Lane::kScalar)
    throw ConfigError("mv-rate runs on the scalar lane ([scenario] config)");
  nash::MvRateOptions opt;
  opt.replications = exp.rate_replications;
  opt.seed = exp.scenario.seed;
  opt.filter_mode = exp.scenario.filter_mode;
  opt.threads = threads;
  const auto report = nash::mv_rate_study(exp.scenario, exp.scalar_policy, exp.rate_N, opt);
  nash::write_rate_csv(report, detail::join_path(out_dir, "mv_rate.csv"));
  manifest.outputs.push_back("mv_rate.csv");
}

inline void run_nash_audit(const config::Experiment& exp, const std::string& out_dir,
                           int threads, RunManifest& manifest) {
  if (exp.lane != config::Lane::kBenes)
    throw ConfigError("nash-audit runs on the Benes lane ([benes] config)");
  const benes::BenesModel& model = exp.benes_model;

  // MFG policy and flow from the fixed point.
  mfg::NceOptions nce;
  nce.tol = exp.mfg_tol;
  nce.max_iter = exp.mfg_max_iter;
  nce.paths = exp.mfg_paths;
  nce.seed = model.seed;
  nce.mode = exp.mode;
  nce.grids = exp.grids;
  nce.threads = threads;
  const auto fp = mfg::nce_iterate(mfg::degenerate_initial_flow(model), model, nce);
  const auto table = mfg::best_response_map(fp.iterates.back(), model, exp.grids, exp.mode,
                                            threads);
  const auto policy = control::BenesPolicy::from_table(
      std::make_shared<control::PolicyTable>(table));

  nash::NashGapOptions opt;
  opt.alphas = exp.nash_alphas;
  opt.betas = exp.nash_betas;
  opt.replications = exp.nash_replications;
  opt.seed = model.seed;
  opt.mode = exp.mode;
  opt.grids = exp.grids;
  opt.threads = threads;
  const auto report = nash::nash_rate_study(model, policy, fp.iterates.back(), exp.nash_N,
                                            opt);
  nash::write_nash_csv(report, detail::join_path(out_dir, "nash_audit.csv"));
  manifest.outputs.push_back("nash_audit.csv");
}

inline void run_distances(const config::Experiment& exp, const std::string& out_dir,
                          int threads, RunManifest& manifest) {
  measure::MeasureFlow flow_a, flow_b;
  measure::PathEnsemble ens_a, ens_b;
  bool have_paths = false;
  if (!exp.distances_flow_a.empty() && !exp.distances_flow_b.empty()) {
    flow_a = measure::read_flow_csv(exp.distances_flow_a);
    flow_b = measure::read_flow_csv(exp.distances_flow_b);
  } else {
    if (exp.lane != config::Lane::kScalar)
      throw ConfigError("distances without flow files needs a [scenario] config");
    Scenario sa = exp.scenario;
    Scenario sb = exp.scenario;
    sb.seed = rng::derive_seed(sa.seed, 1);
    const auto pol = ScalarPolicy::zero();
    const auto ba = dynamics::simulate_population(
        sa, std::span<const ScalarPolicy>(&pol, 1), exp.mc_paths, FilterMode::kNone,
        nullptr, threads);
    const auto bb = dynamics::simulate_population(
        sb, std::span<const ScalarPolicy>(&pol, 1), exp.mc_paths, FilterMode::kNone,
        nullptr, threads);
    flow_a = dynamics::induced_flow(ba);
    flow_b = dynamics::induced_flow(bb);
    ens_a = ba.state_ensemble();
    ens_b = bb.state_ensemble();
    have_paths = true;
  }
  flow_a.validate();
  flow_b.validate();
  if (flow_a.times.size() != flow_b.times.size())
    throw InvalidInput("distances: flows must share a time grid");

  double dt_path = 0.0;
  if (have_paths) {
    const int cap = 256;
    auto thin = [&](const measure::PathEnsemble& e) {
      measure::PathEnsemble out;
      out.times = e.times;
      const std::size_t stride = std::max<std::size_t>(1, e.paths.size() / cap);
      for (std::size_t i = 0; i < e.paths.size(); i += stride) out.paths.push_back(e.paths[i]);
      return out;
    };
    dt_path = measure::path_distance_DT(thin(ens_a), thin(ens_b));
  }

  csv::Writer w(detail::join_path(out_dir, "distances.csv"));
  w.comment("path_distance_DT=" + csv::fmt_double(dt_path) +
            ",ensemble_M=" + std::to_string(exp.mc_paths));
  w.header({"t", "marginal_distance"});
  for (std::size_t i = 0; i < flow_a.times.size(); ++i)
    w.row({flow_a.times[i],
           measure::marginal_distance(flow_a.measures[i], flow_b.measures[i])});
  manifest.outputs.push_back("distances.csv");

  const std::vector<measure::BoundedLipschitzFn> fns{
      {"clipped_identity", [](double x) { return std::clamp(x, -10.0, 10.0); }, 10.0, 1.0},
      {"unit", [](double) { return 1.0; }, 1.0, 0.0},
      {"sin", [](double x) { return std::sin(x); }, 1.0, 1.0},
      {"tanh", [](double x) { return std::tanh(x); }, 1.0, 1.0},
  };
  const auto holder = measure::holder_check(flow_a, 0.5, 10.0, fns);
  csv::Writer hw(detail::join_path(out_dir, "holder_report.csv"));
  hw.header({"beta", "B", "max_ratio", "pass", "pairs_checked"});
  hw.row({holder.beta, holder.bound, holder.max_ratio, holder.pass ? 1.0 : 0.0,
          static_cast<double>(holder.pairs_checked)});
  manifest.outputs.push_back("holder_report.csv");
}

// ---- entry point -------------------------------------------------------------------

inline RunManifest run(const std::string& subcommand, const config::RawConfig& raw,
                       const std::string& out_dir, int threads = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  const config::Experiment exp = config::parse_config(raw);
  std::filesystem::create_directories(out_dir);

  RunManifest manifest;
  manifest.config_hash = config::config_hash(raw);
  manifest.seed = exp.lane == config::Lane::kScalar ? exp.scenario.seed
                                                    : exp.benes_model.seed;
  manifest.subcommand = subcommand;
  manifest.preset = exp.preset;

  if (subcommand == "filter-demo") run_filter_demo(exp, out_dir, threads, manifest);
  else if (subcommand == "benes-demo") run_benes_demo(exp, out_dir, threads, manifest);
  else if (subcommand == "solve-mfg") run_solve_mfg(exp, out_dir, threads, manifest);
  else if (subcommand == "mv-rate") run_mv_rate(exp, out_dir, threads, manifest);
  else if (subcommand == "nash-audit") run_nash_audit(exp, out_dir, threads, manifest);
  else if (subcommand == "distances") run_distances(exp, out_dir, threads, manifest);
  else
    throw ConfigError("unknown subcommand '" + subcommand +
                      "' (expected filter-demo, benes-demo, solve-mfg, mv-rate, "
                      "nash-audit, or distances)");

  for (const auto& name : manifest.outputs)
    if (!std::filesystem::exists(detail::join_path(out_dir, name)))
      throw NumericalError("manifest lists a missing output: " + name);

  manifest.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest.write(detail::join_path(out_dir, "manifest.txt"));
  return manifest;
}

}  // namespace pomfg::cli
