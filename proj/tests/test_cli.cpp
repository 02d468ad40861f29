#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "pomfg/cli.hpp"
#include "pomfg/config.hpp"

using namespace pomfg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("minimal config fills documented defaults") {
  const auto exp = config::parse_config_text("[scenario]\nsigma = 1\n");
  CHECK(exp.scenario.dt == doctest::Approx(1e-3));
  CHECK(exp.scenario.k_norm == 2);
  CHECK(exp.mode == benes::FilterStepMode::kInnovation);
}

TEST_CASE("config invariants produce named errors") {
  CHECK_THROWS_WITH_AS(config::parse_config_text("[scenario]\nsigma = 0\n"),
                       doctest::Contains("sigma must be positive"), ConfigError);

  // CFL-violating (sigma, dt, dx) at parse time names the bound.
  const std::string cfl =
      "[scenario]\nsigma = 2\ndt = 1e-2\n[filter]\ngrid_lo = -5\ngrid_hi = 5\n"
      "grid_nodes = 400\nfilter = grid\n";
  CHECK_THROWS_WITH_AS(config::parse_config_text(cfl), doctest::Contains("CFL"), ConfigError);

  CHECK_THROWS_WITH_AS(config::parse_config_text("[scenario]\nsgima = 1\n"),
                       doctest::Contains("unknown key 'sgima'"), ConfigError);
  CHECK_THROWS_WITH_AS(config::parse_config_text("[scenario]\nsigma = banana\n"),
                       doctest::Contains("expected a number"), ConfigError);
  CHECK_THROWS_AS(config::parse_config_text("sigma = 1\n"), ConfigError);
}

TEST_CASE("config hash is stable across re-serialization") {
  const std::string text = "[scenario]\nT = 1.0\nsigma = 2\n[filter]\ngrid_nodes = 100\n";
  const auto raw = config::parse_raw(text);
  const auto again = config::parse_raw(raw.canonical());
  CHECK(config::config_hash(raw) == config::config_hash(again));
  // Key order does not matter.
  const auto reordered =
      config::parse_raw("[filter]\ngrid_nodes = 100\n[scenario]\nsigma = 2\nT = 1.0\n");
  CHECK(config::config_hash(raw) == config::config_hash(reordered));
}

TEST_CASE("presets parse on their own") {
  for (const auto& [name, text] : config::preset_registry()) {
    CAPTURE(name);
    CHECK_NOTHROW(config::parse_config_text(text));
  }
}

TEST_CASE("exit codes partition error classes") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(InvalidInput("x")) == 2);
  CHECK(exit_code_for(NumericalError("x")) == 3);
  CHECK(exit_code_for(DomainError("x")) == 3);
  CHECK(exit_code_for(FilterBlowup("x", 0.5)) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("filter-demo writes artifacts listed in the manifest") {
  auto raw = config::parse_raw(config::preset_text("linear-gaussian"));
  raw.sections["scenario"]["T"] = {"0.2", 0};
  raw.sections["filter"]["particles"] = {"400", 0};
  raw.sections["filter"]["grid_nodes"] = {"200", 0};
  const auto dir = fresh_dir("pomfg_cli_filter_demo");
  const auto manifest = cli::run("filter-demo", raw, dir.string());
  CHECK(manifest.outputs.size() >= 2);
  for (const auto& name : manifest.outputs) CHECK(fs::exists(dir / name));
  CHECK(fs::exists(dir / "manifest.txt"));

  // Final grid posterior mean within 2% (relative to the posterior sd) of
  // the Kalman-Bucy oracle column.
  const auto table = csv::read((dir / "filter_summary.csv").string());
  const auto& last = table.rows.back();
  const double mg = last[table.col_index("mean_grid")];
  const double mkb = last[table.col_index("mean_kb")];
  const double vkb = last[table.col_index("var_kb")];
  CHECK(std::abs(mg - mkb) <= 0.02 * std::sqrt(vkb) + 0.02 * std::abs(mkb));
}

TEST_CASE("solve-mfg on a coupling-free model stops after one iteration") {
  auto raw = config::parse_raw(config::preset_text("benes-quadratic"));
  raw.sections["benes"]["coupling"] = {"0", 0};
  raw.sections["benes"]["T"] = {"0.5", 0};
  raw.sections["mfg"]["paths"] = {"256", 0};
  raw.sections["hjb"]["r2_nodes"] = {"121", 0};
  raw.sections["hjb"]["r1_nodes"] = {"21", 0};
  raw.sections["hjb"]["a_nodes"] = {"17", 0};
  const auto dir = fresh_dir("pomfg_cli_mfg");
  const auto manifest = cli::run("solve-mfg", raw, dir.string(), 2);
  CHECK(fs::exists(dir / "mfg_report.csv"));
  const auto table = csv::read((dir / "mfg_report.csv").string());
  // Convergence in at most two passes; the second pass certifies distance 0.
  CHECK(table.rows.size() <= 2);
  CHECK(table.rows.back()[table.col_index("distance")] <= 1e-12);
  (void)manifest;
}

TEST_CASE("reruns are byte-identical except the manifest wall time") {
  auto raw = config::parse_raw(config::preset_text("driftless"));
  raw.sections["scenario"]["T"] = {"0.05", 0};
  raw.sections["filter"]["grid_nodes"] = {"150", 0};
  raw.sections["filter"]["particles"] = {"200", 0};
  const auto dir_a = fresh_dir("pomfg_cli_rerun_a");
  const auto dir_b = fresh_dir("pomfg_cli_rerun_b");
  const auto ma = cli::run("filter-demo", raw, dir_a.string());
  const auto mb = cli::run("filter-demo", raw, dir_b.string());
  REQUIRE(ma.outputs == mb.outputs);
  for (const auto& name : ma.outputs) CHECK(slurp(dir_a / name) == slurp(dir_b / name));

  // Manifests agree line by line apart from wall_time_s.
  std::istringstream a(slurp(dir_a / "manifest.txt")), b(slurp(dir_b / "manifest.txt"));
  std::string la, lb;
  while (std::getline(a, la) && std::getline(b, lb)) {
    if (la.rfind("wall_time_s", 0) == 0) continue;
    CHECK(la == lb);
  }
}

TEST_CASE("distances subcommand emits per-time marginals and a holder report") {
  auto raw = config::parse_raw(config::preset_text("driftless"));
  raw.sections["scenario"]["T"] = {"0.1", 0};
  raw.sections["output"]["mc_paths"] = {"64", 0};
  const auto dir = fresh_dir("pomfg_cli_distances");
  const auto manifest = cli::run("distances", raw, dir.string());
  CHECK(fs::exists(dir / "distances.csv"));
  CHECK(fs::exists(dir / "holder_report.csv"));
  const auto table = csv::read((dir / "distances.csv").string());
  for (const auto& row : table.rows) {
    CHECK(row[1] >= 0.0);
    CHECK(row[1] <= 1.0);
  }
  (void)manifest;
}

TEST_CASE("unknown subcommand is a config error") {
  const auto raw = config::parse_raw(config::preset_text("driftless"));
  CHECK_THROWS_AS(cli::run("frobnicate", raw, "/tmp/pomfg_cli_nowhere"), ConfigError);
}
