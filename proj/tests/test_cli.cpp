// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "../src/cli/commands.hpp"
#include "../src/cli/config.hpp"

#include "fis/checkpoint.hpp"
#include "fis/fbsde.hpp"
#include "fis/rng.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace fis;
using namespace fis::cli;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("fis_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

RunConfig tiny_gauss_config(const fs::path& dir) {
  RunConfig cfg;
  cfg.target.id = "gauss";
  cfg.target.d = 2;
  cfg.target.sigma = std::sqrt(2.0);
  cfg.schedule.preset = "linear_half";
  cfg.train.steps = 3;
  cfg.train.batch = 8;
  cfg.train.sde_steps = 6;
  cfg.train.monitor_every = 0;
  cfg.run.seed = 11;
  cfg.run.out_dir = dir.string();
  return cfg;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config round-trips losslessly and rejects unknown keys") {
  RunConfig cfg;
  cfg.target.id = "double_well";
  cfg.target.d = 20;
  cfg.target.w = 5;
  cfg.target.delta = 3.0;
  cfg.schedule.preset = "linear_full";
  cfg.train.steps = 1234;
  cfg.train.lambda = 4e8;
  cfg.sample.mode = "ode";
  cfg.sample.use_ema = false;
  cfg.run.seed = 987;
  cfg.run.out_dir = "runs/x";
  const std::string text = serialize_config(cfg);
  const RunConfig back = parse_config(text);
  CHECK(serialize_config(back) == text);

  CHECK_THROWS_AS(parse_config("[target]\nid = gmm\nbogus = 1\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config("[nope]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nsteps = twelve\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("steps = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[sample]\nmode = magic\n"), ConfigError);
}

TEST_CASE("checkpoint round-trip is bit exact") {
  const auto dir = fresh_dir("ckpt");
  Checkpoint ckpt;
  ckpt.header = {1, "trig_full", "gmm", 2, 777, 42};
  PhiloxStream rng(5, RngDomain::test);
  VectorXd a(1000), b(3);
  rng.fill_normal(a);
  rng.fill_normal(b);
  ckpt.tensors = {{"theta", a}, {"ema_theta", b}};
  const std::string path = (dir / "c.fis").string();
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.header.preset_id == "trig_full");
  CHECK(back.header.target_id == "gmm");
  CHECK(back.header.step == 777);
  CHECK(back.header.seed == 42);
  CHECK(back.tensor("theta") == a);
  CHECK(back.tensor("ema_theta") == b);
  CHECK_THROWS_AS(back.tensor("nope"), IncompatibilityError);

  std::ofstream bad(dir / "bad.fis");
  bad << "not a checkpoint\n";
  bad.close();
  CHECK_THROWS_AS(load_checkpoint((dir / "bad.fis").string()),
                  IncompatibilityError);
}

TEST_CASE("same config and seed give identical checkpoint and csv bytes") {
  const auto d1 = fresh_dir("det1");
  const auto d2 = fresh_dir("det2");
  auto c1 = tiny_gauss_config(d1);
  auto c2 = tiny_gauss_config(d2);
  CHECK(cmd_train(c1) == 0);
  CHECK(cmd_train(c2) == 0);
  CHECK(fnv1a64_file((d1 / "checkpoint.fis").string()) ==
        fnv1a64_file((d2 / "checkpoint.fis").string()));

  c1.run.checkpoint_in = (d1 / "checkpoint.fis").string();
  c2.run.checkpoint_in = (d2 / "checkpoint.fis").string();
  c1.sample.n_samples = 50;
  c2.sample.n_samples = 50;
  c1.sample.n_steps = 10;
  c2.sample.n_steps = 10;
  CHECK(cmd_sample(c1) == 0);
  CHECK(cmd_sample(c2) == 0);
  CHECK(slurp(d1 / "samples.csv") == slurp(d2 / "samples.csv"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("sample command writes header plus one row per sample") {
  const auto dir = fresh_dir("shape");
  auto cfg = tiny_gauss_config(dir);
  cfg.train.steps = 0;
  CHECK(cmd_train(cfg) == 0);
  cfg.run.checkpoint_in = (dir / "checkpoint.fis").string();
  cfg.sample.n_samples = 4;
  cfg.sample.n_steps = 1;
  CHECK(cmd_sample(cfg) == 0);
  const std::string csv = slurp(dir / "samples.csv");
  CHECK(count_lines(csv) == 5);
  CHECK(csv.substr(0, 5) == "x0,x1");

  // manifest carries the config echo and content hashes
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["format_version"] == 1);
  const RunConfig echoed =
      parse_config(manifest["config"].get<std::string>());
  CHECK(echoed.sample.n_samples == 4);
  CHECK(manifest["content_hashes"].size() >= 1);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint and config mismatches are named") {
  const auto dir = fresh_dir("mismatch");
  auto cfg = tiny_gauss_config(dir);
  cfg.train.steps = 0;
  CHECK(cmd_train(cfg) == 0);
  cfg.run.checkpoint_in = (dir / "checkpoint.fis").string();

  auto wrong_target = cfg;
  wrong_target.target.id = "gmm";
  CHECK_THROWS_WITH_AS(cmd_sample(wrong_target),
                       doctest::Contains("target_id"), IncompatibilityError);

  auto wrong_preset = cfg;
  wrong_preset.schedule.preset = "sine_half";
  CHECK_THROWS_WITH_AS(cmd_sample(wrong_preset),
                       doctest::Contains("preset_id"), IncompatibilityError);

  auto missing = cfg;
  missing.run.checkpoint_in = (dir / "absent.fis").string();
  CHECK_THROWS_AS(cmd_sample(missing), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("kde grid export") {
  const auto dir = fresh_dir("kde");

  // single sample at the origin: the density peaks at the center cell
  MatrixXd one(1, 2);
  one << 0.0, 0.0;
  const std::string p1 = (dir / "one.csv").string();
  export_kde_grid(one, -2.0, 2.0, 21, p1);
  {
    std::ifstream in(p1);
    std::string line;
    std::getline(in, line);
    CHECK(line == "x,y,density");
    double best = -1.0, bx = 0, by = 0;
    while (std::getline(in, line)) {
      std::istringstream ss(line);
      double x, y, dens;
      char c;
      ss >> x >> c >> y >> c >> dens;
      if (dens > best) {
        best = dens;
        bx = x;
        by = y;
      }
    }
    CHECK(bx == doctest::Approx(0.0));
    CHECK(by == doctest::Approx(0.0));
  }

  // exact mixture samples: nine separated local maxima above half peak
  auto gmm = gmm_target();
  PhiloxStream rng(9, RngDomain::test);
  MatrixXd draws(20000, 2);
  for (int i = 0; i < draws.rows(); ++i)
    draws.row(i) = gmm.exact_sampler(rng).transpose();
  const int res = 81;
  const std::string p9 = (dir / "gmm.csv").string();
  export_kde_grid(draws, -8.0, 8.0, res, p9);
  {
    MatrixXd dens(res, res);
    std::ifstream in(p9);
    std::string line;
    std::getline(in, line);
    for (int i = 0; i < res; ++i)
      for (int j = 0; j < res; ++j) {
        std::getline(in, line);
        std::istringstream ss(line);
        double x, y, v;
        char c;
        ss >> x >> c >> y >> c >> v;
        dens(i, j) = v;
      }
    const double peak = dens.maxCoeff();
    int maxima = 0;
    for (int i = 1; i + 1 < res; ++i)
      for (int j = 1; j + 1 < res; ++j) {
        bool is_max = dens(i, j) > 0.5 * peak;
        for (int a = -1; a <= 1 && is_max; ++a)
          for (int b = -1; b <= 1; ++b)
            if ((a || b) && dens(i + a, j + b) >= dens(i, j)) {
              is_max = false;
              break;
            }
        maxima += is_max;
      }
    CHECK(maxima == 9);
  }

  MatrixXd empty(0, 2);
  CHECK_THROWS_AS(export_kde_grid(empty, -1, 1, 11, (dir / "e.csv").string()),
                  ConfigError);
  MatrixXd wrong_d(3, 3);
  CHECK_THROWS_AS(
      export_kde_grid(wrong_d, -1, 1, 11, (dir / "w.csv").string()),
      ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("csv round trip") {
  const auto dir = fresh_dir("csv");
  PhiloxStream rng(3, RngDomain::test);
  MatrixXd m(7, 3);
  rng.fill_normal(m);
  const std::string path = (dir / "s.csv").string();
  write_samples_csv(m, path);
  const MatrixXd back = read_samples_csv(path);
  CHECK(back == m);  // 17 significant digits round-trip doubles exactly
  fs::remove_all(dir);
}

TEST_CASE("langevin and moments commands") {
  const auto dir = fresh_dir("lmc");
  RunConfig cfg;
  cfg.target.id = "gmm";
  cfg.target.d = 2;
  cfg.langevin.step_size = 0.1;
  cfg.langevin.n_steps = 10;
  cfg.langevin.n_samples = 500;
  cfg.run.out_dir = dir.string();
  cfg.run.seed = 4;
  CHECK(cmd_langevin(cfg) == 0);
  cfg.moments.samples_in = (dir / "langevin_samples.csv").string();
  CHECK(cmd_moments(cfg) == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "moments.json"));
  CHECK(j["mean_abs"]["value"].get<double>() < 2.0);  // collapsed at 10 steps
  fs::remove_all(dir);
}

TEST_CASE("benchmark scenario writes a report with references") {
  const auto dir = fresh_dir("bench");
  RunConfig cfg;
  cfg.run.out_dir = dir.string();
  cfg.run.seed = 5;
  cfg.langevin.n_samples = 200;
  cfg.sample.n_samples = 200;
  CHECK(cmd_benchmark(cfg, "langevin_table5") == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(j["scenario"] == "langevin_table5");
  CHECK(j["results"].size() == 4);
  CHECK(j.contains("references"));
  CHECK_THROWS_AS(cmd_benchmark(cfg, "nope"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("train smoke on the gaussian target reaches a calibrated log Z") {
  const auto dir = fresh_dir("smoke");
  RunConfig cfg;
  cfg.target.id = "gauss";
  cfg.target.d = 2;
  cfg.target.sigma = std::sqrt(2.0);
  cfg.schedule.preset = "linear_half";
  cfg.train.steps = 500;
  cfg.train.batch = 32;
  cfg.train.sde_steps = 30;
  cfg.train.monitor_every = 500;
  cfg.train.monitor_paths = 2000;
  cfg.train.monitor_steps = 300;
  cfg.run.seed = 21;
  cfg.run.out_dir = dir.string();
  CHECK(cmd_train(cfg) == 0);
  // the last monitored estimate lands in the metrics stream
  std::istringstream metrics(slurp(dir / "metrics.jsonl"));
  std::string line;
  double logz = 1e9;
  while (std::getline(metrics, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("logz_estimate")) logz = j["logz_estimate"].get<double>();
  }
  CHECK(std::abs(logz) < 0.2);
  fs::remove_all(dir);
}

}  // TEST_SUITE
