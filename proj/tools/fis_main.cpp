// SPDX-License-Identifier: Apache-2.0
//
// fis: finite-time interpolant sampler.
//
// Subcommands: train, sample, estimate-logz, moments, langevin, benchmark,
// kde. Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include "../src/cli/commands.hpp"
#include "../src/cli/config.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

struct GlobalFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> checkpoint;
  std::optional<int> threads;
};

void add_common(CLI::App* sub, GlobalFlags& flags) {
  sub->add_option("--config", flags.config_path, "configuration file");
  sub->add_option("--seed", flags.seed, "override run.seed");
  sub->add_option("--out", flags.out_dir, "override run.out_dir");
  sub->add_option("--checkpoint", flags.checkpoint,
                  "override the checkpoint path (input for sample/estimate, "
                  "output for train)");
  sub->add_option("--threads", flags.threads, "cap worker threads");
}

fis::cli::RunConfig resolve(const GlobalFlags& flags, bool checkpoint_is_out) {
  fis::cli::RunConfig cfg;
  if (!flags.config_path.empty())
    cfg = fis::cli::load_config_file(flags.config_path);
  if (flags.seed) cfg.run.seed = *flags.seed;
  if (flags.out_dir) cfg.run.out_dir = *flags.out_dir;
  if (flags.threads) cfg.run.threads = *flags.threads;
  if (flags.checkpoint) {
    if (checkpoint_is_out)
      cfg.run.checkpoint_out = *flags.checkpoint;
    else
      cfg.run.checkpoint_in = *flags.checkpoint;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"finite-time interpolant sampler"};
  app.require_subcommand(1);

  GlobalFlags flags;
  std::string scenario;
  std::string kde_samples, kde_out;
  double kde_lo = -8.0, kde_hi = 8.0;
  int kde_resolution = 200;

  auto* train = app.add_subcommand("train", "train a sampler");
  add_common(train, flags);
  auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
  add_common(sample, flags);
  auto* estimate =
      app.add_subcommand("estimate-logz", "estimate the log normalizer");
  add_common(estimate, flags);
  auto* moments =
      app.add_subcommand("moments", "empirical moments of a sample file");
  add_common(moments, flags);
  auto* langevin = app.add_subcommand("langevin", "unadjusted Langevin baseline");
  add_common(langevin, flags);
  auto* benchmark = app.add_subcommand("benchmark", "run a named scenario");
  add_common(benchmark, flags);
  benchmark->add_option("--scenario", scenario, "scenario name")->required();
  auto* kde = app.add_subcommand("kde", "export a KDE grid from 2-D samples");
  kde->add_option("--samples", kde_samples, "samples CSV")->required();
  kde->add_option("--out-file", kde_out, "output CSV")->required();
  kde->add_option("--lo", kde_lo, "grid lower bound");
  kde->add_option("--hi", kde_hi, "grid upper bound");
  kde->add_option("--resolution", kde_resolution, "grid resolution");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return fis::cli::cmd_train(resolve(flags, true));
    if (sample->parsed()) return fis::cli::cmd_sample(resolve(flags, false));
    if (estimate->parsed())
      return fis::cli::cmd_estimate_logz(resolve(flags, false));
    if (moments->parsed()) return fis::cli::cmd_moments(resolve(flags, false));
    if (langevin->parsed())
      return fis::cli::cmd_langevin(resolve(flags, false));
    if (benchmark->parsed())
      return fis::cli::cmd_benchmark(resolve(flags, false), scenario);
    if (kde->parsed()) {
      const auto samples = fis::cli::read_samples_csv(kde_samples);
      fis::cli::export_kde_grid(samples, kde_lo, kde_hi, kde_resolution,
                                kde_out);
      return 0;
    }
  } catch (const fis::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const fis::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
