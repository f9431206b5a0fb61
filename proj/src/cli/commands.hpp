// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the CLI: training, sampling, estimation,
// the Langevin baseline, benchmark scenarios, and the KDE grid export.

#pragma once

#include "config.hpp"

#include "fis/types.hpp"

#include <cstdint>
#include <string>

namespace fis::cli {

int cmd_train(const RunConfig& cfg);
int cmd_sample(const RunConfig& cfg);
int cmd_estimate_logz(const RunConfig& cfg);
int cmd_moments(const RunConfig& cfg);
int cmd_langevin(const RunConfig& cfg);

/// Named scenarios: gmm_table2, dw10_table2, dw20_table2, langevin_table5,
/// ablation_table6, spinglass_curve. Each writes a report with the external
/// reference values embedded next to the run's results.
int cmd_benchmark(const RunConfig& cfg, const std::string& scenario);

/// Gaussian-kernel density (Scott's rule bandwidth) of 2-D samples on a
/// resolution x resolution grid over [lo, hi]^2, written as x,y,density CSV.
void export_kde_grid(const MatrixXd& samples, double lo, double hi,
                     int resolution, const std::string& path);

MatrixXd read_samples_csv(const std::string& path);
void write_samples_csv(const MatrixXd& samples, const std::string& path);

/// FNV-1a content hash used by run manifests.
std::uint64_t fnv1a64_file(const std::string& path);

}  // namespace fis::cli
