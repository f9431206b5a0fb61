// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: flat key-value text with one section per concern.
// Unknown sections or keys are rejected; serialization is canonical so a
// config round-trips losslessly.

#pragma once

#include "fis/types.hpp"

#include <cstdint>
#include <string>

namespace fis::cli {

struct TargetConfig {
  std::string id = "gmm";
  int d = 2;
  int w = 3;            // double_well
  double delta = 2.0;   // double_well offset
  double beta = 0.5;    // spin_glass inverse temperature
  double sigma = 1.0;   // gauss standard deviation
  std::uint64_t seed = 1;  // structure seed (couplings, mixture means)
};

struct ScheduleConfig {
  std::string preset = "trig_full";
  double T = 1.0;
  double T_split = 0.5;
};

struct TrainSection {
  long steps = 10000;
  int batch = 128;
  int sde_steps = 60;
  double delta = 5e-6;
  double lambda = -1.0;  // < 0: default 2000 / delta
  long monitor_every = 250;
  int monitor_paths = 256;
  int monitor_steps = 200;
};

struct SampleSection {
  int n_samples = 10000;
  int n_steps = 1000;
  double eps = 1.0;
  std::string mode = "sde";  // sde | ode
  bool use_ema = true;
};

struct EstimateSection {
  int n_paths = 10000;
  int n_steps = 1000;
  bool use_ema = true;
};

struct LangevinSection {
  double step_size = 0.1;
  int n_steps = 10;
  int n_samples = 10000;
};

struct MomentsSection {
  std::string samples_in;
};

struct RunSection {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = "out";
  std::string checkpoint_in;
  std::string checkpoint_out;
};

struct RunConfig {
  TargetConfig target;
  ScheduleConfig schedule;
  TrainSection train;
  SampleSection sample;
  EstimateSection estimate;
  LangevinSection langevin;
  MomentsSection moments;
  RunSection run;
};

RunConfig parse_config(const std::string& text);
std::string serialize_config(const RunConfig& cfg);
RunConfig load_config_file(const std::string& path);

}  // namespace fis::cli
