// SPDX-License-Identifier: Apache-2.0
//
// Euler-Maruyama integrators for the sampling SDE/ODE and the unadjusted
// Langevin baseline. Trajectories are independent with counter-based RNG
// keyed by trajectory index; failures are isolated per trajectory.

#pragma once

#include "fis/field.hpp"
#include "fis/schedule.hpp"
#include "fis/target.hpp"
#include "fis/types.hpp"

#include <cstdint>

namespace fis {

enum class SampleMode { sde, ode };

struct SamplerConfig {
  int n_samples = 10000;
  int n_steps = 1000;      // uniform Euler-Maruyama steps
  double eps = 1.0;        // diffusion scale; 0 in sde mode reproduces ode
  SampleMode mode = SampleMode::sde;
  bool use_ema = true;     // which checkpoint weights feed the field
  int threads = 1;
};

struct SampleStats {
  int n_failed = 0;  // trajectories that left the finite range
};

/// dS = (b + eps^2/2 s) dt + eps dW from S_0 ~ N(0, r^2(0) I), with b and s
/// assembled from grad u. Returns n_samples x d (one row per sample).
/// Throws NumericalError when more than 1% of trajectories fail.
MatrixXd sample_half(const ScalarField& u, const InterpolantSchedule& s,
                     const ScalingFunctions& sc, const SamplerConfig& cfg,
                     std::uint64_t seed, SampleStats* stats = nullptr);

/// Two-branch version: grad u drives t <= T', grad v drives t > T'.
MatrixXd sample_full(const ScalarField& u, const ScalarField& v,
                     const InterpolantSchedule& s, const ScalingFunctions& sc,
                     const SamplerConfig& cfg, std::uint64_t seed,
                     SampleStats* stats = nullptr);

/// Probability-flow ODE transport (dS = b dt with random start): the sde
/// samplers with the diffusion disabled.
inline MatrixXd sample_ode_half(const ScalarField& u,
                                const InterpolantSchedule& s,
                                const ScalingFunctions& sc, SamplerConfig cfg,
                                std::uint64_t seed,
                                SampleStats* stats = nullptr) {
  cfg.mode = SampleMode::ode;
  return sample_half(u, s, sc, cfg, seed, stats);
}

inline MatrixXd sample_ode_full(const ScalarField& u, const ScalarField& v,
                                const InterpolantSchedule& s,
                                const ScalingFunctions& sc, SamplerConfig cfg,
                                std::uint64_t seed,
                                SampleStats* stats = nullptr) {
  cfg.mode = SampleMode::ode;
  return sample_full(u, v, s, sc, cfg, seed, stats);
}

/// Unadjusted Langevin chain S <- S + grad log pi_hat(S) step + sqrt(2 step) w
/// from S_0 ~ N(0, I); returns final states.
MatrixXd langevin_baseline(const TargetDensity& target, double step_size,
                           int n_steps, int n_samples, std::uint64_t seed,
                           int threads = 1, SampleStats* stats = nullptr);

}  // namespace fis
