// SPDX-License-Identifier: Apache-2.0
//
// Localized FBSDE residual losses and the training loops for half- and
// full-interpolant samplers.
//
// The loss enforces, at random times along an auxiliary path, the one-step
// discretized backward SDE residual (Yhat_delta - Y_delta)^2 of the HJB
// solution, plus a terminal gradient penalty. The auxiliary path itself is
// excluded from parameter gradients: perturbing the parameters changes the
// loss only through the FBSDE and terminal terms evaluated at the frozen
// path points.

#pragma once

#include "fis/estimators.hpp"
#include "fis/net.hpp"
#include "fis/checkpoint.hpp"
#include "fis/field.hpp"
#include "fis/schedule.hpp"
#include "fis/target.hpp"
#include "fis/types.hpp"

#include <functional>
#include <optional>
#include <ostream>
#include <vector>

namespace fis {

/// One micro-step of the discretized FBSDE at (t, X) for field m with drift
/// f, diffusion h and noise w ~ N(0, I_d).
struct FbsdeStepInputs {
  double t = 0.0;
  VectorXd X;
  const ScalarField* m = nullptr;
  double delta = 5e-6;
  std::function<VectorXd(double, const VectorXd&)> drift_f;
  std::function<double(double)> diffusion_h;
  VectorXd w;
};

/// Squared one-step residual (Yhat - Y)^2; the value form of the training
/// loss term, usable with any ScalarField (oracles included).
double loss_fbsde(const FbsdeStepInputs& in);

/// Explicit Euler step of the auxiliary path ODE; the result is excluded
/// from parameter-gradient computation by construction.
VectorXd path_ode_step_half(const ScalarField& u, const InterpolantSchedule& s,
                            const ScalingFunctions& sc, double t,
                            const VectorXd& X, double dt);
VectorXd path_ode_step_full(const ScalarField& u, const ScalarField& v,
                            const InterpolantSchedule& s,
                            const ScalingFunctions& sc, double t,
                            const VectorXd& X, double dt);

struct TrainConfig {
  std::string preset_id = "trig_full";
  std::string target_id;
  double T = 1.0;
  double T_split = 0.5;
  int n_path = 60;       // path time-steps per loss evaluation
  int batch = 128;
  long steps = 10000;
  double delta = 5e-6;   // FBSDE micro-step
  double lambda = -1.0;  // residual weight; defaults to 2000 / delta
  std::uint64_t seed = 0;
  int threads = 1;
  // log Z monitoring cadence and budget
  long monitor_every = 250;
  int monitor_paths = 256;
  int monitor_steps = 200;

  double resolved_lambda() const {
    return lambda < 0.0 ? 2000.0 / delta : lambda;
  }
};

/// Recorded auxiliary path of one loss evaluation: sampled times, path
/// states and FBSDE noises per path index. Re-running the loss with a
/// recorded trace replays the path verbatim (used to verify that gradients
/// only flow through the frozen path points).
struct PathTrace {
  MatrixXd times1;               // u-segment grid, (rows) x batch
  MatrixXd times2;               // v-segment grid (full only)
  std::vector<MatrixXd> states;  // path state per FBSDE/terminal point
  std::vector<MatrixXd> noises;  // FBSDE noise per residual term
};

struct LossResult {
  double loss = 0.0;
  VectorXd grad_u;
  VectorXd grad_v;  // empty for half interpolants
};

LossResult loss_half(const ScalarFieldNet& u_net, const VectorXd& theta,
                     const InterpolantSchedule& s, const ScalingFunctions& sc,
                     const TrainConfig& cfg, long step,
                     PathTrace* record = nullptr,
                     const PathTrace* replay = nullptr);

LossResult loss_full(const ScalarFieldNet& u_net, const ScalarFieldNet& v_net,
                     const VectorXd& theta_u, const VectorXd& theta_v,
                     const InterpolantSchedule& s, const ScalingFunctions& sc,
                     const TrainConfig& cfg, long step,
                     PathTrace* record = nullptr,
                     const PathTrace* replay = nullptr);

struct TrainResult {
  Checkpoint checkpoint;
  TrainState state;
  std::vector<double> loss_trace;
  std::vector<std::pair<long, EstimateRecord>> logz_trace;
};

/// Full training run: loss -> clip -> adam -> ema, with periodic log Z
/// monitoring on the EMA weights. Metrics go to `metrics` as line-delimited
/// JSON when non-null. Throws NumericalError when more than 1% of steps
/// abort on non-finite gradients.
TrainResult train(const TrainConfig& cfg, const TargetDensity& target,
                  std::ostream* metrics = nullptr);

/// Rebuilds the nets a checkpoint was trained with and exposes u/v fields
/// for sampling and estimation. Owns parameters and terminal bindings.
class LoadedModel {
 public:
  LoadedModel(const Checkpoint& ckpt, const TargetDensity& target,
              const InterpolantSchedule& s, const ScalingFunctions& sc,
              bool use_ema);

  bool is_full() const { return v_net_ != nullptr; }
  const ScalarField& u_field() const { return *u_field_; }
  const ScalarField& v_field() const { return *v_field_; }

 private:
  std::unique_ptr<ScalarFieldNet> u_net_, v_net_;
  VectorXd params_u_, params_v_;
  std::unique_ptr<NetField> u_field_, v_field_;
};

}  // namespace fis
