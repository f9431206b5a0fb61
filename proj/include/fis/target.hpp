// SPDX-License-Identifier: Apache-2.0
//
// Target-distribution zoo: unnormalized log-densities with exact gradients,
// optional exact samplers and ground-truth functionals, plus the terminal
// conditions that pin the PDE solutions to a target.
//
// Targets are immutable after construction and safe for concurrent
// evaluation.

#pragma once

#include "fis/rng.hpp"
#include "fis/schedule.hpp"
#include "fis/types.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace fis {

struct TrueMoments {
  double mean_abs = 0.0;  // E sum_i |x_i|
  double mean_sq = 0.0;   // E ||x||^2
};

struct TargetDensity {
  std::string id;
  int d = 0;
  std::function<double(const VectorXd&)> log_pi_hat;
  std::function<VectorXd(const VectorXd&)> grad_log_pi_hat;
  std::optional<double> true_log_z;
  std::function<VectorXd(PhiloxStream&)> exact_sampler;  // empty when unknown
  std::optional<TrueMoments> true_moments;

  bool has_sampler() const { return static_cast<bool>(exact_sampler); }
};

/// Returns a copy of the target with log_pi_hat shifted by the constant c
/// (gradients and samples unchanged; log Z shifts by exactly c).
TargetDensity shift_log_density(const TargetDensity& target, double c);

// ---------------------------------------------------------------------------
// Zoo factories.

/// Normalized isotropic Gaussian N(0, sigma^2 I_d).
TargetDensity gaussian_target(int d, double sigma);

/// 9-component mixture, means {-5,0,5}^2, covariances 0.3 I_2, uniform
/// weights; normalized.
TargetDensity gmm_target();

/// Neal's funnel: x1 ~ N(0, s^2), x_i | x1 ~ N(0, e^{x1}); normalized.
TargetDensity funnel_target(int d = 10, double s = 3.0);

/// Product of w double-well coordinates exp(-(x^2-delta)^2) and d-w standard
/// Gaussian coordinates; unnormalized, with quadrature-derived log Z,
/// moments, and per-coordinate inverse-CDF sampler.
TargetDensity double_well_target(int d, int w, double delta);

/// Soft spherical spin glass: log pi_hat = (beta/sqrt(2d)) x^T A x
/// - (beta^2/4d) ||x||^4 - ||x||^2 / 2, with A i.i.d. standard Gaussian drawn
/// once from `seed` and symmetrized inside the quadratic form.
TargetDensity spin_glass_target(int d, double beta, std::uint64_t seed);

enum class MixtureKind { gauss, student };

/// Mixture of `n_components` components with means uniform in [-10,10]^d.
/// gauss: unit isotropic Gaussians. student: products of independent 1-D
/// Student-t (2 dof) coordinates. Normalized.
TargetDensity mixture_targets(MixtureKind kind, int d, std::uint64_t seed,
                              int n_components = 10);

/// Three concentric annuli in 2-D (radii 2,4,6; width 0.2); unnormalized.
/// Demo target for density plots, excluded from quantitative benchmarks.
TargetDensity rings_target();

/// Lookup by identifier as used in config files.
TargetDensity make_target(const std::string& id, int d, int w, double delta,
                          double beta, double sigma, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Terminal conditions.

enum class TerminalSegment { u_half, u_full_at_split, v_full_at_T };

struct NetWorkspace;  // defined in fis/net.hpp

/// Boundary data phi with exact gradient. Terminals wrapping a live network
/// (the u-field's condition at the split time) additionally expose parameter
/// cotangent propagation; plain target-backed terminals have no parameters.
class TerminalCondition {
 public:
  virtual ~TerminalCondition() = default;

  explicit TerminalCondition(TerminalSegment segment) : segment_(segment) {}
  TerminalSegment segment() const { return segment_; }

  virtual double phi(const VectorXd& x) const = 0;
  virtual VectorXd grad_phi(const VectorXd& x) const = 0;

  /// Batched evaluation over columns of X; grad_out may be null.
  /// `scratch` is only used by network-backed terminals.
  virtual void eval(const MatrixXd& X, RowVectorXd& phi_out, MatrixXd* grad_out,
                    NetWorkspace* scratch) const;

  virtual bool has_params() const { return false; }
  /// The live parameter vector a network-backed terminal reads, when any.
  virtual const VectorXd* bound_params() const { return nullptr; }
  /// Accumulates d/dparams of sum_j [ a_j phi(x_j) + C_j . grad_phi(x_j) ]
  /// into grad_params (no-op for parameterless terminals).
  virtual void vjp(const MatrixXd& X, const RowVectorXd& a, const MatrixXd* C,
                   VectorXd& grad_params, NetWorkspace* scratch) const;

 private:
  TerminalSegment segment_;
};

/// phi(x) = log pi_hat(beta(T) x) - log psi(T, beta(T) x); half schedules.
std::shared_ptr<TerminalCondition> terminal_u_half(
    const TargetDensity& target, const InterpolantSchedule& s,
    const ScalingFunctions& sc);

/// phi(x) = log pi_hat(alpha(T) x) + d log g(T); full schedules.
std::shared_ptr<TerminalCondition> terminal_v_full(
    const TargetDensity& target, const InterpolantSchedule& s,
    const ScalingFunctions& sc);

// terminal_u_full_at_split lives in fis/net.hpp: it wraps a live network.

}  // namespace fis
