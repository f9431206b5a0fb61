// SPDX-License-Identifier: Apache-2.0
//
// Interpolant schedules g, r and the PDE/SDE coefficient functions derived
// from them.
//
// A linear interpolant is the family x_t = g(t) x* + r(t) z with g/r
// non-decreasing. "half" schedules satisfy g(0) = 0; "full" schedules
// additionally satisfy g(T) = 1, r(T) = 0 and carry a split time T' where the
// two-PDE construction switches from the u-field to the v-field.
//
// All functions here are pure and reentrant.

#pragma once

#include "fis/types.hpp"

#include <functional>
#include <string>

namespace fis {

enum class ScheduleKind { half, full };

using TimeFn = std::function<double(double)>;

struct InterpolantSchedule {
  ScheduleKind kind = ScheduleKind::half;
  double T = 1.0;
  double T_split = 0.5;  // used only by full schedules
  TimeFn g, g_dot, r, r_dot;
  std::string preset_id;

  bool is_full() const { return kind == ScheduleKind::full; }
  /// Clamp horizon for v-segment coefficients; r(T)=0 makes the raw
  /// quotients indeterminate while their limits are finite.
  double eta() const { return T * 1e-4; }
};

/// Rescalings of the two PDEs. beta acts on the u-field, alpha on the
/// v-field. The defaults beta = r/g and alpha = 1 keep every coefficient
/// finite on the operational grids; for those kinds the coefficient
/// functions below use analytically simplified forms instead of the raw
/// quotients (which are 0/0 at t = 0).
struct ScalingFunctions {
  enum class BetaKind { r_over_g, custom };
  enum class AlphaKind { one, custom };

  BetaKind beta_kind = BetaKind::r_over_g;
  AlphaKind alpha_kind = AlphaKind::one;
  TimeFn beta_fn, beta_dot_fn;    // used only when beta_kind == custom
  TimeFn alpha_fn, alpha_dot_fn;  // used only when alpha_kind == custom

  static ScalingFunctions defaults() { return {}; }

  double beta(const InterpolantSchedule& s, double t) const;
  double alpha(const InterpolantSchedule& s, double t) const;
};

/// Presets: trig_full, linear_full, linear_half, sine_half, follmer_half.
/// T_split is ignored by half presets.
InterpolantSchedule make_schedule(const std::string& preset_id, double T,
                                  double T_split = 0.5);

/// Checks the type invariants on a 1000-point grid (positivity, g/r
/// monotonicity, boundary conditions, derivative/finite-difference
/// agreement). Throws ConfigError on violation.
void validate_schedule(const InterpolantSchedule& s);

// ---------------------------------------------------------------------------
// u-segment coefficients (half: t in [0,T]; full: t in [0,T']).
// The u-PDE drift is linear in x; mu_u_coeff returns the scalar factor.

double sigma_sq_u(const InterpolantSchedule& s, const ScalingFunctions& sc,
                  double t);
double mu_u_coeff(const InterpolantSchedule& s, const ScalingFunctions& sc,
                  double t);
VectorXd mu_u(const InterpolantSchedule& s, const ScalingFunctions& sc,
              double t, const VectorXd& x);

// v-segment coefficients (t in [T', T); evaluation clamped to T - eta).
double sigma_sq_v(const InterpolantSchedule& s, const ScalingFunctions& sc,
                  double t);
double mu_v_coeff(const InterpolantSchedule& s, const ScalingFunctions& sc,
                  double t);
VectorXd mu_v(const InterpolantSchedule& s, const ScalingFunctions& sc,
              double t, const VectorXd& x);

// ---------------------------------------------------------------------------
// Sampling-drift assembly. b and s are affine in (x, grad); the coefficient
// structs expose the scalar factors so batched integrators can apply them to
// whole matrices.

struct DriftScoreCoeffsU {
  double b_x;     // b = b_x * x + b_g * grad_u(t, x / beta)
  double b_g;
  double s_g;     // s = s_g * grad_u(t, x / beta) + s_x * x
  double s_x;
  double inv_beta;  // argument scale for grad_u
};

struct DriftScoreCoeffsV {
  double b_x;       // b = b_x * x + b_g * grad_v(t, x / alpha)
  double b_g;
  double s_g;       // s = s_g * grad_v(t, x / alpha)
  double inv_alpha;
};

DriftScoreCoeffsU drift_score_coeffs_u(const InterpolantSchedule& s,
                                       const ScalingFunctions& sc, double t);
DriftScoreCoeffsV drift_score_coeffs_v(const InterpolantSchedule& s,
                                       const ScalingFunctions& sc, double t);

VectorXd drift_b_from_grad_u(const InterpolantSchedule& s,
                             const ScalingFunctions& sc, double t,
                             const VectorXd& x, const VectorXd& grad_u_at);
VectorXd score_s_from_grad_u(const InterpolantSchedule& s,
                             const ScalingFunctions& sc, double t,
                             const VectorXd& x, const VectorXd& grad_u_at);
VectorXd drift_b_from_grad_v(const InterpolantSchedule& s,
                             const ScalingFunctions& sc, double t,
                             const VectorXd& x, const VectorXd& grad_v_at);
VectorXd score_s_from_grad_v(const InterpolantSchedule& s,
                             const ScalingFunctions& sc, double t,
                             const VectorXd& x, const VectorXd& grad_v_at);

/// Log-density of the isotropic Gaussian reference with variance r^2(t).
double log_psi(const InterpolantSchedule& s, double t, const VectorXd& x);
double log_psi_r(double r, const VectorXd& x);

}  // namespace fis
