// SPDX-License-Identifier: Apache-2.0

#include "fis/schedule.hpp"

#include <cmath>

namespace fis {

namespace {

constexpr double kFollmerOffset = 0.05;  // keeps r(0) > 0 for follmer_half

double clamp_v_time(const InterpolantSchedule& s, double t) {
  if (t > s.T) throw ConfigError("v-segment coefficient requested at t > T");
  return std::min(t, s.T - s.eta());
}

}  // namespace

double ScalingFunctions::beta(const InterpolantSchedule& s, double t) const {
  if (beta_kind == BetaKind::r_over_g) return s.r(t) / s.g(t);
  return beta_fn(t);
}

double ScalingFunctions::alpha(const InterpolantSchedule& s, double t) const {
  if (alpha_kind == AlphaKind::one) return 1.0;
  return alpha_fn(t);
}

InterpolantSchedule make_schedule(const std::string& preset_id, double T,
                                  double T_split) {
  require(T > 0.0, "schedule horizon T must be positive");
  InterpolantSchedule s;
  s.T = T;
  s.T_split = T_split;
  s.preset_id = preset_id;
  const double w = M_PI / (2.0 * T);
  if (preset_id == "trig_full") {
    s.kind = ScheduleKind::full;
    s.g = [w](double t) { return std::sin(w * t); };
    s.g_dot = [w](double t) { return w * std::cos(w * t); };
    s.r = [w](double t) { return std::cos(w * t); };
    s.r_dot = [w](double t) { return -w * std::sin(w * t); };
  } else if (preset_id == "linear_full") {
    s.kind = ScheduleKind::full;
    s.g = [T](double t) { return t / T; };
    s.g_dot = [T](double) { return 1.0 / T; };
    s.r = [T](double t) { return 1.0 - t / T; };
    s.r_dot = [T](double) { return -1.0 / T; };
  } else if (preset_id == "linear_half") {
    s.kind = ScheduleKind::half;
    s.g = [T](double t) { return t / T; };
    s.g_dot = [T](double) { return 1.0 / T; };
    s.r = [](double) { return 1.0; };
    s.r_dot = [](double) { return 0.0; };
  } else if (preset_id == "sine_half") {
    s.kind = ScheduleKind::half;
    s.g = [w](double t) { return std::sin(w * t); };
    s.g_dot = [w](double t) { return w * std::cos(w * t); };
    s.r = [](double) { return 1.0; };
    s.r_dot = [](double) { return 0.0; };
  } else if (preset_id == "follmer_half") {
    s.kind = ScheduleKind::half;
    s.g = [T](double t) { return t / T; };
    s.g_dot = [T](double) { return 1.0 / T; };
    s.r = [T](double t) { return std::sqrt(t / T + kFollmerOffset); };
    s.r_dot = [T](double t) {
      return 0.5 / (T * std::sqrt(t / T + kFollmerOffset));
    };
  } else {
    throw ConfigError("unknown schedule preset: " + preset_id);
  }
  if (s.is_full()) {
    require(T_split > 0.0 && T_split < T,
            "full schedule requires 0 < T_split < T");
  }
  validate_schedule(s);
  return s;
}

void validate_schedule(const InterpolantSchedule& s) {
  const int n = 1000;
  const double T = s.T;
  for (int i = 0; i <= n; ++i) {
    const double t = T * static_cast<double>(i) / n;
    const double g = s.g(t), r = s.r(t);
    if (t > 0.0 && g <= 0.0)
      throw ConfigError("schedule invariant violated: g(t) <= 0 at t > 0");
    const bool r_may_vanish = s.is_full() && i == n;
    if (!r_may_vanish && r <= 0.0)
      throw ConfigError("schedule invariant violated: r(t) <= 0");
    if (t > 0.0 && !r_may_vanish) {
      const double slope = s.g_dot(t) / g - s.r_dot(t) / r;
      if (slope < -1e-12)
        throw ConfigError("schedule invariant violated: g/r not non-decreasing");
    }
  }
  if (std::abs(s.g(0.0)) > 1e-14)
    throw ConfigError("schedule invariant violated: g(0) != 0");
  if (s.is_full()) {
    if (std::abs(s.g(T) - 1.0) > 1e-12)
      throw ConfigError("full schedule invariant violated: g(T) != 1");
    if (std::abs(s.r(T)) > 1e-12)
      throw ConfigError("full schedule invariant violated: r(T) != 0");
  }
  // Derivatives must agree with centered finite differences on interior
  // grid points.
  const double h = 1e-6 * T;
  for (int i = 1; i < n; ++i) {
    const double t = T * static_cast<double>(i) / n;
    const double fd_g = (s.g(t + h) - s.g(t - h)) / (2.0 * h);
    const double fd_r = (s.r(t + h) - s.r(t - h)) / (2.0 * h);
    if (std::abs(fd_g - s.g_dot(t)) > 1e-6 * (1.0 + std::abs(s.g_dot(t))))
      throw ConfigError("schedule g_dot disagrees with finite differences");
    if (std::abs(fd_r - s.r_dot(t)) > 1e-6 * (1.0 + std::abs(s.r_dot(t))))
      throw ConfigError("schedule r_dot disagrees with finite differences");
  }
}

double sigma_sq_u(const InterpolantSchedule& s, const ScalingFunctions& sc,
                  double t) {
  double val;
  if (sc.beta_kind == ScalingFunctions::BetaKind::r_over_g) {
    // 2 (r^2/beta^2)(g'/g - r'/r) with beta = r/g collapses to
    // 2 (g g' - g^2 r'/r); finite at t = 0 since g(0) = 0.
    const double g = s.g(t), r = s.r(t);
    val = 2.0 * (g * s.g_dot(t) - g * g * s.r_dot(t) / r);
  } else {
    const double g = s.g(t), r = s.r(t), beta = sc.beta(s, t);
    val = 2.0 * (r * r / (beta * beta)) * (s.g_dot(t) / g - s.r_dot(t) / r);
  }
  if (val < -1e-12)
    throw NumericalError("sigma_sq_u negative: schedule g/r not monotone");
  return std::max(val, 0.0);
}

double mu_u_coeff(const InterpolantSchedule& s, const ScalingFunctions& sc,
                  double t) {
  if (sc.beta_kind == ScalingFunctions::BetaKind::r_over_g) {
    // beta g / r^2 = 1/r, so -d/dt log(beta g / r^2) = r'/r.
    return s.r_dot(t) / s.r(t);
  }
  const double beta = sc.beta(s, t);
  return -(sc.beta_dot_fn(t) / beta + s.g_dot(t) / s.g(t) -
           2.0 * s.r_dot(t) / s.r(t));
}

VectorXd mu_u(const InterpolantSchedule& s, const ScalingFunctions& sc,
              double t, const VectorXd& x) {
  return mu_u_coeff(s, sc, t) * x;
}

double sigma_sq_v(const InterpolantSchedule& s, const ScalingFunctions& sc,
                  double t) {
  t = clamp_v_time(s, t);
  const double g = s.g(t), r = s.r(t), alpha = sc.alpha(s, t);
  // 2 (r^2/alpha^2)(g'/g - r'/r) = 2 (r^2 g'/g - r r') / alpha^2.
  const double val =
      2.0 * (r * r * s.g_dot(t) / g - r * s.r_dot(t)) / (alpha * alpha);
  if (val < -1e-12)
    throw NumericalError("sigma_sq_v negative: schedule g/r not monotone");
  return std::max(val, 0.0);
}

double mu_v_coeff(const InterpolantSchedule& s, const ScalingFunctions& sc,
                  double t) {
  t = clamp_v_time(s, t);
  if (sc.alpha_kind == ScalingFunctions::AlphaKind::one)
    return s.g_dot(t) / s.g(t);
  return s.g_dot(t) / s.g(t) - sc.alpha_dot_fn(t) / sc.alpha(s, t);
}

VectorXd mu_v(const InterpolantSchedule& s, const ScalingFunctions& sc,
              double t, const VectorXd& x) {
  return mu_v_coeff(s, sc, t) * x;
}

DriftScoreCoeffsU drift_score_coeffs_u(const InterpolantSchedule& s,
                                       const ScalingFunctions& sc, double t) {
  DriftScoreCoeffsU c;
  const double g = s.g(t), r = s.r(t);
  const double gd = s.g_dot(t), rd = s.r_dot(t);
  c.b_x = rd / r;
  c.s_x = -1.0 / (r * r);
  if (sc.beta_kind == ScalingFunctions::BetaKind::r_over_g) {
    // r^2/beta = r g, so (r^2/beta)(g'/g - r'/r) = r g' - g r'.
    c.b_g = r * gd - g * rd;
    c.s_g = g / r;
    c.inv_beta = g / r;
  } else {
    const double beta = sc.beta(s, t);
    c.b_g = (r * r / beta) * (gd / g - rd / r);
    c.s_g = 1.0 / beta;
    c.inv_beta = 1.0 / beta;
  }
  return c;
}

DriftScoreCoeffsV drift_score_coeffs_v(const InterpolantSchedule& s,
                                       const ScalingFunctions& sc, double t) {
  t = clamp_v_time(s, t);
  DriftScoreCoeffsV c;
  const double g = s.g(t), r = s.r(t);
  const double gd = s.g_dot(t), rd = s.r_dot(t);
  const double alpha = sc.alpha(s, t);
  c.b_x = gd / g;
  c.b_g = (r / alpha) * ((gd / g) * r - rd);
  c.s_g = 1.0 / alpha;
  c.inv_alpha = 1.0 / alpha;
  return c;
}

VectorXd drift_b_from_grad_u(const InterpolantSchedule& s,
                             const ScalingFunctions& sc, double t,
                             const VectorXd& x, const VectorXd& grad_u_at) {
  const auto c = drift_score_coeffs_u(s, sc, t);
  return c.b_x * x + c.b_g * grad_u_at;
}

VectorXd score_s_from_grad_u(const InterpolantSchedule& s,
                             const ScalingFunctions& sc, double t,
                             const VectorXd& x, const VectorXd& grad_u_at) {
  const auto c = drift_score_coeffs_u(s, sc, t);
  return c.s_g * grad_u_at + c.s_x * x;
}

VectorXd drift_b_from_grad_v(const InterpolantSchedule& s,
                             const ScalingFunctions& sc, double t,
                             const VectorXd& x, const VectorXd& grad_v_at) {
  const auto c = drift_score_coeffs_v(s, sc, t);
  return c.b_x * x + c.b_g * grad_v_at;
}

VectorXd score_s_from_grad_v(const InterpolantSchedule& s,
                             const ScalingFunctions& sc, double t,
                             const VectorXd& x, const VectorXd& grad_v_at) {
  const auto c = drift_score_coeffs_v(s, sc, t);
  return c.s_g * grad_v_at;
}

double log_psi_r(double r, const VectorXd& x) {
  if (r <= 0.0) throw NumericalError("log_psi: reference variance r^2 is zero");
  const double d = static_cast<double>(x.size());
  return -0.5 * x.squaredNorm() / (r * r) -
         0.5 * d * std::log(2.0 * M_PI * r * r);
}

double log_psi(const InterpolantSchedule& s, double t, const VectorXd& x) {
  return log_psi_r(s.r(t), x);
}

}  // namespace fis
