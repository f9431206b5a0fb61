// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "fis/rng.hpp"
#include "fis/schedule.hpp"

#include <cmath>

using namespace fis;

namespace {
const char* kAllPresets[] = {"trig_full", "linear_full", "linear_half",
                             "sine_half", "follmer_half"};
}

TEST_SUITE("schedule") {

TEST_CASE("preset boundary conditions") {
  auto trig = make_schedule("trig_full", 1.0, 0.5);
  CHECK(trig.g(1.0) == doctest::Approx(1.0));
  CHECK(trig.r(1.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(trig.g(0.0) == doctest::Approx(0.0));

  auto lin = make_schedule("linear_half", 1.0);
  // r constant: d/dt log(g/r) = 1/t > 0 on (0, 1]
  for (double t : {0.1, 0.5, 1.0})
    CHECK(lin.g_dot(t) / lin.g(t) - lin.r_dot(t) / lin.r(t) ==
          doctest::Approx(1.0 / t));

  CHECK_THROWS_AS(make_schedule("nope", 1.0), ConfigError);
  CHECK_THROWS_AS(make_schedule("trig_full", 1.0, 1.5), ConfigError);
}

TEST_CASE("trig values at the midpoint") {
  auto s = make_schedule("trig_full", 1.0, 0.5);
  const double rt2 = std::sqrt(2.0) / 2.0;
  CHECK(s.g(0.5) == doctest::Approx(rt2));
  CHECK(s.r(0.5) == doctest::Approx(rt2));
  CHECK(s.g_dot(0.5) == doctest::Approx(M_PI * std::sqrt(2.0) / 4.0));
  CHECK(s.r_dot(0.5) == doctest::Approx(-M_PI * std::sqrt(2.0) / 4.0));
}

TEST_CASE("sigma_sq_u") {
  auto sc = ScalingFunctions::defaults();
  auto trig = make_schedule("trig_full", 1.0, 0.5);
  // sigma^2(t) = pi tan(pi t / 2) for the trig preset with beta = r/g
  CHECK(sigma_sq_u(trig, sc, 0.5) == doctest::Approx(M_PI));
  CHECK(sigma_sq_u(trig, sc, 0.0) == doctest::Approx(0.0));
  CHECK(sigma_sq_u(trig, sc, 0.3) ==
        doctest::Approx(M_PI * std::tan(M_PI * 0.15)));

  auto lin = make_schedule("linear_half", 1.0);
  CHECK(sigma_sq_u(lin, sc, 0.5) == doctest::Approx(1.0));  // 2 g g'
}

TEST_CASE("mu_u") {
  auto sc = ScalingFunctions::defaults();
  auto trig = make_schedule("trig_full", 1.0, 0.5);
  VectorXd x(2);
  x << 1.0, 0.0;
  VectorXd m = mu_u(trig, sc, 0.5, x);
  CHECK(m[0] == doctest::Approx(-M_PI / 2.0));
  CHECK(m[1] == doctest::Approx(0.0));

  auto lin = make_schedule("linear_half", 1.0);
  CHECK(mu_u(lin, sc, 0.3, x).norm() == doctest::Approx(0.0));  // r' = 0
  CHECK(mu_u(trig, sc, 0.5, VectorXd::Zero(2)).norm() == 0.0);
}

TEST_CASE("v-segment coefficients") {
  auto sc = ScalingFunctions::defaults();
  auto trig = make_schedule("trig_full", 1.0, 0.5);
  CHECK(sigma_sq_v(trig, sc, 0.5) == doctest::Approx(M_PI));
  VectorXd x = VectorXd::Zero(3);
  CHECK(mu_v(trig, sc, 0.7, x).norm() == 0.0);
  // r(T) = 0 with finite r': sigma_bar^2 -> 0 at the (clamped) horizon
  CHECK(sigma_sq_v(trig, sc, 1.0) == doctest::Approx(0.0).epsilon(1e-3));
  CHECK(sigma_sq_v(trig, sc, 1.0 - 1e-9) < 1e-3);
  CHECK_THROWS_AS(sigma_sq_v(trig, sc, 1.1), ConfigError);
}

TEST_CASE("drift and score from grad_u") {
  auto sc = ScalingFunctions::defaults();
  auto lin = make_schedule("linear_half", 1.0);
  VectorXd x(1), e(1);
  x << 1.0;
  e << 0.5;
  // beta = r/g = 2 at t = 0.5
  CHECK(drift_b_from_grad_u(lin, sc, 0.5, x, e)[0] == doctest::Approx(0.5));
  CHECK(score_s_from_grad_u(lin, sc, 0.5, x, e)[0] == doctest::Approx(-0.75));

  // grad == 0 with r constant: pure Gaussian case
  VectorXd z = VectorXd::Zero(1);
  CHECK(drift_b_from_grad_u(lin, sc, 0.5, x, z)[0] == doctest::Approx(0.0));
  CHECK(score_s_from_grad_u(lin, sc, 0.5, x, z)[0] == doctest::Approx(-1.0));
}

TEST_CASE("drift and score from grad_v") {
  auto sc = ScalingFunctions::defaults();
  auto trig = make_schedule("trig_full", 1.0, 0.5);
  VectorXd x(2), w(2);
  x << 1.0, -2.0;
  w << 0.3, 0.7;
  const double t = 0.7;
  const VectorXd b0 = drift_b_from_grad_v(trig, sc, t, x, VectorXd::Zero(2));
  CHECK(b0.isApprox(trig.g_dot(t) / trig.g(t) * x, 1e-12));
  CHECK(score_s_from_grad_v(trig, sc, t, x, VectorXd::Zero(2)).norm() == 0.0);

  // near T the grad coefficient vanishes with r
  const auto c_eta = drift_score_coeffs_v(trig, sc, 1.0);
  CHECK(std::abs(c_eta.b_g) < 1e-3);

  // linear term vanishes at x = 0
  const VectorXd bw =
      drift_b_from_grad_v(trig, sc, t, VectorXd::Zero(2), w);
  const double coef = trig.r(t) * (trig.g_dot(t) / trig.g(t) * trig.r(t) -
                                   trig.r_dot(t));
  CHECK(bw.isApprox(coef * w, 1e-12));
}

TEST_CASE("log_psi") {
  auto s = make_schedule("linear_half", 1.0);
  VectorXd x0 = VectorXd::Zero(2);
  CHECK(log_psi(s, 1.0, x0) == doctest::Approx(-std::log(2.0 * M_PI)));
  VectorXd x1(2);
  x1 << 1.0, 0.0;
  CHECK(log_psi(s, 1.0, x1) == doctest::Approx(-std::log(2.0 * M_PI) - 0.5));
  VectorXd x4(4);
  x4 << 2.0, 0.0, 0.0, 0.0;
  CHECK(log_psi_r(2.0, x4) ==
        doctest::Approx(-2.0 * std::log(8.0 * M_PI) - 0.5));
  CHECK_THROWS_AS(log_psi_r(0.0, x0), NumericalError);
}

TEST_CASE("diffusions stay non-negative on the operational grids") {
  auto sc = ScalingFunctions::defaults();
  for (const char* id : kAllPresets) {
    auto s = make_schedule(id, 1.0, 0.5);
    for (int i = 0; i <= 1000; ++i) {
      const double t = static_cast<double>(i) / 1000.0;
      if (!s.is_full() || t <= s.T_split) {
        const double v = sigma_sq_u(s, sc, t);
        CHECK(v >= 0.0);
        CHECK(std::isfinite(v));
        CHECK(std::isfinite(mu_u_coeff(s, sc, t)));
      }
      if (s.is_full() && t >= s.T_split) {
        const double v = sigma_sq_v(s, sc, t);
        CHECK(v >= 0.0);
        CHECK(std::isfinite(v));
        CHECK(std::isfinite(mu_v_coeff(s, sc, t)));
      }
    }
  }
}

TEST_CASE("the two drift expressions agree" *
          doctest::description("property: b from E[x*|x] equals b from s")) {
  auto sc = ScalingFunctions::defaults();
  PhiloxStream rng(99, RngDomain::test);
  for (const char* id : kAllPresets) {
    auto s = make_schedule(id, 1.0, 0.5);
    for (int rep = 0; rep < 200; ++rep) {
      const double t = 0.05 + 0.9 * rng.next_uniform();  // keep g(t) > 0
      const double g = s.g(t), r = s.r(t);
      const double gd = s.g_dot(t), rd = s.r_dot(t);
      VectorXd x(3), e(3);
      rng.fill_normal(x);
      rng.fill_normal(e);
      const VectorXd score = (g * e - x) / (r * r);
      const VectorXd b1 = (rd / r) * x + (gd - g * rd / r) * e;
      const VectorXd b2 = (gd / g) * x + (r * r * gd / g - rd * r) * score;
      CHECK((b1 - b2).norm() <= 1e-10 * (1.0 + b1.norm()));
    }
  }
}

TEST_CASE("schedule derivatives validated at construction") {
  // validate_schedule runs inside make_schedule; a broken derivative throws.
  InterpolantSchedule bad = make_schedule("linear_half", 1.0);
  bad.g_dot = [](double) { return 1.5; };
  CHECK_THROWS_AS(validate_schedule(bad), ConfigError);
}

}  // TEST_SUITE
