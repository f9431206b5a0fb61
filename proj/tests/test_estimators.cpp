// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "fis/estimators.hpp"
#include "fis/rng.hpp"

#include "oracle_fields.hpp"
#include "fis/quadrature.hpp"

#include <cmath>

using namespace fis;
using namespace fis::testing;

TEST_SUITE("estimators") {

TEST_CASE("empirical moments") {
  MatrixXd s(2, 2);
  s << 1.0, 1.0, -1.0, -1.0;
  const auto m = empirical_moments(s);
  CHECK(m.mean_abs.value == doctest::Approx(2.0));
  CHECK(m.mean_sq.value == doctest::Approx(2.0));
  CHECK(m.mean_abs.n == 2);

  MatrixXd one(1, 3);
  CHECK_THROWS_AS(empirical_moments(one), ConfigError);

  // exact mixture sampler vs the analytic moment oracle
  auto gmm = gmm_target();
  PhiloxStream rng(3, RngDomain::test);
  MatrixXd draws(100000, 2);
  for (int i = 0; i < draws.rows(); ++i)
    draws.row(i) = gmm.exact_sampler(rng).transpose();
  const auto mm = empirical_moments(draws);
  CHECK(std::abs(mm.mean_abs.value - gmm.true_moments->mean_abs) <
        3.0 * mm.mean_abs.ci95 / 1.96);
}

TEST_CASE("ci95 halves when the sample count quadruples") {
  auto gmm = gmm_target();
  PhiloxStream rng(5, RngDomain::test);
  MatrixXd a(20000, 2), b(80000, 2);
  for (int i = 0; i < b.rows(); ++i) {
    const VectorXd x = gmm.exact_sampler(rng);
    if (i < a.rows()) a.row(i) = x.transpose();
    b.row(i) = x.transpose();
  }
  const auto ma = empirical_moments(a), mb = empirical_moments(b);
  const double ratio = ma.mean_abs.ci95 / mb.mean_abs.ci95;
  CHECK(ratio > 1.4);
  CHECK(ratio < 2.6);
}

TEST_CASE("half estimator is calibrated on the gaussian oracle") {
  auto sc = ScalingFunctions::defaults();
  auto s = make_schedule("linear_half", 1.0);
  // nu = N(0, I) makes the target N(0, 2 I); normalized, so log Z = 0
  GaussianU u(s, 2, 1.0);
  auto target = gaussian_target(2, std::sqrt(2.0));
  // enough steps that the Euler bias sits well inside the confidence band
  const auto rec = estimate_log_z_half(u, s, sc, target, 4000, 1000, 21);
  CHECK(std::abs(rec.value) <= 3.0 * rec.ci95);
  CHECK(rec.n == 4000);

  // shifting log pi_hat shifts the estimate by exactly the shift
  const auto shifted = estimate_log_z_half(u, s, sc,
                                           shift_log_density(target, 1.7),
                                           4000, 1000, 21);
  CHECK(shifted.value - rec.value == doctest::Approx(1.7).epsilon(1e-12));
}

TEST_CASE("full estimator validation gate on the gaussian oracle") {
  auto sc = ScalingFunctions::defaults();
  auto s = make_schedule("trig_full", 1.0, 0.5);
  const double s2 = 1.44;
  GaussianU u(s, 2, s2);
  GaussianV v(s, 2, s2);
  auto target = gaussian_target(2, std::sqrt(s2));
  // the piecewise Ito bias decays like 1/steps; 2000 steps puts it well
  // below the Monte-Carlo band at 3000 paths
  const auto rec = estimate_log_z_full(u, v, s, sc, target, 3000, 2000, 23);
  CHECK(std::abs(rec.value) <= 3.0 * rec.ci95);

  const auto shifted = estimate_log_z_full(u, v, s, sc,
                                           shift_log_density(target, -0.9),
                                           3000, 2000, 23);
  CHECK(shifted.value - rec.value == doctest::Approx(-0.9).epsilon(1e-12));
}

TEST_CASE("estimator is deterministic and threads do not change it") {
  auto sc = ScalingFunctions::defaults();
  auto s = make_schedule("linear_half", 1.0);
  GaussianU u(s, 2, 1.0);
  auto target = gaussian_target(2, std::sqrt(2.0));
  const auto a = estimate_log_z_half(u, s, sc, target, 500, 50, 9);
  const auto b = estimate_log_z_half(u, s, sc, target, 500, 50, 9);
  CHECK(a.value == b.value);
  const auto c = estimate_log_z_half(u, s, sc, target, 500, 50, 9, 4);
  CHECK(a.value == c.value);
  // a different run tag draws fresh noise
  const auto d = estimate_log_z_half(u, s, sc, target, 500, 50, 9, 1, 7);
  CHECK(a.value != d.value);
}

TEST_CASE("free energy prediction") {
  CHECK(predict_free_energy(0.5, 100) == 0.0);
  CHECK(predict_free_energy(1.0, 100) == doctest::Approx(0.0));
  // printed formula at beta = 2, d = 100, and the /4 variant
  CHECK(predict_free_energy(2.0, 100) == doctest::Approx(-0.0941).epsilon(1e-3));
  CHECK(predict_free_energy(2.0, 100, true) ==
        doctest::Approx(-0.0341).epsilon(1e-3));
  CHECK_THROWS_AS(predict_free_energy(-1.0, 10), ConfigError);
}

}  // TEST_SUITE

TEST_SUITE("estimators") {

TEST_CASE("funnel quadrature oracle self-checks") {
  auto sc = ScalingFunctions::defaults();
  auto s = make_schedule("trig_full", 1.0, 0.5);
  const int d = 3;
  const double fscale = 3.0;
  FunnelU u(s, d, fscale);
  FunnelV v(s, d, fscale);
  auto target = funnel_target(d, fscale);
  PhiloxStream rng(29, RngDomain::test);

  // gradients match finite differences of the quadrature values
  const double h = 1e-5;
  for (int rep = 0; rep < 15; ++rep) {
    const double t = 0.05 + 0.9 * rng.next_uniform();
    VectorXd x(d);
    rng.fill_normal(x);
    const ScalarField& f =
        (t <= s.T_split) ? static_cast<const ScalarField&>(u)
                         : static_cast<const ScalarField&>(v);
    const VectorXd g = f.grad_at(t, x);
    for (int i = 0; i < d; ++i) {
      VectorXd xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (f.value_at(t, xp) - f.value_at(t, xm)) / (2.0 * h);
      CHECK(std::abs(fd - g[i]) <= 2e-5 * (1.0 + std::abs(fd)));
    }
  }

  // interface identity between the two fields at the split time
  const double tp = s.T_split;
  const double beta = s.r(tp) / s.g(tp);
  for (int rep = 0; rep < 10; ++rep) {
    VectorXd x(d);
    rng.fill_normal(x);
    const VectorXd z = beta * x;
    const double phi_p = v.value_at(tp, z) - log_psi_r(s.r(tp), z) -
                         d * std::log(s.g(tp));
    CHECK(u.value_at(tp, x) == doctest::Approx(phi_p).epsilon(1e-8));
  }

  // v approaches the target log-density at the horizon
  for (int rep = 0; rep < 10; ++rep) {
    VectorXd x(d);
    rng.fill_normal(x);
    const double t_end = s.T - s.eta();
    const double lhs = v.value_at(t_end, x) - d * std::log(s.g(t_end));
    CHECK(lhs == doctest::Approx(target.log_pi_hat(x)).epsilon(2e-3));
  }

  // u(0, 0) = 0 and grad u(0, 0) = E[x*] = 0: the controlled estimator
  // path starts exactly there. (At fixed x != 0 the t -> 0 limit of u is
  // the log-MGF of the target, which diverges for the funnel.)
  VectorXd zero_x = VectorXd::Zero(d);
  CHECK(u.value_at(0.0, zero_x) == 0.0);
  CHECK(u.grad_at(0.0, zero_x).norm() == 0.0);

  // cross-check the analytic Gaussian combination against the naive
  // two-factor integral at a mid-trajectory point
  {
    const double t = 0.6;
    VectorXd z(d);
    z << 0.7, -0.4, 1.1;
    FunnelRho rho(s, d, fscale);
    const double mine = rho.log_rho(t, z, nullptr);
    const double g = s.g(t), r = s.r(t), s2 = fscale * fscale;
    auto naive = [&](double y) {
      const double vy = g * g * std::exp(y) + r * r;
      double acc = -0.5 * y * y / s2 - 0.5 * std::log(2.0 * M_PI * s2);
      acc += -0.5 * (z[0] - g * y) * (z[0] - g * y) / (r * r) -
             0.5 * std::log(2.0 * M_PI * r * r);
      acc += -0.5 * (z[1] * z[1] + z[2] * z[2]) / vy -
             std::log(2.0 * M_PI * vy);
      return std::exp(acc);
    };
    const double direct = std::log(integrate(naive, -30.0, 30.0, 1e-14, 40, 64));
    CHECK(mine == doctest::Approx(direct).epsilon(1e-9));
  }
}

}
