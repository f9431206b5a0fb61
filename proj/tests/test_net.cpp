// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "fis/net.hpp"
#include "fis/rng.hpp"

#include <cmath>
#include <memory>

using namespace fis;

namespace {

class QuadTerminal final : public TerminalCondition {
 public:
  explicit QuadTerminal(double c)
      : TerminalCondition(TerminalSegment::u_half), c_(c) {}
  double phi(const VectorXd& x) const override {
    return 0.5 * c_ * x.squaredNorm();
  }
  VectorXd grad_phi(const VectorXd& x) const override { return c_ * x; }

 private:
  double c_;
};

VectorXd perturbed_params(const ScalarFieldNet& net, std::uint64_t seed,
                          double scale = 0.05) {
  VectorXd p = net.init_params();
  PhiloxStream rng(seed, RngDomain::test, 77);
  VectorXd noise(p.size());
  rng.fill_normal(noise);
  return p + scale * noise;
}

/// max_j |u(t_j,x_j) - phi(x_j)| / (1 + |phi(x_j)|) over random points.
double init_gap(const ScalarFieldNet& net, const VectorXd& p, double t_max,
                std::uint64_t seed, int n = 1000) {
  PhiloxStream rng(seed, RngDomain::test, 3);
  NetWorkspace ws, tws;
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    ArrayXd t(1);
    t[0] = t_max * rng.next_uniform();
    MatrixXd x(net.dim(), 1);
    rng.fill_normal(x);
    RowVectorXd val;
    MatrixXd grad;
    net.eval(p, t, x, ws, val, &grad, &tws);
    const double phi = net.terminal().phi(x.col(0));
    const VectorXd gphi = net.terminal().grad_phi(x.col(0));
    worst = std::max(worst,
                     std::abs(val[0] - phi) / (1.0 + std::abs(phi)));
    worst = std::max(worst, (grad.col(0) - gphi).norm() /
                                (1.0 + gphi.norm()));
  }
  return worst;
}

}  // namespace

TEST_SUITE("net") {

TEST_CASE("terminal condition holds exactly at initialization") {
  auto sc = ScalingFunctions::defaults();
  {
    auto s = make_schedule("linear_half", 1.0);
    ScalarFieldNet net(2, terminal_u_half(gmm_target(), s, sc), 7);
    CHECK(init_gap(net, net.init_params(), s.T, 1) <= 1e-12);
  }
  {
    auto s = make_schedule("follmer_half", 1.0);
    ScalarFieldNet net(5, terminal_u_half(funnel_target(5, 3.0), s, sc), 8);
    CHECK(init_gap(net, net.init_params(), s.T, 2) <= 1e-12);
  }
  {
    auto s = make_schedule("trig_full", 1.0, 0.5);
    ScalarFieldNet vnet(2, terminal_v_full(gmm_target(), s, sc), 9, 1);
    CHECK(init_gap(vnet, vnet.init_params(), s.T, 3) <= 1e-12);

    // split terminal against the freshly initialized v-net
    VectorXd v_params = vnet.init_params();
    ScalarFieldNet unet(2,
                        terminal_u_full_at_split(&vnet, &v_params, s, sc), 9);
    CHECK(init_gap(unet, unet.init_params(), s.T_split, 4) <= 1e-12);
  }
}

TEST_CASE("spatial gradient matches finite differences") {
  auto sc = ScalingFunctions::defaults();
  auto s = make_schedule("linear_half", 1.0);
  ScalarFieldNet net(3, terminal_u_half(gaussian_target(3, 1.3), s, sc), 11);
  const VectorXd p = perturbed_params(net, 1);
  NetWorkspace ws, tws;
  PhiloxStream rng(31, RngDomain::test);
  const double h = 1e-5;
  for (int rep = 0; rep < 100; ++rep) {
    ArrayXd t(1);
    t[0] = rng.next_uniform();
    MatrixXd x(3, 1);
    rng.fill_normal(x);
    RowVectorXd val;
    MatrixXd grad;
    net.eval(p, t, x, ws, val, &grad, &tws);
    for (int i = 0; i < 3; ++i) {
      MatrixXd xp = x, xm = x;
      xp(i, 0) += h;
      xm(i, 0) -= h;
      RowVectorXd vp, vm;
      net.eval(p, t, xp, ws, vp, nullptr, &tws);
      net.eval(p, t, xm, ws, vm, nullptr, &tws);
      const double fd = (vp[0] - vm[0]) / (2.0 * h);
      CHECK(std::abs(fd - grad(i, 0)) <= 1e-6 * (1.0 + std::abs(fd)));
    }
  }
}

TEST_CASE("with zero Phi1 output the gradient is Phi2 grad phi") {
  auto sc = ScalingFunctions::defaults();
  auto s = make_schedule("linear_half", 1.0);
  ScalarFieldNet net(2, terminal_u_half(gmm_target(), s, sc), 12);
  // perturb everything except Phi1's output layer
  VectorXd p = perturbed_params(net, 2);
  const auto& l = net.layout();
  p.segment(l.wout, kHidden).setZero();
  p[l.bout] = 0.0;
  NetWorkspace ws, tws;
  PhiloxStream rng(13, RngDomain::test);
  for (int rep = 0; rep < 10; ++rep) {
    ArrayXd t(1);
    t[0] = rng.next_uniform();
    MatrixXd x(2, 1);
    rng.fill_normal(x);
    RowVectorXd val;
    MatrixXd grad;
    net.eval(p, t, x, ws, val, &grad, &tws);
    const double phi = net.terminal().phi(x.col(0));
    const VectorXd gphi = net.terminal().grad_phi(x.col(0));
    const double phi2 = val[0] / phi;  // Phi1 == 0 here
    CHECK(grad.col(0).isApprox(phi2 * gphi, 1e-9));
  }
}

TEST_CASE("parameter gradients match directional finite differences") {
  auto sc = ScalingFunctions::defaults();
  struct Arch {
    int d;
    std::uint64_t seed;
  };
  for (Arch arch : {Arch{1, 3}, Arch{2, 4}, Arch{7, 5}}) {
    auto s = make_schedule("linear_half", 1.0);
    ScalarFieldNet net(
        arch.d, terminal_u_half(gaussian_target(arch.d, 1.2), s, sc),
        arch.seed);
    const VectorXd p0 = perturbed_params(net, arch.seed);
    PhiloxStream rng(arch.seed, RngDomain::test, 5);

    const int B = 5;
    ArrayXd t(B);
    MatrixXd X(arch.d, B);
    for (int j = 0; j < B; ++j) t[j] = rng.next_uniform();
    rng.fill_normal(X);

    // F(theta) = sum_j a0_j u_j + ||grad_x u_j||^2  (a0 fixed weights)
    RowVectorXd a0(B);
    rng.fill_normal(a0);
    NetWorkspace ws, tws;
    auto eval_F = [&](const VectorXd& p) {
      RowVectorXd val;
      MatrixXd grad;
      net.eval(p, t, X, ws, val, &grad, &tws);
      return a0.dot(val) + grad.colwise().squaredNorm().sum();
    };

    RowVectorXd val;
    MatrixXd grad;
    net.eval(p0, t, X, ws, val, &grad, &tws);
    VectorXd g = VectorXd::Zero(net.param_count());
    MatrixXd C = 2.0 * grad;
    net.vjp(p0, t, X, a0, &C, ws, g, nullptr, &tws);

    const double h = 1e-5;
    for (int dir = 0; dir < 10; ++dir) {
      VectorXd v(net.param_count());
      rng.fill_normal(v);
      v.normalize();
      const double fd = (eval_F(p0 + h * v) - eval_F(p0 - h * v)) / (2.0 * h);
      const double an = g.dot(v);
      CHECK(std::abs(fd - an) <= 1e-4 * (1.0 + std::abs(fd)));
    }
  }
}

TEST_CASE("parameter gradients flow through the split terminal") {
  auto sc = ScalingFunctions::defaults();
  auto s = make_schedule("trig_full", 1.0, 0.5);
  ScalarFieldNet vnet(2, terminal_v_full(gaussian_target(2, 1.1), s, sc), 21,
                      1);
  VectorXd pv = perturbed_params(vnet, 6);
  ScalarFieldNet unet(2, terminal_u_full_at_split(&vnet, &pv, s, sc), 21);
  VectorXd pu = perturbed_params(unet, 7);

  PhiloxStream rng(41, RngDomain::test);
  const int B = 4;
  ArrayXd t(B);
  MatrixXd X(2, B);
  for (int j = 0; j < B; ++j) t[j] = 0.5 * rng.next_uniform();
  rng.fill_normal(X);
  RowVectorXd a0(B);
  rng.fill_normal(a0);

  NetWorkspace ws, tws;
  auto eval_F = [&](const VectorXd& u_p) {
    RowVectorXd val;
    MatrixXd grad;
    unet.eval(u_p, t, X, ws, val, &grad, &tws);
    return a0.dot(val) + grad.colwise().squaredNorm().sum();
  };

  RowVectorXd val;
  MatrixXd grad;
  unet.eval(pu, t, X, ws, val, &grad, &tws);
  VectorXd gu = VectorXd::Zero(unet.param_count());
  VectorXd gv = VectorXd::Zero(vnet.param_count());
  MatrixXd C = 2.0 * grad;
  unet.vjp(pu, t, X, a0, &C, ws, gu, &gv, &tws);

  const double h = 1e-5;
  for (int dir = 0; dir < 6; ++dir) {
    VectorXd v(unet.param_count());
    rng.fill_normal(v);
    v.normalize();
    const double fd = (eval_F(pu + h * v) - eval_F(pu - h * v)) / (2.0 * h);
    CHECK(std::abs(fd - gu.dot(v)) <= 1e-4 * (1.0 + std::abs(fd)));
  }
  // directions in the v parameters: phi' moves with the live v-net
  for (int dir = 0; dir < 6; ++dir) {
    VectorXd v(vnet.param_count());
    rng.fill_normal(v);
    v.normalize();
    const VectorXd pv0 = pv;
    pv = pv0 + h * v;
    const double fp = eval_F(pu);
    pv = pv0 - h * v;
    const double fm = eval_F(pu);
    pv = pv0;
    const double fd = (fp - fm) / (2.0 * h);
    CHECK(std::abs(fd - gv.dot(v)) <= 1e-4 * (1.0 + std::abs(fd)));
  }
}

TEST_CASE("batched evaluation agrees with single points") {
  auto sc = ScalingFunctions::defaults();
  auto s = make_schedule("linear_half", 1.0);
  ScalarFieldNet net(3, terminal_u_half(gmm_target().d == 2
                                            ? gaussian_target(3, 1.0)
                                            : gaussian_target(3, 1.0),
                                        s, sc),
                     31);
  const VectorXd p = perturbed_params(net, 8);
  PhiloxStream rng(51, RngDomain::test);
  const int B = 7;
  ArrayXd t(B);
  MatrixXd X(3, B);
  for (int j = 0; j < B; ++j) t[j] = rng.next_uniform();
  rng.fill_normal(X);

  NetWorkspace ws, tws;
  RowVectorXd val;
  MatrixXd grad;
  net.eval(p, t, X, ws, val, &grad, &tws);

  RowVectorXd a(B);
  rng.fill_normal(a);
  MatrixXd C(3, B);
  rng.fill_normal(C);
  VectorXd g_batch = VectorXd::Zero(net.param_count());
  net.vjp(p, t, X, a, &C, ws, g_batch, nullptr, &tws);

  VectorXd g_loop = VectorXd::Zero(net.param_count());
  NetWorkspace ws1, tws1;
  for (int j = 0; j < B; ++j) {
    ArrayXd tj(1);
    tj[0] = t[j];
    MatrixXd xj = X.col(j);
    RowVectorXd vj;
    MatrixXd gj;
    net.eval(p, tj, xj, ws1, vj, &gj, &tws1);
    CHECK(vj[0] == doctest::Approx(val[j]).epsilon(1e-12));
    CHECK(gj.col(0).isApprox(grad.col(j), 1e-12));
    RowVectorXd aj(1);
    aj[0] = a[j];
    MatrixXd Cj = C.col(j);
    net.vjp(p, tj, xj, aj, &Cj, ws1, g_loop, nullptr, &tws1);
  }
  CHECK(g_batch.isApprox(g_loop, 1e-10));

  // shared-time fast path agrees with per-point evaluation
  ArrayXd t_shared = ArrayXd::Constant(B, 0.37);
  net.eval(p, t_shared, X, ws, val, &grad, &tws);
  VectorXd g_shared = VectorXd::Zero(net.param_count());
  net.vjp(p, t_shared, X, a, &C, ws, g_shared, nullptr, &tws);
  VectorXd g_loop2 = VectorXd::Zero(net.param_count());
  for (int j = 0; j < B; ++j) {
    ArrayXd tj(1);
    tj[0] = 0.37;
    MatrixXd xj = X.col(j);
    RowVectorXd vj;
    MatrixXd gj;
    net.eval(p, tj, xj, ws1, vj, &gj, &tws1);
    CHECK(vj[0] == doctest::Approx(val[j]).epsilon(1e-12));
    RowVectorXd aj(1);
    aj[0] = a[j];
    MatrixXd Cj = C.col(j);
    net.vjp(p, tj, xj, aj, &Cj, ws1, g_loop2, nullptr, &tws1);
  }
  CHECK(g_shared.isApprox(g_loop2, 1e-10));
}

TEST_CASE("skip contribution to the gradient is linear in phi") {
  auto mk = [](double c) {
    return std::make_shared<QuadTerminal>(c);
  };
  ScalarFieldNet net0(2, mk(0.0), 55);
  ScalarFieldNet net1(2, mk(1.0), 55);
  ScalarFieldNet netc(2, mk(2.5), 55);
  const VectorXd p = perturbed_params(net1, 9);
  NetWorkspace ws;
  PhiloxStream rng(61, RngDomain::test);
  for (int rep = 0; rep < 10; ++rep) {
    ArrayXd t(1);
    t[0] = rng.next_uniform();
    MatrixXd x(2, 1);
    rng.fill_normal(x);
    RowVectorXd v0, v1, vc;
    MatrixXd g0, g1, gc;
    net0.eval(p, t, x, ws, v0, &g0);
    net1.eval(p, t, x, ws, v1, &g1);
    netc.eval(p, t, x, ws, vc, &gc);
    CHECK((gc.col(0) - g0.col(0)).isApprox(2.5 * (g1.col(0) - g0.col(0)),
                                           1e-10));
  }
}

TEST_CASE("same seed gives identical nets; determinism of updates") {
  auto sc = ScalingFunctions::defaults();
  auto s = make_schedule("linear_half", 1.0);
  ScalarFieldNet a(2, terminal_u_half(gaussian_target(2, 1.0), s, sc), 99);
  ScalarFieldNet b(2, terminal_u_half(gaussian_target(2, 1.0), s, sc), 99);
  CHECK(a.frequencies() == b.frequencies());
  CHECK(a.init_params() == b.init_params());

  // bit-identical adam/ema updates
  NetState sa = NetState::init(a.init_params());
  NetState sb = NetState::init(b.init_params());
  PhiloxStream rng(71, RngDomain::test);
  VectorXd g(sa.theta.size());
  for (long step = 0; step < 5; ++step) {
    rng.fill_normal(g);
    VectorXd g2 = g;
    adam_step(sa, g, step, lr_at(step));
    adam_step(sb, g2, step, lr_at(step));
    ema_update(sa);
    ema_update(sb);
  }
  CHECK(sa.theta == sb.theta);
  CHECK(sa.ema_theta == sb.ema_theta);
}

TEST_CASE("learning-rate schedule anchors and interpolation") {
  CHECK(lr_at(0) == doctest::Approx(5e-3).epsilon(1e-12));
  CHECK(lr_at(2000) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_at(4000) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(lr_at(1000) == doctest::Approx(3e-3).epsilon(1e-12));
  CHECK(lr_at(3000) == doctest::Approx(6e-4).epsilon(1e-12));
}

TEST_CASE("gradient clipping rescales to the bound") {
  VectorXd g(4);
  g << 6.0, 8.0, 0.0, 0.0;  // norm 10
  const double pre = clip_global_norm(g, 1.0);
  CHECK(pre == doctest::Approx(10.0));
  CHECK(g.norm() == doctest::Approx(1.0).epsilon(1e-14));
  VectorXd small(2);
  small << 0.3, 0.4;
  clip_global_norm(small, 1.0);
  CHECK(small.norm() == doctest::Approx(0.5));
}

TEST_CASE("adam single step against the closed form") {
  NetState st = NetState::init(VectorXd::Zero(2));
  VectorXd g(2);
  g << 2.0, -0.5;
  adam_step(st, g, 0, 1e-2);
  // bias-corrected m-hat = g, v-hat = g^2: step is -lr * g / (|g| + eps)
  CHECK(st.theta[0] == doctest::Approx(-1e-2).epsilon(1e-6));
  CHECK(st.theta[1] == doctest::Approx(1e-2).epsilon(1e-6));
  VectorXd bad(2);
  bad << 1.0, std::nan("");
  CHECK_THROWS_AS(adam_step(st, bad, 1, 1e-2), NumericalError);
}

TEST_CASE("ema update") {
  NetState st = NetState::init(VectorXd::Ones(3));
  st.theta.setConstant(2.0);
  ema_update(st);
  CHECK(st.ema_theta[0] == doctest::Approx(0.999 + 0.001 * 2.0));
}

}  // TEST_SUITE

TEST_SUITE("net") {
TEST_CASE("vectorized normal cdf matches libm erf") {
  fis::MatrixXd z(1, 4001), cdf, pdf;
  fis::detail::ErfScratch scratch;
  for (int i = 0; i <= 4000; ++i) z(0, i) = -10.0 + 20.0 * i / 4000.0;
  fis::detail::normal_cdf_pdf(z, cdf, pdf, scratch);
  double worst = 0.0;
  for (int i = 0; i <= 4000; ++i) {
    const double ref = 0.5 * std::erfc(-z(0, i) * 0.7071067811865475244);
    worst = std::max(worst, std::abs(cdf(0, i) - ref));
    const double pref = 0.3989422804014326779 * std::exp(-0.5 * z(0, i) * z(0, i));
    worst = std::max(worst, std::abs(pdf(0, i) - pref));
  }
  CHECK(worst < 2e-13);
}
}
