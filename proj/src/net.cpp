// SPDX-License-Identifier: Apache-2.0

#include "fis/net.hpp"


#include <cassert>
#include <cmath>

namespace fis {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

// ---------------------------------------------------------------------------
// Vectorized erf. libm's erf is scalar and dominates the evaluation cost;
// Chebyshev fits (generated once from the libm reference) evaluate through
// Eigen array ops instead. Absolute error is below 2e-13, checked in the
// unit tests.

struct Cheb {
  double lo = 0.0, hi = 1.0;
  int n = 0;
  std::array<double, 24> c{};

  void fit(double lo_, double hi_, int n_, double (*f)(double)) {
    lo = lo_;
    hi = hi_;
    n = n_;
    std::array<double, 24> fv{};
    for (int j = 0; j <= n; ++j) {
      const double u = std::cos(M_PI * (j + 0.5) / (n + 1));
      fv[j] = f(0.5 * (lo + hi) + 0.5 * (hi - lo) * u);
    }
    for (int k = 0; k <= n; ++k) {
      double acc = 0.0;
      for (int j = 0; j <= n; ++j)
        acc += fv[j] * std::cos(M_PI * k * (j + 0.5) / (n + 1));
      c[k] = 2.0 / (n + 1) * acc;
    }
    c[0] *= 0.5;
  }

  /// Monomial coefficients in the mapped variable u(x) = mu_a x + mu_b,
  /// for branch-free Horner evaluation.
  std::array<double, 24> mono{};
  double mu_a = 1.0, mu_b = 0.0;

  void to_monomial() {
    // T_{k+1} = 2u T_k - T_{k-1}, accumulated in monomial form.
    std::array<double, 24> tk_prev{}, tk{}, tmp{};
    tk_prev[0] = 1.0;  // T_0
    tk[1] = 1.0;       // T_1
    mono.fill(0.0);
    mono[0] = c[0];
    for (int k = 1; k <= n; ++k) {
      for (int i = 0; i <= k; ++i) mono[i] += c[k] * tk[i];
      if (k < n) {
        tmp.fill(0.0);
        for (int i = 0; i <= k; ++i) tmp[i + 1] = 2.0 * tk[i];
        for (int i = 0; i <= k; ++i) tmp[i] -= tk_prev[i];
        tk_prev = tk;
        tk = tmp;
      }
    }
    mu_a = 2.0 / (hi - lo);
    mu_b = -(hi + lo) / (hi - lo);
  }
};

struct ErfTables {
  Cheb inner;  // erf(x)/x as a function of x^2 on [0, 1]
  Cheb tail;   // erfc(1/w) e^{1/w^2} as a function of w = 1/x on [1/6, 1]
  ErfTables() {
    inner.fit(0.0, 1.0, 10, [](double y) {
      const double x = std::sqrt(y);
      return x > 0.0 ? std::erf(x) / x : 2.0 / std::sqrt(M_PI);
    });
    tail.fit(1.0 / 6.0, 1.0, 14, [](double w) {
      const double x = 1.0 / w;
      return std::erfc(x) * std::exp(x * x);
    });
    inner.to_monomial();
    tail.to_monomial();
    // Self-check the fits against the libm reference once at startup.
    double worst = 0.0;
    for (int i = 0; i <= 8000; ++i) {
      const double x = 8.0 * i / 8000.0;
      worst = std::max(worst, std::abs(erf_at(x) - std::erf(x)));
    }
    if (worst > 5e-12)
      throw std::logic_error("erf approximation self-check failed");
  }

  double erf_at(double x) const {
    const double ax = std::min(std::abs(x), 40.0);
    const double e = std::exp(-ax * ax);
    if (ax <= 1.0) {
      const double u = inner.mu_a * (x * x) + inner.mu_b;
      double p = inner.mono[inner.n];
      for (int k = inner.n - 1; k >= 0; --k) p = p * u + inner.mono[k];
      return x * p;
    }
    const double u = tail.mu_a / ax + tail.mu_b;
    double p = tail.mono[tail.n];
    for (int k = tail.n - 1; k >= 0; --k) p = p * u + tail.mono[k];
    return std::copysign(1.0 - e * p, x);
  }

};

const ErfTables& erf_tables() {
  static const ErfTables tables;
  return tables;
}

}  // namespace

namespace detail {

void normal_cdf_pdf(const MatrixXd& z, MatrixXd& cdf, MatrixXd& pdf,
                    ErfScratch& s) {
  const auto& tb = erf_tables();
  const Index r = z.rows(), c = z.cols(), n = r * c;
  // exp through Eigen's vectorized kernel, the rest in one fused pass that
  // the compiler vectorizes (fixed-degree Horner, no libm calls).
  s.x = kInvSqrt2 * z.array();
  s.e = (-s.x.square().min(1600.0)).exp();  // exp(-z^2/2)
  cdf.resize(r, c);
  pdf.resize(r, c);
  const double* xp = s.x.data();
  const double* ep = s.e.data();
  double* cp = cdf.data();
  double* pp = pdf.data();
  const double* ai = tb.inner.mono.data();
  const double* at = tb.tail.mono.data();
  const double ia = tb.inner.mu_a, ib = tb.inner.mu_b;
  const double ta = tb.tail.mu_a, tb_ = tb.tail.mu_b;
  // Horner in even/odd halves: independent chains, degree 10 and 14.
  for (Index i = 0; i < n; ++i) {
    const double x = xp[i];
    const double e = ep[i];
    pp[i] = kInvSqrt2Pi * e;
    const double x2 = x * x;
    const double ax = std::min(std::abs(x), 40.0);
    // core: erf(x) = x * P_inner(x^2)
    const double ui = ia * std::min(x2, 1.0) + ib;
    const double ui2 = ui * ui;
    double pe = ai[10];
    pe = pe * ui2 + ai[8];
    pe = pe * ui2 + ai[6];
    pe = pe * ui2 + ai[4];
    pe = pe * ui2 + ai[2];
    pe = pe * ui2 + ai[0];
    double po = ai[9];
    po = po * ui2 + ai[7];
    po = po * ui2 + ai[5];
    po = po * ui2 + ai[3];
    po = po * ui2 + ai[1];
    const double core = x * (pe + ui * po);
    // tail: erf(x) = sign(x) (1 - e^{-x^2} P_tail(1/|x|)); the polynomial
    // extrapolates harmlessly past x = 6 where e underflows
    const double ut = ta / std::max(ax, 1.0) + tb_;
    const double ut2 = ut * ut;
    double qe = at[14];
    qe = qe * ut2 + at[12];
    qe = qe * ut2 + at[10];
    qe = qe * ut2 + at[8];
    qe = qe * ut2 + at[6];
    qe = qe * ut2 + at[4];
    qe = qe * ut2 + at[2];
    qe = qe * ut2 + at[0];
    double qo = at[13];
    qo = qo * ut2 + at[11];
    qo = qo * ut2 + at[9];
    qo = qo * ut2 + at[7];
    qo = qo * ut2 + at[5];
    qo = qo * ut2 + at[3];
    qo = qo * ut2 + at[1];
    const double tail = std::copysign(1.0 - e * (qe + ut * qo), x);
    cp[i] = 0.5 * (1.0 + (ax <= 1.0 ? core : tail));
  }
}

}  // namespace detail

namespace {

using CMap = Eigen::Map<const MatrixXd>;
using CVMap = Eigen::Map<const VectorXd>;
using MMap = Eigen::Map<MatrixXd>;
using VMap = Eigen::Map<VectorXd>;

inline CMap mat(const VectorXd& p, int off, int rows, int cols) {
  return CMap(p.data() + off, rows, cols);
}
inline CVMap vec(const VectorXd& p, int off, int n) {
  return CVMap(p.data() + off, n);
}
inline MMap mat(VectorXd& p, int off, int rows, int cols) {
  return MMap(p.data() + off, rows, cols);
}
inline VMap vec(VectorXd& p, int off, int n) {
  return VMap(p.data() + off, n);
}

/// s = gelu(z) = z Phi(z); d = gelu'(z) = Phi(z) + z N(z). pdf is retained
/// by the caller when gelu'' will be needed later.
void gelu_forward(const MatrixXd& z, MatrixXd& s, MatrixXd& d, MatrixXd& pdf,
                  detail::ErfScratch& scratch) {
  detail::normal_cdf_pdf(z, scratch.cdf, pdf, scratch);
  s = z.cwiseProduct(scratch.cdf);
  d = scratch.cdf + z.cwiseProduct(pdf);
}

/// gelu''(z) = N(z) (2 - z^2) from the cached pdf.
void gelu_second(const MatrixXd& z, const MatrixXd& pdf, MatrixXd& dd) {
  dd = pdf.cwiseProduct((2.0 - z.array().square()).matrix());
}

}  // namespace

NetLayout NetLayout::make(int d) {
  NetLayout l;
  l.d = d;
  int off = 0;
  auto take = [&off](int n) {
    const int at = off;
    off += n;
    return at;
  };
  l.wx = take(kHidden * d);
  l.bx = take(kHidden);
  l.wt1 = take(kHidden * kEmbed);
  l.bt1 = take(kHidden);
  l.wt2 = take(kHidden * kHidden);
  l.bt2 = take(kHidden);
  l.w1 = take(kHidden * kHidden);
  l.b1 = take(kHidden);
  l.w2 = take(kHidden * kHidden);
  l.b2 = take(kHidden);
  l.wout = take(kHidden);
  l.bout = take(1);
  l.q0 = take(kHidden * kEmbed);
  l.c0 = take(kHidden);
  l.q1 = take(kHidden * kHidden);
  l.c1 = take(kHidden);
  l.q2 = take(kHidden * kHidden);
  l.c2 = take(kHidden);
  l.qout = take(kHidden);
  l.cout = take(1);
  l.total = off;
  return l;
}

ScalarFieldNet::ScalarFieldNet(
    int d, std::shared_ptr<const TerminalCondition> terminal,
    std::uint64_t seed, std::uint64_t stream)
    : layout_(NetLayout::make(d)), terminal_(std::move(terminal)) {
  require(d >= 1, "ScalarFieldNet: dimension must be positive");
  PhiloxStream rng(seed, RngDomain::net_init, stream, 0);
  freqs_.resize(kNumFreq);
  for (int i = 0; i < kNumFreq; ++i)
    freqs_[i] = 2.0 * M_PI * rng.next_normal();
  init_seed_ = seed;
  init_stream_ = stream;
}

VectorXd ScalarFieldNet::init_params() const {
  // Same stream as the constructor; the frequency draws are replayed so the
  // weight draws land at the same counters regardless of call order.
  PhiloxStream rng(init_seed_, RngDomain::net_init, init_stream_, 0);
  for (int i = 0; i < kNumFreq; ++i) (void)rng.next_normal();

  VectorXd p = VectorXd::Zero(layout_.total);
  auto fill = [&rng](MMap w, int fan_in) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Index j = 0; j < w.cols(); ++j)
      for (Index i = 0; i < w.rows(); ++i) w(i, j) = scale * rng.next_normal();
  };
  const NetLayout& l = layout_;
  fill(mat(p, l.wx, kHidden, l.d), l.d);
  fill(mat(p, l.wt1, kHidden, kEmbed), kEmbed);
  fill(mat(p, l.wt2, kHidden, kHidden), kHidden);
  fill(mat(p, l.w1, kHidden, kHidden), kHidden);
  fill(mat(p, l.w2, kHidden, kHidden), kHidden);
  fill(mat(p, l.q0, kHidden, kEmbed), kEmbed);
  fill(mat(p, l.q1, kHidden, kHidden), kHidden);
  fill(mat(p, l.q2, kHidden, kHidden), kHidden);
  // Phi1 output layer zero (wout, bout already zero) and Phi2 output biased
  // to one: the net equals its terminal condition at initialization.
  p[l.cout] = 1.0;
  return p;
}

void ScalarFieldNet::eval(const VectorXd& params, const ArrayXd& t,
                          const MatrixXd& X, NetWorkspace& ws,
                          RowVectorXd& val, MatrixXd* grad,
                          NetWorkspace* term_ws) const {
  const NetLayout& l = layout_;
  const Index B = X.cols();
  assert(t.size() == B && X.rows() == l.d);
  assert(params.size() == l.total);

  ws.cols = B;
  ws.has_grad = grad != nullptr;
  ws.shared_t = B > 1 && (t == t[0]).all();
  const Index Bt = ws.shared_t ? 1 : B;

  // Fourier time embedding: 64 sin + 64 cos rows.
  ws.emb.resize(kEmbed, Bt);
  {
    MatrixXd trow(1, Bt);
    if (ws.shared_t)
      trow(0, 0) = t[0];
    else
      trow = t.matrix().transpose();
    const Eigen::ArrayXXd phase = (freqs_ * trow).array();
    ws.emb.topRows(kNumFreq) = phase.sin().matrix();
    ws.emb.bottomRows(kNumFreq) = phase.cos().matrix();
  }

  const auto Wx = mat(params, l.wx, kHidden, l.d);
  const auto Wt1 = mat(params, l.wt1, kHidden, kEmbed);
  const auto Wt2 = mat(params, l.wt2, kHidden, kHidden);
  const auto W1 = mat(params, l.w1, kHidden, kHidden);
  const auto W2 = mat(params, l.w2, kHidden, kHidden);
  const auto wout = vec(params, l.wout, kHidden);

  // Phi1 time path.
  ws.q_t1.noalias() = Wt1 * ws.emb;
  ws.q_t1.colwise() += vec(params, l.bt1, kHidden);
  gelu_forward(ws.q_t1, ws.h_t1, ws.dt1, ws.pdf_tmp, ws.erf_scratch);
  ws.t_feat.noalias() = Wt2 * ws.h_t1;
  ws.t_feat.colwise() += vec(params, l.bt2, kHidden);

  // Trunk.
  ws.z0.noalias() = Wx * X;
  ws.z0.colwise() += vec(params, l.bx, kHidden);
  if (ws.shared_t)
    ws.z0.colwise() += ws.t_feat.col(0);
  else
    ws.z0 += ws.t_feat;
  gelu_forward(ws.z0, ws.s0, ws.d0, ws.pf0, ws.erf_scratch);
  ws.z1.noalias() = W1 * ws.s0;
  ws.z1.colwise() += vec(params, l.b1, kHidden);
  gelu_forward(ws.z1, ws.s1, ws.d1, ws.pf1, ws.erf_scratch);
  ws.z2.noalias() = W2 * ws.s1;
  ws.z2.colwise() += vec(params, l.b2, kHidden);
  gelu_forward(ws.z2, ws.s2, ws.d2, ws.pf2, ws.erf_scratch);
  ws.phi1.noalias() = wout.transpose() * ws.s2;
  ws.phi1.array() += params[l.bout];

  // Phi2 (time only).
  ws.p0.noalias() = mat(params, l.q0, kHidden, kEmbed) * ws.emb;
  ws.p0.colwise() += vec(params, l.c0, kHidden);
  gelu_forward(ws.p0, ws.k0, ws.dp0, ws.pdf_tmp, ws.erf_scratch);
  ws.p1.noalias() = mat(params, l.q1, kHidden, kHidden) * ws.k0;
  ws.p1.colwise() += vec(params, l.c1, kHidden);
  gelu_forward(ws.p1, ws.k1, ws.dp1, ws.pdf_tmp, ws.erf_scratch);
  ws.p2.noalias() = mat(params, l.q2, kHidden, kHidden) * ws.k1;
  ws.p2.colwise() += vec(params, l.c2, kHidden);
  gelu_forward(ws.p2, ws.k2, ws.dp2, ws.pdf_tmp, ws.erf_scratch);
  RowVectorXd phi2_t = vec(params, l.qout, kHidden).transpose() * ws.k2;
  phi2_t.array() += params[l.cout];
  ws.phi2 = ws.shared_t ? RowVectorXd::Constant(B, phi2_t[0]) : phi2_t;

  // Terminal skip.
  terminal_->eval(X, ws.term_phi, grad ? &ws.term_grad : nullptr, term_ws);

  val = ws.phi1 + ws.phi2.cwiseProduct(ws.term_phi);

  if (grad) {
    // Backprop of phi1 through the trunk gives the exact spatial gradient.
    ws.sb = wout.replicate(1, B).cwiseProduct(ws.d2);   // Delta2
    ws.zb.noalias() = W2.transpose() * ws.sb;
    ws.zb = ws.zb.cwiseProduct(ws.d1);                  // Delta1
    ws.tzb.noalias() = W1.transpose() * ws.zb;
    ws.tzb = ws.tzb.cwiseProduct(ws.d0);                // Delta0
    ws.gx.noalias() = Wx.transpose() * ws.tzb;
    *grad = ws.gx + ws.term_grad * ws.phi2.asDiagonal();
  }
}

void ScalarFieldNet::vjp(const VectorXd& params, const ArrayXd& t,
                         const MatrixXd& X, const RowVectorXd& a,
                         const MatrixXd* C, NetWorkspace& ws,
                         VectorXd& grad_self, VectorXd* grad_terminal,
                         NetWorkspace* term_ws) const {
  const NetLayout& l = layout_;
  const Index B = X.cols();
  assert(ws.cols == B && a.size() == B);
  assert(!C || ws.has_grad);
  assert(grad_self.size() == l.total);

  const auto Wx = mat(params, l.wx, kHidden, l.d);
  const auto W1 = mat(params, l.w1, kHidden, kHidden);
  const auto W2 = mat(params, l.w2, kHidden, kHidden);
  const auto Wt2 = mat(params, l.wt2, kHidden, kHidden);
  const auto wout = vec(params, l.wout, kHidden);

  // Tangent chain in x along per-column directions C.
  if (C) {
    ws.tz0.noalias() = Wx * (*C);
    ws.ts0 = ws.tz0.cwiseProduct(ws.d0);
    ws.tz1.noalias() = W1 * ws.ts0;
    ws.ts1 = ws.tz1.cwiseProduct(ws.d1);
    ws.tz2.noalias() = W2 * ws.ts1;
    ws.ts2 = ws.tz2.cwiseProduct(ws.d2);
  }

  // ---- Phi1 reverse sweep (primal adjoints sb/zb, tangent adjoints
  // tsb/tzb). Output cotangents: a on the value, 1 on the tangent output.
  vec(grad_self, l.wout, kHidden).noalias() += ws.s2 * a.transpose();
  grad_self[l.bout] += a.sum();
  ws.sb.noalias() = wout * a;
  if (C) {
    vec(grad_self, l.wout, kHidden) += ws.ts2.rowwise().sum();
    ws.tsb = wout.replicate(1, B);
  }

  auto level = [&](const MatrixXd& z, const MatrixXd& dz, const MatrixXd& pdf,
                   const MatrixXd& tz) {
    if (C) {
      gelu_second(z, pdf, ws.dd);
      ws.zb = dz.cwiseProduct(ws.sb) +
              ws.dd.cwiseProduct(tz).cwiseProduct(ws.tsb);
      ws.tzb = dz.cwiseProduct(ws.tsb);
    } else {
      ws.zb = dz.cwiseProduct(ws.sb);
    }
  };

  level(ws.z2, ws.d2, ws.pf2, ws.tz2);
  mat(grad_self, l.w2, kHidden, kHidden).noalias() += ws.zb * ws.s1.transpose();
  vec(grad_self, l.b2, kHidden) += ws.zb.rowwise().sum();
  if (C)
    mat(grad_self, l.w2, kHidden, kHidden).noalias() +=
        ws.tzb * ws.ts1.transpose();
  ws.sb.noalias() = W2.transpose() * ws.zb;
  if (C) ws.tsb.noalias() = W2.transpose() * ws.tzb;

  level(ws.z1, ws.d1, ws.pf1, ws.tz1);
  mat(grad_self, l.w1, kHidden, kHidden).noalias() += ws.zb * ws.s0.transpose();
  vec(grad_self, l.b1, kHidden) += ws.zb.rowwise().sum();
  if (C)
    mat(grad_self, l.w1, kHidden, kHidden).noalias() +=
        ws.tzb * ws.ts0.transpose();
  ws.sb.noalias() = W1.transpose() * ws.zb;
  if (C) ws.tsb.noalias() = W1.transpose() * ws.tzb;

  level(ws.z0, ws.d0, ws.pf0, ws.tz0);
  mat(grad_self, l.wx, kHidden, l.d).noalias() += ws.zb * X.transpose();
  vec(grad_self, l.bx, kHidden) += ws.zb.rowwise().sum();
  if (C)
    mat(grad_self, l.wx, kHidden, l.d).noalias() += ws.tzb * C->transpose();

  // Time path of Phi1: cotangent of t_feat is zb (summed over columns when
  // the batch shares one t).
  if (ws.shared_t) {
    VectorXd tf = ws.zb.rowwise().sum();
    mat(grad_self, l.wt2, kHidden, kHidden).noalias() +=
        tf * ws.h_t1.col(0).transpose();
    vec(grad_self, l.bt2, kHidden) += tf;
    VectorXd qb = (Wt2.transpose() * tf).cwiseProduct(ws.dt1.col(0));
    mat(grad_self, l.wt1, kHidden, kEmbed).noalias() +=
        qb * ws.emb.col(0).transpose();
    vec(grad_self, l.bt1, kHidden) += qb;
  } else {
    mat(grad_self, l.wt2, kHidden, kHidden).noalias() +=
        ws.zb * ws.h_t1.transpose();
    vec(grad_self, l.bt2, kHidden) += ws.zb.rowwise().sum();
    ws.tzb.noalias() = Wt2.transpose() * ws.zb;
    ws.tzb = ws.tzb.cwiseProduct(ws.dt1);
    mat(grad_self, l.wt1, kHidden, kEmbed).noalias() +=
        ws.tzb * ws.emb.transpose();
    vec(grad_self, l.bt1, kHidden) += ws.tzb.rowwise().sum();
  }

  // ---- Phi2 reverse sweep. Output cotangent per column:
  //   e_j = a_j phi(x_j) + C_j . grad_phi(x_j).
  ws.row_scratch = a.cwiseProduct(ws.term_phi);
  if (C)
    ws.row_scratch +=
        C->cwiseProduct(ws.term_grad).colwise().sum();

  const auto qout = vec(params, l.qout, kHidden);
  if (ws.shared_t) {
    const double e = ws.row_scratch.sum();
    vec(grad_self, l.qout, kHidden) += e * ws.k2.col(0);
    grad_self[l.cout] += e;
    VectorXd kb = (e * qout).cwiseProduct(ws.dp2.col(0));
    mat(grad_self, l.q2, kHidden, kHidden).noalias() +=
        kb * ws.k1.col(0).transpose();
    vec(grad_self, l.c2, kHidden) += kb;
    kb = (mat(params, l.q2, kHidden, kHidden).transpose() * kb)
             .cwiseProduct(ws.dp1.col(0));
    mat(grad_self, l.q1, kHidden, kHidden).noalias() +=
        kb * ws.k0.col(0).transpose();
    vec(grad_self, l.c1, kHidden) += kb;
    kb = (mat(params, l.q1, kHidden, kHidden).transpose() * kb)
             .cwiseProduct(ws.dp0.col(0));
    mat(grad_self, l.q0, kHidden, kEmbed).noalias() +=
        kb * ws.emb.col(0).transpose();
    vec(grad_self, l.c0, kHidden) += kb;
  } else {
    vec(grad_self, l.qout, kHidden).noalias() +=
        ws.k2 * ws.row_scratch.transpose();
    grad_self[l.cout] += ws.row_scratch.sum();
    ws.kb.noalias() = qout * ws.row_scratch;
    ws.kb = ws.kb.cwiseProduct(ws.dp2);
    mat(grad_self, l.q2, kHidden, kHidden).noalias() +=
        ws.kb * ws.k1.transpose();
    vec(grad_self, l.c2, kHidden) += ws.kb.rowwise().sum();
    ws.pb.noalias() = mat(params, l.q2, kHidden, kHidden).transpose() * ws.kb;
    ws.kb = ws.pb.cwiseProduct(ws.dp1);
    mat(grad_self, l.q1, kHidden, kHidden).noalias() +=
        ws.kb * ws.k0.transpose();
    vec(grad_self, l.c1, kHidden) += ws.kb.rowwise().sum();
    ws.pb.noalias() = mat(params, l.q1, kHidden, kHidden).transpose() * ws.kb;
    ws.kb = ws.pb.cwiseProduct(ws.dp0);
    mat(grad_self, l.q0, kHidden, kEmbed).noalias() +=
        ws.kb * ws.emb.transpose();
    vec(grad_self, l.c0, kHidden) += ws.kb.rowwise().sum();
  }

  // ---- Terminal cotangents: a phi2 on the value, phi2 C on the gradient.
  if (terminal_->has_params() && grad_terminal) {
    ws.row_scratch = a.cwiseProduct(ws.phi2);
    if (C) ws.ct_scal = (*C) * ws.phi2.asDiagonal();
    terminal_->vjp(X, ws.row_scratch, C ? &ws.ct_scal : nullptr,
                   *grad_terminal, term_ws);
  }
}

// ---------------------------------------------------------------------------

namespace {

class SplitTerminal final : public TerminalCondition {
 public:
  SplitTerminal(const ScalarFieldNet* v_net, const VectorXd* v_params,
                double t_split, double scale, double quad_coeff,
                double const_term)
      : TerminalCondition(TerminalSegment::u_full_at_split),
        v_net_(v_net),
        v_params_(v_params),
        t_split_(t_split),
        scale_(scale),
        quad_coeff_(quad_coeff),
        const_term_(const_term) {}

  double phi(const VectorXd& x) const override {
    NetWorkspace ws;
    RowVectorXd val;
    eval(x, val, nullptr, &ws);
    return val[0];
  }

  VectorXd grad_phi(const VectorXd& x) const override {
    NetWorkspace ws;
    RowVectorXd val;
    MatrixXd grad;
    eval(x, val, &grad, &ws);
    return grad.col(0);
  }

  void eval(const MatrixXd& X, RowVectorXd& phi_out, MatrixXd* grad_out,
            NetWorkspace* scratch) const override {
    NetWorkspace local;
    NetWorkspace& ws = scratch ? *scratch : local;
    ws.term_in = scale_ * X;
    const ArrayXd tv = ArrayXd::Constant(X.cols(), t_split_);
    v_net_->eval(*v_params_, tv, ws.term_in, ws, phi_out, grad_out, nullptr);
    phi_out += 0.5 * quad_coeff_ * X.colwise().squaredNorm();
    phi_out.array() += const_term_;
    if (grad_out) *grad_out = scale_ * (*grad_out) + quad_coeff_ * X;
  }

  bool has_params() const override { return true; }
  const VectorXd* bound_params() const override { return v_params_; }

  void vjp(const MatrixXd& X, const RowVectorXd& a, const MatrixXd* C,
           VectorXd& grad_params, NetWorkspace* scratch) const override {
    assert(scratch != nullptr);  // must reuse the eval() caches
    const ArrayXd tv = ArrayXd::Constant(X.cols(), t_split_);
    if (C) scratch->term_ct = scale_ * (*C);
    v_net_->vjp(*v_params_, tv, scratch->term_in, a,
                C ? &scratch->term_ct : nullptr, *scratch, grad_params,
                nullptr, nullptr);
  }

 private:
  const ScalarFieldNet* v_net_;
  const VectorXd* v_params_;
  double t_split_, scale_, quad_coeff_, const_term_;
};

}  // namespace

std::shared_ptr<TerminalCondition> terminal_u_full_at_split(
    const ScalarFieldNet* v_net, const VectorXd* v_params,
    const InterpolantSchedule& s, const ScalingFunctions& sc) {
  if (!s.is_full())
    throw KindMismatchError("terminal_u_full_at_split requires a full schedule");
  const double tp = s.T_split;
  const double beta = sc.beta(s, tp);
  const double alpha = sc.alpha(s, tp);
  const double r = s.r(tp);
  const int d = v_net->dim();
  // phi'(x) = v(T', beta x / alpha) - log psi(T', beta x) - d log g(T').
  const double quad = beta * beta / (r * r);
  const double cterm = 0.5 * d * std::log(2.0 * M_PI * r * r) -
                       d * std::log(s.g(tp));
  return std::make_shared<SplitTerminal>(v_net, v_params, tp, beta / alpha,
                                         quad, cterm);
}

// ---------------------------------------------------------------------------

double lr_at(long step, double lr0) {
  if (step < 0) throw ConfigError("lr_at: negative step");
  const long k = step / kLrDecaySteps;
  const double lo = lr0 * std::pow(5.0, -static_cast<double>(k));
  const double hi = lo / 5.0;
  const double frac =
      static_cast<double>(step - k * kLrDecaySteps) / kLrDecaySteps;
  return lo + (hi - lo) * frac;
}

double clip_global_norm(Eigen::Ref<VectorXd> grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm && norm > 0.0) grad *= max_norm / norm;
  return norm;
}

void adam_step(NetState& state, const VectorXd& grad, long step, double lr,
               const AdamParams& ap) {
  if (!grad.allFinite())
    throw NumericalError("adam_step: non-finite gradient");
  state.adam_m = ap.beta1 * state.adam_m + (1.0 - ap.beta1) * grad;
  state.adam_v =
      ap.beta2 * state.adam_v.array() + (1.0 - ap.beta2) * grad.array().square();
  const double t = static_cast<double>(step + 1);
  const double bc1 = 1.0 - std::pow(ap.beta1, t);
  const double bc2 = 1.0 - std::pow(ap.beta2, t);
  state.theta.array() -=
      lr * (state.adam_m.array() / bc1) /
      ((state.adam_v.array() / bc2).sqrt() + ap.eps);
}

void ema_update(NetState& state, double decay) {
  state.ema_theta = decay * state.ema_theta + (1.0 - decay) * state.theta;
}

}  // namespace fis
