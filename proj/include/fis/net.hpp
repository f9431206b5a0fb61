// SPDX-License-Identifier: Apache-2.0
//
// Scalar-field approximator with terminal-condition skip architecture:
//
//   u(t, x) = Phi1(t, x) + Phi2(t) * phi(x)
//
// where Phi1 is a dense GELU network on (Fourier(t), x), Phi2 a dense GELU
// network on Fourier(t) alone, and phi the terminal condition of the PDE the
// field approximates. Freshly initialized parameters give Phi1 == 0 and
// Phi2 == 1, so the terminal condition holds exactly at initialization.
//
// Differentiation contract: eval() produces the value and the exact spatial
// gradient; vjp() produces exact parameter cotangents of
//
//   sum_j a_j * u(t_j, x_j) + C_j . grad_x u(t_j, x_j)
//
// including the second-order (parameter-of-spatial-gradient) terms, via a
// forward tangent pass in x composed with a reverse sweep. Terminals that
// wrap a live network (the split condition of the two-PDE construction)
// receive their own cotangents through the same call.
//
// All arithmetic is in binary64: the FBSDE residual is a difference of
// nearby field values and would not survive single precision.

#pragma once

#include "fis/field.hpp"
#include "fis/rng.hpp"
#include "fis/schedule.hpp"
#include "fis/target.hpp"
#include "fis/types.hpp"

#include <memory>
#include <string>

namespace fis {

namespace detail {
/// Preallocated buffers for the vectorized erf evaluation.
struct ErfScratch {
  Eigen::ArrayXXd x, ax, e, u, b1, b2, tmp, core, tail;
  MatrixXd cdf;
};
/// Standard normal cdf and pdf, vectorized (Chebyshev erf; |err| < 2e-13).
void normal_cdf_pdf(const MatrixXd& z, MatrixXd& cdf, MatrixXd& pdf,
                    ErfScratch& scratch);
}  // namespace detail

inline constexpr int kHidden = 64;
inline constexpr int kNumFreq = 64;           // Fourier embedding: 128 outputs
inline constexpr int kEmbed = 2 * kNumFreq;

/// Flat parameter-vector layout. Offsets in doubles.
struct NetLayout {
  int d = 0;
  int wx, bx, wt1, bt1, wt2, bt2, w1, b1, w2, b2, wout, bout;
  int q0, c0, q1, c1, q2, c2, qout, cout;
  int total = 0;

  static NetLayout make(int d);
};

/// Scratch for one batched evaluation. Reused across calls; owned by the
/// caller (one per concurrent evaluation stream).
struct NetWorkspace {
  // forward caches
  MatrixXd emb, q_t1, h_t1, dt1, t_feat;
  MatrixXd z0, s0, z1, s1, z2, s2;
  MatrixXd d0, d1, d2;     // gelu'(z*)
  MatrixXd pf0, pf1, pf2;  // normal pdf at z* (for gelu'')
  MatrixXd pdf_tmp;
  RowVectorXd phi1;
  MatrixXd p0, k0, p1, k1, p2, k2;
  MatrixXd dp0, dp1, dp2;  // gelu'(p*)
  RowVectorXd phi2;
  RowVectorXd term_phi;
  MatrixXd term_grad;
  MatrixXd gx;  // spatial gradient of Phi1
  // tangent chain + reverse scratch
  MatrixXd tz0, ts0, tz1, ts1, tz2, ts2;
  MatrixXd sb, tsb, zb, tzb, kb, pb;
  MatrixXd dd;      // gelu''(z*), one level at a time
  MatrixXd ct_scal; // terminal grad cotangent scratch
  MatrixXd term_in, term_ct;  // network-backed terminal argument scratch
  RowVectorXd row_scratch;
  detail::ErfScratch erf_scratch;
  // bookkeeping for the eval/vjp pairing
  Index cols = -1;
  bool shared_t = false;
  bool has_grad = false;
};

class ScalarFieldNet {
 public:
  /// Fourier frequencies are drawn once from N(0, (2 pi)^2) and frozen.
  /// `stream` separates the init draws of multiple nets under one seed.
  ScalarFieldNet(int d, std::shared_ptr<const TerminalCondition> terminal,
                 std::uint64_t seed, std::uint64_t stream = 0);

  int dim() const { return layout_.d; }
  int param_count() const { return layout_.total; }
  const NetLayout& layout() const { return layout_; }
  const TerminalCondition& terminal() const { return *terminal_; }
  const VectorXd& frequencies() const { return freqs_; }

  /// Deterministic initialization: hidden weights fan-in-scaled Gaussian,
  /// Phi1 output layer zero, Phi2 output biased to 1.
  VectorXd init_params() const;

  /// Batched forward: value (1 x B) and optionally the exact spatial
  /// gradient (d x B). Fills ws with the caches vjp() needs.
  /// term_ws is required when the terminal wraps a network.
  void eval(const VectorXd& params, const ArrayXd& t, const MatrixXd& X,
            NetWorkspace& ws, RowVectorXd& val, MatrixXd* grad,
            NetWorkspace* term_ws = nullptr) const;

  /// Accumulates into grad_self (and grad_terminal, when the terminal has
  /// parameters) the exact d/dparams of
  ///   sum_j a_j * value_j + C_j . grad_j.
  /// Must be called directly after eval() on the same inputs and workspace
  /// (with grad requested whenever C != nullptr).
  void vjp(const VectorXd& params, const ArrayXd& t, const MatrixXd& X,
           const RowVectorXd& a, const MatrixXd* C, NetWorkspace& ws,
           VectorXd& grad_self, VectorXd* grad_terminal = nullptr,
           NetWorkspace* term_ws = nullptr) const;

 private:
  NetLayout layout_;
  VectorXd freqs_;
  std::shared_ptr<const TerminalCondition> terminal_;
  std::uint64_t init_seed_ = 0;
  std::uint64_t init_stream_ = 0;
};

/// Terminal condition for the u-field of a full interpolant at the split
/// time: phi'(x) = v(T', beta x / alpha) - log psi(T', beta x) - d log g(T'),
/// evaluated against a live v-network. Parameter cotangents flow into the
/// v-parameters (joint training).
std::shared_ptr<TerminalCondition> terminal_u_full_at_split(
    const ScalarFieldNet* v_net, const VectorXd* v_params,
    const InterpolantSchedule& s, const ScalingFunctions& sc);

/// ScalarField view of a net with fixed parameters (owning copies of
/// nothing; net and params must outlive it). Not safe for concurrent use:
/// it owns the evaluation workspaces.
class NetField final : public ScalarField {
 public:
  NetField(const ScalarFieldNet* net, const VectorXd* params)
      : net_(net), params_(params) {}

  int dim() const override { return net_->dim(); }
  void eval(const ArrayXd& t, const MatrixXd& X, RowVectorXd& val,
            MatrixXd* grad) const override {
    net_->eval(*params_, t, X, ws_, val, grad, &term_ws_);
  }

 private:
  const ScalarFieldNet* net_;
  const VectorXd* params_;
  mutable NetWorkspace ws_, term_ws_;
};

// ---------------------------------------------------------------------------
// Optimizer state and update rules.

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline constexpr double kInitialLr = 5e-3;
inline constexpr double kEmaDecay = 0.999;
inline constexpr double kMaxGradNorm = 1.0;
inline constexpr long kLrDecaySteps = 2000;  // learning rate /5 every 2000

/// Piecewise-linear learning rate: anchors lr0 * 5^{-k} at step 2000 k,
/// linear in between.
double lr_at(long step, double lr0 = kInitialLr);

/// Rescales grad in place when its global L2 norm exceeds max_norm;
/// returns the pre-clip norm.
double clip_global_norm(Eigen::Ref<VectorXd> grad, double max_norm = kMaxGradNorm);

struct NetState {
  VectorXd theta, adam_m, adam_v, ema_theta;

  static NetState init(const VectorXd& theta0) {
    return {theta0, VectorXd::Zero(theta0.size()),
            VectorXd::Zero(theta0.size()), theta0};
  }
};

/// One Adam update (bias-corrected; step is 0-based) followed by nothing
/// else; EMA is a separate call so callers control the order.
void adam_step(NetState& state, const VectorXd& grad, long step, double lr,
               const AdamParams& ap = {});

void ema_update(NetState& state, double decay = kEmaDecay);

/// Single owner of one training run's parameters: the u-field state and,
/// for full interpolants, the v-field state.
struct TrainState {
  NetState u;
  NetState v;      // empty for half interpolants
  bool has_v = false;
  long step = 0;
  std::uint64_t seed = 0;
  double lr = kInitialLr;
};

}  // namespace fis
