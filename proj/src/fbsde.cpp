// SPDX-License-Identifier: Apache-2.0

#include "fis/fbsde.hpp"

#include "fis/parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fis {

namespace {

constexpr int kChunk = 32;  // fixed batch tile; independent of thread count

struct EvalCtx {
  NetWorkspace ws;   // net workspace
  NetWorkspace tws;  // workspace of a network-backed terminal
};

/// Per-column coefficient rows for one path index of a segment.
struct CoeffRows {
  RowVectorXd h;          // diffusion sigma(t)
  RowVectorXd f;          // linear drift factor: mu(t, x) = f x
  RowVectorXd bx, bg;     // path drift: b = bx x + bg grad(t, x * inv_scale)
  RowVectorXd inv_scale;  // argument scale of the path-point gradient
};

void coeff_rows(bool is_u, const InterpolantSchedule& s,
                const ScalingFunctions& sc, const RowVectorXd& t,
                CoeffRows& c) {
  const Index n = t.size();
  c.h.resize(n);
  c.f.resize(n);
  c.bx.resize(n);
  c.bg.resize(n);
  c.inv_scale.resize(n);
  for (Index j = 0; j < n; ++j) {
    if (is_u) {
      c.h[j] = std::sqrt(sigma_sq_u(s, sc, t[j]));
      c.f[j] = mu_u_coeff(s, sc, t[j]);
      const auto dc = drift_score_coeffs_u(s, sc, t[j]);
      c.bx[j] = dc.b_x;
      c.bg[j] = dc.b_g;
      c.inv_scale[j] = dc.inv_beta;
    } else {
      c.h[j] = std::sqrt(sigma_sq_v(s, sc, t[j]));
      c.f[j] = mu_v_coeff(s, sc, t[j]);
      const auto dc = drift_score_coeffs_v(s, sc, t[j]);
      c.bx[j] = dc.b_x;
      c.bg[j] = dc.b_g;
      c.inv_scale[j] = dc.inv_alpha;
    }
  }
}

/// Sorted interior times for one grid column, clamped so every FBSDE step
/// keeps t + delta inside the segment.
void fill_times_column(PhiloxStream& rng, double t_start, double t_end,
                       double delta, int n_interior,
                       Eigen::Ref<VectorXd> col) {
  const Index rows = col.size();
  col[0] = t_start;
  col[rows - 1] = t_end;
  for (int k = 0; k < n_interior; ++k) {
    const double u = t_start + (t_end - t_start) * rng.next_uniform();
    col[1 + k] = std::min(u, t_end - delta);
  }
  std::sort(col.data() + 1, col.data() + 1 + n_interior);
}

struct TraceCursor {
  PathTrace* record = nullptr;
  const PathTrace* replay = nullptr;
  std::size_t state_at = 0;
  std::size_t noise_at = 0;
};

/// One PDE segment of the loss for one chunk of batch columns: FBSDE
/// residual terms at each grid time, auxiliary path advancement in between,
/// and the terminal gradient penalty at the segment end.
///
/// Accumulates per-column losses into loss_acc and parameter cotangents
/// into grad_self / grad_term (terminal parameters, when present).
void segment_pass(const ScalarFieldNet& net, const VectorXd& theta, bool is_u,
                  const InterpolantSchedule& s, const ScalingFunctions& sc,
                  const TrainConfig& cfg, const MatrixXd& times, Index col0,
                  MatrixXd& X, std::vector<PhiloxStream>& streams,
                  EvalCtx& cx, EvalCtx& cy, EvalCtx& cp,
                  RowVectorXd& loss_acc, VectorXd& grad_self,
                  VectorXd* grad_term, TraceCursor& tc, bool advance_path) {
  const Index Bc = X.cols();
  const int d = net.dim();
  const double delta = cfg.delta;
  const double lambda = cfg.resolved_lambda();
  const double inv_b = 1.0 / static_cast<double>(cfg.batch);
  const int n_fbsde = static_cast<int>(times.rows()) - 1;

  RowVectorXd val_x, val_y, aw;
  MatrixXd gx, gy, Z, W(d, Bc), Xhat, Cx, P, gp;
  CoeffRows c;
  ArrayXd t_arr(Bc), t2_arr(Bc);

  for (int i = 0; i < n_fbsde; ++i) {
    const RowVectorXd trow = times.row(i);
    coeff_rows(is_u, s, sc, trow, c);
    t_arr = trow.transpose().array();
    t2_arr = t_arr + delta;

    if (tc.replay)
      X = tc.replay->states[tc.state_at].middleCols(col0, Bc);
    if (tc.record)
      tc.record->states[tc.state_at].middleCols(col0, Bc) = X;
    ++tc.state_at;

    net.eval(theta, t_arr, X, cx.ws, val_x, &gx, &cx.tws);
    Z = gx * c.h.asDiagonal();

    if (tc.replay) {
      W = tc.replay->noises[tc.noise_at].middleCols(col0, Bc);
    } else {
      for (Index j = 0; j < Bc; ++j) streams[j].fill_normal(W.col(j));
    }
    if (tc.record) tc.record->noises[tc.noise_at].middleCols(col0, Bc) = W;
    ++tc.noise_at;

    const RowVectorXd zsq = Z.colwise().squaredNorm();
    const RowVectorXd zw = Z.cwiseProduct(W).colwise().sum();
    const RowVectorXd yhat =
        val_x + 0.5 * delta * zsq + std::sqrt(delta) * zw;
    Xhat = X + delta * (X * c.f.asDiagonal() + Z * c.h.asDiagonal()) +
           std::sqrt(delta) * (W * c.h.asDiagonal());
    net.eval(theta, t2_arr, Xhat, cy.ws, val_y, &gy, &cy.tws);

    const RowVectorXd resid = yhat - val_y;
    loss_acc += lambda * resid.cwiseProduct(resid);

    // Cotangents of lambda/B * resid^2 through both evaluation points.
    aw = (2.0 * lambda * inv_b) * resid;
    const RowVectorXd awh = aw.cwiseProduct(c.h);
    Cx = (delta * Z + std::sqrt(delta) * W) * awh.asDiagonal() -
         gy * (delta * awh.cwiseProduct(c.h)).asDiagonal();
    net.vjp(theta, t_arr, X, aw, &Cx, cx.ws, grad_self, grad_term, &cx.tws);
    net.vjp(theta, t2_arr, Xhat, RowVectorXd(-aw), nullptr, cy.ws, grad_self,
            grad_term, &cy.tws);

    // Auxiliary path step (detached); skipped on replay.
    if (!tc.replay && advance_path) {
      P = X * c.inv_scale.asDiagonal();
      net.eval(theta, t_arr, P, cp.ws, val_x, &gp, &cp.tws);
      const RowVectorXd dt = times.row(i + 1) - times.row(i);
      X += (X * c.bx.asDiagonal() + gp * c.bg.asDiagonal()) * dt.asDiagonal();
    }
  }

  // Terminal gradient penalty at the segment end.
  if (tc.replay)
    X = tc.replay->states[tc.state_at].middleCols(col0, Bc);
  if (tc.record) tc.record->states[tc.state_at].middleCols(col0, Bc) = X;
  ++tc.state_at;

  t_arr = ArrayXd::Constant(Bc, times(times.rows() - 1, 0));
  net.eval(theta, t_arr, X, cx.ws, val_x, &gx, &cx.tws);
  MatrixXd G = gx - cx.ws.term_grad;
  loss_acc += G.colwise().squaredNorm();

  const RowVectorXd zero = RowVectorXd::Zero(Bc);
  Cx = (2.0 * inv_b) * G;
  net.vjp(theta, t_arr, X, zero, &Cx, cx.ws, grad_self, grad_term, &cx.tws);
  if (grad_term && net.terminal().has_params()) {
    // the -grad phi' half of the penalty also moves the terminal's network
    Cx = -Cx;
    net.terminal().vjp(X, zero, &Cx, *grad_term, &cx.tws);
  }
}

struct LossPlan {
  const ScalarFieldNet* u_net = nullptr;
  const ScalarFieldNet* v_net = nullptr;  // null for half
  const VectorXd* theta_u = nullptr;
  const VectorXd* theta_v = nullptr;
};

LossResult loss_impl(const LossPlan& plan, const InterpolantSchedule& s,
                     const ScalingFunctions& sc, const TrainConfig& cfg,
                     long step, PathTrace* record, const PathTrace* replay) {
  const bool full = plan.v_net != nullptr;
  if (full && plan.u_net->terminal().bound_params() != plan.theta_v)
    throw ConfigError(
        "loss_full: theta_v must be the parameter vector the u-net terminal "
        "is bound to");
  const int d = plan.u_net->dim();
  const int B = cfg.batch;
  const int N = cfg.n_path;
  require(B >= 1 && N >= 1, "loss: batch and n_path must be positive");

  const int n1 = full ? static_cast<int>(std::ceil(
                            static_cast<double>(N) * s.T_split / s.T))
                      : N;
  const int n2 = full ? N - n1 : 0;
  const double t_mid = full ? s.T_split : s.T;

  // Times and start states; drawn upfront (or replayed) per batch element.
  MatrixXd times1(n1 + 1, B), times2(std::max(n2 + 1, 0), B);
  MatrixXd X0(d, B);
  std::vector<PhiloxStream> streams;
  streams.reserve(B);
  for (int e = 0; e < B; ++e)
    streams.emplace_back(cfg.seed, RngDomain::train,
                         static_cast<std::uint64_t>(e),
                         static_cast<std::uint64_t>(step));
  if (replay) {
    times1 = replay->times1;
    if (full) times2 = replay->times2;
  }
  const double r0 = s.r(0.0);
  for (int e = 0; e < B; ++e) {
    VectorXd x0(d);
    streams[e].fill_normal(x0);
    X0.col(e) = r0 * x0;
    if (!replay) {
      fill_times_column(streams[e], 0.0, t_mid, cfg.delta, n1 - 1,
                        times1.col(e));
      if (full && n2 >= 1)
        fill_times_column(streams[e], s.T_split, s.T, cfg.delta, n2 - 1,
                          times2.col(e));
    }
  }
  if (replay) X0 = replay->states[0].leftCols(B);
  if (record) {
    record->times1 = times1;
    record->times2 = times2;
    const int n_states = (full ? n1 + n2 + 2 : N + 1);
    const int n_noises = N;
    record->states.assign(n_states, MatrixXd(d, B));
    record->noises.assign(n_noises, MatrixXd(d, B));
  }

  const int n_chunks = (B + kChunk - 1) / kChunk;
  std::vector<VectorXd> grad_u_parts(n_chunks), grad_v_parts(n_chunks);
  std::vector<double> loss_parts(n_chunks, 0.0);

  run_chunks(n_chunks, cfg.threads, [&](int k) {
    const Index col0 = static_cast<Index>(k) * kChunk;
    const Index Bc = std::min<Index>(kChunk, B - col0);
    EvalCtx cx, cy, cp;
    VectorXd grad_u = VectorXd::Zero(plan.u_net->param_count());
    VectorXd grad_v =
        full ? VectorXd::Zero(plan.v_net->param_count()) : VectorXd();
    RowVectorXd loss_acc = RowVectorXd::Zero(Bc);
    MatrixXd X = X0.middleCols(col0, Bc);
    std::vector<PhiloxStream> chunk_streams(streams.begin() + col0,
                                            streams.begin() + col0 + Bc);
    TraceCursor tc{record, replay, 0, 0};

    segment_pass(*plan.u_net, *plan.theta_u, /*is_u=*/true, s, sc, cfg,
                 times1.middleCols(col0, Bc), col0, X, chunk_streams, cx, cy,
                 cp, loss_acc, grad_u, full ? &grad_v : nullptr, tc,
                 /*advance_path=*/true);
    if (full && n2 >= 1) {
      segment_pass(*plan.v_net, *plan.theta_v, /*is_u=*/false, s, sc, cfg,
                   times2.middleCols(col0, Bc), col0, X, chunk_streams, cx,
                   cy, cp, loss_acc, grad_v, nullptr, tc,
                   /*advance_path=*/true);
    } else if (full) {
      // Degenerate split: only the v terminal penalty remains.
      MatrixXd t2(1, Bc);
      t2.setConstant(s.T);
      segment_pass(*plan.v_net, *plan.theta_v, false, s, sc, cfg, t2, col0, X,
                   chunk_streams, cx, cy, cp, loss_acc, grad_v, nullptr, tc,
                   true);
    }
    loss_parts[k] = loss_acc.sum();
    grad_u_parts[k] = std::move(grad_u);
    if (full) grad_v_parts[k] = std::move(grad_v);
  });

  LossResult res;
  res.grad_u = VectorXd::Zero(plan.u_net->param_count());
  if (full) res.grad_v = VectorXd::Zero(plan.v_net->param_count());
  double total = 0.0;
  for (int k = 0; k < n_chunks; ++k) {
    total += loss_parts[k];
    res.grad_u += grad_u_parts[k];
    if (full) res.grad_v += grad_v_parts[k];
  }
  res.loss = total / B;
  if (!std::isfinite(res.loss))
    throw NumericalError("non-finite loss at training step " +
                         std::to_string(step));
  return res;
}

}  // namespace

double loss_fbsde(const FbsdeStepInputs& in) {
  require(in.m != nullptr && in.delta > 0.0, "loss_fbsde: invalid inputs");
  const double h = in.diffusion_h(in.t);
  const VectorXd grad = in.m->grad_at(in.t, in.X);
  const VectorXd Z = h * grad;
  const double y0 = in.m->value_at(in.t, in.X);
  const double yhat = y0 + 0.5 * Z.squaredNorm() * in.delta +
                      std::sqrt(in.delta) * Z.dot(in.w);
  const VectorXd xhat = in.X + (in.drift_f(in.t, in.X) + h * Z) * in.delta +
                        h * std::sqrt(in.delta) * in.w;
  const double y = in.m->value_at(in.t + in.delta, xhat);
  if (!std::isfinite(y) || !std::isfinite(yhat))
    throw NumericalError("loss_fbsde: non-finite intermediate");
  const double r = yhat - y;
  return r * r;
}

VectorXd path_ode_step_half(const ScalarField& u, const InterpolantSchedule& s,
                            const ScalingFunctions& sc, double t,
                            const VectorXd& X, double dt) {
  const auto c = drift_score_coeffs_u(s, sc, t);
  const VectorXd grad = u.grad_at(t, c.inv_beta * X);
  VectorXd out = X + dt * (c.b_x * X + c.b_g * grad);
  if (!out.allFinite())
    throw NumericalError("path_ode_step_half: non-finite state");
  return out;
}

VectorXd path_ode_step_full(const ScalarField& u, const ScalarField& v,
                            const InterpolantSchedule& s,
                            const ScalingFunctions& sc, double t,
                            const VectorXd& X, double dt) {
  if (t <= s.T_split) return path_ode_step_half(u, s, sc, t, X, dt);
  const auto c = drift_score_coeffs_v(s, sc, t);
  const VectorXd grad = v.grad_at(t, c.inv_alpha * X);
  VectorXd out = X + dt * (c.b_x * X + c.b_g * grad);
  if (!out.allFinite())
    throw NumericalError("path_ode_step_full: non-finite state");
  return out;
}

LossResult loss_half(const ScalarFieldNet& u_net, const VectorXd& theta,
                     const InterpolantSchedule& s, const ScalingFunctions& sc,
                     const TrainConfig& cfg, long step, PathTrace* record,
                     const PathTrace* replay) {
  if (s.is_full())
    throw KindMismatchError("loss_half requires a half schedule");
  LossPlan plan;
  plan.u_net = &u_net;
  plan.theta_u = &theta;
  return loss_impl(plan, s, sc, cfg, step, record, replay);
}

LossResult loss_full(const ScalarFieldNet& u_net, const ScalarFieldNet& v_net,
                     const VectorXd& theta_u, const VectorXd& theta_v,
                     const InterpolantSchedule& s, const ScalingFunctions& sc,
                     const TrainConfig& cfg, long step, PathTrace* record,
                     const PathTrace* replay) {
  if (!s.is_full())
    throw KindMismatchError("loss_full requires a full schedule");
  LossPlan plan;
  plan.u_net = &u_net;
  plan.v_net = &v_net;
  plan.theta_u = &theta_u;
  plan.theta_v = &theta_v;
  return loss_impl(plan, s, sc, cfg, step, record, replay);
}

TrainResult train(const TrainConfig& cfg, const TargetDensity& target,
                  std::ostream* metrics) {
  const auto s = make_schedule(cfg.preset_id, cfg.T, cfg.T_split);
  const auto sc = ScalingFunctions::defaults();
  const bool full = s.is_full();
  const int d = target.d;

  TrainResult out;
  TrainState& st = out.state;
  st.seed = cfg.seed;
  st.has_v = full;

  if (metrics)
    *metrics << nlohmann::json{{"format_version", 1},
                               {"stream", "metrics"},
                               {"target_id", target.id},
                               {"preset_id", cfg.preset_id}}
                    .dump()
             << '\n';

  std::unique_ptr<ScalarFieldNet> v_net, u_net, u_net_ema;
  if (full) {
    v_net = std::make_unique<ScalarFieldNet>(
        d, terminal_v_full(target, s, sc), cfg.seed, 1);
    st.v = NetState::init(v_net->init_params());
    u_net = std::make_unique<ScalarFieldNet>(
        d, terminal_u_full_at_split(v_net.get(), &st.v.theta, s, sc),
        cfg.seed, 0);
    u_net_ema = std::make_unique<ScalarFieldNet>(
        d, terminal_u_full_at_split(v_net.get(), &st.v.ema_theta, s, sc),
        cfg.seed, 0);
  } else {
    u_net = std::make_unique<ScalarFieldNet>(
        d, terminal_u_half(target, s, sc), cfg.seed, 0);
  }
  st.u = NetState::init(u_net->init_params());

  long aborted = 0;
  const long abort_budget =
      std::max<long>(1, static_cast<long>(0.01 * cfg.steps));
  for (long step = 0; step < cfg.steps; ++step) {
    st.lr = lr_at(step);
    bool ok = true;
    LossResult res;
    try {
      res = full ? loss_full(*u_net, *v_net, st.u.theta, st.v.theta, s, sc,
                             cfg, step)
                 : loss_half(*u_net, st.u.theta, s, sc, cfg, step);
      ok = res.grad_u.allFinite() && (!full || res.grad_v.allFinite());
    } catch (const NumericalError&) {
      ok = false;
    }
    double grad_norm = 0.0;
    if (ok) {
      const double sq = res.grad_u.squaredNorm() +
                        (full ? res.grad_v.squaredNorm() : 0.0);
      grad_norm = std::sqrt(sq);
      if (grad_norm > kMaxGradNorm && grad_norm > 0.0) {
        const double scale = kMaxGradNorm / grad_norm;
        res.grad_u *= scale;
        if (full) res.grad_v *= scale;
      }
      adam_step(st.u, res.grad_u, step, st.lr);
      ema_update(st.u);
      if (full) {
        adam_step(st.v, res.grad_v, step, st.lr);
        ema_update(st.v);
      }
      out.loss_trace.push_back(res.loss);
    } else {
      ++aborted;
      out.loss_trace.push_back(std::numeric_limits<double>::quiet_NaN());
      if (aborted > abort_budget)
        throw NumericalError("training diverged: " + std::to_string(aborted) +
                             " aborted steps");
    }
    st.step = step + 1;

    if (metrics) {
      nlohmann::json line = {{"step", step},
                             {"lr", st.lr},
                             {"grad_norm", grad_norm}};
      if (ok)
        line["loss"] = res.loss;
      else
        line["loss"] = nullptr;
      *metrics << line.dump() << '\n';
    }

    if (cfg.monitor_every > 0 && (step + 1) % cfg.monitor_every == 0) {
      NetField uf(u_net_ema ? u_net_ema.get() : u_net.get(),
                  &st.u.ema_theta);
      EstimateRecord rec;
      if (full) {
        NetField vf(v_net.get(), &st.v.ema_theta);
        rec = estimate_log_z_full(uf, vf, s, sc, target, cfg.monitor_paths,
                                  cfg.monitor_steps, cfg.seed, cfg.threads,
                                  static_cast<std::uint64_t>(step + 1));
      } else {
        rec = estimate_log_z_half(uf, s, sc, target, cfg.monitor_paths,
                                  cfg.monitor_steps, cfg.seed, cfg.threads,
                                  static_cast<std::uint64_t>(step + 1));
      }
      rec.checkpoint_step = step + 1;
      out.logz_trace.emplace_back(step + 1, rec);
      if (metrics) {
        nlohmann::json line = {{"step", step},
                               {"logz_estimate", rec.value},
                               {"logz_ci95", rec.ci95}};
        *metrics << line.dump() << '\n';
      }
    }
  }

  Checkpoint& ckpt = out.checkpoint;
  ckpt.header = {1, cfg.preset_id, target.id, d, st.step, cfg.seed};
  ckpt.tensors = {{"theta", st.u.theta},
                  {"adam_m", st.u.adam_m},
                  {"adam_v", st.u.adam_v},
                  {"ema_theta", st.u.ema_theta}};
  if (full) {
    ckpt.tensors.emplace_back("theta_prime", st.v.theta);
    ckpt.tensors.emplace_back("adam_m_prime", st.v.adam_m);
    ckpt.tensors.emplace_back("adam_v_prime", st.v.adam_v);
    ckpt.tensors.emplace_back("ema_theta_prime", st.v.ema_theta);
  }
  return out;
}

LoadedModel::LoadedModel(const Checkpoint& ckpt, const TargetDensity& target,
                         const InterpolantSchedule& s,
                         const ScalingFunctions& sc, bool use_ema) {
  const auto& h = ckpt.header;
  if (h.d != target.d)
    throw IncompatibilityError(
        "checkpoint/config mismatch in field 'd': checkpoint has " +
        std::to_string(h.d) + ", target has " + std::to_string(target.d));
  if (h.preset_id != s.preset_id)
    throw IncompatibilityError(
        "checkpoint/config mismatch in field 'preset_id': checkpoint has " +
        h.preset_id + ", config has " + s.preset_id);
  if (h.target_id != target.id)
    throw IncompatibilityError(
        "checkpoint/config mismatch in field 'target_id': checkpoint has " +
        h.target_id + ", config has " + target.id);
  const bool full = ckpt.has_tensor("theta_prime");
  if (full != s.is_full())
    throw IncompatibilityError(
        "checkpoint/config mismatch in field 'kind': checkpoint is " +
        std::string(full ? "full" : "half") + ", schedule is " +
        (s.is_full() ? "full" : "half"));

  params_u_ = ckpt.tensor(use_ema ? "ema_theta" : "theta");
  if (full) {
    params_v_ = ckpt.tensor(use_ema ? "ema_theta_prime" : "theta_prime");
    v_net_ = std::make_unique<ScalarFieldNet>(
        h.d, terminal_v_full(target, s, sc), h.seed, 1);
    u_net_ = std::make_unique<ScalarFieldNet>(
        h.d, terminal_u_full_at_split(v_net_.get(), &params_v_, s, sc),
        h.seed, 0);
    v_field_ = std::make_unique<NetField>(v_net_.get(), &params_v_);
  } else {
    u_net_ = std::make_unique<ScalarFieldNet>(
        h.d, terminal_u_half(target, s, sc), h.seed, 0);
  }
  if (static_cast<int>(params_u_.size()) != u_net_->param_count())
    throw IncompatibilityError(
        "checkpoint/config mismatch in field 'theta': parameter count " +
        std::to_string(params_u_.size()) + " vs expected " +
        std::to_string(u_net_->param_count()));
  u_field_ = std::make_unique<NetField>(u_net_.get(), &params_u_);
}

}  // namespace fis
