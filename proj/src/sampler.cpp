// SPDX-License-Identifier: Apache-2.0

#include "fis/sampler.hpp"

#include "fis/parallel.hpp"
#include "fis/rng.hpp"

#include <cmath>
#include <vector>

namespace fis {

namespace {

constexpr int kChunk = 64;

MatrixXd collect_alive(const MatrixXd& S_all, const std::vector<char>& alive,
                       SampleStats* stats, const char* what) {
  const auto n = static_cast<int>(S_all.cols());
  int n_ok = 0;
  for (char a : alive) n_ok += a;
  const int n_failed = n - n_ok;
  if (stats) stats->n_failed = n_failed;
  if (n_failed > std::max(1, n / 100))
    throw NumericalError(std::string(what) + ": more than 1% of trajectories "
                         "failed (" + std::to_string(n_failed) + " of " +
                         std::to_string(n) + ")");
  MatrixXd out(n_ok, S_all.rows());
  int row = 0;
  for (int j = 0; j < n; ++j)
    if (alive[j]) out.row(row++) = S_all.col(j).transpose();
  return out;
}

/// Shared Euler-Maruyama driver; pick_coeffs selects the drift/score branch
/// for the current time.
template <typename CoeffFn>
MatrixXd run_sampler(int d, const InterpolantSchedule& s,
                     const SamplerConfig& cfg, std::uint64_t seed,
                     SampleStats* stats, const CoeffFn& step_cb,
                     const char* what) {
  const int n = cfg.n_samples;
  require(n >= 1 && cfg.n_steps >= 1 && cfg.eps >= 0.0,
          "sampler: invalid configuration");
  MatrixXd S_all(d, n);
  std::vector<char> alive(n, 1);
  const double r0 = s.r(0.0);
  const double dt = s.T / cfg.n_steps;
  const bool noisy = cfg.mode == SampleMode::sde && cfg.eps > 0.0;

  const int n_chunks = (n + kChunk - 1) / kChunk;
  run_chunks(n_chunks, cfg.threads, [&](int k) {
    const int p0 = k * kChunk;
    const int bc = std::min(kChunk, n - p0);
    std::vector<PhiloxStream> streams;
    streams.reserve(bc);
    for (int j = 0; j < bc; ++j)
      streams.emplace_back(seed, RngDomain::sample,
                           static_cast<std::uint64_t>(p0 + j));
    MatrixXd S(d, bc);
    for (int j = 0; j < bc; ++j) {
      streams[j].fill_normal(S.col(j));
      S.col(j) *= r0;
    }
    MatrixXd W(d, bc), drift(d, bc);
    for (int i = 0; i < cfg.n_steps; ++i) {
      const double t = i * dt;
      step_cb(t, S, drift);  // drift <- b + eps^2/2 s at (t, S)
      if (noisy) {
        for (int j = 0; j < bc; ++j) streams[j].fill_normal(W.col(j));
        S += dt * drift + std::sqrt(dt) * cfg.eps * W;
      } else {
        S += dt * drift;
      }
      for (int j = 0; j < bc; ++j)
        if (alive[p0 + j] && !S.col(j).allFinite()) alive[p0 + j] = 0;
    }
    S_all.middleCols(p0, bc) = S;
  });
  return collect_alive(S_all, alive, stats, what);
}

}  // namespace

MatrixXd sample_half(const ScalarField& u, const InterpolantSchedule& s,
                     const ScalingFunctions& sc, const SamplerConfig& cfg,
                     std::uint64_t seed, SampleStats* stats) {
  const int d = u.dim();
  const double half_eps_sq =
      cfg.mode == SampleMode::sde ? 0.5 * cfg.eps * cfg.eps : 0.0;
  RowVectorXd val;
  MatrixXd G, arg;
  auto step_cb = [&](double t, const MatrixXd& S, MatrixXd& drift) {
    const auto c = drift_score_coeffs_u(s, sc, t);
    arg = c.inv_beta * S;
    const ArrayXd t_arr = ArrayXd::Constant(S.cols(), t);
    u.eval(t_arr, arg, val, &G);
    drift = (c.b_x + half_eps_sq * c.s_x) * S +
            (c.b_g + half_eps_sq * c.s_g) * G;
  };
  return run_sampler(d, s, cfg, seed, stats, step_cb, "sample_half");
}

MatrixXd sample_full(const ScalarField& u, const ScalarField& v,
                     const InterpolantSchedule& s, const ScalingFunctions& sc,
                     const SamplerConfig& cfg, std::uint64_t seed,
                     SampleStats* stats) {
  if (!s.is_full())
    throw KindMismatchError("sample_full requires a full schedule");
  const int d = u.dim();
  const double half_eps_sq =
      cfg.mode == SampleMode::sde ? 0.5 * cfg.eps * cfg.eps : 0.0;
  RowVectorXd val;
  MatrixXd G, arg;
  auto step_cb = [&](double t, const MatrixXd& S, MatrixXd& drift) {
    const ArrayXd t_arr = ArrayXd::Constant(S.cols(), t);
    if (t <= s.T_split) {
      const auto c = drift_score_coeffs_u(s, sc, t);
      arg = c.inv_beta * S;
      u.eval(t_arr, arg, val, &G);
      drift = (c.b_x + half_eps_sq * c.s_x) * S +
              (c.b_g + half_eps_sq * c.s_g) * G;
    } else {
      const auto c = drift_score_coeffs_v(s, sc, t);
      arg = c.inv_alpha * S;
      v.eval(t_arr, arg, val, &G);
      drift = c.b_x * S + (c.b_g + half_eps_sq * c.s_g) * G;
    }
  };
  return run_sampler(d, s, cfg, seed, stats, step_cb, "sample_full");
}

MatrixXd langevin_baseline(const TargetDensity& target, double step_size,
                           int n_steps, int n_samples, std::uint64_t seed,
                           int threads, SampleStats* stats) {
  require(step_size > 0.0 && n_steps >= 0 && n_samples >= 1,
          "langevin_baseline: invalid parameters");
  const int d = target.d;
  MatrixXd S_all(d, n_samples);
  std::vector<char> alive(n_samples, 1);
  const double noise_scale = std::sqrt(2.0 * step_size);

  const int n_chunks = (n_samples + kChunk - 1) / kChunk;
  run_chunks(n_chunks, threads, [&](int k) {
    const int p0 = k * kChunk;
    const int bc = std::min(kChunk, n_samples - p0);
    std::vector<PhiloxStream> streams;
    streams.reserve(bc);
    for (int j = 0; j < bc; ++j)
      streams.emplace_back(seed, RngDomain::langevin,
                           static_cast<std::uint64_t>(p0 + j));
    MatrixXd S(d, bc);
    for (int j = 0; j < bc; ++j) streams[j].fill_normal(S.col(j));
    VectorXd w(d);
    for (int i = 0; i < n_steps; ++i) {
      for (int j = 0; j < bc; ++j) {
        if (!alive[p0 + j]) continue;
        streams[j].fill_normal(w);
        S.col(j) += step_size * target.grad_log_pi_hat(S.col(j)) +
                    noise_scale * w;
        if (!S.col(j).allFinite()) alive[p0 + j] = 0;
      }
    }
    S_all.middleCols(p0, bc) = S;
  });
  return collect_alive(S_all, alive, stats, "langevin_baseline");
}

}  // namespace fis
