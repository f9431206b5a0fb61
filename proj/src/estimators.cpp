// SPDX-License-Identifier: Apache-2.0

#include "fis/estimators.hpp"

#include "fis/parallel.hpp"
#include "fis/rng.hpp"

#include <cmath>
#include <vector>

namespace fis {

namespace {

constexpr int kChunk = 64;

EstimateRecord summarize(const std::string& name, std::vector<double> vals,
                         const std::string& target_id, std::uint64_t seed) {
  const auto n_total = static_cast<long>(vals.size());
  std::vector<double> kept;
  kept.reserve(vals.size());
  for (double v : vals)
    if (std::isfinite(v)) kept.push_back(v);
  const auto n = static_cast<long>(kept.size());
  if (n_total - n > std::max<long>(1, n_total / 100))
    throw NumericalError(name + ": more than 1% of paths non-finite (" +
                         std::to_string(n_total - n) + " of " +
                         std::to_string(n_total) + ")");
  if (n < 2) throw NumericalError(name + ": too few finite paths");
  double mean = 0.0;
  for (double v : kept) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : kept) var += (v - mean) * (v - mean);
  var /= (n - 1);
  EstimateRecord rec;
  rec.name = name;
  rec.value = mean;
  rec.ci95 = 1.96 * std::sqrt(var / n);
  rec.n = n;
  rec.target_id = target_id;
  rec.seed = seed;
  return rec;
}

}  // namespace

EstimateRecord estimate_log_z_half(const ScalarField& u,
                                   const InterpolantSchedule& s,
                                   const ScalingFunctions& sc,
                                   const TargetDensity& target, int n_paths,
                                   int n_steps, std::uint64_t seed,
                                   int threads, std::uint64_t run_tag) {
  require(n_paths >= 2 && n_steps >= 1, "estimate_log_z_half: bad budget");
  const int d = target.d;
  const double T = s.T;
  const double dt = T / n_steps;
  const double beta_T = sc.beta(s, T);
  const double r_T = s.r(T);

  std::vector<double> vals(n_paths);
  const int n_chunks = (n_paths + kChunk - 1) / kChunk;
  run_chunks(n_chunks, threads, [&](int k) {
    const int p0 = k * kChunk;
    const int bc = std::min(kChunk, n_paths - p0);
    MatrixXd X = MatrixXd::Zero(d, bc);
    RowVectorXd acc = RowVectorXd::Zero(bc);
    std::vector<PhiloxStream> streams;
    streams.reserve(bc);
    for (int j = 0; j < bc; ++j)
      streams.emplace_back(seed, RngDomain::estimate,
                           static_cast<std::uint64_t>(p0 + j), run_tag);
    RowVectorXd val;
    MatrixXd G, W(d, bc);
    ArrayXd t_arr(bc);
    for (int i = 0; i < n_steps; ++i) {
      const double t = i * dt;
      const double sig_sq = sigma_sq_u(s, sc, t);
      const double sig = std::sqrt(sig_sq);
      const double mu_c = mu_u_coeff(s, sc, t);
      t_arr.setConstant(t);
      u.eval(t_arr, X, val, &G);
      for (int j = 0; j < bc; ++j) streams[j].fill_normal(W.col(j));
      acc -= 0.5 * sig_sq * dt * G.colwise().squaredNorm();
      acc -= sig * std::sqrt(dt) * G.cwiseProduct(W).colwise().sum();
      X += dt * (sig_sq * G + mu_c * X) + sig * std::sqrt(dt) * W;
    }
    for (int j = 0; j < bc; ++j) {
      const VectorXd y = beta_T * X.col(j);
      vals[p0 + j] = acc[j] + target.log_pi_hat(y) - log_psi_r(r_T, y);
    }
  });
  return summarize("log_z", std::move(vals), target.id, seed);
}

EstimateRecord estimate_log_z_full(const ScalarField& u, const ScalarField& v,
                                   const InterpolantSchedule& s,
                                   const ScalingFunctions& sc,
                                   const TargetDensity& target, int n_paths,
                                   int n_steps, std::uint64_t seed,
                                   int threads, std::uint64_t run_tag) {
  require(n_paths >= 2 && n_steps >= 2, "estimate_log_z_full: bad budget");
  if (!s.is_full())
    throw KindMismatchError("estimate_log_z_full requires a full schedule");
  const int d = target.d;
  const double T = s.T, tp = s.T_split;
  const int n1 = std::max(
      1, static_cast<int>(std::lround(n_steps * tp / T)));
  const int n2 = std::max(1, n_steps - n1);
  const double dt1 = tp / n1;
  const double t_end = T - s.eta();
  const double dt2 = (t_end - tp) / n2;
  const double beta_p = sc.beta(s, tp);
  const double alpha_p = sc.alpha(s, tp);
  const double r_p = s.r(tp);
  const double alpha_T = sc.alpha(s, T);
  const double ref_g = d * std::log(s.g(T)) - d * std::log(s.g(tp));

  std::vector<double> vals(n_paths);
  const int n_chunks = (n_paths + kChunk - 1) / kChunk;
  run_chunks(n_chunks, threads, [&](int k) {
    const int p0 = k * kChunk;
    const int bc = std::min(kChunk, n_paths - p0);
    MatrixXd X = MatrixXd::Zero(d, bc);
    RowVectorXd acc = RowVectorXd::Zero(bc);
    std::vector<PhiloxStream> streams;
    streams.reserve(bc);
    for (int j = 0; j < bc; ++j)
      streams.emplace_back(seed, RngDomain::estimate,
                           static_cast<std::uint64_t>(p0 + j), run_tag);
    RowVectorXd val;
    MatrixXd G, W(d, bc);
    ArrayXd t_arr(bc);

    for (int i = 0; i < n1; ++i) {
      const double t = i * dt1;
      const double sig_sq = sigma_sq_u(s, sc, t);
      const double sig = std::sqrt(sig_sq);
      const double mu_c = mu_u_coeff(s, sc, t);
      t_arr.setConstant(t);
      u.eval(t_arr, X, val, &G);
      for (int j = 0; j < bc; ++j) streams[j].fill_normal(W.col(j));
      acc -= 0.5 * sig_sq * dt1 * G.colwise().squaredNorm();
      acc -= sig * std::sqrt(dt1) * G.cwiseProduct(W).colwise().sum();
      X += dt1 * (sig_sq * G + mu_c * X) + sig * std::sqrt(dt1) * W;
    }
    // Interface terms at T' and state conversion to the v coordinates.
    for (int j = 0; j < bc; ++j)
      acc[j] -= log_psi_r(r_p, VectorXd(beta_p * X.col(j)));
    X *= beta_p / alpha_p;

    for (int i = 0; i < n2; ++i) {
      const double t = tp + i * dt2;
      const double sig_sq = sigma_sq_v(s, sc, t);
      const double sig = std::sqrt(sig_sq);
      const double mu_c = mu_v_coeff(s, sc, t);
      t_arr.setConstant(t);
      v.eval(t_arr, X, val, &G);
      for (int j = 0; j < bc; ++j) streams[j].fill_normal(W.col(j));
      acc -= 0.5 * sig_sq * dt2 * G.colwise().squaredNorm();
      acc -= sig * std::sqrt(dt2) * G.cwiseProduct(W).colwise().sum();
      X += dt2 * (sig_sq * G + mu_c * X) + sig * std::sqrt(dt2) * W;
    }
    for (int j = 0; j < bc; ++j)
      vals[p0 + j] =
          acc[j] + target.log_pi_hat(alpha_T * X.col(j)) + ref_g;
  });
  return summarize("log_z", std::move(vals), target.id, seed);
}

MomentEstimates empirical_moments(const MatrixXd& samples) {
  const auto n = static_cast<long>(samples.rows());
  require(n >= 2, "empirical_moments: need at least 2 samples");
  std::vector<double> abs_vals(n), sq_vals(n);
  for (long i = 0; i < n; ++i) {
    abs_vals[i] = samples.row(i).cwiseAbs().sum();
    sq_vals[i] = samples.row(i).squaredNorm();
  }
  MomentEstimates out;
  out.mean_abs = summarize("mean_abs", std::move(abs_vals), "", 0);
  out.mean_sq = summarize("mean_sq", std::move(sq_vals), "", 0);
  return out;
}

double predict_free_energy(double beta, int d, bool quarter_variant) {
  require(beta >= 0.0 && d >= 1, "predict_free_energy: invalid parameters");
  if (beta < 1.0) return 0.0;
  const double qbar = (beta - 1.0) / (beta * beta);
  const double denom = quarter_variant ? 4.0 : static_cast<double>(d);
  return -0.5 * std::log(beta) + 0.5 * beta * qbar +
         beta * beta * qbar * qbar / denom;
}

}  // namespace fis
