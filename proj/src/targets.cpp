// SPDX-License-Identifier: Apache-2.0

#include "fis/target.hpp"

#include "fis/quadrature.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace fis {

namespace {

double log_normal_1d(double x, double mean, double var) {
  const double z = x - mean;
  return -0.5 * z * z / var - 0.5 * std::log(2.0 * M_PI * var);
}

/// E|X| for X ~ N(mean, var).
double mean_abs_normal(double mean, double var) {
  const double sd = std::sqrt(var);
  return sd * std::sqrt(2.0 / M_PI) * std::exp(-0.5 * mean * mean / var) +
         std::abs(mean) * std::erf(std::abs(mean) / (sd * std::sqrt(2.0)));
}

double logsumexp(const std::vector<double>& v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

}  // namespace

TargetDensity shift_log_density(const TargetDensity& target, double c) {
  TargetDensity out = target;
  auto base = target.log_pi_hat;
  out.log_pi_hat = [base, c](const VectorXd& x) { return base(x) + c; };
  if (out.true_log_z) *out.true_log_z += c;
  return out;
}

TargetDensity gaussian_target(int d, double sigma) {
  require(d >= 1 && sigma > 0.0, "gaussian_target: invalid parameters");
  TargetDensity t;
  t.id = "gauss";
  t.d = d;
  const double var = sigma * sigma;
  t.log_pi_hat = [d, var](const VectorXd& x) {
    return -0.5 * x.squaredNorm() / var -
           0.5 * d * std::log(2.0 * M_PI * var);
  };
  t.grad_log_pi_hat = [var](const VectorXd& x) { return VectorXd(-x / var); };
  t.true_log_z = 0.0;
  t.exact_sampler = [d, sigma](PhiloxStream& rng) {
    VectorXd x(d);
    rng.fill_normal(x);
    return VectorXd(sigma * x);
  };
  t.true_moments =
      TrueMoments{d * sigma * std::sqrt(2.0 / M_PI), d * var};
  return t;
}

TargetDensity gmm_target() {
  const int m = 9;
  const double var = 0.3;
  auto means = std::make_shared<std::vector<Eigen::Vector2d>>();
  for (double mx : {-5.0, 0.0, 5.0})
    for (double my : {-5.0, 0.0, 5.0}) means->emplace_back(mx, my);

  TargetDensity t;
  t.id = "gmm";
  t.d = 2;
  t.log_pi_hat = [means, var](const VectorXd& x) {
    std::vector<double> comp(m);
    for (int k = 0; k < m; ++k) {
      const Eigen::Vector2d z = x - (*means)[k];
      comp[k] = -0.5 * z.squaredNorm() / var - std::log(2.0 * M_PI * var);
    }
    return logsumexp(comp) - std::log(static_cast<double>(m));
  };
  t.grad_log_pi_hat = [means, var](const VectorXd& x) {
    std::vector<double> comp(m);
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < m; ++k) {
      comp[k] = -0.5 * (x - (*means)[k]).squaredNorm() / var;
      mx = std::max(mx, comp[k]);
    }
    VectorXd g = VectorXd::Zero(2);
    double wsum = 0.0;
    for (int k = 0; k < m; ++k) {
      const double w = std::exp(comp[k] - mx);
      wsum += w;
      g += w * ((*means)[k] - x) / var;
    }
    return VectorXd(g / wsum);
  };
  t.true_log_z = 0.0;
  t.exact_sampler = [means, var](PhiloxStream& rng) {
    const auto k = static_cast<int>(
        std::min<double>(m - 1, rng.next_uniform() * m));
    VectorXd x(2);
    rng.fill_normal(x);
    return VectorXd((*means)[k] + std::sqrt(var) * x);
  };
  // Per-axis marginal is the uniform 3-mixture over means {-5, 0, 5}.
  const double ma =
      (2.0 * mean_abs_normal(5.0, var) + mean_abs_normal(0.0, var)) / 3.0;
  const double ms = (2.0 * (25.0 + var) + var) / 3.0;
  t.true_moments = TrueMoments{2.0 * ma, 2.0 * ms};
  return t;
}

TargetDensity funnel_target(int d, double s) {
  require(d >= 2 && s > 0.0, "funnel_target: invalid parameters");
  TargetDensity t;
  t.id = "funnel";
  t.d = d;
  const double s2 = s * s;
  t.log_pi_hat = [d, s2](const VectorXd& x) {
    const double x1 = x[0];
    const double rest_sq = x.tail(x.size() - 1).squaredNorm();
    return log_normal_1d(x1, 0.0, s2) - 0.5 * rest_sq * std::exp(-x1) -
           0.5 * (d - 1) * (std::log(2.0 * M_PI) + x1);
  };
  t.grad_log_pi_hat = [d, s2](const VectorXd& x) {
    const double x1 = x[0];
    const double e = std::exp(-x1);
    VectorXd g(x.size());
    g[0] = -x1 / s2 - 0.5 * (d - 1) +
           0.5 * e * x.tail(x.size() - 1).squaredNorm();
    g.tail(x.size() - 1) = -e * x.tail(x.size() - 1);
    return g;
  };
  t.true_log_z = 0.0;
  t.exact_sampler = [d, s](PhiloxStream& rng) {
    VectorXd x(d);
    rng.fill_normal(x);
    x[0] *= s;
    x.tail(d - 1) *= std::exp(0.5 * x[0]);
    return x;
  };
  t.true_moments = TrueMoments{
      std::sqrt(2.0 / M_PI) * (s + (d - 1) * std::exp(s2 / 8.0)),
      s2 + (d - 1) * std::exp(s2 / 2.0)};
  return t;
}

TargetDensity double_well_target(int d, int w, double delta) {
  require(w >= 1 && w <= d && delta > 0.0,
          "double_well_target: need 1 <= w <= d and delta > 0");
  TargetDensity t;
  t.id = "double_well";
  t.d = d;
  t.log_pi_hat = [d, w, delta](const VectorXd& x) {
    double acc = 0.0;
    for (int i = 0; i < w; ++i) {
      const double q = x[i] * x[i] - delta;
      acc -= q * q;
    }
    for (int i = w; i < d; ++i) acc -= 0.5 * x[i] * x[i];
    return acc;
  };
  t.grad_log_pi_hat = [d, w, delta](const VectorXd& x) {
    VectorXd g(d);
    for (int i = 0; i < w; ++i)
      g[i] = -4.0 * x[i] * (x[i] * x[i] - delta);
    for (int i = w; i < d; ++i) g[i] = -x[i];
    return g;
  };

  const double L = std::sqrt(delta) + 6.0;
  auto density = [delta](double x) {
    const double q = x * x - delta;
    return std::exp(-q * q);
  };
  const double z1 = integrate(density, -L, L);
  const double m1 =
      integrate([&](double x) { return std::abs(x) * density(x); }, -L, L) / z1;
  const double m2 =
      integrate([&](double x) { return x * x * density(x); }, -L, L) / z1;
  t.true_log_z = w * std::log(z1) + 0.5 * (d - w) * std::log(2.0 * M_PI);
  t.true_moments = TrueMoments{w * m1 + (d - w) * std::sqrt(2.0 / M_PI),
                               w * m2 + (d - w)};

  auto table = std::make_shared<InverseCdfTable>(density, -L, L, 8192);
  t.exact_sampler = [d, w, table](PhiloxStream& rng) {
    VectorXd x(d);
    for (int i = 0; i < w; ++i) x[i] = (*table)(rng.next_uniform());
    for (int i = w; i < d; ++i) x[i] = rng.next_normal();
    return x;
  };
  return t;
}

TargetDensity spin_glass_target(int d, double beta, std::uint64_t seed) {
  require(d >= 2 && beta >= 0.0, "spin_glass_target: invalid parameters");
  auto coupling = std::make_shared<MatrixXd>(d, d);
  {
    PhiloxStream rng(seed, RngDomain::target);
    rng.fill_normal(*coupling);
    // Only the symmetric part enters x^T A x; symmetrizing makes the
    // gradient exact.
    *coupling = 0.5 * (*coupling + coupling->transpose()).eval();
  }
  TargetDensity t;
  t.id = "spin_glass";
  t.d = d;
  const double c_quad = beta / std::sqrt(2.0 * d);
  const double c_quart = beta * beta / (4.0 * d);
  t.log_pi_hat = [coupling, c_quad, c_quart](const VectorXd& x) {
    const double nsq = x.squaredNorm();
    return c_quad * x.dot(*coupling * x) - c_quart * nsq * nsq - 0.5 * nsq;
  };
  t.grad_log_pi_hat = [coupling, c_quad, c_quart](const VectorXd& x) {
    const double nsq = x.squaredNorm();
    return VectorXd(2.0 * c_quad * (*coupling * x) -
                    4.0 * c_quart * nsq * x - x);
  };
  if (beta == 0.0) t.true_log_z = 0.5 * d * std::log(2.0 * M_PI);
  return t;
}

TargetDensity mixture_targets(MixtureKind kind, int d, std::uint64_t seed,
                              int n_components) {
  require(d >= 1 && n_components >= 1, "mixture_targets: invalid parameters");
  auto means = std::make_shared<MatrixXd>(d, n_components);
  {
    PhiloxStream rng(seed, RngDomain::target, 1);
    for (int k = 0; k < n_components; ++k)
      for (int i = 0; i < d; ++i)
        (*means)(i, k) = 20.0 * rng.next_uniform() - 10.0;
  }
  const int m = n_components;
  TargetDensity t;
  t.d = d;
  t.true_log_z = 0.0;
  if (kind == MixtureKind::gauss) {
    t.id = "mog";
    t.log_pi_hat = [means, d, m](const VectorXd& x) {
      std::vector<double> comp(m);
      for (int k = 0; k < m; ++k)
        comp[k] = -0.5 * (x - means->col(k)).squaredNorm() -
                  0.5 * d * std::log(2.0 * M_PI);
      return logsumexp(comp) - std::log(static_cast<double>(m));
    };
    t.grad_log_pi_hat = [means, m](const VectorXd& x) {
      std::vector<double> comp(m);
      double mx = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < m; ++k) {
        comp[k] = -0.5 * (x - means->col(k)).squaredNorm();
        mx = std::max(mx, comp[k]);
      }
      VectorXd g = VectorXd::Zero(x.size());
      double wsum = 0.0;
      for (int k = 0; k < m; ++k) {
        const double w = std::exp(comp[k] - mx);
        wsum += w;
        g += w * (means->col(k) - x);
      }
      return VectorXd(g / wsum);
    };
    t.exact_sampler = [means, d, m](PhiloxStream& rng) {
      const auto k = static_cast<int>(
          std::min<double>(m - 1, rng.next_uniform() * m));
      VectorXd x(d);
      rng.fill_normal(x);
      return VectorXd(means->col(k) + x);
    };
    double mean_abs = 0.0, mean_sq = 0.0;
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < m; ++k) {
        mean_abs += mean_abs_normal((*means)(i, k), 1.0) / m;
        mean_sq += (1.0 + (*means)(i, k) * (*means)(i, k)) / m;
      }
    t.true_moments = TrueMoments{mean_abs, mean_sq};
  } else {
    t.id = "mos";
    // Components are products of independent 1-D Student-t (2 dof)
    // coordinates centered at the component mean.
    const double log_c = -std::log(2.0 * std::sqrt(2.0));
    t.log_pi_hat = [means, d, m, log_c](const VectorXd& x) {
      std::vector<double> comp(m);
      for (int k = 0; k < m; ++k) {
        double acc = 0.0;
        for (int i = 0; i < d; ++i) {
          const double z = x[i] - (*means)(i, k);
          acc += log_c - 1.5 * std::log1p(0.5 * z * z);
        }
        comp[k] = acc;
      }
      return logsumexp(comp) - std::log(static_cast<double>(m));
    };
    t.grad_log_pi_hat = [means, d, m, log_c](const VectorXd& x) {
      std::vector<double> comp(m);
      double mx = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < m; ++k) {
        double acc = 0.0;
        for (int i = 0; i < d; ++i) {
          const double z = x[i] - (*means)(i, k);
          acc += log_c - 1.5 * std::log1p(0.5 * z * z);
        }
        comp[k] = acc;
        mx = std::max(mx, comp[k]);
      }
      VectorXd g = VectorXd::Zero(d);
      double wsum = 0.0;
      for (int k = 0; k < m; ++k) {
        const double w = std::exp(comp[k] - mx);
        wsum += w;
        for (int i = 0; i < d; ++i) {
          const double z = x[i] - (*means)(i, k);
          g[i] += w * (-3.0 * z / (2.0 + z * z));
        }
      }
      return VectorXd(g / wsum);
    };
    t.exact_sampler = [means, d, m](PhiloxStream& rng) {
      const auto k = static_cast<int>(
          std::min<double>(m - 1, rng.next_uniform() * m));
      VectorXd x(d);
      for (int i = 0; i < d; ++i) {
        // t_2 variate: z / sqrt(chi^2_2 / 2) with chi^2_2 = -2 log U.
        const double z = rng.next_normal();
        x[i] = (*means)(i, k) + z / std::sqrt(-std::log(rng.next_uniform()));
      }
      return x;
    };
  }
  return t;
}

TargetDensity rings_target() {
  const double rho = 2.0, sr = 0.2;
  const int m = 3;
  TargetDensity t;
  t.id = "rings";
  t.d = 2;
  t.log_pi_hat = [rho, sr](const VectorXd& x) {
    const double radius = x.norm();
    std::vector<double> comp(m);
    for (int k = 1; k <= m; ++k) {
      const double z = radius - k * rho;
      comp[k - 1] = -0.5 * z * z / (sr * sr);
    }
    return logsumexp(comp);
  };
  t.grad_log_pi_hat = [rho, sr](const VectorXd& x) {
    const double radius = x.norm();
    if (radius < 1e-12) return VectorXd(VectorXd::Zero(2));
    std::vector<double> comp(m);
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 1; k <= m; ++k) {
      const double z = radius - k * rho;
      comp[k - 1] = -0.5 * z * z / (sr * sr);
      mx = std::max(mx, comp[k - 1]);
    }
    double wsum = 0.0, dldr = 0.0;
    for (int k = 1; k <= m; ++k) {
      const double w = std::exp(comp[k - 1] - mx);
      wsum += w;
      dldr += w * (-(radius - k * rho) / (sr * sr));
    }
    return VectorXd((dldr / wsum) * (x / radius));
  };
  return t;
}

TargetDensity make_target(const std::string& id, int d, int w, double delta,
                          double beta, double sigma, std::uint64_t seed) {
  if (id == "gauss") return gaussian_target(d, sigma > 0.0 ? sigma : 1.0);
  if (id == "gmm") return gmm_target();
  if (id == "funnel") return funnel_target(d > 0 ? d : 10, 3.0);
  if (id == "double_well") return double_well_target(d, w, delta);
  if (id == "spin_glass") return spin_glass_target(d, beta, seed);
  if (id == "mog") return mixture_targets(MixtureKind::gauss, d, seed);
  if (id == "mos") return mixture_targets(MixtureKind::student, d, seed);
  if (id == "rings") return rings_target();
  throw ConfigError("unknown target id: " + id);
}

// ---------------------------------------------------------------------------

void TerminalCondition::eval(const MatrixXd& X, RowVectorXd& phi_out,
                             MatrixXd* grad_out, NetWorkspace*) const {
  phi_out.resize(X.cols());
  if (grad_out) grad_out->resize(X.rows(), X.cols());
  for (Index j = 0; j < X.cols(); ++j) {
    const VectorXd x = X.col(j);
    phi_out[j] = phi(x);
    if (grad_out) grad_out->col(j) = grad_phi(x);
  }
}

void TerminalCondition::vjp(const MatrixXd&, const RowVectorXd&,
                            const MatrixXd*, VectorXd&, NetWorkspace*) const {}

namespace {

class TargetTerminalU final : public TerminalCondition {
 public:
  TargetTerminalU(TargetDensity target, double beta_T, double r_T)
      : TerminalCondition(TerminalSegment::u_half),
        target_(std::move(target)),
        beta_T_(beta_T),
        r_T_(r_T) {}

  double phi(const VectorXd& x) const override {
    const VectorXd y = beta_T_ * x;
    return target_.log_pi_hat(y) - log_psi_r(r_T_, y);
  }

  VectorXd grad_phi(const VectorXd& x) const override {
    const VectorXd y = beta_T_ * x;
    return beta_T_ *
           (target_.grad_log_pi_hat(y) + y / (r_T_ * r_T_));
  }

 private:
  TargetDensity target_;
  double beta_T_, r_T_;
};

class TargetTerminalV final : public TerminalCondition {
 public:
  TargetTerminalV(TargetDensity target, double alpha_T, double d_log_g_T)
      : TerminalCondition(TerminalSegment::v_full_at_T),
        target_(std::move(target)),
        alpha_T_(alpha_T),
        d_log_g_T_(d_log_g_T) {}

  double phi(const VectorXd& x) const override {
    return target_.log_pi_hat(alpha_T_ * x) + d_log_g_T_;
  }

  VectorXd grad_phi(const VectorXd& x) const override {
    return alpha_T_ * target_.grad_log_pi_hat(alpha_T_ * x);
  }

 private:
  TargetDensity target_;
  double alpha_T_, d_log_g_T_;
};

}  // namespace

std::shared_ptr<TerminalCondition> terminal_u_half(
    const TargetDensity& target, const InterpolantSchedule& s,
    const ScalingFunctions& sc) {
  if (s.is_full())
    throw KindMismatchError("terminal_u_half requires a half schedule");
  return std::make_shared<TargetTerminalU>(target, sc.beta(s, s.T),
                                           s.r(s.T));
}

std::shared_ptr<TerminalCondition> terminal_v_full(
    const TargetDensity& target, const InterpolantSchedule& s,
    const ScalingFunctions& sc) {
  if (!s.is_full())
    throw KindMismatchError("terminal_v_full requires a full schedule");
  return std::make_shared<TargetTerminalV>(
      target, sc.alpha(s, s.T), target.d * std::log(s.g(s.T)));
}

}  // namespace fis
