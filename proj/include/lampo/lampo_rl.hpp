#ifndef LAMPO_LAMPO_RL_HPP
#define LAMPO_LAMPO_RL_HPP

// Off-policy improvement of the latent policy. All episodes from every past policy
// are reused through self-normalized importance sampling against the equal-weight
// mixture of the historical policies; the update maximizes
//     J_hat(theta) - gamma * eta(theta)   s.t.   mean_i KL(p_prev(.|c_i) || p_theta(.|c_i)) <= chi.

#include "lampo/common.hpp"
#include "lampo/latent_policy.hpp"
#include "lampo/mppca.hpp"
#include "lampo/optimizer.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace lampo {

struct Episode {
  VectorXd context;
  int component = 0;
  VectorXd z;
  VectorXd omega;
  double reward = 0.0;
  int policy_index = 0;
};

/// Episodes with their log-density under every historical policy.
class ExperienceBuffer {
 public:
  /// Appends theta as the newest policy and extends every episode's cache by one entry.
  void append_policy(const MppcaModel& model, const PolicyParams& theta) {
    policies_.push_back(theta);
    for (std::size_t i = 0; i < episodes_.size(); ++i) {
      const auto& e = episodes_[i];
      cache_[i].push_back(log_density(model, theta, e.z, e.component, e.context));
    }
  }

  void append_episode(const MppcaModel& model, Episode episode) {
    require(!policies_.empty(), ErrorKind::Domain, "append a policy before its episodes");
    require(episode.policy_index >= 0 && episode.policy_index < static_cast<int>(policies_.size()),
            ErrorKind::Domain, "episode refers to an unknown policy");
    std::vector<double> row;
    row.reserve(policies_.size());
    for (const auto& theta : policies_)
      row.push_back(log_density(model, theta, episode.z, episode.component, episode.context));
    episodes_.push_back(std::move(episode));
    cache_.push_back(std::move(row));
  }

  const std::vector<Episode>& episodes() const { return episodes_; }
  const std::vector<PolicyParams>& policies() const { return policies_; }
  const std::vector<std::vector<double>>& log_density_cache() const { return cache_; }
  std::size_t size() const { return episodes_.size(); }
  bool empty() const { return episodes_.empty(); }

  MatrixXd contexts() const {
    require(!episodes_.empty(), ErrorKind::Domain, "buffer is empty");
    MatrixXd out(static_cast<Eigen::Index>(episodes_.size()), episodes_.front().context.size());
    for (std::size_t i = 0; i < episodes_.size(); ++i)
      out.row(static_cast<Eigen::Index>(i)) = episodes_[i].context.transpose();
    return out;
  }

  VectorXd rewards() const {
    VectorXd r(static_cast<Eigen::Index>(episodes_.size()));
    for (std::size_t i = 0; i < episodes_.size(); ++i) r(static_cast<Eigen::Index>(i)) = episodes_[i].reward;
    return r;
  }

  bool cache_complete() const {
    for (const auto& row : cache_)
      if (row.size() != policies_.size()) return false;
    return cache_.size() == episodes_.size();
  }

 private:
  std::vector<Episode> episodes_;
  std::vector<PolicyParams> policies_;
  std::vector<std::vector<double>> cache_;
};

struct LampoConfig {
  double gamma = 1.0;
  double chi = 0.2;
  int n_per_iter = 50;

  void validate() const {
    require(gamma >= 0.0 && std::isfinite(gamma), ErrorKind::Config, "gamma must be >= 0");
    require(chi > 0.0 && std::isfinite(chi), ErrorKind::Config, "chi must be > 0");
    require(n_per_iter >= 1, ErrorKind::Config, "n_per_iter must be >= 1");
  }
};

/// Log-denominator floor; episodes below it are clamped and counted.
inline constexpr double kLogDenominatorFloor = -700.0;

struct ImportanceWeights {
  VectorXd log_ratios;
  VectorXd ratios;
  int clamped = 0;
};

namespace detail {

inline VectorXd log_denominators(const ExperienceBuffer& buffer, int* clamped) {
  require(!buffer.empty(), ErrorKind::Domain, "buffer is empty");
  require(buffer.cache_complete(), ErrorKind::Domain, "log-density cache is incomplete");
  const auto& cache = buffer.log_density_cache();
  const double log_t = std::log(static_cast<double>(buffer.policies().size()));
  VectorXd out(static_cast<Eigen::Index>(cache.size()));
  int count = 0;
  for (std::size_t i = 0; i < cache.size(); ++i) {
    const Eigen::Map<const VectorXd> row(cache[i].data(), static_cast<Eigen::Index>(cache[i].size()));
    double v = log_sum_exp(row) - log_t;
    if (!(v >= kLogDenominatorFloor)) {
      v = kLogDenominatorFloor;
      ++count;
    }
    out(static_cast<Eigen::Index>(i)) = v;
  }
  if (clamped) *clamped = count;
  return out;
}

}  // namespace detail

/// rho_i = p_theta(z_i, k_i | c_i) / ((1/T) sum_t p_theta_t(z_i, k_i | c_i)).
inline ImportanceWeights importance_ratios(const MppcaModel& model, const ExperienceBuffer& buffer,
                                           const PolicyParams& theta) {
  ImportanceWeights w;
  const VectorXd log_den = detail::log_denominators(buffer, &w.clamped);
  const auto& eps = buffer.episodes();
  w.log_ratios.resize(log_den.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const auto& e = eps[i];
    w.log_ratios(static_cast<Eigen::Index>(i)) =
        log_density(model, theta, e.z, e.component, e.context) - log_den(static_cast<Eigen::Index>(i));
  }
  w.ratios = w.log_ratios.array().exp();
  return w;
}

struct SnisEstimate {
  double j_hat = 0.0;
  VectorXd grad;        // empty unless requested
  double nu = 0.0;      // sum of ratios
  double ess = 0.0;     // nu^2 / sum rho^2
  int clamped = 0;
};

/// SNIS objective and, optionally, its gradient
///   sum_i (rho_i / nu) grad log p_theta(z_i, k_i | c_i) (R_i - J_hat).
inline SnisEstimate snis_evaluate(const MppcaModel& model, const ExperienceBuffer& buffer,
                                  const PolicyParams& theta, bool with_grad) {
  SnisEstimate out;
  const VectorXd log_den = detail::log_denominators(buffer, &out.clamped);
  const auto& eps = buffer.episodes();
  const auto n = static_cast<Eigen::Index>(eps.size());

  VectorXd log_rho(n);
  MatrixXd grads;
  if (with_grad) grads.resize(theta.dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = eps[static_cast<std::size_t>(i)];
    double lp = 0.0;
    if (with_grad) {
      grads.col(i) = grad_log_density(model, theta, e.z, e.component, e.context, &lp);
    } else {
      lp = log_density(model, theta, e.z, e.component, e.context);
    }
    log_rho(i) = lp - log_den(i);
  }

  // self-normalized weights are invariant to a common shift of log rho
  const double shift = log_rho.maxCoeff();
  const VectorXd w = (log_rho.array() - shift).exp();
  const double w_sum = w.sum();
  out.nu = std::exp(shift) * w_sum;
  out.ess = w_sum * w_sum / w.squaredNorm();

  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) acc += w(i) * eps[static_cast<std::size_t>(i)].reward;
  out.j_hat = acc / w_sum;

  if (with_grad) {
    out.grad = VectorXd::Zero(theta.dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      const double adv = eps[static_cast<std::size_t>(i)].reward - out.j_hat;
      out.grad += (w(i) / w_sum * adv) * grads.col(i);
    }
  }
  return out;
}

inline double snis_objective(const MppcaModel& model, const ExperienceBuffer& buffer, const PolicyParams& theta) {
  return snis_evaluate(model, buffer, theta, false).j_hat;
}

inline VectorXd snis_gradient(const MppcaModel& model, const ExperienceBuffer& buffer, const PolicyParams& theta) {
  return snis_evaluate(model, buffer, theta, true).grad;
}

/// eta = KL(p_theta(c, k) || p_theta0(c, k)) in closed form, with gradient w.r.t. theta.
inline ValueGrad context_regularizer(const MppcaModel& model, const PolicyParams& theta,
                                     const PolicyParams& theta0) {
  detail::check_compatible(model, theta);
  detail::check_compatible(model, theta0);
  const int k_count = model.n_components();
  const auto dz = model.latent_dim();
  const VectorXd log_pi = log_softmax(theta.logits);
  const VectorXd log_pi0 = log_softmax(theta0.logits);
  const VectorXd pi = log_pi.array().exp();

  ValueGrad out;
  out.grad = VectorXd::Zero(theta.dim());
  VectorXd kl(k_count);
  for (int k = 0; k < k_count; ++k) {
    const auto& comp = model.components[static_cast<std::size_t>(k)];
    const VectorXd var = theta.latent_var(k);
    const Gaussian p = detail::context_marginal(comp, theta.mu.col(k), var);
    const Gaussian q = detail::context_marginal(comp, theta0.mu.col(k), theta0.latent_var(k));
    const bool same = theta.mu.col(k) == theta0.mu.col(k) && theta.log_var.col(k) == theta0.log_var.col(k);
    kl(k) = same ? 0.0 : std::max(0.0, gaussian_kl(p, q));

    const MatrixXd& cl = comp.context_loading;
    const VectorXd d_mean = cl.transpose() * q.llt().solve(p.mean() - q.mean());
    const MatrixXd q_inv_c = q.llt().solve(cl);
    const MatrixXd p_inv_c = p.llt().solve(cl);
    VectorXd d_log_var(dz);
    for (Eigen::Index d = 0; d < dz; ++d)
      d_log_var(d) = 0.5 * cl.col(d).dot(q_inv_c.col(d) - p_inv_c.col(d)) * var(d);
    out.grad.segment(theta.mu_index(k), dz) = pi(k) * d_mean;
    out.grad.segment(theta.log_var_index(k), dz) = pi(k) * d_log_var;
  }
  const VectorXd ell = log_pi - log_pi0;
  const double mixed_kl = pi.dot(kl);
  const double cat_kl = pi.dot(ell);
  out.value = std::max(0.0, mixed_kl + cat_kl);
  out.grad.head(k_count) = pi.array() * ((kl.array() - mixed_kl) + (ell.array() - cat_kl));
  return out;
}

/// Mean over contexts of KL(p_prev(z, k | c) || p_theta(z, k | c)); the previous
/// policy's posteriors are computed once.
class TrustRegion {
 public:
  TrustRegion(const MppcaModel& model, PolicyParams theta_prev, const Eigen::Ref<const MatrixXd>& contexts)
      : model_(&model), prev_(std::move(theta_prev)), contexts_(contexts) {
    require(contexts_.rows() >= 1, ErrorKind::Domain, "trust region needs at least one context");
    prev_posts_.reserve(static_cast<std::size_t>(contexts_.rows()));
    for (Eigen::Index i = 0; i < contexts_.rows(); ++i)
      prev_posts_.push_back(condition(model, prev_, contexts_.row(i).transpose()));
  }

  ValueGrad operator()(const PolicyParams& theta) const {
    const MppcaModel& model = *model_;
    detail::check_compatible(model, theta);
    const int k_count = model.n_components();
    const auto dz = model.latent_dim();
    const VectorXd log_pi = log_softmax(theta.logits);

    // context-independent pieces of the new posteriors
    std::vector<MatrixXd> precision(static_cast<std::size_t>(k_count));
    std::vector<Eigen::LLT<MatrixXd>> prec_llt(static_cast<std::size_t>(k_count));
    std::vector<double> log_det_prec(static_cast<std::size_t>(k_count));
    std::vector<MatrixXd> post_cov(static_cast<std::size_t>(k_count));
    std::vector<VectorXd> inv_var(static_cast<std::size_t>(k_count));
    for (int k = 0; k < k_count; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const auto& comp = model.components[ks];
      inv_var[ks] = theta.latent_var(k).cwiseInverse();
      precision[ks] = comp.context_loading.transpose() * comp.context_loading / comp.noise_var;
      precision[ks].diagonal() += inv_var[ks];
      prec_llt[ks].compute(precision[ks]);
      require(prec_llt[ks].info() == Eigen::Success, ErrorKind::Conditioning,
              "posterior precision is not positive definite");
      const MatrixXd l = prec_llt[ks].matrixL();
      log_det_prec[ks] = 2.0 * l.diagonal().array().log().sum();
      post_cov[ks] = prec_llt[ks].solve(MatrixXd::Identity(dz, dz));
    }

    ValueGrad out;
    out.grad = VectorXd::Zero(theta.dim());
    double total = 0.0;
    for (Eigen::Index i = 0; i < contexts_.rows(); ++i) {
      const VectorXd c = contexts_.row(i).transpose();
      const auto& prev = prev_posts_[static_cast<std::size_t>(i)];

      std::vector<Gaussian> marginals;
      marginals.reserve(static_cast<std::size_t>(k_count));
      VectorXd log_terms(k_count);
      for (int k = 0; k < k_count; ++k) {
        marginals.push_back(detail::context_marginal(model.components[static_cast<std::size_t>(k)],
                                                     theta.mu.col(k), theta.latent_var(k)));
        log_terms(k) = log_pi(k) + marginals.back().log_pdf(c);
      }
      const VectorXd log_r = log_terms.array() - log_sum_exp(log_terms);
      const VectorXd r = log_r.array().exp();

      // categorical part: sum_k pp_k (log pp_k - log r_k)
      out.grad.head(k_count) += r - prev.comp_probs;
      for (int k = 0; k < k_count; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        const double pp = prev.comp_probs(k);
        if (pp > 0.0) total += pp * (prev.log_comp_probs(k) - log_r(k));
        const double coef = r(k) - pp;
        if (coef != 0.0) {
          const auto g = detail::context_marginal_grad(model.components[ks], marginals[ks],
                                                       theta.latent_var(k), c);
          out.grad.segment(theta.mu_index(k), dz) += coef * g.d_mu;
          out.grad.segment(theta.log_var_index(k), dz) += coef * g.d_log_var;
        }
        if (pp == 0.0) continue;

        // Gaussian part in information form: P = Sigma^-1 + C^T C / s2, h = C^T (c - c_bar) / s2 + Sigma^-1 mu
        const auto& comp = model.components[ks];
        const VectorXd mu = theta.mu.col(k);
        const VectorXd h = comp.context_loading.transpose() * (c - comp.context_offset) / comp.noise_var +
                           inv_var[ks].cwiseProduct(mu);
        const VectorXd m1 = prec_llt[ks].solve(h);
        const VectorXd& m0 = prev.post_mean[ks];
        const MatrixXd& s0 = prev.post_cov[ks];
        const VectorXd diff = m1 - m0;
        const Eigen::LLT<MatrixXd> s0_llt(s0);
        const MatrixXd l0 = s0_llt.matrixL();
        const double log_det_s0 = 2.0 * l0.diagonal().array().log().sum();
        const double kl = 0.5 * ((precision[ks].cwiseProduct(s0)).sum() + diff.dot(precision[ks] * diff) -
                                 static_cast<double>(dz) - log_det_prec[ks] - log_det_s0);
        total += pp * kl;

        const VectorXd d_mu = inv_var[ks].cwiseProduct(diff);
        VectorXd d_inv_var(dz);
        for (Eigen::Index d = 0; d < dz; ++d)
          d_inv_var(d) = 0.5 * (s0(d, d) + m0(d) * m0(d) - m1(d) * m1(d) - post_cov[ks](d, d)) +
                         diff(d) * mu(d);
        out.grad.segment(theta.mu_index(k), dz) += pp * d_mu;
        out.grad.segment(theta.log_var_index(k), dz) -= pp * d_inv_var.cwiseProduct(inv_var[ks]);
      }
    }
    const auto n = static_cast<double>(contexts_.rows());
    out.value = total / n;
    out.grad /= n;
    return out;
  }

 private:
  const MppcaModel* model_;
  PolicyParams prev_;
  MatrixXd contexts_;
  std::vector<ConditionalPosterior> prev_posts_;
};

inline ValueGrad trust_region(const MppcaModel& model, const PolicyParams& theta_prev,
                              const PolicyParams& theta, const Eigen::Ref<const MatrixXd>& contexts) {
  return TrustRegion(model, theta_prev, contexts)(theta);
}

struct ImproveResult {
  PolicyParams theta;
  bool accepted = false;
  SolveReport report;
  double objective_before = 0.0;  // J_hat - gamma * eta at theta_T
  double objective_after = 0.0;
  double j_hat = 0.0;   // diagnostics at the returned theta
  double eta = 0.0;
  double mean_g = 0.0;
  double nu = 0.0;
  double ess = 0.0;
  int clamped = 0;
  std::string message;
};

inline constexpr double kTrustRegionSlack = 1e-4;

/// One constrained improvement step starting from theta_T. Falls back to theta_T
/// unless the solution is feasible and does not decrease the objective.
inline ImproveResult improve(const MppcaModel& model, const ExperienceBuffer& buffer,
                             const PolicyParams& theta_t, const PolicyParams& theta0,
                             const LampoConfig& config, SolveOptions opts = {}) {
  config.validate();
  require(!buffer.empty(), ErrorKind::Domain, "improve needs at least one episode");
  const int k_count = theta_t.n_components();
  const auto dz = theta_t.latent_dim();
  auto unflat = [&](const VectorXd& x) { return PolicyParams::from_flat(x, k_count, dz); };

  const TrustRegion region(model, theta_t, buffer.contexts());

  auto objective = [&](const VectorXd& x) {
    const PolicyParams theta = unflat(x);
    const SnisEstimate j = snis_evaluate(model, buffer, theta, true);
    ValueGrad out{j.j_hat, j.grad};
    if (config.gamma > 0.0) {
      const ValueGrad eta = context_regularizer(model, theta, theta0);
      out.value -= config.gamma * eta.value;
      out.grad -= config.gamma * eta.grad;
    }
    return out;
  };
  auto constraint = [&](const VectorXd& x) { return region(unflat(x)); };

  NlpProblem problem;
  problem.objective = [&](const VectorXd& x) {
    try {
      return objective(x);
    } catch (const Error&) {
      return ValueGrad{std::numeric_limits<double>::quiet_NaN(), VectorXd::Zero(x.size())};
    }
  };
  problem.constraint = [&](const VectorXd& x) {
    try {
      return constraint(x);
    } catch (const Error&) {
      return ValueGrad{std::numeric_limits<double>::quiet_NaN(), VectorXd::Zero(x.size())};
    }
  };
  problem.bound = config.chi;
  problem.x0 = theta_t.flat();

  ImproveResult result;
  result.objective_before = objective(problem.x0).value;
  result.report = solve(problem, opts);

  bool ok = false;
  if (result.report.x_star.size() == problem.x0.size() && result.report.x_star.allFinite()) {
    const double g = constraint(result.report.x_star).value;
    const double f = objective(result.report.x_star).value;
    ok = std::isfinite(g) && std::isfinite(f) && g <= config.chi + kTrustRegionSlack &&
         f >= result.objective_before - 1e-8;
    if (!ok) result.message = "solution rejected: infeasible or not improving";
  } else {
    result.message = "solver produced no usable point";
  }
  result.accepted = ok;
  result.theta = ok ? unflat(result.report.x_star) : theta_t;
  if (ok) result.message = std::string(to_string(result.report.status));

  const SnisEstimate j = snis_evaluate(model, buffer, result.theta, false);
  result.j_hat = j.j_hat;
  result.nu = j.nu;
  result.ess = j.ess;
  result.clamped = j.clamped;
  result.eta = context_regularizer(model, result.theta, theta0).value;
  result.mean_g = region(result.theta).value;
  result.objective_after = result.j_hat - config.gamma * result.eta;
  return result;
}

}  // namespace lampo

#endif  // LAMPO_LAMPO_RL_HPP
