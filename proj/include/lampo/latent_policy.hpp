#ifndef LAMPO_LATENT_POLICY_HPP
#define LAMPO_LATENT_POLICY_HPP

// Context-conditional latent policy p_theta(z, k | c). The MPPCA projections stay
// fixed; theta holds the mixture logits and per-component latent means and
// log-variances. Log-density and its gradient use the factorization
//   log p(c|z,k) + log p(z|k) + log pi_k - log sum_j pi_j p(c|j)
// which needs no inverse of the posterior covariance.

#include "lampo/common.hpp"
#include "lampo/mppca.hpp"

#include <random>
#include <vector>

namespace lampo {

struct PolicyParams {
  VectorXd logits;   // K
  MatrixXd mu;       // d_z x K, column k is mu_k
  MatrixXd log_var;  // d_z x K, column k is log diag(Sigma_k)

  int n_components() const { return static_cast<int>(logits.size()); }
  Eigen::Index latent_dim() const { return mu.rows(); }
  Eigen::Index dim() const { return logits.size() + mu.size() + log_var.size(); }

  VectorXd weights() const { return softmax(logits); }
  VectorXd latent_var(int k) const { return log_var.col(k).array().exp(); }

  // flat layout: [logits | mu_0 .. mu_{K-1} | log_var_0 .. log_var_{K-1}]
  Eigen::Index logit_index(int k) const { return k; }
  Eigen::Index mu_index(int k) const { return logits.size() + k * latent_dim(); }
  Eigen::Index log_var_index(int k) const { return logits.size() + mu.size() + k * latent_dim(); }

  VectorXd flat() const {
    VectorXd v(dim());
    v << logits, mu.reshaped(), log_var.reshaped();
    return v;
  }

  static PolicyParams from_flat(const Eigen::Ref<const VectorXd>& v, int n_components, Eigen::Index latent_dim) {
    const auto block = static_cast<Eigen::Index>(n_components) * latent_dim;
    require(v.size() == n_components + 2 * block, ErrorKind::Domain,
            "flat policy vector has wrong length");
    PolicyParams p;
    p.logits = v.head(n_components);
    p.mu = v.segment(n_components, block).reshaped(latent_dim, n_components);
    p.log_var = v.tail(block).reshaped(latent_dim, n_components);
    return p;
  }

  void validate() const {
    require(logits.size() >= 1, ErrorKind::Config, "policy needs at least one component");
    require(mu.cols() == logits.size() && log_var.cols() == logits.size() &&
                log_var.rows() == mu.rows(),
            ErrorKind::Config, "policy parameter shapes are inconsistent");
    require(logits.allFinite() && mu.allFinite() && log_var.allFinite(), ErrorKind::Domain,
            "policy parameters contain non-finite entries");
  }
};

/// theta_0: EM mixture weights with mu_k = 0 and Sigma_k = I.
inline PolicyParams initial_policy(const MppcaModel& model) {
  PolicyParams p;
  p.logits = model.weights.array().max(1e-300).log();
  p.mu = MatrixXd::Zero(model.latent_dim(), model.n_components());
  p.log_var = MatrixXd::Zero(model.latent_dim(), model.n_components());
  return p;
}

/// Replaces the model's latent Gaussian and mixture weights with theta.
inline MppcaModel with_policy(MppcaModel model, const PolicyParams& theta) {
  model.weights = theta.weights();
  for (int k = 0; k < model.n_components(); ++k) {
    auto& c = model.components[static_cast<std::size_t>(k)];
    c.latent_mean = theta.mu.col(k);
    c.latent_var = theta.latent_var(k);
  }
  return model;
}

namespace detail {

inline void check_compatible(const MppcaModel& model, const PolicyParams& theta) {
  theta.validate();
  require(theta.n_components() == model.n_components() && theta.latent_dim() == model.latent_dim(),
          ErrorKind::Config, "policy parameters do not match the model");
}

/// p(c | k) = N(C mu + c_bar, sigma2 I + C Sigma C^T).
inline Gaussian context_marginal(const MppcaComponent& comp, const Eigen::Ref<const VectorXd>& mu,
                                 const Eigen::Ref<const VectorXd>& var) {
  const MatrixXd& cl = comp.context_loading;
  MatrixXd cov = cl * var.asDiagonal() * cl.transpose();
  cov.diagonal().array() += comp.noise_var;
  return {cl * mu + comp.context_offset, cov};
}

/// Gradient of log N(c | m, V) w.r.t. (mu, log var) of the latent prior that induces m and V.
struct MarginalGrad {
  VectorXd d_mu;
  VectorXd d_log_var;
};

inline MarginalGrad context_marginal_grad(const MppcaComponent& comp, const Gaussian& marginal,
                                          const Eigen::Ref<const VectorXd>& var,
                                          const Eigen::Ref<const VectorXd>& c) {
  const MatrixXd& cl = comp.context_loading;
  const VectorXd alpha = marginal.llt().solve(c - marginal.mean());  // V^-1 (c - m)
  const MatrixXd vinv_c = marginal.llt().solve(cl);                  // V^-1 C
  const VectorXd ct_alpha = cl.transpose() * alpha;
  MarginalGrad g;
  g.d_mu = ct_alpha;
  g.d_log_var.resize(var.size());
  for (Eigen::Index d = 0; d < var.size(); ++d) {
    // dlogN/dV = 0.5 (alpha alpha^T - V^-1), contracted with c_d c_d^T
    const double quad = ct_alpha(d) * ct_alpha(d) - cl.col(d).dot(vinv_c.col(d));
    g.d_log_var(d) = 0.5 * quad * var(d);
  }
  return g;
}

}  // namespace detail

struct ConditionalPosterior {
  VectorXd comp_probs;                // p(k | c)
  VectorXd log_comp_probs;
  std::vector<VectorXd> post_mean;    // per component
  std::vector<MatrixXd> post_cov;     // per component
  double log_context_density = 0.0;   // log p_theta(c)
};

/// Log-normalizer below which a context is treated as outside the model's support.
inline constexpr double kSupportLogFloor = -700.0;

inline ConditionalPosterior condition(const MppcaModel& model, const PolicyParams& theta,
                                      const Eigen::Ref<const VectorXd>& c) {
  detail::check_compatible(model, theta);
  require(c.size() == model.context_dim(), ErrorKind::Domain, "context has wrong dimension");
  require(c.allFinite(), ErrorKind::Domain, "context contains non-finite entries");

  const int k_count = model.n_components();
  const auto dz = model.latent_dim();
  const VectorXd log_pi = log_softmax(theta.logits);

  ConditionalPosterior post;
  post.log_comp_probs.resize(k_count);
  post.post_mean.resize(static_cast<std::size_t>(k_count));
  post.post_cov.resize(static_cast<std::size_t>(k_count));

  for (int k = 0; k < k_count; ++k) {
    const auto& comp = model.components[static_cast<std::size_t>(k)];
    const VectorXd var = theta.latent_var(k);
    const Gaussian marginal = detail::context_marginal(comp, theta.mu.col(k), var);
    post.log_comp_probs(k) = log_pi(k) + marginal.log_pdf(c);

    const MatrixXd& cl = comp.context_loading;
    MatrixXd precision = cl.transpose() * cl / comp.noise_var;
    precision.diagonal() += var.cwiseInverse();
    const Eigen::LLT<MatrixXd> llt(precision);
    require(llt.info() == Eigen::Success, ErrorKind::Conditioning,
            "posterior precision is not positive definite");
    const VectorXd rhs = cl.transpose() * (c - comp.context_offset) / comp.noise_var +
                         theta.mu.col(k).cwiseQuotient(var);
    post.post_mean[static_cast<std::size_t>(k)] = llt.solve(rhs);
    post.post_cov[static_cast<std::size_t>(k)] = llt.solve(MatrixXd::Identity(dz, dz));
  }

  post.log_context_density = log_sum_exp(post.log_comp_probs);
  require(std::isfinite(post.log_context_density) && post.log_context_density > kSupportLogFloor,
          ErrorKind::OutOfSupport, "context lies outside the model support");
  post.log_comp_probs.array() -= post.log_context_density;
  post.comp_probs = post.log_comp_probs.array().exp();
  return post;
}

struct LatentSample {
  int component = 0;
  VectorXd z;
  VectorXd omega;  // flat movement vector, Omega_k z + omega_bar_k
};

inline VectorXd project_movement(const MppcaModel& model, int k, const Eigen::Ref<const VectorXd>& z) {
  const auto& comp = model.components[static_cast<std::size_t>(k)];
  return comp.omega_loading * z + comp.omega_offset;
}

template <class Rng>
LatentSample sample_movement(const MppcaModel& model, const PolicyParams& theta,
                             const Eigen::Ref<const VectorXd>& c, Rng& rng) {
  const ConditionalPosterior post = condition(model, theta, c);
  std::discrete_distribution<int> pick(post.comp_probs.data(),
                                       post.comp_probs.data() + post.comp_probs.size());
  LatentSample s;
  s.component = pick(rng);
  const auto k = static_cast<std::size_t>(s.component);
  const Eigen::LLT<MatrixXd> llt(post.post_cov[k]);
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd eps(model.latent_dim());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = normal(rng);
  s.z = post.post_mean[k] + llt.matrixL() * eps;
  s.omega = project_movement(model, s.component, s.z);
  return s;
}

namespace detail {

struct LogDensityTerms {
  double value = 0.0;
  VectorXd responsibilities;           // p_theta(j | c)
  std::vector<Gaussian> marginals;     // p_theta(c | j)
};

inline LogDensityTerms log_density_terms(const MppcaModel& model, const PolicyParams& theta,
                                         const Eigen::Ref<const VectorXd>& z, int k,
                                         const Eigen::Ref<const VectorXd>& c) {
  check_compatible(model, theta);
  require(k >= 0 && k < model.n_components(), ErrorKind::Domain, "component index out of range");
  require(z.size() == model.latent_dim() && c.size() == model.context_dim(), ErrorKind::Domain,
          "latent or context vector has wrong dimension");
  require(z.allFinite() && c.allFinite(), ErrorKind::Domain, "non-finite latent or context");

  const int k_count = model.n_components();
  const VectorXd log_pi = log_softmax(theta.logits);
  const auto& comp = model.components[static_cast<std::size_t>(k)];

  LogDensityTerms t;
  VectorXd log_terms(k_count);
  t.marginals.reserve(static_cast<std::size_t>(k_count));
  for (int j = 0; j < k_count; ++j) {
    t.marginals.push_back(context_marginal(model.components[static_cast<std::size_t>(j)],
                                           theta.mu.col(j), theta.latent_var(j)));
    log_terms(j) = log_pi(j) + t.marginals.back().log_pdf(c);
  }
  const double log_norm = log_sum_exp(log_terms);
  t.responsibilities = (log_terms.array() - log_norm).exp();

  const double log_c_given_z =
      isotropic_log_pdf(c, comp.context_loading * z + comp.context_offset, comp.noise_var);
  const VectorXd var = theta.latent_var(k);
  const VectorXd diff = z - theta.mu.col(k);
  const double log_z = -0.5 * (static_cast<double>(z.size()) * kLog2Pi + theta.log_var.col(k).sum() +
                               diff.cwiseAbs2().cwiseQuotient(var).sum());
  t.value = log_c_given_z + log_z + log_pi(k) - log_norm;
  return t;
}

}  // namespace detail

/// log p_theta(z, k | c).
inline double log_density(const MppcaModel& model, const PolicyParams& theta,
                          const Eigen::Ref<const VectorXd>& z, int k, const Eigen::Ref<const VectorXd>& c) {
  return detail::log_density_terms(model, theta, z, k, c).value;
}

/// Gradient of log p_theta(z, k | c) w.r.t. the flat theta vector.
inline VectorXd grad_log_density(const MppcaModel& model, const PolicyParams& theta,
                                 const Eigen::Ref<const VectorXd>& z, int k,
                                 const Eigen::Ref<const VectorXd>& c, double* value = nullptr) {
  const auto t = detail::log_density_terms(model, theta, z, k, c);
  if (value) *value = t.value;
  const int k_count = model.n_components();
  const auto dz = theta.latent_dim();
  VectorXd grad = VectorXd::Zero(theta.dim());

  // logits: delta_jk - p(j | c)
  grad.head(k_count) = -t.responsibilities;
  grad(k) += 1.0;

  // latent prior of the sampled component
  const VectorXd var = theta.latent_var(k);
  const VectorXd diff = z - theta.mu.col(k);
  grad.segment(theta.mu_index(k), dz) += diff.cwiseQuotient(var);
  grad.segment(theta.log_var_index(k), dz).array() +=
      -0.5 + 0.5 * diff.array().square() / var.array();

  // -log sum_j pi_j p(c | j)
  for (int j = 0; j < k_count; ++j) {
    const double r = t.responsibilities(j);
    if (r == 0.0) continue;
    const auto g = detail::context_marginal_grad(model.components[static_cast<std::size_t>(j)],
                                                 t.marginals[static_cast<std::size_t>(j)],
                                                 theta.latent_var(j), c);
    grad.segment(theta.mu_index(j), dz) -= r * g.d_mu;
    grad.segment(theta.log_var_index(j), dz) -= r * g.d_log_var;
  }
  return grad;
}

}  // namespace lampo

#endif  // LAMPO_LATENT_POLICY_HPP
