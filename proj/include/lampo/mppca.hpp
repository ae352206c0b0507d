#ifndef LAMPO_MPPCA_HPP
#define LAMPO_MPPCA_HPP

// Mixture of probabilistic principal component analyzers over stacked
// (movement, context) vectors x = [omega; c]. Component k generates
//   x = W_k z + offset_k + noise,  z ~ N(mu_k, diag(Sigma_k)),  noise ~ N(0, sigma2_k I)
// with W_k = [Omega_k; C_k]. EM fits with mu_k = 0 and Sigma_k = I.

#include "lampo/common.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace lampo {

inline constexpr double kNoiseFloor = 1e-8;

struct MppcaComponent {
  MatrixXd omega_loading;   // m x d_z
  VectorXd omega_offset;    // m
  MatrixXd context_loading; // d_c x d_z
  VectorXd context_offset;  // d_c
  double noise_var = 1.0;   // sigma_k^2
  VectorXd latent_mean;     // d_z
  VectorXd latent_var;      // d_z, diagonal of Sigma_k

  MatrixXd joint_loading() const {
    MatrixXd w(omega_loading.rows() + context_loading.rows(), omega_loading.cols());
    w << omega_loading, context_loading;
    return w;
  }

  VectorXd joint_offset() const {
    VectorXd b(omega_offset.size() + context_offset.size());
    b << omega_offset, context_offset;
    return b;
  }

  /// Marginal of x under this component: N(offset + W mu, W Sigma W^T + sigma2 I).
  VectorXd marginal_mean() const { return joint_offset() + joint_loading() * latent_mean; }

  MatrixXd marginal_cov() const {
    const MatrixXd w = joint_loading();
    MatrixXd cov = w * latent_var.asDiagonal() * w.transpose();
    cov.diagonal().array() += noise_var;
    return cov;
  }
};

struct MppcaModel {
  VectorXd weights;  // pi, on the simplex
  std::vector<MppcaComponent> components;

  int n_components() const { return static_cast<int>(components.size()); }
  Eigen::Index movement_dim() const { return components.front().omega_offset.size(); }
  Eigen::Index context_dim() const { return components.front().context_offset.size(); }
  Eigen::Index latent_dim() const { return components.front().latent_mean.size(); }
  Eigen::Index joint_dim() const { return movement_dim() + context_dim(); }

  void validate() const {
    require(!components.empty(), ErrorKind::Config, "model has no components");
    require(weights.size() == n_components(), ErrorKind::Config,
            "mixture weight count does not match component count");
    require((weights.array() >= 0.0).all() && std::abs(weights.sum() - 1.0) < 1e-9,
            ErrorKind::Config, "mixture weights must lie on the simplex");
    const auto m = movement_dim();
    const auto dc = context_dim();
    const auto dz = latent_dim();
    for (const auto& c : components) {
      require(c.omega_loading.rows() == m && c.omega_loading.cols() == dz &&
                  c.omega_offset.size() == m && c.context_loading.rows() == dc &&
                  c.context_loading.cols() == dz && c.context_offset.size() == dc &&
                  c.latent_mean.size() == dz && c.latent_var.size() == dz,
              ErrorKind::Config, "inconsistent component dimensions");
      require(c.noise_var >= kNoiseFloor && std::isfinite(c.noise_var), ErrorKind::Config,
              "noise variance below floor");
      require((c.latent_var.array() > 0.0).all(), ErrorKind::Config,
              "latent variances must be positive");
    }
  }
};

namespace detail {

/// log N(x | mean, A A^T + s2 I) via the Woodbury identity; A is D x q.
class LowRankGaussian {
 public:
  LowRankGaussian(VectorXd mean, const MatrixXd& a, double s2)
      : mean_(std::move(mean)), a_(a), s2_(s2) {
    const auto q = a.cols();
    MatrixXd inner = a.transpose() * a;
    inner.diagonal().array() += s2;  // M = s2 I + A^T A
    inner_llt_.compute(inner);
    require(inner_llt_.info() == Eigen::Success, ErrorKind::Conditioning,
            "component covariance is singular");
    double log_det_inner = 0.0;
    const MatrixXd l = inner_llt_.matrixL();
    for (Eigen::Index i = 0; i < q; ++i) log_det_inner += 2.0 * std::log(l(i, i));
    const auto d = static_cast<double>(mean_.size());
    // det(AA^T + s2 I) = s2^(D-q) det(M)
    log_det_ = (d - static_cast<double>(q)) * std::log(s2) + log_det_inner;
    log_norm_ = -0.5 * (d * kLog2Pi + log_det_);
  }

  double log_pdf(const Eigen::Ref<const VectorXd>& x) const {
    const VectorXd r = x - mean_;
    const VectorXd atr = a_.transpose() * r;
    const double maha = (r.squaredNorm() - atr.dot(inner_llt_.solve(atr))) / s2_;
    return log_norm_ - 0.5 * maha;
  }

 private:
  VectorXd mean_;
  MatrixXd a_;
  double s2_;
  Eigen::LLT<MatrixXd> inner_llt_;
  double log_det_ = 0.0;
  double log_norm_ = 0.0;
};

inline LowRankGaussian component_marginal(const MppcaComponent& c) {
  const MatrixXd a = c.joint_loading() * c.latent_var.cwiseSqrt().asDiagonal();
  return {c.marginal_mean(), a, c.noise_var};
}

}  // namespace detail

/// Per-component log(pi_k) + log N(x | k); rows = points, cols = components.
inline MatrixXd component_log_terms(const MppcaModel& model, const Eigen::Ref<const MatrixXd>& data) {
  const auto k_count = model.n_components();
  MatrixXd out(data.rows(), k_count);
  for (int k = 0; k < k_count; ++k) {
    const auto g = detail::component_marginal(model.components[static_cast<std::size_t>(k)]);
    const double log_pi = std::log(model.weights(k));
    for (Eigen::Index n = 0; n < data.rows(); ++n) out(n, k) = log_pi + g.log_pdf(data.row(n).transpose());
  }
  return out;
}

inline double log_joint_density(const MppcaModel& model, const Eigen::Ref<const VectorXd>& x) {
  require(x.size() == model.joint_dim(), ErrorKind::Domain, "joint vector has wrong dimension");
  require(x.allFinite(), ErrorKind::Domain, "joint vector contains non-finite entries");
  const MatrixXd terms = component_log_terms(model, x.transpose());
  return log_sum_exp(terms.row(0).transpose());
}

inline double joint_density(const MppcaModel& model, const Eigen::Ref<const VectorXd>& x) {
  return std::exp(log_joint_density(model, x));
}

/// Sum of per-point log densities; data rows are stacked [omega; c] vectors.
inline double log_likelihood(const MppcaModel& model, const Eigen::Ref<const MatrixXd>& data) {
  require(data.cols() == model.joint_dim(), ErrorKind::Domain, "data has wrong dimension");
  require(data.allFinite(), ErrorKind::Domain, "data contains non-finite entries");
  const MatrixXd terms = component_log_terms(model, data);
  double total = 0.0;
  for (Eigen::Index n = 0; n < terms.rows(); ++n) total += log_sum_exp(terms.row(n).transpose());
  return total;
}

inline VectorXd responsibilities(const MppcaModel& model, const Eigen::Ref<const VectorXd>& x) {
  require(x.size() == model.joint_dim(), ErrorKind::Domain, "joint vector has wrong dimension");
  const VectorXd terms = component_log_terms(model, x.transpose()).row(0).transpose();
  return (terms.array() - log_sum_exp(terms)).exp();
}

struct EmOptions {
  int max_iters = 500;
  double rel_tol = 1e-6;
  std::uint64_t seed = 0;
  int kmeans_iters = 100;
  int kmeans_restarts = 4;

  void validate() const {
    require(max_iters >= 1, ErrorKind::Config, "max_iters must be >= 1");
    require(rel_tol > 0.0, ErrorKind::Config, "rel_tol must be positive");
    require(kmeans_iters >= 1 && kmeans_restarts >= 1, ErrorKind::Config,
            "k-means settings must be positive");
  }
};

struct EmResult {
  MppcaModel model;
  std::vector<double> log_likelihood_trace;  // after initialization, then after each iteration
  std::vector<int> reinitialized_at;         // iterations where a collapsed component was reseeded
  int iterations = 0;
  bool converged = false;
};

namespace detail {

/// Weighted PPCA maximum-likelihood fit (closed form) for one component.
inline void fit_ppca_component(const Eigen::Ref<const MatrixXd>& data, const Eigen::Ref<const VectorXd>& resp,
                               Eigen::Index m, Eigen::Index latent_dim, MppcaComponent& out) {
  const double mass = resp.sum();
  const auto d = data.cols();
  const VectorXd mean = (data.transpose() * resp) / mass;
  const MatrixXd centered = data.rowwise() - mean.transpose();
  const MatrixXd cov =
      (centered.transpose() * resp.asDiagonal() * centered) / mass;

  const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  // eigenvalues ascending; the top latent_dim directions span the loading
  const VectorXd evals = eig.eigenvalues().cwiseMax(0.0);
  const auto discarded = d - latent_dim;
  double s2 = discarded > 0 ? evals.head(discarded).sum() / static_cast<double>(discarded) : 0.0;
  s2 = std::max(s2, kNoiseFloor);

  MatrixXd w(d, latent_dim);
  for (Eigen::Index j = 0; j < latent_dim; ++j) {
    const auto idx = d - 1 - j;
    const double scale = std::sqrt(std::max(evals(idx) - s2, 0.0));
    w.col(j) = eig.eigenvectors().col(idx) * scale;
  }

  out.omega_loading = w.topRows(m);
  out.context_loading = w.bottomRows(d - m);
  out.omega_offset = mean.head(m);
  out.context_offset = mean.tail(d - m);
  out.noise_var = s2;
  out.latent_mean = VectorXd::Zero(latent_dim);
  out.latent_var = VectorXd::Ones(latent_dim);
}

/// Lloyd's k-means on standardized data with k-means++ seeding; returns labels.
inline std::vector<int> kmeans_labels(const Eigen::Ref<const MatrixXd>& data, int k, const EmOptions& opts) {
  const auto n = data.rows();
  VectorXd mean = data.colwise().mean().transpose();
  VectorXd scale = ((data.rowwise() - mean.transpose()).array().square().colwise().sum() /
                    static_cast<double>(n))
                       .sqrt()
                       .transpose();
  for (Eigen::Index j = 0; j < scale.size(); ++j)
    if (!(scale(j) > 1e-12)) scale(j) = 1.0;
  const MatrixXd x = (data.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();

  std::mt19937_64 rng(opts.seed);
  std::vector<int> best_labels(static_cast<std::size_t>(n), 0);
  double best_inertia = std::numeric_limits<double>::infinity();

  for (int restart = 0; restart < opts.kmeans_restarts; ++restart) {
    MatrixXd centers(k, x.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centers.row(0) = x.row(pick(rng));
    VectorXd d2(n);
    for (int c = 1; c < k; ++c) {
      for (Eigen::Index i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j) best = std::min(best, (x.row(i) - centers.row(j)).squaredNorm());
        d2(i) = best;
      }
      const double total = d2.sum();
      Eigen::Index chosen = pick(rng);
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        for (Eigen::Index i = 0; i < n; ++i) {
          target -= d2(i);
          if (target <= 0.0) {
            chosen = i;
            break;
          }
        }
      }
      centers.row(c) = x.row(chosen);
    }

    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    double inertia = 0.0;
    for (int iter = 0; iter < opts.kmeans_iters; ++iter) {
      bool changed = false;
      inertia = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        int arg = 0;
        double best = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          const double dist = (x.row(i) - centers.row(c)).squaredNorm();
          if (dist < best) {
            best = dist;
            arg = c;
          }
        }
        inertia += best;
        if (labels[static_cast<std::size_t>(i)] != arg) {
          labels[static_cast<std::size_t>(i)] = arg;
          changed = true;
        }
      }
      if (!changed) break;
      MatrixXd sums = MatrixXd::Zero(k, x.cols());
      VectorXd counts = VectorXd::Zero(k);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
        counts(labels[static_cast<std::size_t>(i)]) += 1.0;
      }
      for (int c = 0; c < k; ++c)
        if (counts(c) > 0.0) centers.row(c) = sums.row(c) / counts(c);
    }
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_labels = labels;
    }
  }
  return best_labels;
}

}  // namespace detail

/// Stacks movement and context rows into one N x (m + d_c) matrix.
inline MatrixXd stack_joint(const Eigen::Ref<const MatrixXd>& movements, const Eigen::Ref<const MatrixXd>& contexts) {
  require(movements.rows() == contexts.rows(), ErrorKind::Domain,
          "movement and context counts differ");
  MatrixXd x(movements.rows(), movements.cols() + contexts.cols());
  x << movements, contexts;
  return x;
}

/// Expectation-maximization fit. Each M-step is the exact responsibility-weighted PPCA
/// maximizer, so the log-likelihood is monotone except at collapse reinitializations.
inline EmResult fit_em(const Eigen::Ref<const MatrixXd>& movements, const Eigen::Ref<const MatrixXd>& contexts,
                       int n_components, int latent_dim, const EmOptions& opts = {}) {
  opts.validate();
  const MatrixXd data = stack_joint(movements, contexts);
  const auto n = data.rows();
  const auto d = data.cols();
  const auto m = movements.cols();
  require(n_components >= 1 && latent_dim >= 1, ErrorKind::Config,
          "component count and latent dimension must be positive");
  require(n >= static_cast<Eigen::Index>(n_components) * (latent_dim + 1), ErrorKind::Config,
          "too few data points for the requested component count and latent dimension");
  require(latent_dim < d, ErrorKind::Config, "latent dimension must be below the data dimension");
  require(data.allFinite(), ErrorKind::Domain, "training data contains non-finite entries");

  EmResult result;
  MppcaModel& model = result.model;
  model.components.resize(static_cast<std::size_t>(n_components));
  model.weights.resize(n_components);

  // initialization: hard k-means assignments, then per-cluster PCA
  const std::vector<int> labels = detail::kmeans_labels(data, n_components, opts);
  MatrixXd resp = MatrixXd::Zero(n, n_components);
  for (Eigen::Index i = 0; i < n; ++i) resp(i, labels[static_cast<std::size_t>(i)]) = 1.0;

  auto m_step = [&](int iteration) {
    const VectorXd mass = resp.colwise().sum().transpose();
    bool reseeded = false;
    for (int k = 0; k < n_components; ++k) {
      if (mass(k) < 1e-6 * static_cast<double>(n)) {
        // collapsed: reseed at the point the current fit explains worst
        Eigen::Index worst = 0;
        if (iteration > 0) {
          const MatrixXd terms = component_log_terms(model, data);
          double lowest = std::numeric_limits<double>::infinity();
          for (Eigen::Index i = 0; i < n; ++i) {
            const double lp = log_sum_exp(terms.row(i).transpose());
            if (lp < lowest) {
              lowest = lp;
              worst = i;
            }
          }
        }
        VectorXd r = VectorXd::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i)
          r(i) = std::exp(-0.5 * (data.row(i) - data.row(worst)).squaredNorm() /
                          std::max(data.rowwise().squaredNorm().mean(), 1.0));
        r(worst) = 1.0;
        resp.col(k) = r * (static_cast<double>(n) / static_cast<double>(n_components) / r.sum());
        reseeded = true;
      }
    }
    if (reseeded) result.reinitialized_at.push_back(iteration);
    const VectorXd new_mass = resp.colwise().sum().transpose();
    model.weights = new_mass / new_mass.sum();
    for (int k = 0; k < n_components; ++k)
      detail::fit_ppca_component(data, resp.col(k), m, latent_dim,
                                 model.components[static_cast<std::size_t>(k)]);
  };

  m_step(0);
  double ll = log_likelihood(model, data);
  result.log_likelihood_trace.push_back(ll);

  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    const MatrixXd terms = component_log_terms(model, data);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lse = log_sum_exp(terms.row(i).transpose());
      resp.row(i) = (terms.row(i).array() - lse).exp();
    }
    m_step(iter);
    const double next = log_likelihood(model, data);
    result.log_likelihood_trace.push_back(next);
    result.iterations = iter;
    const bool reseeded = !result.reinitialized_at.empty() && result.reinitialized_at.back() == iter;
    const double change = std::abs(next - ll);
    ll = next;
    if (!reseeded && change <= opts.rel_tol * std::max(1.0, std::abs(ll))) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace lampo

#endif  // LAMPO_MPPCA_HPP
