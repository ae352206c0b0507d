#ifndef LAMPO_TESTS_SUPPORT_HPP
#define LAMPO_TESTS_SUPPORT_HPP

// Shared fixtures and brute-force reference computations for the unit tests.
// Reference routines form full covariances explicitly and invert with LU, so they
// share no code path with the library.

#include "lampo/mppca.hpp"

#include <Eigen/LU>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace support {

using lampo::MatrixXd;
using lampo::VectorXd;

inline MatrixXd randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

inline VectorXd randn_vec(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  return randn(rng, n, 1, scale).col(0);
}

inline double uniform(std::mt19937_64& rng, double a, double b) {
  return std::uniform_real_distribution<double>(a, b)(rng);
}

/// Random well-conditioned model; latent prior N(0, I) unless randomize_prior.
inline lampo::MppcaModel random_model(std::mt19937_64& rng, int k, Eigen::Index dz, Eigen::Index m,
                                      Eigen::Index dc, bool randomize_prior = false) {
  lampo::MppcaModel model;
  VectorXd w(k);
  for (int i = 0; i < k; ++i) w(i) = uniform(rng, 0.2, 1.0);
  model.weights = w / w.sum();
  for (int i = 0; i < k; ++i) {
    lampo::MppcaComponent c;
    c.omega_loading = randn(rng, m, dz, 0.7);
    c.omega_offset = randn_vec(rng, m, 1.0);
    c.context_loading = randn(rng, dc, dz, 0.7);
    c.context_offset = randn_vec(rng, dc, 0.5);
    c.noise_var = uniform(rng, 0.1, 0.6);
    c.latent_mean = randomize_prior ? randn_vec(rng, dz, 0.5) : VectorXd::Zero(dz);
    c.latent_var = VectorXd::Ones(dz);
    if (randomize_prior)
      for (Eigen::Index j = 0; j < dz; ++j) c.latent_var(j) = uniform(rng, 0.4, 2.0);
    model.components.push_back(c);
  }
  return model;
}

/// log N(x | mean, cov) with an explicit LU inverse and determinant.
inline double ref_log_normal(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov) {
  const Eigen::FullPivLU<MatrixXd> lu(cov);
  const VectorXd r = x - mean;
  const double quad = r.dot(lu.inverse() * r);
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + std::log(lu.determinant()) + quad);
}

inline double ref_log_sum_exp(const VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

/// Full joint Gaussian over [z; x] for one component with prior N(mu, diag(var)).
struct JointGaussian {
  VectorXd mean;
  MatrixXd cov;
};

inline JointGaussian joint_z_x(const MatrixXd& w, const VectorXd& offset, double s2, const VectorXd& mu,
                               const VectorXd& var) {
  const auto dz = mu.size();
  const auto d = offset.size();
  const MatrixXd sz = var.asDiagonal();
  JointGaussian g;
  g.mean.resize(dz + d);
  g.mean << mu, offset + w * mu;
  g.cov.resize(dz + d, dz + d);
  g.cov.topLeftCorner(dz, dz) = sz;
  g.cov.topRightCorner(dz, d) = sz * w.transpose();
  g.cov.bottomLeftCorner(d, dz) = w * sz;
  g.cov.bottomRightCorner(d, d) = w * sz * w.transpose() + s2 * MatrixXd::Identity(d, d);
  return g;
}

/// Conditions the first `head` coordinates on the remaining ones taking value `tail`.
inline JointGaussian condition_head(const JointGaussian& g, Eigen::Index head, const VectorXd& tail) {
  const auto rest = g.mean.size() - head;
  const MatrixXd saa = g.cov.topLeftCorner(head, head);
  const MatrixXd sab = g.cov.topRightCorner(head, rest);
  const MatrixXd sbb_inv = Eigen::FullPivLU<MatrixXd>(g.cov.bottomRightCorner(rest, rest)).inverse();
  JointGaussian out;
  out.mean = g.mean.head(head) + sab * sbb_inv * (tail - g.mean.tail(rest));
  out.cov = saa - sab * sbb_inv * sab.transpose();
  return out;
}

struct Planted {
  lampo::MppcaModel model;
  MatrixXd movements;
  MatrixXd contexts;
  std::vector<int> labels;
};

/// Two well-separated components (K=2, d_z=2, m=6, d_c=2) with known parameters.
inline Planted planted_dataset(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  Planted p;
  p.model.weights = Eigen::Vector2d(0.4, 0.6);
  for (int k = 0; k < 2; ++k) {
    lampo::MppcaComponent c;
    c.omega_loading = randn(rng, 6, 2, 0.3);
    c.context_loading = randn(rng, 2, 2, 0.3);
    c.omega_offset = VectorXd::Constant(6, k == 0 ? -3.0 : 3.0) + randn_vec(rng, 6, 0.5);
    c.context_offset = VectorXd::Constant(2, k == 0 ? 2.0 : -2.0);
    c.noise_var = 0.01;
    c.latent_mean = VectorXd::Zero(2);
    c.latent_var = VectorXd::Ones(2);
    p.model.components.push_back(c);
  }
  std::discrete_distribution<int> pick({0.4, 0.6});
  std::normal_distribution<double> normal;
  p.movements.resize(n, 6);
  p.contexts.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const int k = pick(rng);
    const auto& c = p.model.components[static_cast<std::size_t>(k)];
    const VectorXd z = randn_vec(rng, 2);
    VectorXd x(8);
    x << c.omega_offset + c.omega_loading * z, c.context_offset + c.context_loading * z;
    for (int j = 0; j < 8; ++j) x(j) += std::sqrt(c.noise_var) * normal(rng);
    p.movements.row(i) = x.head(6).transpose();
    p.contexts.row(i) = x.tail(2).transpose();
    p.labels.push_back(k);
  }
  return p;
}

/// Relative error with an absolute floor, for gradient checks.
inline double rel_err(const VectorXd& a, const VectorXd& b, double floor = 1e-6) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

}  // namespace support

#endif  // LAMPO_TESTS_SUPPORT_HPP
