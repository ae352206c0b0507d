#ifndef LAMPO_PROMP_HPP
#define LAMPO_PROMP_HPP

// Deterministic trajectory <-> parameter-vector codec over normalized Gaussian
// radial basis functions. Each joint gets n_basis weights; a final slot holds the
// movement duration so the latent model can learn timing jointly with shape.

#include "lampo/common.hpp"

#include <algorithm>
#include <optional>

namespace lampo {

struct Trajectory {
  VectorXd times;      // seconds, strictly increasing
  MatrixXd positions;  // rows = samples, cols = joints, radians

  Eigen::Index n_samples() const { return times.size(); }
  Eigen::Index n_joints() const { return positions.cols(); }
  double duration() const { return times(times.size() - 1) - times(0); }

  void validate() const {
    require(times.size() >= 2, ErrorKind::Domain, "trajectory needs at least 2 samples");
    require(positions.rows() == times.size(), ErrorKind::Domain,
            "trajectory positions/times length mismatch");
    require(positions.cols() >= 1, ErrorKind::Domain, "trajectory has no joints");
    require(times.allFinite() && positions.allFinite(), ErrorKind::Domain,
            "trajectory contains non-finite entries");
    require(times(0) >= 0.0, ErrorKind::Domain, "trajectory times must start at t >= 0");
    for (Eigen::Index i = 1; i < times.size(); ++i)
      require(times(i) > times(i - 1), ErrorKind::Domain,
              "trajectory times must be strictly increasing");
  }
};

struct BasisConfig {
  int n_basis = 20;
  std::optional<double> width;  // unset: spacing-matched 1/(n_basis-1)
  double ridge_lambda = 1e-6;

  double effective_width() const {
    if (width) return *width;
    return n_basis > 1 ? 1.0 / static_cast<double>(n_basis - 1) : 1.0;
  }

  VectorXd centers() const {
    if (n_basis == 1) return VectorXd::Constant(1, 0.5);
    return VectorXd::LinSpaced(n_basis, 0.0, 1.0);
  }

  void validate() const {
    require(n_basis >= 1, ErrorKind::Config, "n_basis must be >= 1");
    require(effective_width() > 0.0 && std::isfinite(effective_width()), ErrorKind::Config,
            "basis width must be positive");
    require(ridge_lambda >= 0.0 && std::isfinite(ridge_lambda), ErrorKind::Config,
            "ridge_lambda must be nonnegative");
  }
};

/// Basis weights (joint-major: all weights of joint 0, then joint 1, ...) plus duration.
struct MovementParams {
  VectorXd weights;
  double duration_raw = 0.0;

  Eigen::Index size() const { return weights.size() + 1; }

  /// Flat vector of length d_joints*n_basis + 1, duration last.
  VectorXd flat() const {
    VectorXd out(size());
    out.head(weights.size()) = weights;
    out(weights.size()) = duration_raw;
    return out;
  }

  static MovementParams from_flat(const Eigen::Ref<const VectorXd>& v) {
    require(v.size() >= 2, ErrorKind::Domain, "movement vector too short");
    require(v.allFinite(), ErrorKind::Domain, "movement vector contains non-finite entries");
    return {v.head(v.size() - 1), v(v.size() - 1)};
  }
};

inline constexpr double kMinDuration = 0.1;
inline constexpr double kMaxDuration = 30.0;

/// Normalized Gaussian features phi_i(s) = g_i(s) / sum_j g_j(s).
inline VectorXd rbf_features(double phase, const BasisConfig& config) {
  require(phase >= 0.0 && phase <= 1.0, ErrorKind::Domain, "phase must lie in [0, 1]");
  const double w = config.effective_width();
  const VectorXd exponents =
      -(phase - config.centers().array()).square() / (2.0 * w * w);
  // shift by the max exponent so the nearest basis is exactly exp(0)
  VectorXd g = (exponents.array() - exponents.maxCoeff()).exp();
  return g / g.sum();
}

/// Feature matrix with one row per phase.
inline MatrixXd rbf_design(const Eigen::Ref<const VectorXd>& phases, const BasisConfig& config) {
  MatrixXd phi(phases.size(), config.n_basis);
  for (Eigen::Index i = 0; i < phases.size(); ++i)
    phi.row(i) = rbf_features(std::clamp(phases(i), 0.0, 1.0), config).transpose();
  return phi;
}

/// Ridge regression of each joint onto the basis at phases (t - t0) / duration.
inline MovementParams encode(const Trajectory& traj, const BasisConfig& config) {
  traj.validate();
  config.validate();
  const double duration = traj.duration();
  require(duration > 0.0, ErrorKind::Domain, "trajectory has zero duration");

  const VectorXd phases = (traj.times.array() - traj.times(0)) / duration;
  const MatrixXd phi = rbf_design(phases, config);
  MatrixXd gram = phi.transpose() * phi;
  gram.diagonal().array() += config.ridge_lambda;
  const Eigen::LDLT<MatrixXd> solver(gram);
  require(solver.info() == Eigen::Success, ErrorKind::Conditioning,
          "basis normal equations are singular; increase ridge_lambda");
  const MatrixXd w = solver.solve(phi.transpose() * traj.positions);  // n_basis x joints

  MovementParams params;
  params.weights.resize(w.size());
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    params.weights.segment(j * config.n_basis, config.n_basis) = w.col(j);
  params.duration_raw = duration;
  return params;
}

inline double clamp_duration(double raw, double t_min = kMinDuration, double t_max = kMaxDuration) {
  return std::clamp(raw, t_min, t_max);
}

inline Trajectory decode(const MovementParams& params, const BasisConfig& config, int n_steps,
                         double t_min = kMinDuration, double t_max = kMaxDuration) {
  config.validate();
  require(n_steps >= 2, ErrorKind::Domain, "decode needs n_steps >= 2");
  require(params.weights.size() > 0 && params.weights.size() % config.n_basis == 0,
          ErrorKind::Domain, "weight count is not a multiple of n_basis");
  require(params.weights.allFinite() && std::isfinite(params.duration_raw), ErrorKind::Domain,
          "movement parameters contain non-finite entries");

  const Eigen::Index n_joints = params.weights.size() / config.n_basis;
  const double duration = clamp_duration(params.duration_raw, t_min, t_max);
  const VectorXd phases = VectorXd::LinSpaced(n_steps, 0.0, 1.0);
  const MatrixXd phi = rbf_design(phases, config);
  const Eigen::Map<const MatrixXd> w(params.weights.data(), config.n_basis, n_joints);

  Trajectory traj;
  traj.times = phases * duration;
  traj.positions = phi * w;
  return traj;
}

}  // namespace lampo

#endif  // LAMPO_PROMP_HPP
