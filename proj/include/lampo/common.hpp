#ifndef LAMPO_COMMON_HPP
#define LAMPO_COMMON_HPP

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lampo {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Error categories surfaced to the CLI as a stable machine-readable tag.
enum class ErrorKind {
  Domain,       // argument outside the operation's domain
  Config,       // invalid configuration or dimensions
  OutOfSupport, // context carries no probability mass under the model
  Conditioning, // a factorization failed
  Io,           // file could not be read or written
  Format,       // file parsed but content is malformed or version mismatch
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Config: return "config";
    case ErrorKind::OutOfSupport: return "out_of_support";
    case ErrorKind::Conditioning: return "conditioning";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)

inline bool all_finite(const Eigen::Ref<const MatrixXd>& m) { return m.allFinite(); }

/// log(sum(exp(v))) without overflow; returns -inf for an empty or all -inf input.
inline double log_sum_exp(const Eigen::Ref<const VectorXd>& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double hi = v.maxCoeff();
  if (!std::isfinite(hi)) return hi;
  return hi + std::log((v.array() - hi).exp().sum());
}

inline VectorXd softmax(const Eigen::Ref<const VectorXd>& logits) {
  VectorXd p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

inline VectorXd log_softmax(const Eigen::Ref<const VectorXd>& logits) {
  return logits.array() - log_sum_exp(logits);
}

/// Dense Gaussian in moment form with a cached Cholesky factor.
class Gaussian {
 public:
  Gaussian(VectorXd mean, const MatrixXd& cov) : mean_(std::move(mean)), llt_(cov) {
    require(llt_.info() == Eigen::Success, ErrorKind::Conditioning,
            "covariance is not positive definite");
    const auto& l = llt_.matrixL();
    log_det_ = 0.0;
    for (Eigen::Index i = 0; i < mean_.size(); ++i) log_det_ += 2.0 * std::log(l(i, i));
  }

  const VectorXd& mean() const { return mean_; }
  MatrixXd cov() const { return llt_.reconstructedMatrix(); }
  MatrixXd precision() const {
    return llt_.solve(MatrixXd::Identity(mean_.size(), mean_.size()));
  }
  double log_det() const { return log_det_; }
  Eigen::Index dim() const { return mean_.size(); }
  const Eigen::LLT<MatrixXd>& llt() const { return llt_; }

  double log_pdf(const Eigen::Ref<const VectorXd>& x) const {
    const VectorXd r = x - mean_;
    const VectorXd w = llt_.matrixL().solve(r);
    return -0.5 * (static_cast<double>(dim()) * kLog2Pi + log_det_ + w.squaredNorm());
  }

 private:
  VectorXd mean_;
  Eigen::LLT<MatrixXd> llt_;
  double log_det_ = 0.0;
};

/// KL(N(m0, S0) || N(m1, S1)) in closed form.
inline double gaussian_kl(const Gaussian& p, const Gaussian& q) {
  const auto d = static_cast<double>(p.dim());
  const MatrixXd s0 = p.cov();
  const double trace_term = q.llt().solve(s0).trace();
  const VectorXd diff = q.mean() - p.mean();
  const double maha = diff.dot(q.llt().solve(diff));
  return 0.5 * (trace_term + maha - d + q.log_det() - p.log_det());
}

/// Log-density of an isotropic Gaussian N(x | mean, var * I).
inline double isotropic_log_pdf(const Eigen::Ref<const VectorXd>& x,
                                const Eigen::Ref<const VectorXd>& mean, double var) {
  const auto d = static_cast<double>(x.size());
  return -0.5 * (d * (kLog2Pi + std::log(var)) + (x - mean).squaredNorm() / var);
}

inline std::vector<double> to_std(const Eigen::Ref<const VectorXd>& v) {
  return {v.data(), v.data() + v.size()};
}

inline VectorXd from_std(std::span<const double> v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace lampo

#endif  // LAMPO_COMMON_HPP
