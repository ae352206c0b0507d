#ifndef LAMPO_OPTIMIZER_HPP
#define LAMPO_OPTIMIZER_HPP

// Sequential quadratic programming for
//     maximize f(x)  subject to  g(x) <= bound
// with caller-supplied gradients. The Lagrangian Hessian is approximated by a
// Powell-damped BFGS matrix; each subproblem has a single linearized constraint,
// so its solution is closed form. Steps are globalized with an l1 merit line search.

#include "lampo/common.hpp"

#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace lampo {

/// Value and gradient of a smooth scalar function.
struct ValueGrad {
  double value = 0.0;
  VectorXd grad;
};

using SmoothFunction = std::function<ValueGrad(const VectorXd&)>;

struct NlpProblem {
  SmoothFunction objective;   // maximized
  SmoothFunction constraint;  // feasible iff value <= bound; may be empty (unconstrained)
  double bound = 0.0;
  VectorXd x0;

  Eigen::Index dim() const { return x0.size(); }
};

struct SolveOptions {
  int max_iters = 200;
  double kkt_tol = 1e-6;
  double step_tol = 1e-10;
  double max_step = std::numeric_limits<double>::infinity();  // cap on ||d||_2 per iteration
  double feasibility_tol = 1e-4;
  int max_backtracks = 50;
  int restoration_iters = 200;
  int polish_iters = 5;  // extra steps once the KKT tolerance is met
};

enum class SolveStatus { Converged, MaxIter, Failed };

inline std::string_view to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIter: return "max_iter";
    case SolveStatus::Failed: return "failed";
  }
  return "unknown";
}

struct MeritStep {
  double before = 0.0;
  double after = 0.0;
};

struct SolveReport {
  VectorXd x_star;
  double objective = 0.0;
  double constraint = 0.0;
  double multiplier = 0.0;
  int iterations = 0;
  double kkt_residual = std::numeric_limits<double>::infinity();
  SolveStatus status = SolveStatus::Failed;
  std::string message;
  std::vector<MeritStep> merit_trace;  // merit before/after each accepted step (same penalty)
};

namespace detail {

struct Iterate {
  VectorXd x;
  double phi = 0.0;  // -f
  VectorXd grad_phi;
  double h = 0.0;    // g - bound
  VectorXd grad_h;
};

struct KktEstimate {
  double residual = std::numeric_limits<double>::infinity();
  double multiplier = 0.0;
};

/// Best of lambda = 0 and the nonnegative least-squares multiplier.
inline KktEstimate kkt_estimate(const Iterate& it) {
  const double scale = 1.0 + it.grad_phi.lpNorm<Eigen::Infinity>();
  const double infeas = std::max(0.0, it.h);
  auto residual = [&](double lambda) {
    const double stat = (it.grad_phi + lambda * it.grad_h).lpNorm<Eigen::Infinity>() / scale;
    return std::max({stat, infeas, std::abs(lambda * it.h)});
  };
  KktEstimate best{residual(0.0), 0.0};
  const double gg = it.grad_h.squaredNorm();
  if (gg > 0.0) {
    const double lambda = std::max(0.0, -it.grad_phi.dot(it.grad_h) / gg);
    const double r = residual(lambda);
    if (r < best.residual) best = {r, lambda};
  }
  return best;
}

}  // namespace detail

inline SolveReport solve(const NlpProblem& problem, const SolveOptions& opts = {}) {
  const auto n = problem.dim();
  require(n > 0, ErrorKind::Domain, "problem has no variables");
  require(problem.x0.allFinite(), ErrorKind::Domain, "start point is not finite");
  require(static_cast<bool>(problem.objective), ErrorKind::Domain, "objective is not set");
  const bool constrained = static_cast<bool>(problem.constraint);

  SolveReport report;

  auto evaluate = [&](const VectorXd& x, detail::Iterate& it) -> bool {
    it.x = x;
    const ValueGrad f = problem.objective(x);
    it.phi = -f.value;
    it.grad_phi = -f.grad;
    if (constrained) {
      const ValueGrad g = problem.constraint(x);
      it.h = g.value - problem.bound;
      it.grad_h = g.grad;
    } else {
      it.h = -1.0;
      it.grad_h = VectorXd::Zero(n);
    }
    return std::isfinite(it.phi) && std::isfinite(it.h) && it.grad_phi.size() == n &&
           it.grad_h.size() == n && it.grad_phi.allFinite() && it.grad_h.allFinite();
  };

  auto finish = [&](const detail::Iterate& it, SolveStatus status, std::string message) {
    const auto kkt = detail::kkt_estimate(it);
    report.x_star = it.x;
    report.objective = -it.phi;
    report.constraint = it.h + (constrained ? problem.bound : 0.0);
    report.multiplier = kkt.multiplier;
    report.kkt_residual = kkt.residual;
    report.status = status;
    report.message = std::move(message);
    return report;
  };

  detail::Iterate cur;
  if (!evaluate(problem.x0, cur)) {
    cur.x = problem.x0;
    report.x_star = problem.x0;
    report.message = "non-finite objective or constraint at the start point";
    return report;
  }

  // restoration: reduce the constraint alone until the start is feasible
  if (constrained && cur.h > 0.0) {
    MatrixXd h_inv = MatrixXd::Identity(n, n);
    for (int r = 0; r < opts.restoration_iters && cur.h > 0.0; ++r) {
      VectorXd d = -h_inv * cur.grad_h;
      if (d.norm() > opts.max_step) d *= opts.max_step / d.norm();
      const double slope = cur.grad_h.dot(d);
      if (!(slope < 0.0)) break;
      double alpha = 1.0;
      detail::Iterate next;
      bool ok = false;
      for (int b = 0; b < opts.max_backtracks; ++b, alpha *= 0.5) {
        if (evaluate(cur.x + alpha * d, next) && next.h <= cur.h + 1e-4 * alpha * slope) {
          ok = true;
          break;
        }
      }
      if (!ok) break;
      const VectorXd s = next.x - cur.x;
      const VectorXd y = next.grad_h - cur.grad_h;
      const double sy = s.dot(y);
      if (sy > 1e-12 * s.norm() * y.norm()) {
        const MatrixXd eye = MatrixXd::Identity(n, n);
        const double rho = 1.0 / sy;
        h_inv = (eye - rho * s * y.transpose()) * h_inv * (eye - rho * y * s.transpose()) +
                rho * s * s.transpose();
      }
      cur = std::move(next);
    }
    if (cur.h > 0.0) return finish(cur, SolveStatus::Failed, "restoration could not reach feasibility");
  }

  MatrixXd hess = MatrixXd::Identity(n, n);  // Lagrangian Hessian approximation
  bool scaled = false;
  double penalty = 0.0;
  double lambda = 0.0;

  detail::Iterate best_feasible = cur;

  // Once the tolerance is met a few more quasi-Newton steps are cheap and usually
  // gain several digits; the best converged iterate is kept.
  bool polishing = false;
  int polish_left = 0;
  detail::Iterate converged_it;
  double converged_res = std::numeric_limits<double>::infinity();
  auto stop = [&](const detail::Iterate& it, SolveStatus status, std::string message) {
    if (polishing) return finish(converged_it, SolveStatus::Converged, "kkt tolerance reached");
    return finish(it, status, std::move(message));
  };

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    report.iterations = iter;
    const auto kkt = detail::kkt_estimate(cur);
    if (kkt.residual < opts.kkt_tol) {
      if (!polishing) {
        polishing = true;
        polish_left = opts.polish_iters;
      }
      if (kkt.residual < converged_res) {
        converged_res = kkt.residual;
        converged_it = cur;
      }
      if (polish_left-- <= 0 || kkt.residual < 1e-3 * opts.kkt_tol)
        return finish(converged_it, SolveStatus::Converged, "kkt tolerance reached");
    }

    // subproblem: min grad_phi^T d + 0.5 d^T B d  s.t.  h + grad_h^T d <= 0
    Eigen::LLT<MatrixXd> llt(hess);
    if (llt.info() != Eigen::Success) {
      hess = MatrixXd::Identity(n, n);
      llt.compute(hess);
    }
    const VectorXd d_free = -llt.solve(cur.grad_phi);
    VectorXd d = d_free;
    lambda = 0.0;
    if (constrained) {
      const double lin = cur.h + cur.grad_h.dot(d_free);
      if (lin > 0.0) {
        const VectorXd binv_gh = llt.solve(cur.grad_h);
        const double denom = cur.grad_h.dot(binv_gh);
        if (denom > 1e-300) {
          lambda = lin / denom;
          d = d_free - lambda * binv_gh;
        }
      }
    }
    if (d.norm() > opts.max_step) d *= opts.max_step / d.norm();
    if (d.norm() < opts.step_tol) {
      const SolveStatus status = kkt.residual < 10.0 * opts.kkt_tol ? SolveStatus::Converged : SolveStatus::Failed;
      return stop(cur, status, "step below tolerance");
    }

    // l1 merit: phi + penalty * max(0, h)
    penalty = std::max(penalty, 1.5 * lambda + 1e-8);
    auto merit = [&](const detail::Iterate& it) { return it.phi + penalty * std::max(0.0, it.h); };
    const double m0 = merit(cur);
    double slope = cur.grad_phi.dot(d) - penalty * std::max(0.0, cur.h);
    if (!(slope < 0.0)) {
      // not a descent direction for the merit: fall back to scaled steepest descent
      hess = MatrixXd::Identity(n, n);
      scaled = false;
      d = -cur.grad_phi;
      if (constrained && cur.h > 0.0) d -= penalty * cur.grad_h;
      if (d.norm() > opts.max_step) d *= opts.max_step / d.norm();
      slope = cur.grad_phi.dot(d) + (constrained && cur.h > 0.0 ? penalty * cur.grad_h.dot(d) : 0.0);
      if (!(slope < 0.0)) return stop(cur, SolveStatus::Failed, "no descent direction");
    }

    detail::Iterate next;
    double alpha = 1.0;
    bool accepted = false;
    bool any_finite = false;
    for (int b = 0; b < opts.max_backtracks; ++b, alpha *= 0.5) {
      if (!evaluate(cur.x + alpha * d, next)) continue;
      any_finite = true;
      if (merit(next) <= m0 + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!any_finite) return stop(cur, SolveStatus::Failed, "non-finite objective or constraint");
      if (scaled) {
        // curvature model is stale; restart from the identity
        hess = MatrixXd::Identity(n, n);
        scaled = false;
        continue;
      }
      return stop(cur, SolveStatus::Failed, "line search failed");
    }
    report.merit_trace.push_back({m0, merit(next)});

    // damped BFGS update on the Lagrangian gradient difference
    const VectorXd s = next.x - cur.x;
    VectorXd y = (next.grad_phi + lambda * next.grad_h) - (cur.grad_phi + lambda * cur.grad_h);
    if (!scaled) {
      const double sy = s.dot(y);
      if (sy > 0.0) hess = MatrixXd::Identity(n, n) * (y.squaredNorm() / sy);
      scaled = true;
    }
    const VectorXd bs = hess * s;
    const double sbs = s.dot(bs);
    double sy = s.dot(y);
    if (sbs > 0.0) {
      if (sy < 0.2 * sbs) {
        const double t = 0.8 * sbs / (sbs - sy);
        y = t * y + (1.0 - t) * bs;
        sy = s.dot(y);
      }
      if (sy > 0.0) hess += y * y.transpose() / sy - bs * bs.transpose() / sbs;
    }

    cur = std::move(next);
    if (!constrained || cur.h <= opts.feasibility_tol) {
      if (best_feasible.h > opts.feasibility_tol || cur.phi < best_feasible.phi) best_feasible = cur;
    }
  }

  report.iterations = opts.max_iters;
  if (polishing) return finish(converged_it, SolveStatus::Converged, "kkt tolerance reached");
  const auto kkt = detail::kkt_estimate(cur);
  if (kkt.residual < opts.kkt_tol) return finish(cur, SolveStatus::Converged, "kkt tolerance reached");
  if (constrained && cur.h > opts.feasibility_tol && best_feasible.h <= opts.feasibility_tol)
    return finish(best_feasible, SolveStatus::MaxIter, "iteration limit; returning best feasible iterate");
  return finish(cur, SolveStatus::MaxIter, "iteration limit");
}

}  // namespace lampo

#endif  // LAMPO_OPTIMIZER_HPP
