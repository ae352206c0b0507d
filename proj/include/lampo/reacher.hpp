#ifndef LAMPO_REACHER_HPP
#define LAMPO_REACHER_HPP

// Planar two-link reacher (unit links) with clustered goal contexts, an analytic-IK
// minimum-jerk demonstrator and an optional circular obstacle.

#include "lampo/common.hpp"
#include "lampo/promp.hpp"

#include <Eigen/Geometry>

#include <numbers>
#include <optional>
#include <random>
#include <vector>

namespace lampo::reacher {

using Eigen::Vector2d;

enum class Elbow { Up, Down };  // Up: q2 <= 0, Down: q2 >= 0

struct Obstacle {
  Vector2d center = Vector2d::Zero();
  double radius = 0.0;
};

struct ReacherConfig {
  int n_goal_clusters = 4;
  std::vector<Vector2d> cluster_centers = {
      {1.3, 0.6}, {-0.6, 1.3}, {-1.3, -0.6}, {0.6, -1.3}};
  double cluster_std = 0.24;
  double success_radius = 0.1;
  Vector2d q_start = Vector2d(0.0, 0.0);
  std::optional<Obstacle> obstacle;
  double demo_noise_std = 0.005;
  double demo_min_duration = 1.5;
  double demo_max_duration = 2.5;
  int n_steps = 100;

  void validate() const {
    require(n_goal_clusters >= 1 && n_goal_clusters <= 4, ErrorKind::Config,
            "n_goal_clusters must be in [1, 4]");
    require(static_cast<int>(cluster_centers.size()) >= n_goal_clusters, ErrorKind::Config,
            "fewer cluster centers than n_goal_clusters");
    for (int i = 0; i < n_goal_clusters; ++i) {
      const double r = cluster_centers[static_cast<std::size_t>(i)].norm();
      require(r > 0.0 && r <= 2.0, ErrorKind::Config, "cluster center is not reachable");
    }
    require(cluster_std >= 0.0, ErrorKind::Config, "cluster_std must be >= 0");
    require(success_radius > 0.0, ErrorKind::Config, "success_radius must be > 0");
    require(demo_noise_std >= 0.0, ErrorKind::Config, "demo_noise_std must be >= 0");
    require(demo_min_duration > 0.0 && demo_max_duration >= demo_min_duration, ErrorKind::Config,
            "demo duration range is invalid");
    require(n_steps >= 2, ErrorKind::Config, "n_steps must be >= 2");
    if (obstacle) require(obstacle->radius > 0.0, ErrorKind::Config, "obstacle radius must be > 0");
  }
};

inline Vector2d elbow_position(const Vector2d& q) { return {std::cos(q(0)), std::sin(q(0))}; }

inline Vector2d forward_kinematics(const Vector2d& q) {
  return {std::cos(q(0)) + std::cos(q(0) + q(1)), std::sin(q(0)) + std::sin(q(0) + q(1))};
}

inline constexpr double kReachTolerance = 1e-9;

inline Vector2d inverse_kinematics(const Vector2d& p, Elbow elbow) {
  const double r2 = p.squaredNorm();
  const double r = std::sqrt(r2);
  require(r > 0.0 && r <= 2.0 + kReachTolerance, ErrorKind::Domain, "target is not reachable");
  const double cos_q2 = std::clamp((r2 - 2.0) / 2.0, -1.0, 1.0);
  double q2 = std::acos(cos_q2);
  if (elbow == Elbow::Up) q2 = -q2;
  const double q1 = std::atan2(p(1), p(0)) - std::atan2(std::sin(q2), 1.0 + std::cos(q2));
  return {q1, q2};
}

inline Elbow cluster_elbow(int cluster) { return cluster % 2 == 0 ? Elbow::Down : Elbow::Up; }

inline double wrap_near(double angle, double reference) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  return angle - two_pi * std::round((angle - reference) / two_pi);
}

inline int nearest_cluster(const ReacherConfig& config, const Vector2d& goal) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < config.n_goal_clusters; ++i) {
    const double d = (config.cluster_centers[static_cast<std::size_t>(i)] - goal).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

/// IK solution on the given branch, with q1 unwrapped to stay continuous across a cluster.
inline Vector2d goal_posture(const ReacherConfig& config, const Vector2d& goal, int cluster, Elbow elbow) {
  const Vector2d center = config.cluster_centers[static_cast<std::size_t>(cluster)];
  const Vector2d ref = inverse_kinematics(center, elbow);
  const double ref_q1 = wrap_near(ref(0), config.q_start(0));
  Vector2d q = inverse_kinematics(goal, elbow);
  q(0) = wrap_near(q(0), ref_q1);
  return q;
}

struct SampledContext {
  Vector2d goal;
  int cluster = 0;
};

inline constexpr double kContextMargin = 0.05;
inline constexpr int kMaxContextRejections = 1000;

template <class Rng>
SampledContext sample_context(const ReacherConfig& config, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, config.n_goal_clusters - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int attempt = 0; attempt < kMaxContextRejections; ++attempt) {
    const int cluster = pick(rng);
    Vector2d goal = config.cluster_centers[static_cast<std::size_t>(cluster)];
    if (config.cluster_std > 0.0) {
      const double dx = normal(rng);
      const double dy = normal(rng);
      goal += config.cluster_std * Vector2d(dx, dy);
    }
    const double r = goal.norm();
    if (r >= kContextMargin && r <= 2.0 - kContextMargin) return {goal, cluster};
  }
  throw Error(ErrorKind::Config, "context sampler rejected 1000 consecutive goals");
}

/// Minimum-jerk blend 10 s^3 - 15 s^4 + 6 s^5 and its derivative w.r.t. s.
inline double min_jerk(double s) { return s * s * s * (10.0 + s * (-15.0 + 6.0 * s)); }
inline double min_jerk_rate(double s) { return 30.0 * s * s * (1.0 - s) * (1.0 - s); }

/// Joint-space minimum-jerk trajectory with n samples over [0, duration].
inline Trajectory min_jerk_trajectory(const Vector2d& q0, const Vector2d& q1, double duration, int n) {
  Trajectory traj;
  traj.times = VectorXd::LinSpaced(n, 0.0, duration);
  traj.positions.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(n - 1);
    traj.positions.row(i) = (q0 + (q1 - q0) * min_jerk(s)).transpose();
  }
  return traj;
}

inline double segment_point_distance(const Vector2d& a, const Vector2d& b, const Vector2d& p) {
  const Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

inline bool arm_collides(const Vector2d& q, const Obstacle& obstacle) {
  const Vector2d elbow = elbow_position(q);
  const Vector2d ee = forward_kinematics(q);
  return segment_point_distance(Vector2d::Zero(), elbow, obstacle.center) < obstacle.radius ||
         segment_point_distance(elbow, ee, obstacle.center) < obstacle.radius;
}

inline bool trajectory_collides(const ReacherConfig& config, const Trajectory& traj) {
  if (!config.obstacle) return false;
  for (Eigen::Index i = 0; i < traj.n_samples(); ++i)
    if (arm_collides(traj.positions.row(i).transpose(), *config.obstacle)) return true;
  return false;
}

/// Demonstration on an explicit branch: minimum-jerk from q_start to the IK posture
/// plus a smooth perturbation that vanishes (with its slope) at both ends.
template <class Rng>
Trajectory demonstrate_on_branch(const ReacherConfig& config, const Vector2d& goal, int cluster, Elbow elbow,
                                 Rng& rng) {
  const Vector2d q_goal = goal_posture(config, goal, cluster, elbow);
  std::uniform_real_distribution<double> dur(config.demo_min_duration, config.demo_max_duration);
  const double duration = dur(rng);
  Trajectory traj = min_jerk_trajectory(config.q_start, q_goal, duration, config.n_steps);
  if (config.demo_noise_std > 0.0) {
    std::normal_distribution<double> normal(0.0, config.demo_noise_std);
    const Vector2d amp(normal(rng), normal(rng));
    for (int i = 0; i < config.n_steps; ++i) {
      const double s = static_cast<double>(i) / static_cast<double>(config.n_steps - 1);
      const double bump = 16.0 * s * s * (1.0 - s) * (1.0 - s);
      traj.positions.row(i) += (amp * bump).transpose();
    }
  }
  return traj;
}

template <class Rng>
Trajectory demonstrate(const ReacherConfig& config, const Vector2d& goal, Rng& rng) {
  const int cluster = nearest_cluster(config, goal);
  return demonstrate_on_branch(config, goal, cluster, cluster_elbow(cluster), rng);
}

/// Collision-aware demonstrator: the cluster's branch first, then the other one.
template <class Rng>
std::optional<Trajectory> demonstrate_collision_free(const ReacherConfig& config, const Vector2d& goal,
                                                     Rng& rng) {
  const int cluster = nearest_cluster(config, goal);
  const Elbow primary = cluster_elbow(cluster);
  for (const Elbow elbow : {primary, primary == Elbow::Up ? Elbow::Down : Elbow::Up}) {
    Trajectory traj = demonstrate_on_branch(config, goal, cluster, elbow, rng);
    if (!trajectory_collides(config, traj)) return traj;
  }
  return std::nullopt;
}

struct EpisodeResult {
  double reward = 0.0;
  bool success = false;
  Vector2d final_ee = Vector2d::Zero();
  bool collided = false;
};

inline constexpr double kCollisionReward = -2.0;

/// Reward is -||FK(q_final) - goal||; a collision forces failure and reward -2.
inline EpisodeResult evaluate(const ReacherConfig& config, const BasisConfig& basis,
                              const Eigen::Ref<const VectorXd>& omega, const Vector2d& goal) {
  const Trajectory traj = decode(MovementParams::from_flat(omega), basis, config.n_steps);
  require(traj.n_joints() == 2, ErrorKind::Domain, "reacher movements must have 2 joints");
  EpisodeResult out;
  out.final_ee = forward_kinematics(traj.positions.row(traj.n_samples() - 1).transpose());
  out.collided = trajectory_collides(config, traj);
  const double dist = (out.final_ee - goal).norm();
  if (out.collided) {
    out.reward = kCollisionReward;
    out.success = false;
  } else {
    out.reward = -dist;
    out.success = dist < config.success_radius;
  }
  return out;
}

}  // namespace lampo::reacher

#endif  // LAMPO_REACHER_HPP
