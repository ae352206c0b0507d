#include "lampo/reacher.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace lampo;
using namespace lampo::reacher;

namespace {

constexpr double kPi = std::numbers::pi;

// Segment-circle intersection from the roots of |a + t (b - a) - c|^2 = r^2.
bool oracle_segment_hits(const Vector2d& a, const Vector2d& b, const Vector2d& c, double r) {
  const Vector2d d = b - a, f = a - c;
  const double qa = d.dot(d), qb = 2.0 * f.dot(d), qc = f.dot(f) - r * r;
  if (qc < 0.0) return true;  // start inside
  const double disc = qb * qb - 4.0 * qa * qc;
  if (disc < 0.0) return false;
  const double t1 = (-qb - std::sqrt(disc)) / (2.0 * qa);
  const double t2 = (-qb + std::sqrt(disc)) / (2.0 * qa);
  return (t1 >= 0.0 && t1 <= 1.0) || (t2 >= 0.0 && t2 <= 1.0);
}

bool oracle_arm_hits(const Vector2d& q, const Obstacle& o) {
  const Vector2d elbow(std::cos(q(0)), std::sin(q(0)));
  const Vector2d ee = elbow + Vector2d(std::cos(q(0) + q(1)), std::sin(q(0) + q(1)));
  return oracle_segment_hits(Vector2d::Zero(), elbow, o.center, o.radius) ||
         oracle_segment_hits(elbow, ee, o.center, o.radius);
}

ReacherConfig quiet_config() {
  ReacherConfig cfg;
  cfg.demo_noise_std = 0.0;
  return cfg;
}

}  // namespace

TEST(Kinematics, ForwardExamples) {
  const Vector2d a = forward_kinematics({0.0, 0.0});
  EXPECT_NEAR(a(0), 2.0, 1e-15);
  EXPECT_NEAR(a(1), 0.0, 1e-15);
  const Vector2d b = forward_kinematics({kPi / 2, 0.0});
  EXPECT_NEAR(b(0), 0.0, 1e-15);
  EXPECT_NEAR(b(1), 2.0, 1e-15);
  const Vector2d c = forward_kinematics({0.0, kPi});
  EXPECT_NEAR(c.norm(), 0.0, 1e-15);
}

TEST(Kinematics, InverseExamples) {
  for (Elbow e : {Elbow::Up, Elbow::Down}) {
    const Vector2d q = inverse_kinematics({2.0, 0.0}, e);
    EXPECT_NEAR(q(0), 0.0, 1e-12);
    EXPECT_NEAR(q(1), 0.0, 1e-12);
    const Vector2d p = inverse_kinematics({0.0, 2.0}, e);
    EXPECT_NEAR(p(0), kPi / 2, 1e-12);
    EXPECT_NEAR(p(1), 0.0, 1e-12);
  }
}

TEST(Kinematics, ForwardOfInverseOnGrid) {
  int checked = 0;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      const double r = 0.05 + (2.0 - 0.05) * i / 9.0;
      const double phi = -kPi + 2.0 * kPi * j / 10.0;
      const Vector2d p(r * std::cos(phi), r * std::sin(phi));
      for (Elbow e : {Elbow::Up, Elbow::Down}) {
        const Vector2d q = inverse_kinematics(p, e);
        EXPECT_LT((forward_kinematics(q) - p).norm(), 1e-9) << p.transpose();
        if (e == Elbow::Up) EXPECT_LE(q(1), 0.0);
        else EXPECT_GE(q(1), 0.0);
      }
      ++checked;
    }
  EXPECT_EQ(checked, 100);
}

TEST(Kinematics, ForwardOfInverseRandomInterior) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  int n = 0;
  while (n < 10000) {
    const Vector2d p(u(rng), u(rng));
    if (p.norm() < 1e-6 || p.norm() > 2.0 - 1e-6) continue;
    for (Elbow e : {Elbow::Up, Elbow::Down}) ASSERT_LT((forward_kinematics(inverse_kinematics(p, e)) - p).norm(), 1e-9);
    ++n;
  }
}

TEST(Kinematics, UnreachableTargetsRejected) {
  for (const Vector2d p : {Vector2d(2.5, 0.0), Vector2d(0.0, 0.0), Vector2d(1.5, 1.5)}) {
    try {
      inverse_kinematics(p, Elbow::Up);
      FAIL() << p.transpose();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Domain);
    }
  }
  EXPECT_NO_THROW(inverse_kinematics({2.0 + 5e-10, 0.0}, Elbow::Down));
}

TEST(Context, ZeroSpreadGivesCenter) {
  ReacherConfig cfg;
  cfg.cluster_std = 0.0;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const SampledContext c = sample_context(cfg, rng);
    EXPECT_EQ(c.goal, cfg.cluster_centers[static_cast<std::size_t>(c.cluster)]);
  }
}

TEST(Context, EmpiricalMeanOfSingleCluster) {
  ReacherConfig cfg;
  cfg.n_goal_clusters = 1;
  cfg.cluster_centers = {{1.0, 1.0}};
  cfg.cluster_std = 0.1;
  std::mt19937_64 rng(3);
  const int n = 10000;
  Vector2d sum = Vector2d::Zero();
  for (int i = 0; i < n; ++i) sum += sample_context(cfg, rng).goal;
  const Vector2d mean = sum / n;
  const double se = 0.1 / std::sqrt(static_cast<double>(n));
  EXPECT_LT(std::abs(mean(0) - 1.0), 3 * se);
  EXPECT_LT(std::abs(mean(1) - 1.0), 3 * se);
}

TEST(Context, GoalsRespectMargin) {
  ReacherConfig cfg;
  cfg.cluster_std = 0.6;
  std::mt19937_64 rng(4);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 20000; ++i) {
    const SampledContext c = sample_context(cfg, rng);
    EXPECT_LE(c.goal.norm(), 1.95);
    EXPECT_GE(c.goal.norm(), 0.05);
    ++counts[static_cast<std::size_t>(c.cluster)];
  }
  for (int k : counts) EXPECT_NEAR(k, 5000, 4 * std::sqrt(20000 * 0.25 * 0.75));
}

TEST(Context, PersistentRejectionIsConfigError) {
  ReacherConfig cfg;
  cfg.n_goal_clusters = 1;
  cfg.cluster_centers = {{1.99, 0.0}};
  cfg.cluster_std = 0.0;
  std::mt19937_64 rng(5);
  try {
    sample_context(cfg, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Config, ValidationErrors) {
  ReacherConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.n_goal_clusters = 5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = ReacherConfig{};
  cfg.cluster_centers[0] = {3.0, 0.0};
  EXPECT_THROW(cfg.validate(), Error);
  cfg = ReacherConfig{};
  cfg.success_radius = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = ReacherConfig{};
  cfg.obstacle = Obstacle{{1.0, 0.0}, -0.1};
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Demonstrate, EndpointReachesGoal) {
  ReacherConfig cfg;
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const SampledContext c = sample_context(cfg, rng);
    const Trajectory t = demonstrate(cfg, c.goal, rng);
    EXPECT_EQ(t.n_samples(), 100);
    EXPECT_GE(t.duration(), 1.5);
    EXPECT_LE(t.duration(), 2.5);
    const Vector2d ee = forward_kinematics(t.positions.row(t.n_samples() - 1).transpose());
    EXPECT_LT((ee - c.goal).norm(), cfg.success_radius * 0.1);
  }
}

TEST(Demonstrate, ZeroNoiseEndsAtIkPosture) {
  const ReacherConfig cfg = quiet_config();
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const SampledContext c = sample_context(cfg, rng);
    const Trajectory t = demonstrate(cfg, c.goal, rng);
    const Vector2d q_end = t.positions.row(t.n_samples() - 1).transpose();
    const Vector2d ik = inverse_kinematics(c.goal, cluster_elbow(nearest_cluster(cfg, c.goal)));
    EXPECT_NEAR(q_end(1), ik(1), 1e-9);
    const double dq1 = std::remainder(q_end(0) - ik(0), 2.0 * kPi);
    EXPECT_NEAR(dq1, 0.0, 1e-9);
    EXPECT_LT((forward_kinematics(q_end) - c.goal).norm(), 1e-9);
    EXPECT_EQ(t.positions.row(0), cfg.q_start.transpose());
  }
}

TEST(Demonstrate, BranchAlternatesAcrossClusters) {
  const ReacherConfig cfg = quiet_config();
  std::mt19937_64 rng(8);
  for (int k = 0; k < 4; ++k) {
    const Vector2d goal = cfg.cluster_centers[static_cast<std::size_t>(k)];
    const Trajectory t = demonstrate(cfg, goal, rng);
    const double q2 = t.positions(t.n_samples() - 1, 1);
    if (k % 2 == 0) EXPECT_GT(q2, 0.0) << k;
    else EXPECT_LT(q2, 0.0) << k;
  }
}

TEST(Demonstrate, ZeroNoiseFollowsMinimumJerkPolynomial) {
  const ReacherConfig cfg = quiet_config();
  std::mt19937_64 rng(9);
  const Vector2d goal(1.2, 0.4);
  const Trajectory t = demonstrate(cfg, goal, rng);
  const Vector2d q0 = cfg.q_start;
  const Vector2d q1 = t.positions.row(t.n_samples() - 1).transpose();
  for (Eigen::Index i = 0; i < t.n_samples(); ++i) {
    const double s = static_cast<double>(i) / (t.n_samples() - 1);
    const double blend = 10 * std::pow(s, 3) - 15 * std::pow(s, 4) + 6 * std::pow(s, 5);
    EXPECT_LT((t.positions.row(i).transpose() - (q0 + (q1 - q0) * blend)).norm(), 1e-12);
  }
}

TEST(Demonstrate, EndpointVelocityVanishes) {
  ReacherConfig cfg;
  cfg.n_steps = 1000;
  std::mt19937_64 rng(10);
  for (int i = 0; i < 50; ++i) {
    const SampledContext c = sample_context(cfg, rng);
    const Trajectory t = demonstrate(cfg, c.goal, rng);
    const auto n = t.n_samples();
    const double dt = t.times(1) - t.times(0);
    const double v0 = (t.positions.row(1) - t.positions.row(0)).norm() / dt;
    const double v1 = (t.positions.row(n - 1) - t.positions.row(n - 2)).norm() / dt;
    EXPECT_LT(v0, 1e-3);
    EXPECT_LT(v1, 1e-3);
  }
  // analytic rate of the blend
  EXPECT_EQ(min_jerk_rate(0.0), 0.0);
  EXPECT_EQ(min_jerk_rate(1.0), 0.0);
}

TEST(Demonstrate, RegenerationIsBitIdentical) {
  ReacherConfig cfg;
  auto run = [&] {
    std::mt19937_64 rng(11);
    std::vector<Trajectory> out;
    for (int i = 0; i < 20; ++i) out.push_back(demonstrate(cfg, sample_context(cfg, rng).goal, rng));
    return out;
  };
  const auto a = run(), b = run();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].times, b[i].times);
    EXPECT_EQ(a[i].positions, b[i].positions);
  }
}

TEST(Demonstrate, CollisionFreeDemosAvoidObstacle) {
  ReacherConfig cfg;
  cfg.n_goal_clusters = 1;
  cfg.obstacle = Obstacle{{0.4, 0.2}, 0.12};
  std::mt19937_64 rng(12);
  int produced = 0;
  for (int i = 0; i < 100; ++i) {
    const SampledContext c = sample_context(cfg, rng);
    const auto t = demonstrate_collision_free(cfg, c.goal, rng);
    if (!t) continue;
    ++produced;
    for (Eigen::Index s = 0; s < t->n_samples(); ++s)
      EXPECT_FALSE(oracle_arm_hits(t->positions.row(s).transpose(), *cfg.obstacle));
  }
  EXPECT_GT(produced, 50);
}

TEST(Collision, StraightArmThroughCenter) {
  const Obstacle o{{1.5, 0.0}, 0.1};
  EXPECT_TRUE(arm_collides({0.0, 0.0}, o));
  EXPECT_TRUE(oracle_arm_hits({0.0, 0.0}, o));
  EXPECT_FALSE(arm_collides({kPi / 2, 0.0}, o));
}

TEST(Collision, MatchesSegmentCircleOracle) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> ang(-kPi, kPi), pos(-1.8, 1.8), rad(0.05, 0.4);
  int hits = 0;
  for (int i = 0; i < 20000; ++i) {
    const Vector2d q(ang(rng), ang(rng));
    const Obstacle o{{pos(rng), pos(rng)}, rad(rng)};
    // skip near-tangent configurations where the two formulas may round differently
    const Vector2d elbow = elbow_position(q), ee = forward_kinematics(q);
    const double d = std::min(segment_point_distance(Vector2d::Zero(), elbow, o.center),
                              segment_point_distance(elbow, ee, o.center));
    if (std::abs(d - o.radius) < 1e-9) continue;
    const bool expected = oracle_arm_hits(q, o);
    EXPECT_EQ(arm_collides(q, o), expected) << i;
    hits += expected;
  }
  EXPECT_GT(hits, 1000);
}

TEST(Evaluate, EncodedDemoSucceeds) {
  const ReacherConfig cfg = quiet_config();
  const BasisConfig basis;
  std::mt19937_64 rng(14);
  for (int i = 0; i < 100; ++i) {
    const SampledContext c = sample_context(cfg, rng);
    const MovementParams p = encode(demonstrate(cfg, c.goal, rng), basis);
    const EpisodeResult r = evaluate(cfg, basis, p.flat(), c.goal);
    EXPECT_TRUE(r.success);
    EXPECT_FALSE(r.collided);
    EXPECT_GT(r.reward, -cfg.success_radius);
  }
}

TEST(Evaluate, RewardIsNegativeDistance) {
  const ReacherConfig cfg;
  const BasisConfig basis;
  std::mt19937_64 rng(15);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    VectorXd omega(41);
    for (Eigen::Index j = 0; j < 40; ++j) omega(j) = n(rng);
    omega(40) = 2.0;
    const Trajectory t = decode(MovementParams::from_flat(omega), basis, cfg.n_steps);
    const Vector2d ee = forward_kinematics(t.positions.row(t.n_samples() - 1).transpose());
    const Vector2d goal(n(rng), n(rng));
    const EpisodeResult r = evaluate(cfg, basis, omega, goal);
    EXPECT_EQ(r.final_ee, ee);
    EXPECT_NEAR(r.reward, -(ee - goal).norm(), 1e-15);
    EXPECT_EQ(r.success, (ee - goal).norm() < cfg.success_radius);
    // goal on the end effector: the maximal reward
    const EpisodeResult at = evaluate(cfg, basis, omega, ee);
    EXPECT_EQ(at.reward, 0.0);
    EXPECT_TRUE(at.success);
  }
}

TEST(Evaluate, CollisionForcesFailure) {
  ReacherConfig cfg;
  cfg.obstacle = Obstacle{{1.5, 0.0}, 0.1};
  const BasisConfig basis;
  // the arm rests fully extended along x for the whole movement
  VectorXd omega = VectorXd::Zero(41);
  omega(40) = 2.0;
  const EpisodeResult r = evaluate(cfg, basis, omega, Vector2d(2.0, 0.0));
  EXPECT_TRUE(r.collided);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.reward, kCollisionReward);
  cfg.obstacle.reset();
  const EpisodeResult free = evaluate(cfg, basis, omega, Vector2d(2.0, 0.0));
  EXPECT_FALSE(free.collided);
  EXPECT_TRUE(free.success);
}
