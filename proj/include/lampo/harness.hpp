#ifndef LAMPO_HARNESS_HPP
#define LAMPO_HARNESS_HPP

// End-to-end experiment workflow: demonstrations -> imitation -> iterative
// improvement -> evaluation, with every artifact written to one output directory.
//
//   demos.jsonl          dataset (one demonstration per line)
//   model.json           fitted model with the initial policy
//   policies.jsonl       theta_0 .. theta_N, one per line
//   buffer.jsonl         every collected episode
//   learning_curve.csv   one row per improvement iteration
//   diagnostics.csv      solver and importance-weight diagnostics per iteration
//   policy_final.json    model file carrying the final policy
//   eval.json            evaluation summaries

#include "lampo/common.hpp"
#include "lampo/io.hpp"
#include "lampo/lampo_rl.hpp"
#include "lampo/latent_policy.hpp"
#include "lampo/mppca.hpp"
#include "lampo/optimizer.hpp"
#include "lampo/promp.hpp"
#include "lampo/reacher.hpp"

#include <boost/math/distributions/beta.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace lampo::harness {

using nlohmann::json;
namespace fs = std::filesystem;

struct ModelConfig {
  int K = 4;
  int d_z = 6;
  EmOptions em;
};

struct RlConfig {
  LampoConfig lampo;
  int n_iterations = 15;
  int eval_episodes = 200;
};

struct ExperimentConfig {
  reacher::ReacherConfig env;
  BasisConfig basis;
  ModelConfig model;
  RlConfig rl;
  int n_demos = 200;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  void validate() const {
    env.validate();
    basis.validate();
    model.em.validate();
    rl.lampo.validate();
    require(model.K >= 1, ErrorKind::Config, "model.K must be >= 1");
    require(model.d_z >= 1, ErrorKind::Config, "model.d_z must be >= 1");
    require(rl.n_iterations >= 1, ErrorKind::Config, "rl.n_iterations must be >= 1");
    require(rl.eval_episodes >= 1, ErrorKind::Config, "rl.eval_episodes must be >= 1");
    require(n_demos >= 2, ErrorKind::Config, "n_demos must be >= 2");
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  require(j.is_object(), ErrorKind::Config, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const auto a : allowed) known = known || key == a;
    require(known, ErrorKind::Config, "unknown key '" + where + key + "'");
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline Eigen::Vector2d read_point(const json& j, const std::string& what) {
  const auto v = j.get<std::vector<double>>();
  require(v.size() == 2, ErrorKind::Config, what + " must have 2 entries");
  return {v[0], v[1]};
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  using detail::check_keys;
  using detail::read_opt;
  ExperimentConfig cfg;
  try {
    check_keys(j, {"env", "basis", "model", "rl", "n_demos", "seed", "output_dir"}, "");
    if (j.contains("env")) {
      const auto& e = j.at("env");
      check_keys(e,
                 {"n_goal_clusters", "cluster_centers", "cluster_std", "success_radius", "q_start", "obstacle",
                  "demo_noise_std", "demo_min_duration", "demo_max_duration", "n_steps"},
                 "env.");
      read_opt(e, "n_goal_clusters", cfg.env.n_goal_clusters);
      if (e.contains("cluster_centers")) {
        cfg.env.cluster_centers.clear();
        for (const auto& p : e.at("cluster_centers")) cfg.env.cluster_centers.push_back(detail::read_point(p, "env.cluster_centers"));
      }
      read_opt(e, "cluster_std", cfg.env.cluster_std);
      read_opt(e, "success_radius", cfg.env.success_radius);
      if (e.contains("q_start")) cfg.env.q_start = detail::read_point(e.at("q_start"), "env.q_start");
      if (e.contains("obstacle") && !e.at("obstacle").is_null()) {
        const auto& o = e.at("obstacle");
        check_keys(o, {"center", "radius"}, "env.obstacle.");
        reacher::Obstacle obs;
        obs.center = detail::read_point(o.at("center"), "env.obstacle.center");
        obs.radius = o.at("radius").get<double>();
        cfg.env.obstacle = obs;
      }
      read_opt(e, "demo_noise_std", cfg.env.demo_noise_std);
      read_opt(e, "demo_min_duration", cfg.env.demo_min_duration);
      read_opt(e, "demo_max_duration", cfg.env.demo_max_duration);
      read_opt(e, "n_steps", cfg.env.n_steps);
    }
    if (j.contains("basis")) {
      const auto& b = j.at("basis");
      check_keys(b, {"n_basis", "width", "ridge_lambda"}, "basis.");
      read_opt(b, "n_basis", cfg.basis.n_basis);
      if (b.contains("width") && !b.at("width").is_null()) cfg.basis.width = b.at("width").get<double>();
      read_opt(b, "ridge_lambda", cfg.basis.ridge_lambda);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, {"K", "d_z", "em"}, "model.");
      read_opt(m, "K", cfg.model.K);
      read_opt(m, "d_z", cfg.model.d_z);
      if (m.contains("em")) {
        const auto& em = m.at("em");
        check_keys(em, {"max_iters", "rel_tol", "seed", "kmeans_iters", "kmeans_restarts"}, "model.em.");
        read_opt(em, "max_iters", cfg.model.em.max_iters);
        read_opt(em, "rel_tol", cfg.model.em.rel_tol);
        read_opt(em, "seed", cfg.model.em.seed);
        read_opt(em, "kmeans_iters", cfg.model.em.kmeans_iters);
        read_opt(em, "kmeans_restarts", cfg.model.em.kmeans_restarts);
      }
    }
    if (j.contains("rl")) {
      const auto& r = j.at("rl");
      check_keys(r, {"gamma", "chi", "n_per_iter", "n_iterations", "eval_episodes"}, "rl.");
      read_opt(r, "gamma", cfg.rl.lampo.gamma);
      read_opt(r, "chi", cfg.rl.lampo.chi);
      read_opt(r, "n_per_iter", cfg.rl.lampo.n_per_iter);
      read_opt(r, "n_iterations", cfg.rl.n_iterations);
      read_opt(r, "eval_episodes", cfg.rl.eval_episodes);
    }
    read_opt(j, "n_demos", cfg.n_demos);
    read_opt(j, "seed", cfg.seed);
    read_opt(j, "output_dir", cfg.output_dir);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("bad config value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& path) {
  const std::string text = io::read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---- random streams ------------------------------------------------------

enum class Stream : std::uint32_t { Demo = 1, Em = 2, Rollout = 3, Eval = 4 };

/// Independent generator for (seed, purpose, a, b); identical inputs give identical streams.
inline std::mt19937_64 make_rng(std::uint64_t seed, Stream tag, std::uint64_t a = 0, std::uint64_t b = 0) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), static_cast<std::uint32_t>(tag), lo(a), hi(a), lo(b), hi(b)};
  return std::mt19937_64(seq);
}

// ---- demonstrations ------------------------------------------------------

inline constexpr int kMaxDemoAttempts = 1000;

inline std::vector<io::DemoRecord> generate_demos(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<io::DemoRecord> out;
  out.reserve(static_cast<std::size_t>(cfg.n_demos));
  for (int i = 0; i < cfg.n_demos; ++i) {
    auto rng = make_rng(cfg.seed, Stream::Demo, static_cast<std::uint64_t>(i));
    bool done = false;
    for (int attempt = 0; attempt < kMaxDemoAttempts && !done; ++attempt) {
      const auto ctx = reacher::sample_context(cfg.env, rng);
      std::optional<Trajectory> traj;
      if (cfg.env.obstacle)
        traj = reacher::demonstrate_collision_free(cfg.env, ctx.goal, rng);
      else
        traj = reacher::demonstrate(cfg.env, ctx.goal, rng);
      if (!traj) continue;
      out.push_back({ctx.goal, ctx.cluster, std::move(*traj)});
      done = true;
    }
    require(done, ErrorKind::Config, "no collision-free demonstration found");
  }
  return out;
}

// ---- imitation -----------------------------------------------------------

struct ImitationResult {
  MppcaModel model;
  PolicyParams theta0;
  EmResult em;
  double heldout_log_likelihood = 0.0;  // mean per held-out record, model fit on the rest
  int heldout_count = 0;
};

inline void encode_dataset(const std::vector<io::DemoRecord>& records, const BasisConfig& basis,
                           MatrixXd& movements, MatrixXd& contexts) {
  require(!records.empty(), ErrorKind::Domain, "dataset is empty");
  const auto dc = records.front().context.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const VectorXd w = encode(records[i].trajectory, basis).flat();
    require(records[i].context.size() == dc, ErrorKind::Format, "records have mixed context sizes");
    if (i == 0) {
      movements.resize(static_cast<Eigen::Index>(records.size()), w.size());
      contexts.resize(static_cast<Eigen::Index>(records.size()), dc);
    }
    require(w.size() == movements.cols(), ErrorKind::Format, "records have mixed joint counts");
    movements.row(static_cast<Eigen::Index>(i)) = w.transpose();
    contexts.row(static_cast<Eigen::Index>(i)) = records[i].context.transpose();
  }
}

inline EmOptions em_options(const ExperimentConfig& cfg) {
  EmOptions em = cfg.model.em;
  auto rng = make_rng(cfg.seed, Stream::Em, cfg.model.em.seed);
  em.seed = rng();
  return em;
}

inline ImitationResult imitate(const ExperimentConfig& cfg, const std::vector<io::DemoRecord>& records) {
  cfg.validate();
  MatrixXd movements;
  MatrixXd contexts;
  encode_dataset(records, cfg.basis, movements, contexts);
  const EmOptions em = em_options(cfg);
  const auto n = movements.rows();

  ImitationResult out;
  // every tenth record is held out for the reported likelihood
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
  for (Eigen::Index i = 0; i < n; ++i) (i % 10 == 9 ? test : train).push_back(i);
  if (!test.empty() && static_cast<int>(train.size()) > cfg.model.K) {
    const MatrixXd mt = movements(train, Eigen::all);
    const MatrixXd ct = contexts(train, Eigen::all);
    const EmResult fit = fit_em(mt, ct, cfg.model.K, cfg.model.d_z, em);
    const MatrixXd held = stack_joint(movements(test, Eigen::all), contexts(test, Eigen::all));
    out.heldout_log_likelihood = log_likelihood(fit.model, held) / static_cast<double>(test.size());
    out.heldout_count = static_cast<int>(test.size());
  }
  out.em = fit_em(movements, contexts, cfg.model.K, cfg.model.d_z, em);
  out.model = out.em.model;
  out.theta0 = initial_policy(out.model);
  return out;
}

// ---- rollouts ------------------------------------------------------------

inline constexpr int kMaxSupportResamples = 1000;

struct Rollout {
  Episode episode;
  reacher::EpisodeResult result;
  int resampled = 0;  // contexts skipped as out of the model support
};

template <class Rng>
Rollout rollout(const ExperimentConfig& cfg, const MppcaModel& model, const PolicyParams& theta, Rng& rng) {
  Rollout out;
  for (int attempt = 0; attempt < kMaxSupportResamples; ++attempt) {
    const auto ctx = reacher::sample_context(cfg.env, rng);
    LatentSample s;
    try {
      s = sample_movement(model, theta, ctx.goal, rng);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::OutOfSupport) throw;
      ++out.resampled;
      continue;
    }
    out.result = reacher::evaluate(cfg.env, cfg.basis, s.omega, ctx.goal);
    out.episode.context = ctx.goal;
    out.episode.component = s.component;
    out.episode.z = s.z;
    out.episode.omega = s.omega;
    out.episode.reward = out.result.reward;
    return out;
  }
  throw Error(ErrorKind::OutOfSupport, "no in-support context after 1000 resamples");
}

// ---- evaluation ----------------------------------------------------------

struct Interval {
  double low = 0.0;
  double high = 1.0;
};

/// Exact (Clopper-Pearson) two-sided interval for a binomial proportion.
inline Interval binomial_interval(int successes, int trials, double confidence = 0.95) {
  require(trials >= 1 && successes >= 0 && successes <= trials, ErrorKind::Domain, "invalid binomial counts");
  const double alpha = 1.0 - confidence;
  const double x = successes;
  const double n = trials;
  Interval ci;
  if (successes > 0) ci.low = boost::math::quantile(boost::math::beta_distribution<>(x, n - x + 1.0), alpha / 2.0);
  if (successes < trials)
    ci.high = boost::math::quantile(boost::math::beta_distribution<>(x + 1.0, n - x), 1.0 - alpha / 2.0);
  return ci;
}

struct EvalSummary {
  int episodes = 0;
  int successes = 0;
  double mean_reward = 0.0;
  double success_rate = 0.0;
  Interval ci;
  int resampled = 0;
};

inline json summary_json(const EvalSummary& s) {
  return {{"episodes", s.episodes},     {"successes", s.successes},
          {"mean_reward", s.mean_reward}, {"success_rate", s.success_rate},
          {"ci95_low", s.ci.low},         {"ci95_high", s.ci.high},
          {"resampled_contexts", s.resampled}};
}

/// Fresh-context rollouts without learning. Episode i draws from its own stream, so two
/// policies evaluated with the same seed see the same contexts.
inline EvalSummary evaluate_policy(const ExperimentConfig& cfg, const MppcaModel& model, const PolicyParams& theta,
                                   int n_episodes) {
  require(n_episodes >= 1, ErrorKind::Config, "n_episodes must be >= 1");
  EvalSummary s;
  s.episodes = n_episodes;
  double total = 0.0;
  for (int i = 0; i < n_episodes; ++i) {
    auto rng = make_rng(cfg.seed, Stream::Eval, static_cast<std::uint64_t>(i));
    const Rollout r = rollout(cfg, model, theta, rng);
    total += r.result.reward;
    s.successes += r.result.success ? 1 : 0;
    s.resampled += r.resampled;
  }
  s.mean_reward = total / n_episodes;
  s.success_rate = static_cast<double>(s.successes) / n_episodes;
  s.ci = binomial_interval(s.successes, n_episodes);
  return s;
}

// ---- improvement loop ----------------------------------------------------

struct LearningCurveRow {
  int iteration = 0;
  double mean_reward = 0.0;
  double success_rate = 0.0;
  double J_hat = 0.0;
  double eta = 0.0;
  double mean_g = 0.0;
  double ess = 0.0;
  double wall_time_s = 0.0;
};

struct IterationDiagnostics {
  int iteration = 0;
  bool accepted = false;
  std::string solver_status;
  int solver_iterations = 0;
  double kkt_residual = 0.0;
  double nu = 0.0;
  int clamped = 0;
  int resampled_contexts = 0;
  double objective_before = 0.0;
  double objective_after = 0.0;
};

struct ImproveRun {
  std::vector<LearningCurveRow> curve;
  std::vector<IterationDiagnostics> diagnostics;
  ExperienceBuffer buffer;
  std::vector<int> episode_success;
  PolicyParams final_theta;
};

/// Solver settings for the per-iteration policy update.
inline SolveOptions improve_solve_options() {
  SolveOptions opts;
  opts.max_iters = 100;
  opts.max_step = 1.0;
  return opts;
}

inline ImproveRun run_improvement(const ExperimentConfig& cfg, const MppcaModel& model, const PolicyParams& theta0,
                                  const std::function<void(const LearningCurveRow&, const IterationDiagnostics&)>&
                                      on_iteration = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  ImproveRun run;
  PolicyParams theta = theta0;
  run.buffer.append_policy(model, theta);
  const int n = cfg.rl.lampo.n_per_iter;

  for (int t = 0; t < cfg.rl.n_iterations; ++t) {
    LearningCurveRow row;
    IterationDiagnostics diag;
    row.iteration = t;
    diag.iteration = t;
    int successes = 0;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      auto rng = make_rng(cfg.seed, Stream::Rollout, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(i));
      Rollout r = rollout(cfg, model, theta, rng);
      r.episode.policy_index = t;
      total += r.result.reward;
      successes += r.result.success ? 1 : 0;
      diag.resampled_contexts += r.resampled;
      run.episode_success.push_back(r.result.success ? 1 : 0);
      run.buffer.append_episode(model, std::move(r.episode));
    }
    row.mean_reward = total / n;
    row.success_rate = static_cast<double>(successes) / n;

    const ImproveResult step = improve(model, run.buffer, theta, theta0, cfg.rl.lampo, improve_solve_options());
    theta = step.theta;
    run.buffer.append_policy(model, theta);

    row.J_hat = step.j_hat;
    row.eta = step.eta;
    row.mean_g = step.mean_g;
    row.ess = step.ess;
    row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    diag.accepted = step.accepted;
    diag.solver_status = std::string(to_string(step.report.status));
    diag.solver_iterations = step.report.iterations;
    diag.kkt_residual = step.report.kkt_residual;
    diag.nu = step.nu;
    diag.clamped = step.clamped;
    diag.objective_before = step.objective_before;
    diag.objective_after = step.objective_after;
    run.curve.push_back(row);
    run.diagnostics.push_back(diag);
    if (on_iteration) on_iteration(row, diag);
  }
  run.final_theta = theta;
  return run;
}

// ---- artifacts -----------------------------------------------------------

inline constexpr const char* kDemosFile = "demos.jsonl";
inline constexpr const char* kModelFile = "model.json";
inline constexpr const char* kPoliciesFile = "policies.jsonl";
inline constexpr const char* kBufferFile = "buffer.jsonl";
inline constexpr const char* kCurveFile = "learning_curve.csv";
inline constexpr const char* kDiagnosticsFile = "diagnostics.csv";
inline constexpr const char* kFinalPolicyFile = "policy_final.json";
inline constexpr const char* kEvalFile = "eval.json";

inline std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

inline std::string curve_csv(const std::vector<LearningCurveRow>& rows) {
  std::string out = "iteration,mean_reward,success_rate,J_hat,eta,mean_g,ess,wall_time_s\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + "," + format_double(r.mean_reward) + "," + format_double(r.success_rate) +
           "," + format_double(r.J_hat) + "," + format_double(r.eta) + "," + format_double(r.mean_g) + "," +
           format_double(r.ess) + "," + format_double(r.wall_time_s) + "\n";
  }
  return out;
}

inline std::string diagnostics_csv(const std::vector<IterationDiagnostics>& rows) {
  std::string out =
      "iteration,accepted,solver_status,solver_iterations,kkt_residual,nu,clamped,resampled_contexts,"
      "objective_before,objective_after\n";
  for (const auto& d : rows) {
    out += std::to_string(d.iteration) + "," + (d.accepted ? "1" : "0") + "," + d.solver_status + "," +
           std::to_string(d.solver_iterations) + "," + format_double(d.kkt_residual) + "," + format_double(d.nu) +
           "," + std::to_string(d.clamped) + "," + std::to_string(d.resampled_contexts) + "," +
           format_double(d.objective_before) + "," + format_double(d.objective_after) + "\n";
  }
  return out;
}

inline std::string policies_jsonl(const std::vector<PolicyParams>& policies) {
  std::string out;
  for (std::size_t i = 0; i < policies.size(); ++i) {
    json j = io::policy_json(policies[i]);
    j["format"] = io::kPolicyFormat;
    j["version"] = io::kFormatVersion;
    j["index"] = i;
    out += j.dump() + "\n";
  }
  return out;
}

inline std::vector<PolicyParams> load_policies(const fs::path& path, const MppcaModel& model) {
  std::istringstream in(io::read_text(path));
  std::vector<PolicyParams> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = io::parse_json(line, path.string());
    try {
      require(j.at("format").get<std::string>() == io::kPolicyFormat &&
                  j.at("version").get<int>() == io::kFormatVersion,
              ErrorKind::Format, "unexpected policy record format/version");
      require(j.at("index").get<std::size_t>() == out.size(), ErrorKind::Format, "policy records out of order");
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Format, std::string("malformed policy record: ") + e.what());
    }
    out.push_back(io::policy_from_json(j, model.n_components(), model.latent_dim()));
  }
  return out;
}

inline std::string buffer_jsonl(const ExperienceBuffer& buffer, const std::vector<int>& success) {
  std::string out;
  const auto& eps = buffer.episodes();
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const auto& e = eps[i];
    json j = {{"policy_index", e.policy_index}, {"context", io::vector_json(e.context)},
              {"component", e.component},       {"z", io::vector_json(e.z)},
              {"omega", io::vector_json(e.omega)}, {"reward", e.reward}};
    if (i < success.size()) j["success"] = success[i] != 0;
    out += j.dump() + "\n";
  }
  return out;
}

inline std::vector<Episode> load_buffer(const fs::path& path) {
  std::istringstream in(io::read_text(path));
  std::vector<Episode> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = io::parse_json(line, path.string());
    try {
      Episode e;
      e.policy_index = j.at("policy_index").get<int>();
      e.context = io::read_vector(j.at("context"), -1, "context");
      e.component = j.at("component").get<int>();
      e.z = io::read_vector(j.at("z"), -1, "z");
      e.omega = io::read_vector(j.at("omega"), -1, "omega");
      e.reward = j.at("reward").get<double>();
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw Error(ErrorKind::Format, std::string("malformed buffer record: ") + ex.what());
    }
  }
  return out;
}

/// Reads `iteration,accepted,...` back from diagnostics.csv.
inline std::vector<bool> load_accepted_flags(const fs::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  std::getline(in, line);
  std::vector<bool> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(',');
    require(a != std::string::npos && a + 1 < line.size(), ErrorKind::Format, "malformed diagnostics row");
    out.push_back(line[a + 1] == '1');
  }
  return out;
}

struct TrustRegionAudit {
  int iteration = 0;
  bool accepted = false;
  double mean_g = 0.0;  // recomputed from the persisted snapshots
};

/// Recomputes mean g between consecutive persisted policies over the contexts that were in
/// the buffer at each update.
inline std::vector<TrustRegionAudit> audit_trust_region(const fs::path& out_dir) {
  const auto model = io::load_model(out_dir / kFinalPolicyFile).model;
  const auto policies = load_policies(out_dir / kPoliciesFile, model);
  const auto episodes = load_buffer(out_dir / kBufferFile);
  const auto accepted = load_accepted_flags(out_dir / kDiagnosticsFile);
  require(policies.size() == accepted.size() + 1, ErrorKind::Format, "snapshot count does not match diagnostics");

  std::vector<TrustRegionAudit> out;
  for (std::size_t t = 0; t < accepted.size(); ++t) {
    std::vector<VectorXd> ctx;
    for (const auto& e : episodes)
      if (e.policy_index <= static_cast<int>(t)) ctx.push_back(e.context);
    require(!ctx.empty(), ErrorKind::Format, "no episodes recorded for an iteration");
    MatrixXd contexts(static_cast<Eigen::Index>(ctx.size()), ctx.front().size());
    for (std::size_t i = 0; i < ctx.size(); ++i) contexts.row(static_cast<Eigen::Index>(i)) = ctx[i].transpose();
    const double g = trust_region(model, policies[t], policies[t + 1], contexts).value;
    out.push_back({static_cast<int>(t), accepted[t], g});
  }
  return out;
}

// ---- commands ------------------------------------------------------------

inline std::vector<io::DemoRecord> cmd_gen_demos(const ExperimentConfig& cfg) {
  auto records = generate_demos(cfg);
  io::save_dataset(fs::path(cfg.output_dir) / kDemosFile, records);
  return records;
}

inline ImitationResult cmd_imitate(const ExperimentConfig& cfg) {
  const auto records = io::load_dataset(fs::path(cfg.output_dir) / kDemosFile);
  auto result = imitate(cfg, records);
  io::save_model(fs::path(cfg.output_dir) / kModelFile, result.model, result.theta0, cfg.basis);
  return result;
}

inline void check_basis(const io::ModelFile& file, const ExperimentConfig& cfg) {
  require(file.basis.n_basis == cfg.basis.n_basis && file.basis.ridge_lambda == cfg.basis.ridge_lambda &&
              file.basis.width == cfg.basis.width,
          ErrorKind::Format, "model file was built with a different basis configuration");
}

inline ImproveRun cmd_improve(const ExperimentConfig& cfg,
                              const std::function<void(const LearningCurveRow&, const IterationDiagnostics&)>&
                                  on_iteration = {}) {
  const fs::path out = cfg.output_dir;
  const auto file = io::load_model(out / kModelFile);
  check_basis(file, cfg);
  ImproveRun run = run_improvement(cfg, file.model, file.policy, on_iteration);
  io::write_text(out / kCurveFile, curve_csv(run.curve));
  io::write_text(out / kDiagnosticsFile, diagnostics_csv(run.diagnostics));
  io::write_text(out / kPoliciesFile, policies_jsonl(run.buffer.policies()));
  io::write_text(out / kBufferFile, buffer_jsonl(run.buffer, run.episode_success));
  io::save_model(out / kFinalPolicyFile, file.model, run.final_theta, cfg.basis);
  return run;
}

/// Evaluates the policy stored in `model_path` (default: final policy if present, else the model file).
inline EvalSummary cmd_eval(const ExperimentConfig& cfg, const fs::path& model_path = {}, int n_episodes = 0) {
  const fs::path out = cfg.output_dir;
  fs::path path = model_path;
  if (path.empty()) path = fs::exists(out / kFinalPolicyFile) ? out / kFinalPolicyFile : out / kModelFile;
  const auto file = io::load_model(path);
  check_basis(file, cfg);
  const EvalSummary s = evaluate_policy(cfg, file.model, file.policy, n_episodes > 0 ? n_episodes : cfg.rl.eval_episodes);
  json j = summary_json(s);
  j["model"] = path.string();
  io::write_text(out / kEvalFile, j.dump(1) + "\n");
  return s;
}

struct FullRunResult {
  ImitationResult imitation;
  ImproveRun improvement;
  EvalSummary initial;
  EvalSummary final;
};

inline FullRunResult cmd_full_run(const ExperimentConfig& cfg,
                                  const std::function<void(const LearningCurveRow&, const IterationDiagnostics&)>&
                                      on_iteration = {}) {
  FullRunResult r;
  cmd_gen_demos(cfg);
  r.imitation = cmd_imitate(cfg);
  r.improvement = cmd_improve(cfg, on_iteration);
  r.initial = evaluate_policy(cfg, r.imitation.model, r.imitation.theta0, cfg.rl.eval_episodes);
  r.final = evaluate_policy(cfg, r.imitation.model, r.improvement.final_theta, cfg.rl.eval_episodes);
  const json j = {{"imitation", summary_json(r.initial)},
                  {"final", summary_json(r.final)},
                  {"heldout_log_likelihood", r.imitation.heldout_log_likelihood}};
  io::write_text(fs::path(cfg.output_dir) / kEvalFile, j.dump(1) + "\n");
  return r;
}

}  // namespace lampo::harness

#endif  // LAMPO_HARNESS_HPP
