// lampo command-line driver.
//
//   lampo gen-demos --config cfg.json [--seed N] [--out DIR]
//   lampo imitate   --config cfg.json
//   lampo improve   --config cfg.json [--verbose]
//   lampo eval      --config cfg.json [--model FILE] [--episodes N]
//   lampo full-run  --config cfg.json
//
// Failures print one line `error kind=<kind> message="<text>"` to stderr.

#include "lampo/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

using namespace lampo;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Io:
    case ErrorKind::Format: return 3;
    case ErrorKind::Domain:
    case ErrorKind::OutOfSupport:
    case ErrorKind::Conditioning: return 4;
  }
  return 1;
}

std::string escape(std::string s) {
  std::string out;
  for (const char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out;
}

int fail(std::string_view kind, const std::string& message, int code) {
  std::cerr << "error kind=" << kind << " message=\"" << escape(message) << "\"\n";
  return code;
}

void print_row(const harness::LearningCurveRow& r, const harness::IterationDiagnostics& d) {
  std::fprintf(stderr,
               "iter %2d  success %.3f  reward %+.4f  J_hat %+.4f  eta %.4f  mean_g %.4f  ess %.1f  %s (%s, %d it)\n",
               r.iteration, r.success_rate, r.mean_reward, r.J_hat, r.eta, r.mean_g, r.ess,
               d.accepted ? "accepted" : "rejected", d.solver_status.c_str(), d.solver_iterations);
}

void print_summary(const char* label, const harness::EvalSummary& s) {
  std::printf("%s success_rate=%.4f ci95=[%.4f,%.4f] mean_reward=%.6f episodes=%d\n", label, s.success_rate,
              s.ci.low, s.ci.high, s.mean_reward, s.episodes);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LAMPO: latent movement policy optimization on a planar reacher"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool verbose = false;
  std::string model_path;
  int episodes = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_flag("--verbose", verbose, "per-iteration progress on stderr");
  };
  auto* gen = app.add_subcommand("gen-demos", "generate the demonstration dataset");
  auto* imit = app.add_subcommand("imitate", "fit the latent model to the demonstrations");
  auto* impr = app.add_subcommand("improve", "run the policy improvement iterations");
  auto* eval = app.add_subcommand("eval", "evaluate a stored policy on fresh contexts");
  auto* full = app.add_subcommand("full-run", "gen-demos, imitate, improve and eval in sequence");
  for (auto* sub : {gen, imit, impr, eval, full}) add_common(sub);
  eval->add_option("--model", model_path, "model file (default: final policy, else model.json)");
  eval->add_option("--episodes", episodes, "number of episodes (default: rl.eval_episodes)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 64);
  }

  try {
    harness::ExperimentConfig cfg = harness::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    std::function<void(const harness::LearningCurveRow&, const harness::IterationDiagnostics&)> progress;
    if (verbose) progress = print_row;

    if (gen->parsed()) {
      const auto records = harness::cmd_gen_demos(cfg);
      std::printf("demos=%zu path=%s\n", records.size(),
                  (std::filesystem::path(cfg.output_dir) / harness::kDemosFile).c_str());
    } else if (imit->parsed()) {
      const auto r = harness::cmd_imitate(cfg);
      std::printf("heldout_log_likelihood=%.6f heldout_records=%d em_iterations=%d converged=%d\n",
                  r.heldout_log_likelihood, r.heldout_count, r.em.iterations, r.em.converged ? 1 : 0);
    } else if (impr->parsed()) {
      const auto run = harness::cmd_improve(cfg, progress);
      const auto& last = run.curve.back();
      std::printf("iterations=%zu last_success_rate=%.4f last_mean_reward=%.6f\n", run.curve.size(),
                  last.success_rate, last.mean_reward);
    } else if (eval->parsed()) {
      print_summary("eval", harness::cmd_eval(cfg, model_path, episodes));
    } else if (full->parsed()) {
      const auto r = harness::cmd_full_run(cfg, progress);
      std::printf("heldout_log_likelihood=%.6f\n", r.imitation.heldout_log_likelihood);
      print_summary("imitation", r.initial);
      print_summary("final", r.final);
    }
  } catch (const Error& e) {
    return fail(to_string(e.kind()), e.what(), exit_code(e.kind()));
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
