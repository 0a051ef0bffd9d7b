// Command-line front end: data-weight solving, scorer training, corpus
// scoring, subset selection, scaling-law fits, compute estimates, and the
// planted-fixture simulation.
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ocds/io.hpp"
#include "ocds/pipeline.hpp"
#include "ocds/scaling.hpp"
#include "ocds/types.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonFlags* flags) {
  cmd->add_option("--config", flags->config, "pipeline config file")->required();
  cmd->add_option("--seed", flags->seed, "override the global seed");
  cmd->add_option("--out", flags->out, "override the output directory");
  cmd->add_flag("--force", flags->force, "re-run every stage");
}

ocds::PipelineConfig load_pipeline(const CommonFlags& flags) {
  ocds::PipelineConfig cfg = ocds::PipelineConfig::from_file(flags.config);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.out) cfg.out_dir = *flags.out;
  if (flags.force) cfg.force = true;
  return cfg;
}

void print_manifest(const ocds::RunManifest& manifest) {
  for (const auto& s : manifest.stages) {
    if (s.skipped) {
      std::printf("%-14s skipped (inputs unchanged)\n", s.name.c_str());
    } else {
      std::printf("%-14s %8.1f ms", s.name.c_str(), s.millis);
      for (const auto& a : s.artifacts) std::printf("  %s", a.c_str());
      std::printf("\n");
    }
  }
}

int run_stage_command(const CommonFlags& flags, const std::string& stop_after) {
  ocds::PipelineConfig cfg = load_pipeline(flags);
  ocds::RunManifest manifest = ocds::run_pipeline(cfg, stop_after);
  print_manifest(manifest);
  return 0;
}

ocds::SimulationConfig parse_simulation(const ocds::KeyValueConfig& kv) {
  ocds::SimulationConfig sim;
  sim.fixture.vocab =
      static_cast<std::uint32_t>(kv.get_int("sim.vocab", sim.fixture.vocab));
  sim.fixture.corpus_size = static_cast<std::size_t>(
      kv.get_int("sim.corpus_size", static_cast<std::int64_t>(sim.fixture.corpus_size)));
  sim.fixture.seq_len = static_cast<std::size_t>(
      kv.get_int("sim.seq_len", static_cast<std::int64_t>(sim.fixture.seq_len)));
  sim.fixture.downstream_size = static_cast<std::size_t>(kv.get_int(
      "sim.downstream_size", static_cast<std::int64_t>(sim.fixture.downstream_size)));
  sim.fixture.corrupt_fraction =
      kv.get_double("sim.corrupt_fraction", sim.fixture.corrupt_fraction);
  sim.fixture.next_prob = kv.get_double("sim.next_prob", sim.fixture.next_prob);
  sim.fixture.graded = kv.get_bool("sim.graded", sim.fixture.graded);
  sim.eta = kv.get_double("sim.eta", sim.eta);
  sim.alpha = kv.get_double("sim.alpha", sim.alpha);
  sim.inner_steps = static_cast<int>(kv.get_int("sim.inner_steps", sim.inner_steps));
  sim.exact_outer_epochs = static_cast<int>(
      kv.get_int("sim.outer_epochs", sim.exact_outer_epochs));
  sim.pretrain_steps =
      static_cast<int>(kv.get_int("sim.pretrain_steps", sim.pretrain_steps));
  sim.checkpoint_count =
      static_cast<int>(kv.get_int("sim.checkpoints", sim.checkpoint_count));
  sim.eval_steps = static_cast<int>(kv.get_int("sim.eval_steps", sim.eval_steps));
  auto unread = kv.unread_keys();
  if (!unread.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unread) msg += " '" + k + "'";
    throw ocds::ConfigError(msg);
  }
  return sim;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"maximum-principle training-data selection"};
  app.require_subcommand(1);

  CommonFlags solve_flags, scorer_flags, score_flags, select_flags,
      pipeline_flags;

  CLI::App* solve_cmd = app.add_subcommand(
      "solve-gamma", "solve per-instance data weights on the proxy set");
  add_common(solve_cmd, &solve_flags);

  CLI::App* scorer_cmd = app.add_subcommand(
      "train-scorer", "fit the feature scorer to the solved weights");
  add_common(scorer_cmd, &scorer_flags);

  CLI::App* score_cmd =
      app.add_subcommand("score", "score the full corpus with a fitted scorer");
  add_common(score_cmd, &score_flags);

  CLI::App* select_cmd =
      app.add_subcommand("select", "pick the final subset from scores");
  add_common(select_cmd, &select_flags);

  CLI::App* pipeline_cmd =
      app.add_subcommand("pipeline", "run every stage end to end");
  add_common(pipeline_cmd, &pipeline_flags);

  CLI::App* fit_cmd =
      app.add_subcommand("fit-scaling", "fit L(N, D) = E + A/N^a + B/D^b");
  std::string fit_points, fit_out;
  double fit_delta = 1e-3, fit_jitter = 0.0;
  std::uint64_t fit_seed = 0;
  std::vector<std::string> fit_predict;
  fit_cmd->add_option("--points", fit_points, "CSV file with header N,D,L")
      ->required();
  fit_cmd->add_option("--out", fit_out, "write the fit as JSON");
  fit_cmd->add_option("--delta", fit_delta, "Huber threshold");
  fit_cmd->add_option("--jitter", fit_jitter, "relative init jitter");
  fit_cmd->add_option("--seed", fit_seed, "jitter seed");
  fit_cmd->add_option("--predict", fit_predict,
                      "N,D pairs to extrapolate (repeatable)");

  CLI::App* flops_cmd =
      app.add_subcommand("estimate-flops", "compute-cost breakdown");
  ocds::FlopsInputs flops;
  flops_cmd->add_option("--pretrain-params", flops.pretrain_params)->required();
  flops_cmd->add_option("--pretrain-tokens", flops.pretrain_tokens)->required();
  flops_cmd->add_option("--proxy-params", flops.proxy_params)->required();
  flops_cmd->add_option("--proxy-tokens", flops.proxy_tokens)->required();
  flops_cmd->add_option("--scorer-params", flops.scorer_params)->required();
  flops_cmd->add_option("--checkpoints", flops.checkpoints)->required();

  CLI::App* sim_cmd = app.add_subcommand(
      "simulate", "planted-fixture head-to-head of both solver variants");
  std::string sim_config, sim_out;
  std::uint64_t sim_seed = 0;
  bool sim_seed_set = false;
  sim_cmd->add_option("--config", sim_config, "simulation config (sim.* keys)");
  sim_cmd->add_option("--out", sim_out, "write the report as JSON");
  sim_cmd->add_option("--seed", sim_seed, "simulation seed")
      ->each([&sim_seed_set](const std::string&) { sim_seed_set = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (solve_cmd->parsed()) return run_stage_command(solve_flags, "solve");
    if (scorer_cmd->parsed()) return run_stage_command(scorer_flags, "train_scorer");
    if (score_cmd->parsed()) return run_stage_command(score_flags, "score");
    if (select_cmd->parsed()) return run_stage_command(select_flags, "select");
    if (pipeline_cmd->parsed()) return run_stage_command(pipeline_flags, "");

    if (fit_cmd->parsed()) {
      std::vector<ocds::LossPoint> points = ocds::read_loss_points(fit_points);
      ocds::ScalingFitOptions options;
      options.delta = fit_delta;
      options.init_jitter = fit_jitter;
      options.seed = fit_seed;
      ocds::ScalingFit fit = ocds::fit_scaling_law(points, options);
      std::printf("A     = %.6g\nB     = %.6g\nE     = %.6g\n", fit.a_coef,
                  fit.b_coef, fit.e_irr);
      std::printf("alpha = %.6g\nbeta  = %.6g\n", fit.alpha, fit.beta);
      std::printf("objective = %.6g after %d iterations (%s)\n", fit.objective,
                  fit.iterations, fit.converged ? "converged" : "iteration cap");
      for (const auto& pair : fit_predict) {
        auto comma = pair.find(',');
        if (comma == std::string::npos) {
          throw ocds::ConfigError("--predict expects 'N,D', got '" + pair + "'");
        }
        double n = std::stod(pair.substr(0, comma));
        double d = std::stod(pair.substr(comma + 1));
        std::printf("L(%.4g, %.4g) = %.4f\n", n, d, ocds::predict_loss(fit, n, d));
      }
      if (!fit_out.empty()) ocds::save_scaling_fit(fit_out, fit);
      return 0;
    }

    if (flops_cmd->parsed()) {
      ocds::FlopsBreakdown b = ocds::estimate_flops(flops);
      std::printf("solver      = %.6e\n", b.solver);
      std::printf("scorer      = %.6e\n", b.scorer);
      std::printf("selection   = %.6e\n", b.selection);
      std::printf("pretraining = %.6e\n", b.pretraining);
      std::printf("total       = %.6e\n", b.total);
      return 0;
    }

    if (sim_cmd->parsed()) {
      ocds::SimulationConfig sim;
      if (!sim_config.empty()) {
        sim = parse_simulation(ocds::KeyValueConfig::parse_file(sim_config));
      }
      if (sim_seed_set) {
        sim.seed = sim_seed;
        sim.fixture.seed = sim_seed;
      }
      ocds::SimulationReport report = ocds::simulate_exact_vs_efficient(sim);
      std::printf("downstream-loss AUC  exact %.6f  efficient %.6f  uniform %.6f\n",
                  report.auc_exact, report.auc_efficient, report.auc_uniform);
      std::printf("clean weight mass    exact %.4f  efficient %.4f\n",
                  report.clean_mass_exact, report.clean_mass_efficient);
      std::printf("flops                exact %.3e  efficient %.3e\n",
                  report.flops_exact, report.flops_efficient);
      if (!sim_out.empty()) ocds::save_simulation_report(sim_out, report);
      return 0;
    }
  } catch (const ocds::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ocds::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  }
  return 0;
}
