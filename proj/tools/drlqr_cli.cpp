// Command-line front-end for the domain-randomized LQR experiments.
//
//   drlqr verify   --config c.json [--seeds N] [--out DIR] [--threads N]
//   drlqr entropic --config c.json ...
//   drlqr sgd      --config c.json ...
//   drlqr diagnose --config c.json ...
//   drlqr eval     --config c.json --gain gain.json ...
//
// Without --config the built-in defaults reproduce the published pendulum
// protocol. Exit code 0 on success; on failure a machine-readable error
// category is printed to stderr as one JSON line and mapped to a nonzero
// exit code.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "drlqr/experiments.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  int seeds = 0;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonOptions* opts) {
  cmd->add_option("--config", opts->config_path, "experiment config JSON");
  cmd->add_option("--seeds", opts->seeds, "override run.n_seeds");
  cmd->add_option("--out", opts->out_dir, "override run.out_dir");
  cmd->add_option("--threads", opts->threads, "override run.threads");
}

drlqr::ExperimentConfig resolve_config(const CommonOptions& opts) {
  drlqr::ExperimentConfig cfg;
  if (!opts.config_path.empty()) cfg = drlqr::load_config(opts.config_path);
  if (opts.seeds > 0) cfg.run.n_seeds = opts.seeds;
  if (!opts.out_dir.empty()) cfg.run.out_dir = opts.out_dir;
  if (opts.threads > 0) cfg.run.threads = opts.threads;
  cfg.validate();
  return cfg;
}

int exit_code_for(const std::string& category) {
  if (category == "config") return 2;
  if (category == "dimension" || category == "domain") return 3;
  if (category == "instability") return 4;
  if (category == "convergence") return 5;
  if (category == "io") return 6;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Policy gradient for LQR with domain randomization"};
  app.require_subcommand(1);

  CommonOptions verify_opts, entropic_opts, sgd_opts, diagnose_opts, eval_opts;
  std::string gain_path;

  CLI::App* verify = app.add_subcommand(
      "verify", "discount annealing across (M, seed); traces, references, J_DR gaps");
  add_common(verify, &verify_opts);
  CLI::App* entropic =
      app.add_subcommand("entropic", "entropic-risk policy gradient after annealing warm start");
  add_common(entropic, &entropic_opts);
  CLI::App* sgd_cmd = app.add_subcommand("sgd", "stochastic gradient descent across seeds");
  add_common(sgd_cmd, &sgd_opts);
  CLI::App* diagnose =
      app.add_subcommand("diagnose", "heterogeneity / boundedness / iteration-budget report");
  add_common(diagnose, &diagnose_opts);
  CLI::App* eval_cmd = app.add_subcommand("eval", "cost and gradient of a given gain");
  add_common(eval_cmd, &eval_opts);
  eval_cmd->add_option("--gain", gain_path, "gain JSON file ({\"k\": [[...]]})")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed()) {
      const auto artifact = drlqr::cmd_verify(resolve_config(verify_opts));
      std::printf("verify: %zu runs, artifacts in %s\n", artifact.runs.size(),
                  artifact.dir.string().c_str());
      for (const auto& [m, q] : artifact.jdr_gap_quantiles) {
        std::printf("  M = %4d: median J_DR gap = %.6g  [q25 %.6g, q75 %.6g]\n", m, q[0], q[1],
                    q[2]);
      }
    } else if (entropic->parsed()) {
      const auto artifact = drlqr::cmd_entropic(resolve_config(entropic_opts));
      std::printf("entropic: %zu runs, artifacts in %s\n", artifact.runs.size(),
                  artifact.dir.string().c_str());
      for (const auto& r : artifact.runs) {
        std::printf("  M = %4d seed %d: J_ER = %.6g, certified |dir| = %.3g, J_DR = %.6g\n", r.m,
                    r.seed_index, r.j_er_final, r.certified_direction_norm, r.j_dr);
      }
    } else if (sgd_cmd->parsed()) {
      const auto artifact = drlqr::cmd_sgd(resolve_config(sgd_opts));
      std::printf("sgd: %zu seeds, artifacts in %s\n", artifact.seeds.size(),
                  artifact.dir.string().c_str());
      std::printf("  final J_DR = %.6g +- %.3g over %zu seeds\n", artifact.final_mean_j_dr,
                  artifact.final_std_j_dr, artifact.final_j_dr.size());
    } else if (diagnose->parsed()) {
      const auto report = drlqr::cmd_diagnose(resolve_config(diagnose_opts));
      std::fputs(report.text.c_str(), stdout);
    } else if (eval_cmd->parsed()) {
      const auto cfg = resolve_config(eval_opts);
      const drlqr::Gain gain = drlqr::gain_from_json(drlqr::read_json_file(gain_path));
      const auto report = drlqr::cmd_eval(cfg, gain);
      if (!report.jointly_stabilizing) {
        std::printf("gain does not jointly stabilize the sampled systems (max rho = %.9f); "
                    "costs are infinite\n",
                    report.max_radius);
      } else {
        std::printf("J_SA = %.12g, ||grad||_F = %.6g, max rho = %.9f\n", report.j_sa,
                    report.grad_norm, report.max_radius);
        std::printf("J_DR (MC) = %.12g +- %.6g\n", report.j_dr, report.j_dr_halfwidth);
        for (std::size_t i = 0; i < report.per_system_cost.size(); ++i) {
          std::printf("  system %zu: J = %.12g\n", i, report.per_system_cost[i]);
        }
      }
    }
  } catch (const drlqr::Error& e) {
    std::cerr << "{\"error\":{\"category\":\"" << e.category() << "\",\"message\":\"" << e.what()
              << "\"}}\n";
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    std::cerr << "{\"error\":{\"category\":\"internal\",\"message\":\"" << e.what() << "\"}}\n";
    return 1;
  }
  return 0;
}
