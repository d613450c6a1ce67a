// Experiment runner for the dynamic feature alignment framework: single runs,
// bank-pace sweeps, cross-run reports, embedding export, and dataset dumps.

#include "dfa/config.hpp"
#include "dfa/experiment.hpp"
#include "dfa/trainer.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

extern char** environ;

namespace {

dfa::ExperimentConfig assemble_config(const std::string& config_path,
                                      const std::vector<std::string>& sets,
                                      const std::string& mode, bool seed_given, long seed) {
  nlohmann::json root = dfa::load_config_json(config_path);
  dfa::apply_env_overrides(root, environ);
  for (const auto& s : sets) dfa::apply_override_arg(root, s);
  if (!mode.empty()) dfa::apply_override(root, "trainer.mode", mode);
  if (seed_given) dfa::apply_override(root, "seed", std::to_string(seed));
  return dfa::ExperimentConfig::from_json(root);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dfa: semi-supervised domain adaptation with dynamic feature alignment"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::string mode;
  long seed = 0;
  bool seed_given = false;
  std::string out;
  std::string dataset_dump;

  auto add_config_options = [&](CLI::App* cmd, bool config_required = true) {
    auto* opt = cmd->add_option("--config", config_path, "experiment config file (JSON)");
    if (config_required) opt->required();
    cmd->add_option("--set", sets,
                    "override config values, e.g. --set trainer.alpha1=0 --set gamma=0.25");
    cmd->add_option("--mode", mode, "training mode: dfa, s+t, or ent");
    cmd->add_option("--seed", seed, "random seed")->each([&](const std::string&) { seed_given = true; });
  };

  // run
  auto* run_cmd = app.add_subcommand("run", "run one experiment and write its artifacts");
  add_config_options(run_cmd);
  run_cmd->add_option("--out", out, "output directory (default: config output_dir)");
  run_cmd->add_option("--dataset-dump", dataset_dump, "also dump the episode to this file");
  run_cmd->callback([&]() {
    dfa::ExperimentConfig cfg = assemble_config(config_path, sets, mode, seed_given, seed);
    std::string dir = out.empty() ? cfg.output_dir : out;
    dfa::RunSummary summary = dfa::run_experiment(cfg, dir, dataset_dump);
    std::cout << "run complete: mode=" << summary.mode << " seed=" << summary.seed
              << " accuracy=" << summary.final_accuracy << "\n"
              << "artifacts in " << dir << "\n";
  });

  // sweep-gamma
  std::vector<double> gammas = {0.0, 0.1, 0.25, 0.75};
  std::vector<int> sweep_seeds;
  auto* sweep_cmd = app.add_subcommand("sweep-gamma", "bank pace ablation over a gamma grid");
  add_config_options(sweep_cmd);
  sweep_cmd->add_option("--gammas", gammas, "gamma grid")->expected(-1);
  sweep_cmd->add_option("--seeds", sweep_seeds, "seeds (default: config seeds)")->expected(-1);
  sweep_cmd->add_option("--out", out, "output directory for sweep tables");
  sweep_cmd->callback([&]() {
    dfa::ExperimentConfig cfg = assemble_config(config_path, sets, mode, seed_given, seed);
    std::vector<int> use_seeds = sweep_seeds.empty() ? cfg.seeds : sweep_seeds;
    std::string dir = out.empty() ? cfg.output_dir + "/gamma_sweep" : out;
    dfa::SweepResult res = dfa::sweep_gamma(cfg, gammas, use_seeds, dir);
    std::cout << res.table_text() << "tables in " << dir << "\n";
  });

  // report
  std::vector<std::string> run_dirs;
  auto* report_cmd = app.add_subcommand("report", "aggregate completed runs into tables and curves");
  report_cmd->add_option("runs", run_dirs, "run directories")->required()->expected(-1);
  report_cmd->add_option("--out", out, "report output directory")->required();
  report_cmd->callback([&]() {
    dfa::ReportResult res = dfa::report(run_dirs, out);
    std::cout << "report over " << res.runs.size() << " runs written to " << out << "\n";
    for (const auto& g : res.groups)
      std::cout << "  " << g.mode << ": mean accuracy " << g.mean_accuracy << " over "
                << g.per_run.size() << " runs\n";
  });

  // export-embeddings
  std::string run_dir, checkpoint_path;
  auto* export_cmd =
      app.add_subcommand("export-embeddings", "write target features for offline projection");
  add_config_options(export_cmd, /*config_required=*/false);
  export_cmd->add_option("--run-dir", run_dir, "completed run directory (resolved config + checkpoint)");
  export_cmd->add_option("--checkpoint", checkpoint_path, "explicit checkpoint file");
  export_cmd->add_option("--out", out, "output file (default: <run-dir>/embeddings.csv)");
  export_cmd->callback([&]() {
    std::string cfg_path = config_path;
    std::string ckpt_path = checkpoint_path;
    if (!run_dir.empty()) {
      if (cfg_path.empty()) cfg_path = run_dir + "/resolved_config.json";
      if (ckpt_path.empty()) ckpt_path = run_dir + "/checkpoint.json";
      if (out.empty()) out = run_dir + "/embeddings.csv";
    }
    if (cfg_path.empty() || ckpt_path.empty() || out.empty())
      throw dfa::ConfigError("export-embeddings: need --run-dir, or --config with --checkpoint and --out");
    dfa::ExperimentConfig cfg = assemble_config(cfg_path, sets, mode, seed_given, seed);
    dfa::LoadedCheckpoint ckpt = dfa::load_checkpoint(ckpt_path);
    if (ckpt.config_hash != cfg.config_hash())
      std::cerr << "warning: checkpoint config hash " << ckpt.config_hash
                << " differs from resolved config hash " << cfg.config_hash() << "\n";
    dfa::SSDAEpisode episode = cfg.make_episode();
    dfa::export_embeddings(ckpt.extractor, episode, out);
    std::cout << "embeddings written to " << out << "\n";
  });

  // dump-dataset
  auto* dump_cmd = app.add_subcommand("dump-dataset", "write the episode as a flat record file");
  add_config_options(dump_cmd);
  dump_cmd->add_option("--out", out, "output file")->required();
  dump_cmd->callback([&]() {
    dfa::ExperimentConfig cfg = assemble_config(config_path, sets, mode, seed_given, seed);
    cfg.make_episode().dump(out);
    std::cout << "dataset written to " << out << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const dfa::NanAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
