#pragma once

#include "dfa/config.hpp"
#include "dfa/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace dfa {

struct RunSummary {
  std::string mode;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  long iterations = 0;
  std::string config_hash;
  std::string run_dir;

  nlohmann::json to_json() const {
    return nlohmann::json{{"mode", mode},
                          {"seed", seed},
                          {"final_accuracy", final_accuracy},
                          {"per_class_accuracy", per_class_accuracy},
                          {"iterations", iterations},
                          {"config_hash", config_hash}};
  }
};

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << text;
}

inline void write_metrics_jsonl(const std::string& path, const std::vector<MetricsRecord>& recs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  for (const auto& r : recs) out << r.to_json().dump() << "\n";
}

inline std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metrics file " + path);
  std::vector<MetricsRecord> recs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    recs.push_back(MetricsRecord::from_json(nlohmann::json::parse(line)));
  }
  return recs;
}

}  // namespace detail

/**
 * Execute one training run and write its artifact directory: the resolved
 * config (re-runnable bit-for-bit), the metrics stream, checkpoints, and a
 * summary in both machine- and human-readable form. On a NaN abort the
 * diagnostic dump is written before the error propagates.
 */
inline RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                 const std::string& dataset_dump_path = "") {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string hash = cfg.config_hash();
  detail::write_text(out_dir + "/resolved_config.json", cfg.to_json().dump(2) + "\n");

  SSDAEpisode episode = cfg.make_episode();
  if (!dataset_dump_path.empty()) episode.dump(dataset_dump_path);

  TrainSettings settings = cfg.make_train_settings();
  CheckpointHook hook;
  if (cfg.checkpoint_interval > 0) {
    hook = [&](const TrainerState& st, long iter) {
      if (iter % cfg.checkpoint_interval == 0) {
        std::ostringstream name;
        name << out_dir << "/checkpoint_" << std::setw(6) << std::setfill('0') << iter << ".json";
        save_checkpoint(name.str(), st.extractor, st.classifier, st.inter_bank, st.dyn_bank, hash,
                        iter);
      }
    };
  }

  TrainResult result = [&]() {
    try {
      return train(episode, settings, hook);
    } catch (const NanAbort& e) {
      nlohmann::json dump{{"error", "nan_abort"},
                          {"term", e.term},
                          {"iteration", e.iteration},
                          {"message", e.what()}};
      detail::write_text(out_dir + "/nan_abort.json", dump.dump(2) + "\n");
      throw;
    }
  }();

  detail::write_metrics_jsonl(out_dir + "/metrics.jsonl", result.metrics);
  save_checkpoint(out_dir + "/checkpoint.json", result.extractor, result.classifier,
                  result.inter_bank, result.dyn_bank, hash, settings.optimizer.total_iters);
  export_embeddings(result.extractor, episode, out_dir + "/embeddings.csv");
  export_update_log(result.bank_log, out_dir + "/bank_log.jsonl");

  RunSummary summary;
  summary.mode = cfg.mode;
  summary.seed = cfg.seed;
  summary.final_accuracy = result.final_record().accuracy;
  summary.per_class_accuracy = result.final_record().per_class_accuracy;
  summary.iterations = settings.optimizer.total_iters;
  summary.config_hash = hash;
  summary.run_dir = out_dir;
  detail::write_text(out_dir + "/summary.json", summary.to_json().dump(2) + "\n");

  std::ostringstream txt;
  txt << "mode=" << summary.mode << " seed=" << summary.seed << " iters=" << summary.iterations
      << "\n"
      << "final target accuracy: " << std::fixed << std::setprecision(4)
      << summary.final_accuracy << "\n";
  detail::write_text(out_dir + "/summary.txt", txt.str());
  return summary;
}

struct SweepCell {
  double gamma = 0.0;
  int seed = 0;
  double accuracy = 0.0;
  std::string error;  // empty on success
};

struct SweepRow {
  double gamma = 0.0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::vector<double> per_seed;
  int n_failed = 0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<SweepRow> rows;

  std::string table_text() const {
    std::ostringstream os;
    os << "gamma   mean_acc  std_acc   seeds\n";
    for (const auto& r : rows) {
      os << std::left << std::setw(8) << r.gamma << std::fixed << std::setprecision(4)
         << std::setw(10) << r.mean_accuracy << std::setw(10) << r.std_accuracy
         << r.per_seed.size();
      if (r.n_failed > 0) os << " (" << r.n_failed << " failed)";
      os << "\n";
    }
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows)
      rows_j.push_back({{"gamma", r.gamma},
                        {"mean_accuracy", r.mean_accuracy},
                        {"std_accuracy", r.std_accuracy},
                        {"per_seed", r.per_seed},
                        {"n_failed", r.n_failed}});
    nlohmann::json cells_j = nlohmann::json::array();
    for (const auto& c : cells)
      cells_j.push_back(
          {{"gamma", c.gamma}, {"seed", c.seed}, {"accuracy", c.accuracy}, {"error", c.error}});
    return nlohmann::json{{"rows", rows_j}, {"cells", cells_j}};
  }
};

/**
 * Bank-pace ablation: train with each (gamma, seed) pair and tabulate
 * mean +/- std target accuracy per gamma. Cell failures are recorded and the
 * grid continues. Cells are independent and could run concurrently; they run
 * serially here so results never depend on scheduling.
 */
inline SweepResult sweep_gamma(const ExperimentConfig& base, const std::vector<double>& gammas,
                               const std::vector<int>& seeds, const std::string& out_dir = "") {
  if (gammas.empty()) throw ConfigError("sweep_gamma: need at least one gamma value");
  if (seeds.empty()) throw ConfigError("sweep_gamma: need at least one seed");

  SweepResult result;
  for (double g : gammas) {
    SweepRow row;
    row.gamma = g;
    for (int seed : seeds) {
      SweepCell cell;
      cell.gamma = g;
      cell.seed = seed;
      try {
        ExperimentConfig cfg = base;
        cfg.gamma = g;
        cfg.seed = static_cast<std::uint64_t>(seed);
        SSDAEpisode episode = cfg.make_episode();
        TrainResult tr = train(episode, cfg.make_train_settings());
        cell.accuracy = tr.final_record().accuracy;
        row.per_seed.push_back(cell.accuracy);
      } catch (const std::exception& e) {
        cell.error = e.what();
        ++row.n_failed;
      }
      result.cells.push_back(cell);
    }
    if (!row.per_seed.empty()) {
      double sum = 0.0;
      for (double a : row.per_seed) sum += a;
      row.mean_accuracy = sum / static_cast<double>(row.per_seed.size());
      double var = 0.0;
      for (double a : row.per_seed) var += (a - row.mean_accuracy) * (a - row.mean_accuracy);
      row.std_accuracy = row.per_seed.size() > 1
                             ? std::sqrt(var / static_cast<double>(row.per_seed.size() - 1))
                             : 0.0;
    }
    result.rows.push_back(std::move(row));
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    detail::write_text(out_dir + "/gamma_sweep.json", result.to_json().dump(2) + "\n");
    std::ostringstream csv;
    csv << "gamma,seed,accuracy,error\n";
    for (const auto& c : result.cells)
      csv << c.gamma << ',' << c.seed << ',' << c.accuracy << ',' << c.error << "\n";
    detail::write_text(out_dir + "/gamma_sweep.csv", csv.str());
    detail::write_text(out_dir + "/gamma_sweep.txt", result.table_text());
  }
  return result;
}

struct ReportGroup {
  std::string mode;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::vector<double> per_run;
};

struct ReportResult {
  std::vector<RunSummary> runs;
  std::vector<ReportGroup> groups;  // grouped by mode

  const ReportGroup* group(const std::string& mode) const {
    for (const auto& g : groups)
      if (g.mode == mode) return &g;
    return nullptr;
  }
};

/**
 * Aggregate completed run directories into a cross-run accuracy table plus
 * plot-ready CSV curves (losses, accuracy, selection sizes). Each run must
 * contain summary.json and metrics.jsonl; a missing file fails with the run
 * named.
 */
inline ReportResult report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (run_dirs.empty()) throw ConfigError("report: need at least one run directory");
  fs::create_directories(out_dir);

  ReportResult result;
  std::ostringstream loss_csv, sel_csv;
  loss_csv << "run,iter,l_cls,l_mmd,l_pseudo,l_perturb,l_ent,total,accuracy,full_mmd\n";
  sel_csv << "run,iter,m_dist,m_ent,m_pse,pseudo_precision,bank_drift\n";
  std::ostringstream emb_index;

  for (const auto& dir : run_dirs) {
    const std::string summary_path = dir + "/summary.json";
    const std::string metrics_path = dir + "/metrics.jsonl";
    if (!fs::exists(summary_path))
      throw DataError("report: run '" + dir + "' is missing summary.json");
    if (!fs::exists(metrics_path))
      throw DataError("report: run '" + dir + "' is missing metrics.jsonl");

    std::ifstream sin(summary_path);
    nlohmann::json sj = nlohmann::json::parse(sin);
    RunSummary rs;
    rs.mode = sj.at("mode").get<std::string>();
    rs.seed = sj.at("seed").get<std::uint64_t>();
    rs.final_accuracy = sj.at("final_accuracy").get<double>();
    rs.per_class_accuracy = sj.at("per_class_accuracy").get<std::vector<double>>();
    rs.iterations = sj.at("iterations").get<long>();
    rs.config_hash = sj.at("config_hash").get<std::string>();
    rs.run_dir = dir;
    result.runs.push_back(rs);

    for (const auto& rec : detail::read_metrics_jsonl(metrics_path)) {
      loss_csv << dir << ',' << rec.iter << ',' << rec.l_cls << ',' << rec.l_mmd << ','
               << rec.l_pseudo << ',' << rec.l_perturb << ',' << rec.l_ent << ',' << rec.total
               << ',' << rec.accuracy << ',' << rec.full_mmd << "\n";
      sel_csv << dir << ',' << rec.iter << ',' << rec.m_dist << ',' << rec.m_ent << ','
              << rec.m_pse << ',' << rec.pseudo_precision << ',' << rec.bank_drift << "\n";
    }
    if (fs::exists(dir + "/embeddings.csv")) emb_index << dir + "/embeddings.csv" << "\n";
  }

  std::map<std::string, std::vector<double>> by_mode;
  for (const auto& r : result.runs) by_mode[r.mode].push_back(r.final_accuracy);
  for (const auto& [mode, accs] : by_mode) {
    ReportGroup g;
    g.mode = mode;
    g.per_run = accs;
    double sum = 0.0;
    for (double a : accs) sum += a;
    g.mean_accuracy = sum / static_cast<double>(accs.size());
    double var = 0.0;
    for (double a : accs) var += (a - g.mean_accuracy) * (a - g.mean_accuracy);
    g.std_accuracy = accs.size() > 1 ? std::sqrt(var / static_cast<double>(accs.size() - 1)) : 0.0;
    result.groups.push_back(std::move(g));
  }

  nlohmann::json runs_j = nlohmann::json::array();
  for (const auto& r : result.runs) {
    nlohmann::json rj = r.to_json();
    rj["run_dir"] = r.run_dir;
    runs_j.push_back(rj);
  }
  nlohmann::json groups_j = nlohmann::json::array();
  for (const auto& g : result.groups)
    groups_j.push_back({{"mode", g.mode},
                        {"mean_accuracy", g.mean_accuracy},
                        {"std_accuracy", g.std_accuracy},
                        {"per_run", g.per_run}});
  detail::write_text(out_dir + "/report_summary.json",
                     nlohmann::json{{"runs", runs_j}, {"groups", groups_j}}.dump(2) + "\n");

  std::ostringstream txt;
  txt << "mode      runs  mean_acc  std_acc\n";
  for (const auto& g : result.groups)
    txt << std::left << std::setw(10) << g.mode << std::setw(6) << g.per_run.size() << std::fixed
        << std::setprecision(4) << std::setw(10) << g.mean_accuracy << g.std_accuracy << "\n";
  detail::write_text(out_dir + "/report_summary.txt", txt.str());
  detail::write_text(out_dir + "/loss_curves.csv", loss_csv.str());
  detail::write_text(out_dir + "/selection_curves.csv", sel_csv.str());
  detail::write_text(out_dir + "/embeddings_index.txt", emb_index.str());
  return result;
}

}  // namespace dfa
