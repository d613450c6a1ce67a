// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion. Exit status is the number of failures.

#include "dfa/config.hpp"
#include "dfa/experiment.hpp"
#include "dfa/gradcheck.hpp"
#include "dfa/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace dfa;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const auto kSuiteStart = std::chrono::steady_clock::now();

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - kSuiteStart).count();
}

Matrix random_rows(int n, int d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = g(rng);
  return m;
}

// ---------------------------------------------------------------------------
// A1: vectorized MMD vs an independent scalar double-sum implementation
// ---------------------------------------------------------------------------

double kernel_scalar(const Vector& a, const Vector& b, const std::vector<double>& sigmas) {
  double sq = 0.0;
  for (int j = 0; j < a.size(); ++j) sq += (a[j] - b[j]) * (a[j] - b[j]);
  double k = 0.0;
  for (double s : sigmas) k += std::exp(-sq / (2.0 * s * s));
  return k;
}

double mmd_double_sum(const Matrix& p, const Matrix& u, const std::vector<double>& sigmas) {
  const int K = static_cast<int>(p.rows());
  const int n = static_cast<int>(u.rows());
  double kpp = 0.0, kpu = 0.0, kuu = 0.0;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j)
      kpp += kernel_scalar(p.row(i).transpose(), p.row(j).transpose(), sigmas);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < n; ++j)
      kpu += kernel_scalar(p.row(i).transpose(), u.row(j).transpose(), sigmas);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      kuu += kernel_scalar(u.row(i).transpose(), u.row(j).transpose(), sigmas);
  return kpp / (static_cast<double>(K) * K) - 2.0 * kpu / (static_cast<double>(K) * n) +
         kuu / (static_cast<double>(n) * n);
}

// Independent median: sort the full off-diagonal distance list.
std::vector<double> median_sigma_set_scalar(const Matrix& p, const Matrix& u, int n_kernels) {
  std::vector<double> dists;
  Matrix all(p.rows() + u.rows(), p.cols());
  all << p, u;
  for (int i = 0; i < all.rows(); ++i)
    for (int j = i + 1; j < all.rows(); ++j)
      dists.push_back((all.row(i) - all.row(j)).norm());
  std::sort(dists.begin(), dists.end());
  double med = dists[dists.size() / 2];
  if (med < 1e-12) med = 1.0;
  std::vector<double> out;
  for (int i = 0; i < n_kernels; ++i) out.push_back(med * std::pow(2.0, i - n_kernels / 2));
  return out;
}

Outcome criterion_mmd_oracle() {
  auto t0 = std::chrono::steady_clock::now();
  auto rng = make_rng(7, "a1");
  std::uniform_int_distribution<int> kd(2, 8), nd(2, 16), dd(1, 8), ns(1, 5);
  std::uniform_real_distribution<double> sig(0.3, 3.0);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    int K = kd(rng), n = nd(rng), d = dd(rng);
    Matrix p = random_rows(K, d, rng);
    Matrix u = random_rows(n, d, rng);
    std::vector<double> sigmas;
    if (inst % 5 == 4) {
      sigmas = median_sigma_set_scalar(p, u, 5);  // median-derived mixed set
    } else {
      int m = ns(rng);
      for (int i = 0; i < m; ++i) sigmas.push_back(sig(rng));
    }
    double vec = mmd(p, u, sigmas);
    double ref = mmd_double_sum(p, u, sigmas);
    worst = std::max(worst, std::abs(vec - ref));
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream os;
  os << "max |vectorized - double-sum| = " << worst << " over 100 instances, " << secs << " s";
  return {worst < 1e-10 && secs < 10.0, os.str()};
}

// ---------------------------------------------------------------------------
// A2: analytic gradients of all four loss terms vs central finite differences
// ---------------------------------------------------------------------------

Outcome criterion_gradient_suite() {
  auto t0 = std::chrono::steady_clock::now();
  MlpSpec spec;
  spec.input_dim = 4;
  spec.hidden = {6, 5};  // 2-layer extractor
  spec.feature_dim = 8;
  MlpExtractor f(spec, 101);
  CosineClassifier c(4, 8, 0.05, 102);
  auto rng = make_rng(103, "a2");
  Matrix x = random_rows(6, 4, rng);
  IntVector y(6);
  for (int i = 0; i < 6; ++i) y[i] = i % 4;
  Vector params0 = pack_params(f, c);

  std::map<std::string, double> errors;

  {  // L_cls
    auto res = classification_loss(f, c, x, y);
    auto fn = [&](const Vector& p) {
      unpack_params(f, c, p);
      return classification_loss(f, c, x, y).loss;
    };
    errors["cls"] = gradient_check(fn, params0, pack_grads(f, res.grads));
    unpack_params(f, c, params0);
  }

  {  // L_mmd (prototypes constant, fixed bandwidths)
    Matrix protos = random_rows(4, 8, rng);
    for (int i = 0; i < protos.rows(); ++i) protos.row(i) /= protos.row(i).norm();
    KernelSpec kernel;
    kernel.strategy = BandwidthStrategy::fixed_list;
    kernel.sigmas = {0.5, 1.0, 2.0};
    auto res = mmd_loss(f, protos, x, kernel);
    ModelGrads g = ModelGrads::zeros(f, c);
    g.extractor = res.grads;
    auto fn = [&](const Vector& p) {
      unpack_params(f, c, p);
      return mmd(protos, f.extract(x), kernel.sigmas);
    };
    errors["mmd"] = gradient_check(fn, params0, pack_grads(f, g));
    unpack_params(f, c, params0);
  }

  {  // L_pseudo
    PseudoBatch pb;
    pb.x = x.topRows(4);
    pb.pseudo_y = IntVector(4);
    pb.pseudo_y << 1, 3, 0, 2;
    pb.full_batch_size = 6;
    auto res = pseudo_loss(f, c, pb);
    auto fn = [&](const Vector& p) {
      unpack_params(f, c, p);
      return pseudo_loss(f, c, pb).loss;
    };
    errors["pseudo"] = gradient_check(fn, params0, pack_grads(f, res.grads));
    unpack_params(f, c, params0);
  }

  {  // L_perturb with a frozen perturbation direction and frozen clean branch
    Matrix r = 0.3 * random_rows(6, 4, rng);
    auto res = perturb_loss_with_direction(f, c, x, r);
    Matrix p_clean = softmax_rows(c.logits(f.extract(x)));
    Matrix logp = p_clean.array().max(1e-300).log();
    auto fn = [&](const Vector& p) {
      unpack_params(f, c, p);
      Matrix logq = log_softmax_rows(c.logits(f.extract(x + r)));
      double total = 0.0;
      for (int i = 0; i < 6; ++i)
        for (int k = 0; k < 4; ++k)
          if (p_clean(i, k) > 0) total += p_clean(i, k) * (logp(i, k) - logq(i, k));
      return total / 6;
    };
    errors["perturb"] = gradient_check(fn, params0, pack_grads(f, res.grads));
    unpack_params(f, c, params0);
  }

  double worst = 0.0;
  std::ostringstream os;
  for (const auto& [term, err] : errors) {
    worst = std::max(worst, err);
    os << term << "=" << err << " ";
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  os << "(" << secs << " s)";
  return {worst < 1e-4 && secs < 60.0, os.str()};
}

// ---------------------------------------------------------------------------
// A3: bank invariants over 1000 randomized train steps
// ---------------------------------------------------------------------------

Outcome criterion_bank_invariants() {
  ExperimentConfig cfg;
  cfg.seed = 3;
  cfg.optimizer.total_iters = 1000;
  cfg.eval_interval = 500;
  SSDAEpisode episode = cfg.make_episode();
  TrainResult res = train(episode, cfg.make_train_settings());

  std::ostringstream os;
  bool pass = true;

  Matrix protos = get_prototypes(res.dyn_bank);
  double worst_norm = 0.0;
  for (int k = 0; k < protos.rows(); ++k)
    worst_norm = std::max(worst_norm, std::abs(protos.row(k).norm() - 1.0));
  if (worst_norm > 1e-6) pass = false;
  os << "max |row norm - 1| = " << worst_norm;

  // replay: logged replacements must equal the correctly-classified samples
  std::map<long, std::vector<int>> expected, logged;
  for (const auto& step : res.steps)
    for (int i = 0; i < step.labeled_y.size(); ++i)
      if (step.labeled_y[i] == step.labeled_preds[i]) expected[step.iter].push_back(step.labeled_y[i]);
  for (const auto& r : res.bank_log.replacements) logged[r.step].push_back(r.cls);
  size_t n_replacements = res.bank_log.replacements.size();
  if (logged != expected) pass = false;
  os << "; " << n_replacements << " replacements replay " << (logged == expected ? "clean" : "MISMATCH");

  auto counts = res.bank_log.ewma_counts(episode.n_classes());
  bool balanced = res.bank_log.ewma_calls.size() == 1000;
  for (long c : counts) balanced = balanced && (c == 1000);
  if (!balanced) pass = false;
  os << "; ewma contributions " << (balanced ? "1000 per class" : "UNBALANCED");
  return {pass, os.str()};
}

// ---------------------------------------------------------------------------
// A4: end-to-end benefit on the standard synthetic benchmark
// ---------------------------------------------------------------------------

double mean_accuracy_over_seeds(ExperimentConfig cfg, const std::string& mode) {
  cfg.mode = mode;
  double total = 0.0;
  for (int seed = 0; seed < 5; ++seed) {
    cfg.seed = static_cast<std::uint64_t>(seed);
    SSDAEpisode episode = cfg.make_episode();
    total += train(episode, cfg.make_train_settings()).final_record().accuracy;
  }
  return total / 5.0;
}

Outcome criterion_end_to_end() {
  auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;  // defaults are the standard benchmark
  double dfa_acc = mean_accuracy_over_seeds(cfg, "dfa");
  double st_acc = mean_accuracy_over_seeds(cfg, "s+t");
  double ent_acc = mean_accuracy_over_seeds(cfg, "ent");
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream os;
  os << "dfa=" << dfa_acc << " s+t=" << st_acc << " ent=" << ent_acc << " (" << secs << " s)";
  bool pass = (dfa_acc >= st_acc + 0.05) && (dfa_acc >= ent_acc) && secs < 300.0;
  return {pass, os.str()};
}

// ---------------------------------------------------------------------------
// A5: gamma ablation direction
// ---------------------------------------------------------------------------

Outcome criterion_gamma_direction() {
  ExperimentConfig cfg;
  SweepResult res = sweep_gamma(cfg, {0.1, 0.75}, {0, 1, 2, 3, 4});
  double fast = res.rows[0].mean_accuracy;
  double slow = res.rows[1].mean_accuracy;
  std::ostringstream os;
  os << "mean acc gamma=0.1: " << fast << ", gamma=0.75: " << slow;
  return {fast >= slow, os.str()};
}

// ---------------------------------------------------------------------------
// A6: selection-set monotonicity over a 5x5 threshold grid, 3 snapshots
// ---------------------------------------------------------------------------

Outcome criterion_selection_monotone() {
  ExperimentConfig cfg;
  cfg.seed = 11;
  cfg.optimizer.total_iters = 750;
  cfg.eval_interval = 250;
  SSDAEpisode episode = cfg.make_episode();

  struct Snapshot {
    Matrix features;
    Matrix prototypes;
  };
  std::vector<Snapshot> snaps;
  Matrix all_u(episode.target_unlabeled().size(), episode.input_dim());
  for (size_t i = 0; i < episode.target_unlabeled().size(); ++i)
    all_u.row(static_cast<long>(i)) = episode.target_unlabeled()[i].transpose();
  CheckpointHook hook = [&](const TrainerState& st, long) {
    snaps.push_back({st.extractor.extract(all_u), get_prototypes(st.dyn_bank)});
  };
  train(episode, cfg.make_train_settings(), hook);
  if (snaps.size() != 3) return {false, "expected 3 snapshots, got " + std::to_string(snaps.size())};

  const std::vector<double> dist_grid = {-0.2, 0.1, 0.4, 0.7, 0.95};
  const std::vector<double> ent_grid = {0.05, 0.3, 0.6, 1.0, 1.5};
  long violations = 0, comparisons = 0;
  for (const auto& snap : snaps) {
    std::vector<std::vector<SelectionMask>> masks(dist_grid.size());
    for (size_t a = 0; a < dist_grid.size(); ++a)
      for (double ee : ent_grid)
        masks[a].push_back(select(snap.features, snap.prototypes, 0.07, dist_grid[a], ee));
    for (size_t a = 0; a < dist_grid.size(); ++a) {
      for (size_t b = 0; b < ent_grid.size(); ++b) {
        // raising eps_dist must not add samples
        if (a + 1 < dist_grid.size()) {
          ++comparisons;
          for (size_t i = 0; i < masks[a][b].in_pse.size(); ++i)
            if (masks[a + 1][b].in_pse[i] && !masks[a][b].in_pse[i]) ++violations;
        }
        // lowering eps_ent must not add samples
        if (b > 0) {
          ++comparisons;
          for (size_t i = 0; i < masks[a][b].in_pse.size(); ++i)
            if (masks[a][b - 1].in_pse[i] && !masks[a][b].in_pse[i]) ++violations;
        }
      }
    }
  }
  std::ostringstream os;
  os << violations << " violations over " << comparisons << " grid comparisons x 3 snapshots";
  return {violations == 0, os.str()};
}

// ---------------------------------------------------------------------------
// A7: degeneracy equivalence, bitwise over 20 steps
// ---------------------------------------------------------------------------

Outcome criterion_degeneracy() {
  ExperimentConfig cfg;
  cfg.seed = 13;
  SSDAEpisode episode = cfg.make_episode();

  TrainSettings dfa_s = cfg.make_train_settings();
  dfa_s.mode = TrainMode::dfa;
  dfa_s.weights = {0.0, 0.0, 0.0};
  TrainSettings st_s = cfg.make_train_settings();
  st_s.mode = TrainMode::s_plus_t;

  TrainerState a = make_trainer_state(episode, dfa_s);
  TrainerState b = make_trainer_state(episode, st_s);
  BalancedLabeledIterator la(episode, dfa_s.batch_size, dfa_s.seed);
  BalancedLabeledIterator lb(episode, st_s.batch_size, st_s.seed);
  UnlabeledIterator ua(episode, dfa_s.unlabeled_batch_size, dfa_s.seed);
  UnlabeledIterator ub(episode, st_s.unlabeled_batch_size, st_s.seed);

  for (int t = 0; t < 20; ++t) {
    train_step(a, la.next(), ua.next(), dfa_s);
    train_step(b, lb.next(), ub.next(), st_s);
    Vector pa = pack_params(a.extractor, a.classifier);
    Vector pb = pack_params(b.extractor, b.classifier);
    if (pa != pb)
      return {false, "parameter trajectories diverged at step " + std::to_string(t)};
  }
  return {true, "20 steps, parameter vectors bitwise identical"};
}

// ---------------------------------------------------------------------------
// A8: determinism of the CLI `run` verb
// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion_run_determinism() {
  fs::path work = fs::temp_directory_path() / "dfa_acceptance_a8";
  fs::remove_all(work);
  fs::create_directories(work);
  ExperimentConfig cfg;
  cfg.seed = 17;
  {
    std::ofstream out(work / "config.json");
    out << cfg.to_json().dump(2) << "\n";
  }
  std::string base = std::string(DFA_CLI_PATH) + " run --config " + (work / "config.json").string();
  int rc1 = std::system((base + " --out " + (work / "run1").string() + " > /dev/null 2>&1").c_str());
  int rc2 = std::system((base + " --out " + (work / "run2").string() + " > /dev/null 2>&1").c_str());
  if (rc1 != 0 || rc2 != 0) return {false, "cli run failed"};

  bool metrics_equal = slurp(work / "run1" / "metrics.jsonl") == slurp(work / "run2" / "metrics.jsonl");
  bool summary_equal = slurp(work / "run1" / "summary.json") == slurp(work / "run2" / "summary.json");
  fs::remove_all(work);
  std::ostringstream os;
  os << "metrics files " << (metrics_equal ? "identical" : "DIFFER") << ", summaries "
     << (summary_equal ? "identical" : "DIFFER");
  return {metrics_equal && summary_equal, os.str()};
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"A1 mmd oracle", criterion_mmd_oracle},
      {"A2 gradient suite", criterion_gradient_suite},
      {"A3 bank invariants", criterion_bank_invariants},
      {"A4 end-to-end benefit", criterion_end_to_end},
      {"A5 gamma ablation direction", criterion_gamma_direction},
      {"A6 selection monotonicity", criterion_selection_monotone},
      {"A7 degeneracy equivalence", criterion_degeneracy},
      {"A8 run determinism", criterion_run_determinism},
  };

  int failures = 0;
  for (auto& [name, fn] : criteria) {
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %s: %s\n", out.pass ? "PASS" : "FAIL", name.c_str(), out.detail.c_str());
    std::fflush(stdout);
    if (!out.pass) ++failures;
  }
  if (failures == 0) {
    std::printf("all %zu acceptance criteria passed (%.1f s)\n", criteria.size(), now_seconds());
  } else {
    std::printf("%d acceptance criteria FAILED\n", failures);
  }
  return failures;
}
