#pragma once

#include "dfa/alignment.hpp"
#include "dfa/common.hpp"
#include "dfa/dataset.hpp"
#include "dfa/membank.hpp"
#include "dfa/model.hpp"
#include "dfa/perturb.hpp"
#include "dfa/pseudolabel.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dfa {

enum class TrainMode { dfa, s_plus_t, ent };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::dfa: return "dfa";
    case TrainMode::s_plus_t: return "s+t";
    case TrainMode::ent: return "ent";
  }
  return "?";
}

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "dfa") return TrainMode::dfa;
  if (s == "s+t") return TrainMode::s_plus_t;
  if (s == "ent") return TrainMode::ent;
  throw ConfigError("unknown mode '" + s + "' (expected dfa, s+t, or ent)");
}

// Weights of the MMD, pseudo-label, and perturbation terms in the total loss.
struct LossWeights {
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  double alpha3 = 1.0;

  void validate() const {
    for (double a : {alpha1, alpha2, alpha3})
      if (!(std::isfinite(a) && a >= 0)) throw ConfigError("loss weights must be finite and >= 0");
  }
};

struct LrSchedule {
  enum class Kind { inv_decay, constant };
  Kind kind = Kind::inv_decay;
  double decay = 1e-4;
  double power = 0.75;

  double at(double lr0, long t) const {
    if (kind == Kind::constant) return lr0;
    return lr0 * std::pow(1.0 + decay * static_cast<double>(t), -power);
  }
};

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  long total_iters = 800;
  LrSchedule schedule;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("optimizer: lr must be > 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("optimizer: momentum must be in [0, 1)");
    if (!(weight_decay >= 0)) throw ConfigError("optimizer: weight_decay must be >= 0");
    if (total_iters < 1) throw ConfigError("optimizer: total_iters must be >= 1");
  }
};

// SGD with momentum and decoupled-free (classic) weight decay:
// g <- grad + wd * p ; buf <- mu * buf + g ; p <- p - lr * buf
class SgdOptimizer {
 public:
  SgdOptimizer(int n_params, const OptimizerConfig& cfg) : cfg_(cfg), buf_(Vector::Zero(n_params)) {
    cfg.validate();
  }

  double lr_at(long t) const { return cfg_.schedule.at(cfg_.lr, t); }

  void step(Vector& params, const Eigen::Ref<const Vector>& grads, long t) {
    Vector g = grads + cfg_.weight_decay * params;
    buf_ = cfg_.momentum * buf_ + g;
    params -= lr_at(t) * buf_;
  }

 private:
  OptimizerConfig cfg_;
  Vector buf_;
};

// Everything train() needs, with the published defaults.
struct TrainSettings {
  TrainMode mode = TrainMode::dfa;
  LossWeights weights;
  double ent_weight = 1.0;  // ENT baseline's entropy-minimization weight
  OptimizerConfig optimizer;
  MlpSpec model;
  double tau = 0.05;
  bool normalize_weights = true;
  double gamma = 0.1;
  KernelSpec kernel;
  double tau_p = 0.07;
  double eps_dist = 0.3;
  double eps_ent = 0.5;
  PerturbSpec perturb;
  int batch_size = 8;
  int unlabeled_batch_size = 16;
  long eval_interval = 50;
  double warmup_frac = 0.1;  // fraction of iterations with the pseudo term off
  std::uint64_t seed = 0;

  long warmup_iters() const {
    return static_cast<long>(warmup_frac * static_cast<double>(optimizer.total_iters));
  }

  void validate() const {
    weights.validate();
    optimizer.validate();
    kernel.validate();
    perturb.validate();
    if (!(tau > 0)) throw ConfigError("settings: tau must be > 0");
    if (!(tau_p > 0)) throw ConfigError("settings: tau_p must be > 0");
    if (!(gamma >= 0 && gamma <= 1)) throw ConfigError("settings: gamma must be in [0, 1]");
    if (!(ent_weight >= 0)) throw ConfigError("settings: ent_weight must be >= 0");
    if (batch_size < 2 || batch_size % 2 != 0)
      throw ConfigError("settings: batch_size must be even and >= 2");
    if (unlabeled_batch_size < 2)
      throw ConfigError("settings: unlabeled_batch_size must be >= 2");
    if (!(warmup_frac >= 0 && warmup_frac <= 1))
      throw ConfigError("settings: warmup_frac must be in [0, 1]");
    if (eval_interval < 1) throw ConfigError("settings: eval_interval must be >= 1");
    if (!std::isfinite(eps_dist) || !std::isfinite(eps_ent))
      throw ConfigError("settings: selection thresholds must be finite");
  }
};

// Mutable training state: model, banks, optimizer, audit log, RNG streams.
struct TrainerState {
  MlpExtractor extractor;
  CosineClassifier classifier;
  IntermediateBank inter_bank;
  DynamicBank dyn_bank;
  SgdOptimizer optimizer;
  UpdateLog bank_log;
  std::mt19937_64 perturb_rng;
  long iter = 0;

  TrainerState(MlpExtractor f, CosineClassifier c, IntermediateBank ib, DynamicBank db,
               SgdOptimizer opt, std::mt19937_64 prng)
      : extractor(std::move(f)),
        classifier(std::move(c)),
        inter_bank(std::move(ib)),
        dyn_bank(std::move(db)),
        optimizer(std::move(opt)),
        perturb_rng(prng) {}
};

inline TrainerState make_trainer_state(const SSDAEpisode& episode, const TrainSettings& s) {
  s.validate();
  MlpSpec spec = s.model;
  spec.input_dim = episode.input_dim();
  MlpExtractor extractor(spec, s.seed);
  CosineClassifier classifier(episode.n_classes(), spec.feature_dim, s.tau, s.seed,
                              s.normalize_weights);
  auto [ib, db] = init_banks(episode, extractor, classifier, s.gamma);
  SgdOptimizer opt(static_cast<int>(pack_params(extractor, classifier).size()), s.optimizer);
  return TrainerState(std::move(extractor), std::move(classifier), std::move(ib), std::move(db),
                      std::move(opt), make_rng(s.seed, "perturb"));
}

// Per-step outcome: the loss ledger plus selection and bank-audit context.
struct StepStats {
  long iter = 0;
  double lr = 0.0;
  double l_cls = 0.0;
  double l_mmd = 0.0;
  double l_pseudo = 0.0;
  double l_perturb = 0.0;
  double l_ent = 0.0;
  double total = 0.0;
  int m_dist = 0;
  int m_ent = 0;
  int m_pse = 0;
  std::vector<int> selected_episode_index;  // into episode.target_unlabeled()
  std::vector<int> selected_pseudo_y;
  int perturb_fallbacks = 0;
  IntVector labeled_y;      // bank-audit context
  IntVector labeled_preds;  // bank-audit context
};

namespace detail {

inline void check_finite_loss(double v, const char* term, long iter) {
  if (!std::isfinite(v))
    throw NanAbort(term, iter, "value=" + std::to_string(v));
}

}  // namespace detail

/**
 * One optimization step, in the fixed order: labeled forward and L_cls; bank
 * slot replacement then EWMA; prototype snapshot; unlabeled forward and L_mmd
 * against the snapshot; selection and L_pseudo (after warm-up); L_perturb on
 * unlabeled plus labeled-target inputs; one SGD step on the weighted sum.
 * Terms whose weight is zero (or whose mode excludes them) are skipped
 * entirely, leaving the parameter trajectory identical to the reduced mode.
 */
inline StepStats train_step(TrainerState& st, const LabeledBatch& labeled,
                            const UnlabeledBatch& unlabeled, const TrainSettings& s) {
  StepStats stats;
  stats.iter = st.iter;
  stats.lr = st.optimizer.lr_at(st.iter);
  stats.labeled_y = labeled.y;

  // (1) supervised term
  ClassificationResult cls = classification_loss(st.extractor, st.classifier, labeled.x, labeled.y);
  detail::check_finite_loss(cls.loss, "cls", st.iter);
  stats.l_cls = cls.loss;
  stats.labeled_preds = cls.preds;

  // (2) bank maintenance from this batch's predictions
  update_intermediate(st.inter_bank, cls.features, labeled.y, cls.preds, st.iter, &st.bank_log);
  ewma_update(st.dyn_bank, st.inter_bank, &st.bank_log);

  // (3) frozen prototype snapshot for this iteration's alignment terms
  Matrix prototypes = get_prototypes(st.dyn_bank);

  Vector grad = pack_grads(st.extractor, cls.grads);
  const bool dfa = s.mode == TrainMode::dfa;

  std::optional<MlpExtractor::Cache> ucache;
  auto unlabeled_cache = [&]() -> const MlpExtractor::Cache& {
    if (!ucache) ucache = st.extractor.forward(unlabeled.x);
    return *ucache;
  };

  // (4) MMD against the snapshot; gradients reach the extractor only
  if (dfa && s.weights.alpha1 > 0) {
    const auto& cache = unlabeled_cache();
    std::vector<double> sigmas = resolve_bandwidths(prototypes, cache.features, s.kernel);
    Matrix d_feat;
    double l_mmd = mmd_with_grad(prototypes, cache.features, sigmas, &d_feat);
    detail::check_finite_loss(l_mmd, "mmd", st.iter);
    stats.l_mmd = l_mmd;
    ModelGrads g = ModelGrads::zeros(st.extractor, st.classifier);
    st.extractor.backward(cache, d_feat, &g.extractor);
    grad += s.weights.alpha1 * pack_grads(st.extractor, g);
  }

  // (5) gated pseudo-label term (selection stats recorded even in warm-up)
  if (dfa && s.weights.alpha2 > 0) {
    const auto& cache = unlabeled_cache();
    SelectionMask mask;
    PseudoBatch pb = build_pseudo_batch(unlabeled.x, cache.features, prototypes, st.classifier,
                                        s.tau_p, s.eps_dist, s.eps_ent, &mask);
    stats.m_dist = mask.count_dist();
    stats.m_ent = mask.count_ent();
    stats.m_pse = mask.count_pse();
    for (int local : pb.batch_index)
      stats.selected_episode_index.push_back(unlabeled.index[static_cast<size_t>(local)]);
    stats.selected_pseudo_y.assign(pb.pseudo_y.data(), pb.pseudo_y.data() + pb.pseudo_y.size());
    if (st.iter >= s.warmup_iters()) {
      PseudoLossResult pl = pseudo_loss(st.extractor, st.classifier, pb);
      detail::check_finite_loss(pl.loss, "pseudo", st.iter);
      stats.l_pseudo = pl.loss;
      grad += s.weights.alpha2 * pack_grads(st.extractor, pl.grads);
    }
  }

  // (6) perturbation consistency on unlabeled + labeled-target inputs
  if (dfa && s.weights.alpha3 > 0) {
    Matrix target_rows = labeled.target_rows();
    Matrix xs(unlabeled.x.rows() + target_rows.rows(), unlabeled.x.cols());
    xs << unlabeled.x, target_rows;
    PerturbLossResult pr = perturb_loss(st.extractor, st.classifier, xs, s.perturb, st.perturb_rng);
    detail::check_finite_loss(pr.loss, "perturb", st.iter);
    stats.l_perturb = pr.loss;
    stats.perturb_fallbacks = pr.fallback_count;
    grad += s.weights.alpha3 * pack_grads(st.extractor, pr.grads);
  }

  // ENT baseline: entropy minimization on the unlabeled batch
  if (s.mode == TrainMode::ent && s.ent_weight > 0) {
    EntropyLossResult er = entropy_loss(st.extractor, st.classifier, unlabeled.x);
    detail::check_finite_loss(er.loss, "ent", st.iter);
    stats.l_ent = er.loss;
    grad += s.ent_weight * pack_grads(st.extractor, er.grads);
  }

  stats.total = stats.l_cls + s.weights.alpha1 * stats.l_mmd + s.weights.alpha2 * stats.l_pseudo +
                s.weights.alpha3 * stats.l_perturb + s.ent_weight * stats.l_ent;
  detail::check_finite_loss(stats.total, "total", st.iter);

  // (7) one SGD step on the weighted sum
  Vector params = pack_params(st.extractor, st.classifier);
  st.optimizer.step(params, grad, st.iter);
  unpack_params(st.extractor, st.classifier, params);
  ++st.iter;
  return stats;
}

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class;
  std::vector<int> predictions;
};

// Accuracy on the unlabeled target split against its revealed ground truth.
inline EvalResult evaluate(const MlpExtractor& extractor, const CosineClassifier& classifier,
                           const SSDAEpisode& episode) {
  const auto& xs = episode.target_unlabeled();
  const int n = static_cast<int>(xs.size());
  Matrix x(n, episode.input_dim());
  for (int i = 0; i < n; ++i) x.row(i) = xs[static_cast<size_t>(i)].transpose();
  IntVector preds = classifier.predict(extractor.extract(x));

  EvalResult res;
  res.predictions.resize(static_cast<size_t>(n));
  std::vector<int> correct(static_cast<size_t>(episode.n_classes()), 0);
  std::vector<int> total(static_cast<size_t>(episode.n_classes()), 0);
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    int truth = episode.hidden_label_for_eval(i);
    res.predictions[static_cast<size_t>(i)] = preds[i];
    ++total[static_cast<size_t>(truth)];
    if (preds[i] == truth) {
      ++hits;
      ++correct[static_cast<size_t>(truth)];
    }
  }
  res.accuracy = static_cast<double>(hits) / n;
  res.per_class.resize(static_cast<size_t>(episode.n_classes()), 0.0);
  for (int k = 0; k < episode.n_classes(); ++k)
    res.per_class[static_cast<size_t>(k)] =
        total[static_cast<size_t>(k)] > 0
            ? static_cast<double>(correct[static_cast<size_t>(k)]) / total[static_cast<size_t>(k)]
            : 0.0;
  return res;
}

// One row of the metrics stream, written at every evaluation interval.
struct MetricsRecord {
  long iter = 0;
  double lr = 0.0;
  double l_cls = 0.0, l_mmd = 0.0, l_pseudo = 0.0, l_perturb = 0.0, l_ent = 0.0, total = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  int m_dist = 0, m_ent = 0, m_pse = 0;
  double pseudo_precision = -1.0;  // -1 when nothing was selected
  double bank_drift = 0.0;         // mean prototype angle change since last record
  double full_mmd = 0.0;           // offline MMD over the whole unlabeled set
  int perturb_fallbacks = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"iter", iter},
                          {"lr", lr},
                          {"l_cls", l_cls},
                          {"l_mmd", l_mmd},
                          {"l_pseudo", l_pseudo},
                          {"l_perturb", l_perturb},
                          {"l_ent", l_ent},
                          {"total", total},
                          {"accuracy", accuracy},
                          {"per_class_accuracy", per_class_accuracy},
                          {"m_dist", m_dist},
                          {"m_ent", m_ent},
                          {"m_pse", m_pse},
                          {"pseudo_precision", pseudo_precision},
                          {"bank_drift", bank_drift},
                          {"full_mmd", full_mmd},
                          {"perturb_fallbacks", perturb_fallbacks}};
  }

  static MetricsRecord from_json(const nlohmann::json& j) {
    MetricsRecord r;
    r.iter = j.at("iter").get<long>();
    r.lr = j.at("lr").get<double>();
    r.l_cls = j.at("l_cls").get<double>();
    r.l_mmd = j.at("l_mmd").get<double>();
    r.l_pseudo = j.at("l_pseudo").get<double>();
    r.l_perturb = j.at("l_perturb").get<double>();
    r.l_ent = j.at("l_ent").get<double>();
    r.total = j.at("total").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
    r.m_dist = j.at("m_dist").get<int>();
    r.m_ent = j.at("m_ent").get<int>();
    r.m_pse = j.at("m_pse").get<int>();
    r.pseudo_precision = j.at("pseudo_precision").get<double>();
    r.bank_drift = j.at("bank_drift").get<double>();
    r.full_mmd = j.at("full_mmd").get<double>();
    r.perturb_fallbacks = j.at("perturb_fallbacks").get<int>();
    return r;
  }
};

struct TrainResult {
  MlpExtractor extractor;
  CosineClassifier classifier;
  IntermediateBank inter_bank;
  DynamicBank dyn_bank;
  UpdateLog bank_log;
  std::vector<MetricsRecord> metrics;
  std::vector<StepStats> steps;

  TrainResult(TrainerState&& st)
      : extractor(std::move(st.extractor)),
        classifier(std::move(st.classifier)),
        inter_bank(std::move(st.inter_bank)),
        dyn_bank(std::move(st.dyn_bank)),
        bank_log(std::move(st.bank_log)) {}

  const MetricsRecord& final_record() const {
    if (metrics.empty()) throw DataError("train result has no metrics records");
    return metrics.back();
  }
};

using CheckpointHook = std::function<void(const TrainerState&, long)>;

/**
 * Full training run: deterministic given (episode, settings), one metrics
 * record per eval interval plus a final one. The optional hook fires at every
 * evaluation point for checkpointing.
 */
inline TrainResult train(const SSDAEpisode& episode, const TrainSettings& s,
                         const CheckpointHook& hook = {}) {
  s.validate();
  TrainerState st = make_trainer_state(episode, s);
  BalancedLabeledIterator labeled_it(episode, s.batch_size, s.seed);
  UnlabeledIterator unlabeled_it(episode, s.unlabeled_batch_size, s.seed);

  std::vector<MetricsRecord> metrics;
  std::vector<StepStats> steps;
  steps.reserve(static_cast<size_t>(s.optimizer.total_iters));
  Matrix prev_protos = get_prototypes(st.dyn_bank);

  Matrix all_unlabeled(episode.target_unlabeled().size(), episode.input_dim());
  for (size_t i = 0; i < episode.target_unlabeled().size(); ++i)
    all_unlabeled.row(static_cast<long>(i)) = episode.target_unlabeled()[i].transpose();

  for (long t = 0; t < s.optimizer.total_iters; ++t) {
    LabeledBatch lb = labeled_it.next();
    UnlabeledBatch ub = unlabeled_it.next();
    StepStats stats = train_step(st, lb, ub, s);
    const bool record_now = (st.iter % s.eval_interval == 0) || (st.iter == s.optimizer.total_iters);
    if (record_now) {
      EvalResult ev = evaluate(st.extractor, st.classifier, episode);
      MetricsRecord rec;
      rec.iter = st.iter;
      rec.lr = stats.lr;
      rec.l_cls = stats.l_cls;
      rec.l_mmd = stats.l_mmd;
      rec.l_pseudo = stats.l_pseudo;
      rec.l_perturb = stats.l_perturb;
      rec.l_ent = stats.l_ent;
      rec.total = stats.total;
      rec.accuracy = ev.accuracy;
      rec.per_class_accuracy = ev.per_class;
      rec.m_dist = stats.m_dist;
      rec.m_ent = stats.m_ent;
      rec.m_pse = stats.m_pse;
      rec.perturb_fallbacks = stats.perturb_fallbacks;
      if (!stats.selected_episode_index.empty()) {
        int good = 0;
        for (size_t i = 0; i < stats.selected_episode_index.size(); ++i) {
          int idx = stats.selected_episode_index[i];
          if (episode.hidden_label_for_eval(idx) == stats.selected_pseudo_y[i]) ++good;
        }
        rec.pseudo_precision = static_cast<double>(good) / stats.selected_episode_index.size();
      }
      Matrix protos = get_prototypes(st.dyn_bank);
      double drift = 0.0;
      for (int k = 0; k < protos.rows(); ++k)
        drift += angle_between(protos.row(k).transpose(), prev_protos.row(k).transpose());
      rec.bank_drift = drift / protos.rows();
      prev_protos = protos;
      rec.full_mmd = mmd(protos, st.extractor.extract(all_unlabeled), s.kernel);
      metrics.push_back(std::move(rec));
      if (hook) hook(st, st.iter);
    }
    steps.push_back(std::move(stats));
  }

  TrainResult res(std::move(st));
  res.metrics = std::move(metrics);
  res.steps = std::move(steps);
  return res;
}

/**
 * Write all target-domain features (labeled and unlabeled) with their labels
 * and split tags, one record per line, full double precision. Input for
 * offline projection/plotting.
 */
inline void export_embeddings(const MlpExtractor& extractor, const SSDAEpisode& episode,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("export_embeddings: cannot open " + path);
  out.precision(17);
  out << "split,label";
  for (int j = 0; j < extractor.feature_dim(); ++j) out << ",f" << j;
  out << "\n";
  auto write_row = [&](const char* split, int label, const Vector& f) {
    out << split << ',' << label;
    for (int j = 0; j < f.size(); ++j) out << ',' << f[j];
    out << "\n";
  };
  for (const auto& e : episode.target_labeled())
    write_row("target_labeled", e.y, extractor.extract_one(e.x));
  for (size_t i = 0; i < episode.target_unlabeled().size(); ++i)
    write_row("target_unlabeled", episode.hidden_label_for_eval(static_cast<int>(i)),
              extractor.extract_one(episode.target_unlabeled()[i]));
}

constexpr int kCheckpointVersion = 1;

// Versioned checkpoint: extractor spec and parameters, classifier weights and
// temperature, both banks, and the hash of the resolved config that
// produced it.
inline nlohmann::json checkpoint_to_json(const MlpExtractor& extractor,
                                         const CosineClassifier& classifier,
                                         const IntermediateBank& ib, const DynamicBank& db,
                                         const std::string& config_hash, long iteration) {
  nlohmann::json j;
  j["format"] = "dfa-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config_hash"] = config_hash;
  j["iteration"] = iteration;
  const MlpSpec& spec = extractor.spec();
  j["extractor"] = {
      {"input_dim", spec.input_dim},
      {"hidden", spec.hidden},
      {"feature_dim", spec.feature_dim},
      {"activation", spec.activation == Activation::relu ? "relu" : "tanh"},
  };
  Vector p = extractor.get_params();
  j["extractor"]["params"] = std::vector<double>(p.data(), p.data() + p.size());
  j["classifier"] = {{"tau", classifier.tau()},
                     {"normalize_weights", classifier.normalize_weights()},
                     {"n_classes", classifier.n_classes()}};
  std::vector<std::vector<double>> w;
  for (int r = 0; r < classifier.weights().rows(); ++r) {
    Vector row = classifier.weights().row(r).transpose();  // contiguous copy
    w.emplace_back(row.data(), row.data() + row.size());
  }
  j["classifier"]["weights"] = w;
  j["banks"] = {{"gamma", db.gamma()}, {"step", db.step()}};
  std::vector<std::vector<double>> bmat, dmat;
  std::vector<bool> filled;
  for (int r = 0; r < ib.n_classes(); ++r) {
    Vector row = ib.slots().row(r).transpose();
    bmat.emplace_back(row.data(), row.data() + row.size());
    filled.push_back(ib.filled(r));
    Vector drow = db.raw_matrix().row(r).transpose();
    dmat.emplace_back(drow.data(), drow.data() + drow.size());
  }
  j["banks"]["intermediate"] = bmat;
  j["banks"]["filled"] = filled;
  j["banks"]["dynamic"] = dmat;
  return j;
}

inline void save_checkpoint(const std::string& path, const MlpExtractor& extractor,
                            const CosineClassifier& classifier, const IntermediateBank& ib,
                            const DynamicBank& db, const std::string& config_hash,
                            long iteration) {
  std::ofstream out(path);
  if (!out) throw DataError("save_checkpoint: cannot open " + path);
  out << checkpoint_to_json(extractor, classifier, ib, db, config_hash, iteration).dump(2) << "\n";
}

struct LoadedCheckpoint {
  MlpExtractor extractor;
  CosineClassifier classifier;
  IntermediateBank inter_bank;
  DynamicBank dyn_bank;
  std::string config_hash;
  long iteration = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_checkpoint: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != "dfa-checkpoint")
    throw DataError("load_checkpoint: not a checkpoint file");
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw DataError("load_checkpoint: unsupported version " +
                    std::to_string(j.at("version").get<int>()));

  MlpSpec spec;
  spec.input_dim = j.at("extractor").at("input_dim").get<int>();
  spec.hidden = j.at("extractor").at("hidden").get<std::vector<int>>();
  spec.feature_dim = j.at("extractor").at("feature_dim").get<int>();
  spec.activation = j.at("extractor").at("activation").get<std::string>() == "relu"
                        ? Activation::relu
                        : Activation::tanh_fn;
  MlpExtractor extractor(spec, 0);
  auto params = j.at("extractor").at("params").get<std::vector<double>>();
  extractor.set_params(Eigen::Map<const Vector>(params.data(), static_cast<long>(params.size())));

  int n_classes = j.at("classifier").at("n_classes").get<int>();
  CosineClassifier classifier(n_classes, spec.feature_dim,
                              j.at("classifier").at("tau").get<double>(), 0,
                              j.at("classifier").at("normalize_weights").get<bool>());
  auto wrows = j.at("classifier").at("weights").get<std::vector<std::vector<double>>>();
  Matrix w(n_classes, spec.feature_dim);
  for (int r = 0; r < n_classes; ++r)
    for (int c = 0; c < spec.feature_dim; ++c) w(r, c) = wrows[static_cast<size_t>(r)][static_cast<size_t>(c)];
  classifier.set_weights(w);

  double gamma = j.at("banks").at("gamma").get<double>();
  IntermediateBank ib(n_classes, spec.feature_dim);
  DynamicBank db(n_classes, spec.feature_dim, gamma);
  auto bmat = j.at("banks").at("intermediate").get<std::vector<std::vector<double>>>();
  auto dmat = j.at("banks").at("dynamic").get<std::vector<std::vector<double>>>();
  auto filled = j.at("banks").at("filled").get<std::vector<bool>>();
  for (int r = 0; r < n_classes; ++r) {
    if (filled[static_cast<size_t>(r)])
      ib.set_slot(r, Eigen::Map<const Vector>(bmat[static_cast<size_t>(r)].data(), spec.feature_dim));
    db.set_row(r, Eigen::Map<const Vector>(dmat[static_cast<size_t>(r)].data(), spec.feature_dim));
  }
  long bank_steps = j.at("banks").at("step").get<long>();
  for (long t = 0; t < bank_steps; ++t) db.advance_step();

  LoadedCheckpoint out{std::move(extractor), std::move(classifier), std::move(ib), std::move(db),
                       j.at("config_hash").get<std::string>(), j.at("iteration").get<long>()};
  return out;
}

}  // namespace dfa
