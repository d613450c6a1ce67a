#pragma once

#include "dfa/common.hpp"
#include "dfa/dataset.hpp"
#include "dfa/model.hpp"

#include <json.hpp>

#include <fstream>
#include <vector>

namespace dfa {

// Audit trail for the banks: every slot replacement in b and, per EWMA call,
// the set of classes that received a contribution.
struct UpdateLog {
  struct Replacement {
    long step;
    int cls;
  };
  struct EwmaCall {
    long step;
    std::vector<int> classes;
  };
  std::vector<Replacement> replacements;
  std::vector<EwmaCall> ewma_calls;

  std::vector<long> ewma_counts(int n_classes) const {
    std::vector<long> counts(static_cast<size_t>(n_classes), 0);
    for (const auto& call : ewma_calls)
      for (int c : call.classes) ++counts[static_cast<size_t>(c)];
    return counts;
  }
};

/**
 * Intermediate bank b: one slot per class holding the feature of the most
 * recently correctly classified sample of that class.
 */
class IntermediateBank {
 public:
  IntermediateBank(int n_classes, int dim)
      : b_(Matrix::Zero(n_classes, dim)), filled_(static_cast<size_t>(n_classes), false) {}

  int n_classes() const { return static_cast<int>(b_.rows()); }
  int dim() const { return static_cast<int>(b_.cols()); }
  const Matrix& slots() const { return b_; }
  bool filled(int cls) const { return filled_.at(static_cast<size_t>(cls)); }
  bool all_filled() const {
    for (bool f : filled_)
      if (!f) return false;
    return true;
  }

  void set_slot(int cls, const Eigen::Ref<const Vector>& feature) {
    if (cls < 0 || cls >= n_classes())
      throw DataError("intermediate bank: class " + std::to_string(cls) + " out of range");
    if (!is_unit_norm(feature))
      throw NumericError("intermediate bank: slot feature must be unit norm");
    b_.row(cls) = feature.transpose();
    filled_[static_cast<size_t>(cls)] = true;
  }

 private:
  Matrix b_;
  std::vector<bool> filled_;
};

/**
 * Dynamic bank B of class prototypes, updated from b by an EWMA
 * B = gamma * B + (1 - gamma) * b and renormalized row-wise. The pace gamma
 * is in [0, 1]; lower means faster replacement.
 */
class DynamicBank {
 public:
  DynamicBank(int n_classes, int dim, double gamma)
      : B_(Matrix::Zero(n_classes, dim)), gamma_(gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0))
      throw ConfigError("dynamic bank: gamma must be in [0, 1]");
    initialized_.assign(static_cast<size_t>(n_classes), false);
  }

  int n_classes() const { return static_cast<int>(B_.rows()); }
  int dim() const { return static_cast<int>(B_.cols()); }
  double gamma() const { return gamma_; }
  long step() const { return step_; }
  const Matrix& raw_matrix() const { return B_; }

  void set_row(int cls, const Eigen::Ref<const Vector>& proto) {
    if (!is_unit_norm(proto)) throw NumericError("dynamic bank: prototype must be unit norm");
    B_.row(cls) = proto.transpose();
    initialized_[static_cast<size_t>(cls)] = true;
  }

  bool initialized() const {
    for (bool f : initialized_)
      if (!f) return false;
    return true;
  }

  void advance_step() { ++step_; }

 private:
  Matrix B_;
  double gamma_;
  long step_ = 0;
  std::vector<bool> initialized_;
};

/**
 * Initialize both banks from precomputed unit-norm features: each class row is
 * the renormalized mean of that class's features. A class whose mean collapses
 * to (near) zero has no defined direction and is rejected.
 */
inline std::pair<IntermediateBank, DynamicBank> init_banks_from_features(
    const Eigen::Ref<const Matrix>& features, const Eigen::Ref<const IntVector>& labels,
    int n_classes, double gamma) {
  const int d = static_cast<int>(features.cols());
  Matrix sums = Matrix::Zero(n_classes, d);
  std::vector<int> counts(static_cast<size_t>(n_classes), 0);
  for (int i = 0; i < features.rows(); ++i) {
    int y = labels[i];
    if (y < 0 || y >= n_classes) throw DataError("init_banks: label out of range");
    sums.row(y) += features.row(i);
    ++counts[static_cast<size_t>(y)];
  }
  IntermediateBank b(n_classes, d);
  DynamicBank bank(n_classes, d, gamma);
  for (int k = 0; k < n_classes; ++k) {
    if (counts[static_cast<size_t>(k)] == 0)
      throw DataError("init_banks: class " + std::to_string(k) + " has no labeled examples");
    Vector mean = sums.row(k).transpose() / counts[static_cast<size_t>(k)];
    if (mean.norm() < kDegenerateNorm)
      throw NumericError("init_banks: class " + std::to_string(k) +
                         " mean feature is degenerate (zero direction)");
    Vector proto = mean / mean.norm();
    b.set_slot(k, proto);
    bank.set_row(k, proto);
  }
  return {std::move(b), std::move(bank)};
}

/**
 * Initialize banks from an episode: each prototype is the normalized mean of
 * that class's labeled features (source and labeled target) under the current
 * extractor. Every class needs at least one labeled example.
 */
inline std::pair<IntermediateBank, DynamicBank> init_banks(const SSDAEpisode& episode,
                                                           const MlpExtractor& extractor,
                                                           const CosineClassifier& classifier,
                                                           double gamma) {
  (void)classifier;  // initialization uses labeled means only, no predictions
  const size_t n = episode.source().size() + episode.target_labeled().size();
  if (n == 0) throw DataError("init_banks: episode has no labeled examples");
  Matrix x(n, episode.input_dim());
  IntVector y(static_cast<int>(n));
  int r = 0;
  for (const auto& e : episode.source()) {
    x.row(r) = e.x.transpose();
    y[r++] = e.y;
  }
  for (const auto& e : episode.target_labeled()) {
    x.row(r) = e.x.transpose();
    y[r++] = e.y;
  }
  Matrix features = extractor.extract(x);
  return init_banks_from_features(features, y, episode.n_classes(), gamma);
}

/**
 * Slot replacement rule: for each sample whose prediction equals its label,
 * b[label] takes that sample's feature. Later samples in batch order win
 * within-batch collisions. Misclassified samples leave b untouched.
 */
inline void update_intermediate(IntermediateBank& bank,
                                const Eigen::Ref<const Matrix>& features,
                                const Eigen::Ref<const IntVector>& labels,
                                const Eigen::Ref<const IntVector>& predictions,
                                long step, UpdateLog* log = nullptr) {
  if (features.rows() != labels.size() || labels.size() != predictions.size())
    throw DataError("update_intermediate: batch size mismatch");
  for (int i = 0; i < features.rows(); ++i) {
    if (labels[i] < 0 || labels[i] >= bank.n_classes())
      throw DataError("update_intermediate: label " + std::to_string(labels[i]) +
                      " out of range for K=" + std::to_string(bank.n_classes()));
    if (predictions[i] != labels[i]) continue;
    bank.set_slot(labels[i], features.row(i).transpose());
    if (log) log->replacements.push_back({step, labels[i]});
  }
}

/**
 * EWMA update of the dynamic bank from the intermediate bank, row-wise, with
 * renormalization to keep prototypes on the unit sphere. Unfilled b slots
 * leave their B row unchanged. Every filled class contributes exactly once
 * per call regardless of how often it appeared in recent batches.
 */
inline void ewma_update(DynamicBank& bank, const IntermediateBank& b, UpdateLog* log = nullptr) {
  if (!bank.initialized()) throw DataError("ewma_update: dynamic bank not initialized");
  if (bank.n_classes() != b.n_classes() || bank.dim() != b.dim())
    throw DataError("ewma_update: bank shape mismatch");
  const double gamma = bank.gamma();
  UpdateLog::EwmaCall call{bank.step(), {}};
  for (int k = 0; k < bank.n_classes(); ++k) {
    if (!b.filled(k)) continue;
    Vector raw = gamma * bank.raw_matrix().row(k).transpose() +
                 (1.0 - gamma) * b.slots().row(k).transpose();
    double norm = raw.norm();
    if (norm < kDegenerateNorm)
      throw NumericError("ewma_update: class " + std::to_string(k) +
                         " update collapsed to zero direction");
    bank.set_row(k, raw / norm);
    call.classes.push_back(k);
  }
  bank.advance_step();
  if (log) log->ewma_calls.push_back(std::move(call));
}

// Immutable snapshot of the prototypes; callers cannot mutate bank state.
inline Matrix get_prototypes(const DynamicBank& bank) {
  if (!bank.initialized()) throw DataError("get_prototypes: bank not initialized");
  return bank.raw_matrix();
}

// Audit export: one JSON record per event, in chronological order
// (replacements of a step precede that step's EWMA call).
inline void export_update_log(const UpdateLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("export_update_log: cannot open " + path);
  size_t ri = 0, ei = 0;
  while (ri < log.replacements.size() || ei < log.ewma_calls.size()) {
    bool take_replacement =
        ri < log.replacements.size() &&
        (ei >= log.ewma_calls.size() || log.replacements[ri].step <= log.ewma_calls[ei].step);
    if (take_replacement) {
      const auto& r = log.replacements[ri++];
      out << nlohmann::json{{"event", "replacement"}, {"step", r.step}, {"class", r.cls}}.dump()
          << "\n";
    } else {
      const auto& c = log.ewma_calls[ei++];
      out << nlohmann::json{{"event", "ewma"}, {"step", c.step}, {"classes", c.classes}}.dump()
          << "\n";
    }
  }
}

}  // namespace dfa
