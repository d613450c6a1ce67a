#pragma once

#include "dfa/common.hpp"
#include "dfa/model.hpp"

#include <vector>

namespace dfa {

// Per-sample selection outcome over one unlabeled batch.
// in_pse is the elementwise conjunction of in_dist and in_ent.
struct SelectionMask {
  std::vector<bool> in_dist;
  std::vector<bool> in_ent;
  std::vector<bool> in_pse;

  int count_dist() const { return count(in_dist); }
  int count_ent() const { return count(in_ent); }
  int count_pse() const { return count(in_pse); }

 private:
  static int count(const std::vector<bool>& v) {
    int c = 0;
    for (bool b : v) c += b ? 1 : 0;
    return c;
  }
};

/**
 * Prototype-distance softmax: row i, entry k = softmax_k((m_k . f_i) / tau_p),
 * the pseudo-label scoring distribution over class prototypes.
 */
inline Matrix prototype_softmax(const Eigen::Ref<const Matrix>& features,
                                const Eigen::Ref<const Matrix>& prototypes, double tau_p) {
  if (!(tau_p > 0)) throw ConfigError("prototype_softmax: tau_p must be > 0");
  if (features.cols() != prototypes.cols())
    throw DataError("prototype_softmax: feature/prototype dimension mismatch");
  return softmax_rows(features * prototypes.transpose() / tau_p);
}

// Shannon entropy in nats, with 0 * log 0 = 0.
inline double entropy(const Eigen::Ref<const Vector>& p) {
  double h = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    if (p[i] < -1e-9) throw DataError("entropy: negative probability");
    if (p[i] > 0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

/**
 * Dual-threshold selection: a sample enters M_dist when its best prototype
 * cosine similarity exceeds eps_dist, enters M_ent when the entropy of its
 * prototype-distance distribution is below eps_ent, and enters M_pse when
 * both hold. An empty selection is valid.
 */
inline SelectionMask select(const Eigen::Ref<const Matrix>& features,
                            const Eigen::Ref<const Matrix>& prototypes, double tau_p,
                            double eps_dist, double eps_ent) {
  if (!std::isfinite(eps_dist) || !std::isfinite(eps_ent))
    throw ConfigError("select: thresholds must be finite");
  const int n = static_cast<int>(features.rows());
  Matrix sims = features * prototypes.transpose();
  Matrix p_dist = prototype_softmax(features, prototypes, tau_p);
  SelectionMask mask;
  mask.in_dist.resize(static_cast<size_t>(n));
  mask.in_ent.resize(static_cast<size_t>(n));
  mask.in_pse.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double best = sims.row(i).maxCoeff();
    double h = entropy(p_dist.row(i).transpose());
    mask.in_dist[static_cast<size_t>(i)] = best > eps_dist;
    mask.in_ent[static_cast<size_t>(i)] = h < eps_ent;
    mask.in_pse[static_cast<size_t>(i)] =
        mask.in_dist[static_cast<size_t>(i)] && mask.in_ent[static_cast<size_t>(i)];
  }
  return mask;
}

/**
 * The unlabeled samples that passed both gates, together with their
 * pseudo-labels. The pseudo-label is the live classifier's argmax (the
 * "network output"), while the gates use prototype distances; the two are
 * deliberately distinct mechanisms. Immutable once built.
 */
struct PseudoBatch {
  Matrix x;                      // selected inputs, rows
  std::vector<int> batch_index;  // positions within the originating batch
  IntVector pseudo_y;            // classifier argmax at selection time
  Vector scores;                 // max prototype similarity per selected sample
  Vector entropies;              // prototype-distribution entropy per selected sample
  int full_batch_size = 0;       // denominator of the indicator-style mean

  int size() const { return static_cast<int>(x.rows()); }
};

/**
 * Run selection on a batch of unlabeled inputs given frozen features and
 * prototype snapshot, assigning classifier-argmax pseudo-labels to the
 * survivors. No gradient flows through label assignment.
 */
inline PseudoBatch build_pseudo_batch(const Eigen::Ref<const Matrix>& x,
                                      const Eigen::Ref<const Matrix>& features,
                                      const Eigen::Ref<const Matrix>& prototypes,
                                      const CosineClassifier& classifier, double tau_p,
                                      double eps_dist, double eps_ent,
                                      SelectionMask* mask_out = nullptr) {
  const int n = static_cast<int>(x.rows());
  SelectionMask mask = select(features, prototypes, tau_p, eps_dist, eps_ent);
  Matrix sims = features * prototypes.transpose();
  Matrix p_dist = prototype_softmax(features, prototypes, tau_p);
  IntVector preds = classifier.predict(features);

  PseudoBatch batch;
  batch.full_batch_size = n;
  int m = mask.count_pse();
  batch.x.resize(m, x.cols());
  batch.pseudo_y.resize(m);
  batch.scores.resize(m);
  batch.entropies.resize(m);
  batch.batch_index.reserve(static_cast<size_t>(m));
  int r = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask.in_pse[static_cast<size_t>(i)]) continue;
    batch.x.row(r) = x.row(i);
    batch.pseudo_y[r] = preds[i];
    batch.scores[r] = sims.row(i).maxCoeff();
    batch.entropies[r] = entropy(p_dist.row(i).transpose());
    batch.batch_index.push_back(i);
    ++r;
  }
  if (mask_out) *mask_out = std::move(mask);
  return batch;
}

struct PseudoLossResult {
  double loss = 0.0;
  ModelGrads grads;
};

/**
 * Pseudo-label cross-entropy with indicator semantics: the mean over the
 * *full* unlabeled batch of -log p(y = pseudo_y | x), non-selected samples
 * contributing 0. An empty selection yields a zero loss, not an error.
 */
inline PseudoLossResult pseudo_loss(const MlpExtractor& extractor,
                                    const CosineClassifier& classifier,
                                    const PseudoBatch& batch) {
  PseudoLossResult res;
  res.grads = ModelGrads::zeros(extractor, classifier);
  if (batch.size() == 0) return res;
  if (batch.full_batch_size <= 0)
    throw DataError("pseudo_loss: full_batch_size must be positive");

  auto cache = extractor.forward(batch.x);
  Matrix logits = classifier.logits(cache.features);
  Matrix logp = log_softmax_rows(logits);
  Matrix probs = softmax_rows(logits);

  const double denom = batch.full_batch_size;
  double loss = 0.0;
  Matrix d_logits = probs;
  for (int i = 0; i < batch.size(); ++i) {
    loss -= logp(i, batch.pseudo_y[i]);
    d_logits(i, batch.pseudo_y[i]) -= 1.0;
  }
  res.loss = loss / denom;
  d_logits /= denom;
  Matrix d_feat = classifier.backward(cache.features, d_logits, &res.grads.classifier_w);
  extractor.backward(cache, d_feat, &res.grads.extractor);
  return res;
}

}  // namespace dfa
