#pragma once

#include "dfa/common.hpp"
#include "dfa/model.hpp"

#include <random>

namespace dfa {

// Adversarial-perturbation settings: radius is the final perturbation norm
// per sample, xi scales the finite-difference probe, power_iters the number
// of probe refinements.
struct PerturbSpec {
  double radius = 0.5;
  double xi = 1e-4;
  int power_iters = 1;

  void validate() const {
    if (!(radius > 0)) throw ConfigError("perturb: radius must be > 0");
    if (!(xi > 0)) throw ConfigError("perturb: xi must be > 0");
    if (power_iters < 1) throw ConfigError("perturb: power_iters must be >= 1");
  }
};

struct PerturbationResult {
  Matrix r;               // per-sample perturbations, each row of norm radius
  int fallback_count = 0; // samples whose probe gradient vanished
};

namespace detail {

// Per-sample KL(p || q) from probabilities p and log-probabilities of q.
inline double kl_row(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& logp,
                     const Eigen::Ref<const Vector>& logq) {
  double kl = 0.0;
  for (int k = 0; k < p.size(); ++k)
    if (p[k] > 0) kl += p[k] * (logp[k] - logq[k]);
  return kl;
}

// Gradient of sum_i KL(p_i || q(x_i)) w.r.t. the inputs of the q branch;
// the p branch is a constant target.
inline Matrix kl_input_grad(const MlpExtractor& extractor, const CosineClassifier& classifier,
                            const Eigen::Ref<const Matrix>& x_q,
                            const Eigen::Ref<const Matrix>& p_clean) {
  auto cache = extractor.forward(x_q);
  Matrix q = softmax_rows(classifier.logits(cache.features));
  Matrix d_logits = q - p_clean;  // d/dlogits of -sum_k p_k log q_k
  Matrix d_feat = classifier.backward(cache.features, d_logits, nullptr);
  return extractor.backward(cache, d_feat, nullptr);
}

}  // namespace detail

/**
 * VAT-style perturbation: starting from a random unit probe per sample,
 * refine the direction by power iteration on the KL between the clean
 * prediction (held constant) and the prediction at the probed input, then
 * orient each direction toward the side with the larger KL and scale to the
 * radius. Samples whose probe gradient vanishes (e.g. a constant model) fall
 * back to their random unit direction.
 */
inline PerturbationResult compute_perturbation(const Eigen::Ref<const Matrix>& x,
                                               const MlpExtractor& extractor,
                                               const CosineClassifier& classifier,
                                               const PerturbSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());

  Matrix p_clean = softmax_rows(classifier.logits(extractor.extract(x)));
  Matrix logp_clean = p_clean.array().max(1e-300).log();

  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix dir(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) dir(i, j) = gauss(rng);
    double norm = dir.row(i).norm();
    if (norm < kDegenerateNorm) dir.row(i).setConstant(1.0 / std::sqrt(static_cast<double>(d)));
    else dir.row(i) /= norm;
  }

  PerturbationResult res;
  std::vector<bool> fell_back(static_cast<size_t>(n), false);
  for (int it = 0; it < spec.power_iters; ++it) {
    Matrix probe = x + spec.xi * dir;
    Matrix g = detail::kl_input_grad(extractor, classifier, probe, p_clean);
    for (int i = 0; i < n; ++i) {
      double norm = g.row(i).norm();
      if (norm < kDegenerateNorm) {
        fell_back[static_cast<size_t>(i)] = true;  // keep the random direction
      } else {
        dir.row(i) = g.row(i) / norm;
        fell_back[static_cast<size_t>(i)] = false;
      }
    }
  }

  // Orient each direction toward the larger-KL side at the full radius.
  auto batch_kl = [&](const Matrix& xp) {
    auto cache = extractor.forward(xp);
    Matrix logq = log_softmax_rows(classifier.logits(cache.features));
    Vector kl(n);
    for (int i = 0; i < n; ++i)
      kl[i] = detail::kl_row(p_clean.row(i).transpose(), logp_clean.row(i).transpose(),
                             logq.row(i).transpose());
    return kl;
  };
  Vector kl_pos = batch_kl(x + spec.radius * dir);
  Vector kl_neg = batch_kl(x - spec.radius * dir);

  res.r.resize(n, d);
  for (int i = 0; i < n; ++i) {
    double sign = kl_pos[i] >= kl_neg[i] ? 1.0 : -1.0;
    res.r.row(i) = spec.radius * sign * dir.row(i);
    if (fell_back[static_cast<size_t>(i)]) ++res.fallback_count;
  }
  return res;
}

struct PerturbLossResult {
  double loss = 0.0;
  ModelGrads grads;
  int fallback_count = 0;
};

/**
 * Consistency loss for a precomputed perturbation: mean over the batch of
 * KL(P_clean || P_perturbed) on class-probability outputs, with the clean
 * branch treated as a constant target (stop-gradient).
 */
inline PerturbLossResult perturb_loss_with_direction(const MlpExtractor& extractor,
                                                     const CosineClassifier& classifier,
                                                     const Eigen::Ref<const Matrix>& x,
                                                     const Eigen::Ref<const Matrix>& r) {
  const int n = static_cast<int>(x.rows());
  if (n == 0) throw DataError("perturb_loss: empty batch");
  if (r.rows() != n || r.cols() != x.cols())
    throw DataError("perturb_loss: perturbation shape mismatch");

  Matrix p_clean = softmax_rows(classifier.logits(extractor.extract(x)));
  Matrix logp_clean = p_clean.array().max(1e-300).log();

  auto cache = extractor.forward(x + r);
  Matrix logits = classifier.logits(cache.features);
  Matrix q = softmax_rows(logits);
  Matrix logq = log_softmax_rows(logits);

  PerturbLossResult res;
  res.grads = ModelGrads::zeros(extractor, classifier);
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    total += detail::kl_row(p_clean.row(i).transpose(), logp_clean.row(i).transpose(),
                            logq.row(i).transpose());
  res.loss = total / n;

  Matrix d_logits = (q - p_clean) / n;
  Matrix d_feat = classifier.backward(cache.features, d_logits, &res.grads.classifier_w);
  extractor.backward(cache, d_feat, &res.grads.extractor);
  return res;
}

/**
 * Full consistency term: optimize the perturbation for the current model,
 * then penalize divergence between clean and perturbed predictions.
 */
inline PerturbLossResult perturb_loss(const MlpExtractor& extractor,
                                      const CosineClassifier& classifier,
                                      const Eigen::Ref<const Matrix>& x,
                                      const PerturbSpec& spec, std::mt19937_64& rng) {
  PerturbationResult pert = compute_perturbation(x, extractor, classifier, spec, rng);
  PerturbLossResult res = perturb_loss_with_direction(extractor, classifier, x, pert.r);
  res.fallback_count = pert.fallback_count;
  return res;
}

}  // namespace dfa
