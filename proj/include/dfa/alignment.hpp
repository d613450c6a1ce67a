#pragma once

#include "dfa/common.hpp"
#include "dfa/gradcheck.hpp"
#include "dfa/model.hpp"

#include <algorithm>
#include <vector>

namespace dfa {

enum class BandwidthStrategy { median_heuristic, fixed_list };

// Multi-kernel RBF bandwidth selection. With the median heuristic the set is
// {sigma_med / 2^(n/2), ..., sigma_med, ..., sigma_med * 2^(n/2)} recomputed
// per call from the combined sample; a fixed list overrides it.
struct KernelSpec {
  BandwidthStrategy strategy = BandwidthStrategy::median_heuristic;
  std::vector<double> sigmas;  // used when strategy == fixed_list
  int n_kernels = 5;

  void validate() const {
    if (strategy == BandwidthStrategy::fixed_list) {
      if (sigmas.empty()) throw ConfigError("kernel: fixed_list strategy needs at least one sigma");
      for (double s : sigmas)
        if (!(s > 0)) throw ConfigError("kernel: bandwidths must be > 0");
    } else {
      if (n_kernels < 1) throw ConfigError("kernel: n_kernels must be >= 1");
    }
  }
};

namespace detail {

// Median pairwise Euclidean distance over the off-diagonal pairs of the
// stacked sample. Falls back to 1.0 when the points are all coincident.
inline double median_pairwise_distance(const Eigen::Ref<const Matrix>& a,
                                       const Eigen::Ref<const Matrix>& c) {
  Matrix all(a.rows() + c.rows(), a.cols());
  all << a, c;
  std::vector<double> dists;
  dists.reserve(static_cast<size_t>(all.rows()) * (all.rows() - 1) / 2);
  for (int i = 0; i < all.rows(); ++i)
    for (int j = i + 1; j < all.rows(); ++j)
      dists.push_back((all.row(i) - all.row(j)).norm());
  if (dists.empty()) return 1.0;
  size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + mid, dists.end());
  double med = dists[mid];
  return med > kDegenerateNorm ? med : 1.0;
}

}  // namespace detail

inline std::vector<double> resolve_bandwidths(const Eigen::Ref<const Matrix>& a,
                                              const Eigen::Ref<const Matrix>& c,
                                              const KernelSpec& spec) {
  spec.validate();
  if (spec.strategy == BandwidthStrategy::fixed_list) return spec.sigmas;
  double med = detail::median_pairwise_distance(a, c);
  std::vector<double> sigmas;
  sigmas.reserve(static_cast<size_t>(spec.n_kernels));
  int lo = -(spec.n_kernels / 2);
  for (int i = 0; i < spec.n_kernels; ++i)
    sigmas.push_back(med * std::pow(2.0, lo + i));
  return sigmas;
}

/**
 * Summed multi-kernel RBF Gram matrix between the rows of A (n x d) and
 * C (m x d): entry (i, j) = sum_sigma exp(-|A_i - C_j|^2 / (2 sigma^2)).
 */
inline Matrix rbf_gram(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& c,
                       const std::vector<double>& sigmas) {
  if (sigmas.empty()) throw ConfigError("rbf_gram: need at least one bandwidth");
  for (double s : sigmas)
    if (!(s > 0)) throw ConfigError("rbf_gram: bandwidths must be > 0");
  if (!a.allFinite() || !c.allFinite()) throw DataError("rbf_gram: non-finite inputs");
  if (a.cols() != c.cols()) throw DataError("rbf_gram: dimension mismatch");

  // |a_i - c_j|^2 = |a_i|^2 + |c_j|^2 - 2 a_i . c_j
  Vector an = a.rowwise().squaredNorm();
  Vector cn = c.rowwise().squaredNorm();
  Matrix sq = (-2.0 * a * c.transpose());
  sq.colwise() += an;
  sq.rowwise() += cn.transpose();
  sq = sq.cwiseMax(0.0);  // clamp tiny negative round-off

  Matrix gram = Matrix::Zero(a.rows(), c.rows());
  for (double s : sigmas) gram += (-sq / (2.0 * s * s)).array().exp().matrix();
  return gram;
}

inline Matrix rbf_gram(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& c,
                       const KernelSpec& spec) {
  return rbf_gram(a, c, resolve_bandwidths(a, c, spec));
}

/**
 * Biased V-statistic MMD^2 between a prototype set (K x d) and a feature set
 * (n x d): mean(K_pp) - 2 mean(K_pu) + mean(K_uu). Nonnegative up to round-off.
 */
inline double mmd(const Eigen::Ref<const Matrix>& prototypes,
                  const Eigen::Ref<const Matrix>& features,
                  const std::vector<double>& sigmas) {
  if (prototypes.rows() < 2) throw DataError("mmd: need at least 2 prototypes");
  if (features.rows() < 2) throw DataError("mmd: need at least 2 samples");
  Matrix kpp = rbf_gram(prototypes, prototypes, sigmas);
  Matrix kpu = rbf_gram(prototypes, features, sigmas);
  Matrix kuu = rbf_gram(features, features, sigmas);
  return kpp.mean() - 2.0 * kpu.mean() + kuu.mean();
}

inline double mmd(const Eigen::Ref<const Matrix>& prototypes,
                  const Eigen::Ref<const Matrix>& features, const KernelSpec& spec) {
  return mmd(prototypes, features, resolve_bandwidths(prototypes, features, spec));
}

/**
 * MMD with its gradient w.r.t. the feature rows. Prototypes are constants:
 * the bank moves only by its own EWMA rule, never by backprop. Bandwidths are
 * treated as constants of the estimate (the median heuristic is resolved
 * before differentiation).
 */
inline double mmd_with_grad(const Eigen::Ref<const Matrix>& prototypes,
                            const Eigen::Ref<const Matrix>& features,
                            const std::vector<double>& sigmas, Matrix* d_features) {
  const int K = static_cast<int>(prototypes.rows());
  const int n = static_cast<int>(features.rows());
  if (K < 2) throw DataError("mmd: need at least 2 prototypes");
  if (n < 2) throw DataError("mmd: need at least 2 samples");

  double value = mmd(prototypes, features, sigmas);
  if (!d_features) return value;

  *d_features = Matrix::Zero(n, features.cols());
  for (double s : sigmas) {
    const double inv_s2 = 1.0 / (s * s);
    // cross term: -2/(K n) sum_{i,j} k(p_i, u_j); d/du_j = k * (p_i - u_j)/s^2
    for (int j = 0; j < n; ++j) {
      Vector acc = Vector::Zero(features.cols());
      for (int i = 0; i < K; ++i) {
        Vector diff = prototypes.row(i) - features.row(j);
        double k = std::exp(-0.5 * diff.squaredNorm() * inv_s2);
        acc += k * diff * inv_s2;
      }
      d_features->row(j) += (-2.0 / (K * n)) * acc.transpose();
    }
    // self term: 1/n^2 sum_{i,j} k(u_i, u_j); row j collects both factors
    for (int j = 0; j < n; ++j) {
      Vector acc = Vector::Zero(features.cols());
      for (int i = 0; i < n; ++i) {
        Vector diff = features.row(i) - features.row(j);
        double k = std::exp(-0.5 * diff.squaredNorm() * inv_s2);
        acc += k * diff * inv_s2;
      }
      d_features->row(j) += (2.0 / (static_cast<double>(n) * n)) * acc.transpose();
    }
  }
  return value;
}

struct MmdLossResult {
  double loss = 0.0;
  MlpExtractor::Grads grads;  // extractor only; no gradient reaches the bank
};

/**
 * L_mmd for a raw input batch: extract features, measure MMD against the
 * prototype snapshot, and push the gradient into the extractor.
 */
inline MmdLossResult mmd_loss(const MlpExtractor& extractor,
                              const Eigen::Ref<const Matrix>& prototypes,
                              const Eigen::Ref<const Matrix>& x,
                              const KernelSpec& spec) {
  auto cache = extractor.forward(x);
  std::vector<double> sigmas = resolve_bandwidths(prototypes, cache.features, spec);
  Matrix d_feat;
  MmdLossResult res;
  res.loss = mmd_with_grad(prototypes, cache.features, sigmas, &d_feat);
  res.grads = extractor.zero_grads();
  extractor.backward(cache, d_feat, &res.grads);
  return res;
}

/**
 * Finite-difference audit of the analytic L_mmd gradient: returns the max
 * relative error over all extractor parameters. Bandwidths are frozen to the
 * values resolved at the evaluation point so both sides differentiate the
 * same function.
 */
inline double mmd_loss_grad_check(MlpExtractor& extractor,
                                  const Eigen::Ref<const Matrix>& prototypes,
                                  const Eigen::Ref<const Matrix>& x,
                                  const KernelSpec& spec, double step = 1e-5) {
  Matrix feats = extractor.extract(x);
  std::vector<double> sigmas = resolve_bandwidths(prototypes, feats, spec);

  auto cache = extractor.forward(x);
  Matrix d_feat;
  mmd_with_grad(prototypes, cache.features, sigmas, &d_feat);
  auto grads = extractor.zero_grads();
  extractor.backward(cache, d_feat, &grads);
  Vector analytic = extractor.pack_grads(grads);

  Vector params = extractor.get_params();
  auto loss_at = [&](const Vector& p) {
    extractor.set_params(p);
    double v = mmd(prototypes, extractor.extract(x), sigmas);
    return v;
  };
  Vector numeric = central_difference(loss_at, params, step);
  extractor.set_params(params);
  return max_relative_error(analytic, numeric);
}

}  // namespace dfa
