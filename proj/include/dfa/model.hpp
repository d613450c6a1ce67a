#pragma once

#include "dfa/common.hpp"

#include <string>
#include <vector>

namespace dfa {

enum class Activation { tanh_fn, relu };

struct MlpSpec {
  int input_dim = 2;
  std::vector<int> hidden = {32, 32};
  int feature_dim = 8;
  Activation activation = Activation::tanh_fn;
};

/**
 * Feature extractor m = f(x): an MLP whose raw output is L2-normalized to
 * unit length. Forward passes cache enough state for an exact reverse pass,
 * which yields parameter gradients and the gradient w.r.t. the input (the
 * latter drives the adversarial perturbation probe).
 */
class MlpExtractor {
 public:
  struct Grads {
    std::vector<Matrix> dW;
    std::vector<Vector> db;
  };

  struct Cache {
    Matrix input;                // n x d_in
    std::vector<Matrix> pre;     // pre-activations per hidden layer
    std::vector<Matrix> post;    // activations per hidden layer
    Matrix raw;                  // n x d, before normalization
    Vector raw_norms;            // n
    Matrix features;             // n x d, unit rows
  };

  MlpExtractor(const MlpSpec& spec, std::uint64_t seed) : spec_(spec) {
    if (spec.input_dim < 1) throw ConfigError("extractor: input_dim must be >= 1");
    if (spec.feature_dim < 1) throw ConfigError("extractor: feature_dim must be >= 1");
    for (int h : spec.hidden)
      if (h < 1) throw ConfigError("extractor: hidden widths must be >= 1");
    auto rng = make_rng(seed, "extractor_init");
    int in = spec.input_dim;
    for (int h : spec.hidden) {
      W_.push_back(glorot(h, in, rng));
      b_.push_back(Vector::Zero(h));
      in = h;
    }
    W_.push_back(glorot(spec.feature_dim, in, rng));
    b_.push_back(Vector::Zero(spec.feature_dim));
  }

  const MlpSpec& spec() const { return spec_; }
  int feature_dim() const { return spec_.feature_dim; }
  int n_layers() const { return static_cast<int>(W_.size()); }

  // Forward with caches; rejects raw features too short to normalize.
  Cache forward(const Eigen::Ref<const Matrix>& x) const {
    if (x.cols() != spec_.input_dim)
      throw DataError("extractor: input has " + std::to_string(x.cols()) +
                      " columns, expected " + std::to_string(spec_.input_dim));
    if (!x.allFinite()) throw DataError("extractor: non-finite input");
    Cache c;
    c.input = x;
    Matrix a = x;
    const int L = static_cast<int>(spec_.hidden.size());
    for (int l = 0; l < L; ++l) {
      Matrix z = (a * W_[static_cast<size_t>(l)].transpose()).rowwise() +
                 b_[static_cast<size_t>(l)].transpose();
      c.pre.push_back(z);
      a = activate(z);
      c.post.push_back(a);
    }
    c.raw = (a * W_.back().transpose()).rowwise() + b_.back().transpose();
    c.raw_norms = c.raw.rowwise().norm();
    for (int i = 0; i < c.raw_norms.size(); ++i) {
      // a non-finite norm is not trapped here: it propagates to the loss,
      // where the trainer's NaN abort names the offending term
      if (c.raw_norms[i] < kDegenerateNorm)
        throw NumericError("extractor: raw feature norm " + std::to_string(c.raw_norms[i]) +
                           " at row " + std::to_string(i) + " is degenerate");
    }
    c.features = c.raw.array().colwise() / c.raw_norms.array();
    return c;
  }

  // Features only.
  Matrix extract(const Eigen::Ref<const Matrix>& x) const { return forward(x).features; }

  Vector extract_one(const Eigen::Ref<const Vector>& x) const {
    Matrix row = x.transpose();
    return extract(row).row(0).transpose();
  }

  Grads zero_grads() const {
    Grads g;
    for (const auto& w : W_) g.dW.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const auto& bias : b_) g.db.push_back(Vector::Zero(bias.size()));
    return g;
  }

  /**
   * Reverse pass. `d_features` is dL/dm (n x d). Parameter gradients are
   * accumulated into `grads` (if non-null); returns dL/dx (n x d_in).
   */
  Matrix backward(const Cache& c, const Eigen::Ref<const Matrix>& d_features,
                  Grads* grads) const {
    const int n = static_cast<int>(c.input.rows());
    // Through the normalization: d_raw = (d_m - (d_m . m) m) / |raw|
    Matrix d_raw(n, spec_.feature_dim);
    for (int i = 0; i < n; ++i) {
      const auto m = c.features.row(i);
      const auto g = d_features.row(i);
      d_raw.row(i) = (g - g.dot(m) * m) / c.raw_norms[i];
    }
    const int L = static_cast<int>(spec_.hidden.size());
    const Matrix& last_in = L > 0 ? c.post.back() : c.input;
    if (grads) {
      grads->dW.back() += d_raw.transpose() * last_in;
      grads->db.back() += d_raw.colwise().sum().transpose();
    }
    Matrix d_a = d_raw * W_.back();
    for (int l = L - 1; l >= 0; --l) {
      Matrix d_z = d_a.cwiseProduct(activate_grad(c.pre[static_cast<size_t>(l)]));
      const Matrix& in = l > 0 ? c.post[static_cast<size_t>(l - 1)] : c.input;
      if (grads) {
        grads->dW[static_cast<size_t>(l)] += d_z.transpose() * in;
        grads->db[static_cast<size_t>(l)] += d_z.colwise().sum().transpose();
      }
      d_a = d_z * W_[static_cast<size_t>(l)];
    }
    return d_a;
  }

  int n_params() const {
    int n = 0;
    for (size_t l = 0; l < W_.size(); ++l)
      n += static_cast<int>(W_[l].size() + b_[l].size());
    return n;
  }

  Vector get_params() const {
    Vector v(n_params());
    int at = 0;
    for (size_t l = 0; l < W_.size(); ++l) {
      for (int r = 0; r < W_[l].rows(); ++r)
        for (int cc = 0; cc < W_[l].cols(); ++cc) v[at++] = W_[l](r, cc);
      for (int r = 0; r < b_[l].size(); ++r) v[at++] = b_[l][r];
    }
    return v;
  }

  void set_params(const Eigen::Ref<const Vector>& v) {
    if (v.size() != n_params()) throw ConfigError("extractor: parameter vector size mismatch");
    int at = 0;
    for (size_t l = 0; l < W_.size(); ++l) {
      for (int r = 0; r < W_[l].rows(); ++r)
        for (int cc = 0; cc < W_[l].cols(); ++cc) W_[l](r, cc) = v[at++];
      for (int r = 0; r < b_[l].size(); ++r) b_[l][r] = v[at++];
    }
  }

  Vector pack_grads(const Grads& g) const {
    Vector v(n_params());
    int at = 0;
    for (size_t l = 0; l < g.dW.size(); ++l) {
      for (int r = 0; r < g.dW[l].rows(); ++r)
        for (int cc = 0; cc < g.dW[l].cols(); ++cc) v[at++] = g.dW[l](r, cc);
      for (int r = 0; r < g.db[l].size(); ++r) v[at++] = g.db[l][r];
    }
    return v;
  }

 private:
  Matrix activate(const Matrix& z) const {
    if (spec_.activation == Activation::relu) return z.cwiseMax(0.0);
    return z.array().tanh();
  }
  Matrix activate_grad(const Matrix& z) const {
    if (spec_.activation == Activation::relu)
      return (z.array() > 0.0).cast<double>();
    return 1.0 - z.array().tanh().square();
  }
  static Matrix glorot(int rows, int cols, std::mt19937_64& rng) {
    double limit = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix w(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) w(r, c) = u(rng);
    return w;
  }

  MlpSpec spec_;
  std::vector<Matrix> W_;
  std::vector<Vector> b_;
};

// Row-wise numerically stable softmax.
inline Matrix softmax_rows(const Eigen::Ref<const Matrix>& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    double mx = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - mx).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

inline Matrix log_softmax_rows(const Eigen::Ref<const Matrix>& logits) {
  Matrix lp(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    double mx = logits.row(i).maxCoeff();
    Eigen::ArrayXd shifted = logits.row(i).array() - mx;
    double lse = std::log(shifted.exp().sum());
    lp.row(i) = shifted - lse;
  }
  return lp;
}

/**
 * Temperature-scaled cosine classifier: logit_k = (w_k . m) / tau with the
 * prototype weight rows optionally L2-normalized first, so the numerator is a
 * true cosine similarity for unit-norm features.
 */
class CosineClassifier {
 public:
  CosineClassifier(int n_classes, int feature_dim, double tau, std::uint64_t seed,
                   bool normalize_weights = true)
      : tau_(tau), normalize_weights_(normalize_weights) {
    if (!(tau > 0)) throw ConfigError("classifier: temperature must be > 0");
    if (n_classes < 2) throw ConfigError("classifier: need at least 2 classes");
    auto rng = make_rng(seed, "classifier_init");
    double limit = std::sqrt(6.0 / (n_classes + feature_dim));
    std::uniform_real_distribution<double> u(-limit, limit);
    W_.resize(n_classes, feature_dim);
    for (int r = 0; r < n_classes; ++r)
      for (int c = 0; c < feature_dim; ++c) W_(r, c) = u(rng);
  }

  int n_classes() const { return static_cast<int>(W_.rows()); }
  int feature_dim() const { return static_cast<int>(W_.cols()); }
  double tau() const { return tau_; }
  bool normalize_weights() const { return normalize_weights_; }
  const Matrix& weights() const { return W_; }
  void set_weights(const Matrix& w) {
    if (w.rows() != W_.rows() || w.cols() != W_.cols())
      throw ConfigError("classifier: weight shape mismatch");
    W_ = w;
  }

  // Effective prototype weight rows entering the dot product.
  Matrix effective_weights() const {
    if (!normalize_weights_) return W_;
    Matrix out = W_;
    for (int r = 0; r < out.rows(); ++r)
      out.row(r) = normalize_or_throw(out.row(r).transpose(), "classifier weight row").transpose();
    return out;
  }

  Matrix logits(const Eigen::Ref<const Matrix>& features) const {
    return features * effective_weights().transpose() / tau_;
  }

  // P(k|m) rows; each row sums to 1.
  Matrix classify(const Eigen::Ref<const Matrix>& features) const {
    return softmax_rows(logits(features));
  }

  Vector classify_one(const Eigen::Ref<const Vector>& m) const {
    Matrix row = m.transpose();
    return classify(row).row(0).transpose();
  }

  IntVector predict(const Eigen::Ref<const Matrix>& features) const {
    Matrix l = logits(features);
    IntVector preds(l.rows());
    for (int i = 0; i < l.rows(); ++i) {
      int best;
      l.row(i).maxCoeff(&best);
      preds[i] = best;
    }
    return preds;
  }

  /**
   * Reverse pass through the logits. Accumulates dL/dW into `d_weights`
   * (if non-null) and returns dL/dfeatures.
   */
  Matrix backward(const Eigen::Ref<const Matrix>& features,
                  const Eigen::Ref<const Matrix>& d_logits,
                  Matrix* d_weights) const {
    Matrix what = effective_weights();
    Matrix d_feat = d_logits * what / tau_;
    if (d_weights) {
      Matrix d_what = d_logits.transpose() * features / tau_;
      if (normalize_weights_) {
        for (int r = 0; r < W_.rows(); ++r) {
          double norm = W_.row(r).norm();
          Eigen::RowVectorXd wh = what.row(r);
          d_weights->row(r) += (d_what.row(r) - d_what.row(r).dot(wh) * wh) / norm;
        }
      } else {
        *d_weights += d_what;
      }
    }
    return d_feat;
  }

 private:
  Matrix W_;
  double tau_;
  bool normalize_weights_;
};

// Gradient bundle for one loss term over the whole model.
struct ModelGrads {
  MlpExtractor::Grads extractor;
  Matrix classifier_w;

  static ModelGrads zeros(const MlpExtractor& f, const CosineClassifier& c) {
    ModelGrads g;
    g.extractor = f.zero_grads();
    g.classifier_w = Matrix::Zero(c.n_classes(), c.feature_dim());
    return g;
  }
};

// Flat parameter/gradient packing: extractor layers first, classifier last.
inline Vector pack_params(const MlpExtractor& f, const CosineClassifier& c) {
  Vector fv = f.get_params();
  Vector v(fv.size() + c.weights().size());
  v.head(fv.size()) = fv;
  int at = static_cast<int>(fv.size());
  const Matrix& w = c.weights();
  for (int r = 0; r < w.rows(); ++r)
    for (int k = 0; k < w.cols(); ++k) v[at++] = w(r, k);
  return v;
}

inline void unpack_params(MlpExtractor& f, CosineClassifier& c, const Eigen::Ref<const Vector>& v) {
  f.set_params(v.head(f.n_params()));
  Matrix w(c.n_classes(), c.feature_dim());
  int at = f.n_params();
  for (int r = 0; r < w.rows(); ++r)
    for (int k = 0; k < w.cols(); ++k) w(r, k) = v[at++];
  c.set_weights(w);
}

inline Vector pack_grads(const MlpExtractor& f, const ModelGrads& g) {
  Vector fv = f.pack_grads(g.extractor);
  Vector v(fv.size() + g.classifier_w.size());
  v.head(fv.size()) = fv;
  int at = static_cast<int>(fv.size());
  for (int r = 0; r < g.classifier_w.rows(); ++r)
    for (int k = 0; k < g.classifier_w.cols(); ++k) v[at++] = g.classifier_w(r, k);
  return v;
}

struct ClassificationResult {
  double loss = 0.0;
  Matrix probs;      // n x K
  IntVector preds;   // n, argmax of the live classifier
  Matrix features;   // n x d
  ModelGrads grads;
};

/**
 * Supervised cross-entropy over a labeled batch (mean negative log-probability
 * of the true class), with analytic gradients for every parameter.
 */
inline ClassificationResult classification_loss(const MlpExtractor& extractor,
                                                const CosineClassifier& classifier,
                                                const Eigen::Ref<const Matrix>& x,
                                                const Eigen::Ref<const IntVector>& y) {
  const int n = static_cast<int>(x.rows());
  if (n == 0) throw DataError("classification_loss: empty batch");
  for (int i = 0; i < n; ++i)
    if (y[i] < 0 || y[i] >= classifier.n_classes())
      throw DataError("classification_loss: label out of range at row " + std::to_string(i));

  auto cache = extractor.forward(x);
  Matrix logits = classifier.logits(cache.features);
  Matrix logp = log_softmax_rows(logits);
  Matrix probs = softmax_rows(logits);

  double loss = 0.0;
  for (int i = 0; i < n; ++i) loss -= logp(i, y[i]);
  loss /= n;

  Matrix d_logits = probs;
  for (int i = 0; i < n; ++i) d_logits(i, y[i]) -= 1.0;
  d_logits /= n;

  ClassificationResult res;
  res.grads = ModelGrads::zeros(extractor, classifier);
  Matrix d_feat = classifier.backward(cache.features, d_logits, &res.grads.classifier_w);
  extractor.backward(cache, d_feat, &res.grads.extractor);

  res.loss = loss;
  res.probs = std::move(probs);
  res.features = std::move(cache.features);
  res.preds.resize(n);
  for (int i = 0; i < n; ++i) {
    int best;
    logits.row(i).maxCoeff(&best);
    res.preds[i] = best;
  }
  return res;
}

// Mean prediction entropy over a batch, with gradients (the ENT baseline's
// extra term). Minimizing it sharpens unlabeled predictions.
struct EntropyLossResult {
  double loss = 0.0;
  ModelGrads grads;
};

inline EntropyLossResult entropy_loss(const MlpExtractor& extractor,
                                      const CosineClassifier& classifier,
                                      const Eigen::Ref<const Matrix>& x) {
  const int n = static_cast<int>(x.rows());
  if (n == 0) throw DataError("entropy_loss: empty batch");
  auto cache = extractor.forward(x);
  Matrix logits = classifier.logits(cache.features);
  Matrix probs = softmax_rows(logits);
  Matrix logp = log_softmax_rows(logits);

  EntropyLossResult res;
  res.grads = ModelGrads::zeros(extractor, classifier);
  Vector h(n);
  Matrix d_logits(n, classifier.n_classes());
  for (int i = 0; i < n; ++i) {
    h[i] = -(probs.row(i).array() * logp.row(i).array()).sum();
    // dH/dl_j = -p_j (log p_j + H)
    d_logits.row(i) = -probs.row(i).array() * (logp.row(i).array() + h[i]);
  }
  res.loss = h.mean();
  d_logits /= n;
  Matrix d_feat = classifier.backward(cache.features, d_logits, &res.grads.classifier_w);
  extractor.backward(cache, d_feat, &res.grads.extractor);
  return res;
}

}  // namespace dfa
