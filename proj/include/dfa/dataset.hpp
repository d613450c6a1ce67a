#pragma once

#include "dfa/common.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <utility>
#include <vector>

namespace dfa {

enum class Domain { source, target };

struct LabeledExample {
  Vector x;
  int y = 0;
  Domain domain = Domain::source;
};

enum class ShiftKind { rotation, translation, scale, mixed };

// Parameterized domain shift applied to target samples. `magnitude` is in
// degrees for rotation, input-space units for translation, and a scale
// factor for scale. `mixed` composes all three from a single magnitude:
// rotate(magnitude deg), then scale by 1 + magnitude/300, then translate by
// magnitude/100 along the all-ones direction.
struct ShiftSpec {
  ShiftKind kind = ShiftKind::rotation;
  double magnitude = 0.0;
  std::vector<double> class_imbalance;  // optional per-class sampling weights
  double noise_std = 0.0;               // extra target-side noise
};

// Internal geometry of the Gaussian-mixture generator. Class means sit on a
// circle of `radius` in the leading two input dimensions.
struct ClusterGeometry {
  double radius = 3.0;
  double stddev = 0.6;
};

/**
 * One semi-supervised domain adaptation episode: a labeled source set, an
 * exact shots-per-class labeled target set, and an unlabeled target set whose
 * ground-truth labels are stored but only reachable through the explicitly
 * named evaluation accessors. Immutable after construction.
 */
class SSDAEpisode {
 public:
  SSDAEpisode(std::vector<LabeledExample> source,
              std::vector<LabeledExample> target_labeled,
              std::vector<Vector> target_unlabeled,
              std::vector<int> hidden_labels,
              int n_classes, int shots)
      : source_(std::move(source)),
        target_labeled_(std::move(target_labeled)),
        target_unlabeled_(std::move(target_unlabeled)),
        hidden_labels_(std::move(hidden_labels)),
        n_classes_(n_classes),
        shots_(shots) {
    if (n_classes_ < 2) throw DataError("episode: n_classes must be >= 2");
    if (shots_ < 1) throw DataError("episode: shots must be >= 1");
    if (hidden_labels_.size() != target_unlabeled_.size())
      throw DataError("episode: hidden label count must match unlabeled count");
    std::vector<int> per_class(n_classes_, 0);
    for (const auto& e : target_labeled_) {
      check_example(e);
      if (e.domain != Domain::target) throw DataError("episode: labeled target example tagged as source");
      ++per_class[e.y];
    }
    for (int k = 0; k < n_classes_; ++k) {
      if (per_class[k] != shots_)
        throw DataError("episode: class " + std::to_string(k) + " has " +
                        std::to_string(per_class[k]) + " labeled target samples, expected " +
                        std::to_string(shots_));
    }
    for (const auto& e : source_) {
      check_example(e);
      if (e.domain != Domain::source) throw DataError("episode: source example tagged as target");
    }
    for (int y : hidden_labels_)
      if (y < 0 || y >= n_classes_) throw DataError("episode: hidden label out of range");
    for (const auto& x : target_unlabeled_)
      if (!x.allFinite()) throw DataError("episode: non-finite unlabeled input");
  }

  const std::vector<LabeledExample>& source() const { return source_; }
  const std::vector<LabeledExample>& target_labeled() const { return target_labeled_; }
  const std::vector<Vector>& target_unlabeled() const { return target_unlabeled_; }
  int n_classes() const { return n_classes_; }
  int shots() const { return shots_; }
  int input_dim() const {
    if (!source_.empty()) return static_cast<int>(source_[0].x.size());
    if (!target_labeled_.empty()) return static_cast<int>(target_labeled_[0].x.size());
    return 0;
  }

  // Ground truth of the unlabeled split. For evaluation and audit only;
  // the training-facing iterators never see these.
  int hidden_label_for_eval(int i) const { return hidden_labels_.at(static_cast<size_t>(i)); }
  const std::vector<int>& hidden_labels_for_eval() const { return hidden_labels_; }

  // Flat record dump, one sample per line:
  //   domain,split,label,x0,x1,...
  // Unlabeled rows carry their hidden label (the dump is an offline artifact).
  void dump(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("episode dump: cannot open " + path);
    out.precision(17);
    const int d = input_dim();
    out << "domain,split,label";
    for (int j = 0; j < d; ++j) out << ",x" << j;
    out << "\n";
    auto write_row = [&](const char* domain, const char* split, int y, const Vector& x) {
      out << domain << ',' << split << ',' << y;
      for (int j = 0; j < x.size(); ++j) out << ',' << x[j];
      out << "\n";
    };
    for (const auto& e : source_) write_row("source", "source", e.y, e.x);
    for (const auto& e : target_labeled_) write_row("target", "target_labeled", e.y, e.x);
    for (size_t i = 0; i < target_unlabeled_.size(); ++i)
      write_row("target", "target_unlabeled", hidden_labels_[i], target_unlabeled_[i]);
  }

 private:
  void check_example(const LabeledExample& e) const {
    if (e.y < 0 || e.y >= n_classes_)
      throw DataError("episode: label " + std::to_string(e.y) + " out of range for K=" +
                      std::to_string(n_classes_));
    if (!e.x.allFinite()) throw DataError("episode: non-finite input vector");
  }

  std::vector<LabeledExample> source_;
  std::vector<LabeledExample> target_labeled_;
  std::vector<Vector> target_unlabeled_;
  std::vector<int> hidden_labels_;
  int n_classes_;
  int shots_;
};

namespace detail {

inline void validate_shift(const ShiftSpec& shift, int n_classes, int dim) {
  if (!std::isfinite(shift.magnitude)) throw ConfigError("shift: magnitude must be finite");
  if (shift.noise_std < 0) throw ConfigError("shift: noise_std must be >= 0");
  if (!shift.class_imbalance.empty()) {
    if (static_cast<int>(shift.class_imbalance.size()) != n_classes)
      throw ConfigError("shift: class_imbalance must have one weight per class");
    for (double w : shift.class_imbalance)
      if (!(w > 0)) throw ConfigError("shift: class_imbalance weights must be positive");
  }
  if ((shift.kind == ShiftKind::rotation || shift.kind == ShiftKind::mixed) && dim < 2)
    throw ConfigError("shift: rotation requires input dimension >= 2");
}

inline Vector apply_shift(const ShiftSpec& shift, const Vector& x) {
  const int d = static_cast<int>(x.size());
  auto rotate = [&](const Vector& v, double deg) {
    double rad = deg * M_PI / 180.0;
    Vector out = v;
    double c = std::cos(rad), s = std::sin(rad);
    out[0] = c * v[0] - s * v[1];
    out[1] = s * v[0] + c * v[1];
    return out;
  };
  auto translate = [&](const Vector& v, double t) {
    return Vector(v.array() + t / std::sqrt(static_cast<double>(d)));
  };
  switch (shift.kind) {
    case ShiftKind::rotation:
      return rotate(x, shift.magnitude);
    case ShiftKind::translation:
      return translate(x, shift.magnitude);
    case ShiftKind::scale:
      return shift.magnitude * x;
    case ShiftKind::mixed: {
      Vector v = rotate(x, shift.magnitude);
      v *= 1.0 + shift.magnitude / 300.0;
      return translate(v, shift.magnitude / 100.0);
    }
  }
  throw ConfigError("shift: unknown kind");
}

// Split a seeded-shuffled target pool into an exact shots-per-class labeled
// subset (first `shots` of each class in shuffle order) and the unlabeled rest.
inline SSDAEpisode split_target_pool(std::vector<LabeledExample> source,
                                     std::vector<std::pair<Vector, int>> pool,
                                     int n_classes, int shots,
                                     std::mt19937_64& rng) {
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<int> taken(n_classes, 0);
  std::vector<LabeledExample> target_labeled;
  std::vector<Vector> target_unlabeled;
  std::vector<int> hidden;
  for (auto& [x, y] : pool) {
    if (taken[y] < shots) {
      ++taken[y];
      target_labeled.push_back({std::move(x), y, Domain::target});
    } else {
      target_unlabeled.push_back(std::move(x));
      hidden.push_back(y);
    }
  }
  for (int k = 0; k < n_classes; ++k) {
    if (taken[k] < shots)
      throw DataError("episode: target pool has only " + std::to_string(taken[k]) +
                      " samples of class " + std::to_string(k) + ", need shots=" +
                      std::to_string(shots));
  }
  return SSDAEpisode(std::move(source), std::move(target_labeled), std::move(target_unlabeled),
                     std::move(hidden), n_classes, shots);
}

}  // namespace detail

/**
 * Gaussian-mixture SSDA episode. Source samples come from K isotropic
 * clusters with means on a circle in the leading two dimensions; target
 * samples come from the same clusters pushed through the ShiftSpec transform
 * plus optional extra noise. Deterministic given the seed.
 */
inline SSDAEpisode make_synthetic_episode(std::uint64_t seed, int n_classes, int dim,
                                          int n_source, int n_unlabeled, int shots,
                                          const ShiftSpec& shift,
                                          const ClusterGeometry& geom = {}) {
  if (n_classes < 2) throw ConfigError("make_synthetic_episode: n_classes must be >= 2");
  if (shots < 1) throw ConfigError("make_synthetic_episode: shots must be >= 1");
  if (n_source < n_classes) throw ConfigError("make_synthetic_episode: n_source must be >= n_classes");
  if (n_unlabeled < n_classes) throw ConfigError("make_synthetic_episode: n_unlabeled must be >= n_classes");
  if (dim < 1) throw ConfigError("make_synthetic_episode: dim must be >= 1");
  detail::validate_shift(shift, n_classes, dim);

  auto rng = make_rng(seed, "episode");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> weights = shift.class_imbalance;
  if (weights.empty()) weights.assign(static_cast<size_t>(n_classes), 1.0);
  std::discrete_distribution<int> class_dist(weights.begin(), weights.end());

  std::vector<Vector> means(static_cast<size_t>(n_classes));
  for (int k = 0; k < n_classes; ++k) {
    Vector m = Vector::Zero(dim);
    if (dim >= 2) {
      double phi = 2.0 * M_PI * k / n_classes;
      m[0] = geom.radius * std::cos(phi);
      m[1] = geom.radius * std::sin(phi);
    } else {
      m[0] = geom.radius * (n_classes == 1 ? 0.0 : (2.0 * k / (n_classes - 1) - 1.0));
    }
    means[static_cast<size_t>(k)] = m;
  }

  auto draw_noise = [&](double std) {
    Vector z(dim);
    for (int j = 0; j < dim; ++j) z[j] = std * gauss(rng);
    return z;
  };

  std::vector<LabeledExample> source;
  source.reserve(static_cast<size_t>(n_source));
  for (int i = 0; i < n_source; ++i) {
    int c = class_dist(rng);
    source.push_back({means[static_cast<size_t>(c)] + draw_noise(geom.stddev), c, Domain::source});
  }

  const int n_pool = n_unlabeled + shots * n_classes;
  std::vector<std::pair<Vector, int>> pool;
  pool.reserve(static_cast<size_t>(n_pool));
  for (int i = 0; i < n_pool; ++i) {
    int c = class_dist(rng);
    Vector x = detail::apply_shift(shift, means[static_cast<size_t>(c)] + draw_noise(geom.stddev));
    if (shift.noise_std > 0) x += draw_noise(shift.noise_std);
    pool.emplace_back(std::move(x), c);
  }
  return detail::split_target_pool(std::move(source), std::move(pool), n_classes, shots, rng);
}

/**
 * Two-moons SSDA episode (K=2, dim=2): interleaved half circles with
 * Gaussian jitter `noise`; the target copy goes through the same ShiftSpec
 * machinery as the Gaussian generator.
 */
inline SSDAEpisode make_two_moons_episode(std::uint64_t seed, int n_source, int n_unlabeled,
                                          int shots, const ShiftSpec& shift,
                                          double noise = 0.1) {
  constexpr int kClasses = 2;
  if (shots < 1) throw ConfigError("make_two_moons_episode: shots must be >= 1");
  if (n_source < kClasses) throw ConfigError("make_two_moons_episode: n_source must be >= 2");
  if (n_unlabeled < kClasses) throw ConfigError("make_two_moons_episode: n_unlabeled must be >= 2");
  if (noise < 0) throw ConfigError("make_two_moons_episode: noise must be >= 0");
  detail::validate_shift(shift, kClasses, 2);

  auto rng = make_rng(seed, "episode");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> arc(0.0, M_PI);
  std::vector<double> weights = shift.class_imbalance;
  if (weights.empty()) weights.assign(kClasses, 1.0);
  std::discrete_distribution<int> class_dist(weights.begin(), weights.end());

  auto moon_point = [&](int c) {
    double t = arc(rng);
    Vector x(2);
    if (c == 0) {
      x << std::cos(t), std::sin(t);
    } else {
      x << 1.0 - std::cos(t), 0.5 - std::sin(t);
    }
    x[0] += noise * gauss(rng);
    x[1] += noise * gauss(rng);
    return x;
  };

  std::vector<LabeledExample> source;
  source.reserve(static_cast<size_t>(n_source));
  for (int i = 0; i < n_source; ++i) {
    int c = class_dist(rng);
    source.push_back({moon_point(c), c, Domain::source});
  }

  const int n_pool = n_unlabeled + shots * kClasses;
  std::vector<std::pair<Vector, int>> pool;
  pool.reserve(static_cast<size_t>(n_pool));
  for (int i = 0; i < n_pool; ++i) {
    int c = class_dist(rng);
    Vector x = detail::apply_shift(shift, moon_point(c));
    if (shift.noise_std > 0) {
      x[0] += shift.noise_std * gauss(rng);
      x[1] += shift.noise_std * gauss(rng);
    }
    pool.emplace_back(std::move(x), c);
  }
  return detail::split_target_pool(std::move(source), std::move(pool), kClasses, shots, rng);
}

struct LabeledBatch {
  Matrix x;                    // n x d_in, row per sample
  IntVector y;                 // n
  std::vector<Domain> domain;  // n
  int size() const { return static_cast<int>(x.rows()); }

  // Rows of the labeled-target half (used by the perturbation regularizer).
  Matrix target_rows() const {
    int cnt = 0;
    for (auto d : domain) cnt += (d == Domain::target) ? 1 : 0;
    Matrix out(cnt, x.cols());
    int r = 0;
    for (int i = 0; i < size(); ++i)
      if (domain[static_cast<size_t>(i)] == Domain::target) out.row(r++) = x.row(i);
    return out;
  }
};

struct UnlabeledBatch {
  Matrix x;                // n x d_in
  std::vector<int> index;  // positions within episode.target_unlabeled()
  int size() const { return static_cast<int>(x.rows()); }
};

/**
 * Mini-batch stream over the labeled sets: every batch holds exactly
 * batch_size/2 source and batch_size/2 labeled-target samples. Each stream is
 * cycled in seeded shuffled epochs, so the small target set is resampled with
 * a fresh order every pass.
 */
class BalancedLabeledIterator {
 public:
  BalancedLabeledIterator(const SSDAEpisode& episode, int batch_size, std::uint64_t seed)
      : episode_(&episode), half_(batch_size / 2), rng_(make_rng(seed, "balanced_iter")) {
    if (batch_size < 2 || batch_size % 2 != 0)
      throw ConfigError("balanced iterator: batch_size must be even and >= 2");
    if (episode.source().empty()) throw DataError("balanced iterator: empty source set");
    if (episode.target_labeled().empty()) throw DataError("balanced iterator: empty labeled target set");
    src_order_.resize(episode.source().size());
    tgt_order_.resize(episode.target_labeled().size());
    std::iota(src_order_.begin(), src_order_.end(), 0);
    std::iota(tgt_order_.begin(), tgt_order_.end(), 0);
    std::shuffle(src_order_.begin(), src_order_.end(), rng_);
    std::shuffle(tgt_order_.begin(), tgt_order_.end(), rng_);
  }

  LabeledBatch next() {
    const int d = episode_->input_dim();
    LabeledBatch batch;
    batch.x.resize(2 * half_, d);
    batch.y.resize(2 * half_);
    batch.domain.resize(static_cast<size_t>(2 * half_));
    for (int i = 0; i < half_; ++i) {
      const auto& e = episode_->source()[next_index(src_order_, src_pos_)];
      batch.x.row(i) = e.x.transpose();
      batch.y[i] = e.y;
      batch.domain[static_cast<size_t>(i)] = Domain::source;
    }
    for (int i = 0; i < half_; ++i) {
      const auto& e = episode_->target_labeled()[next_index(tgt_order_, tgt_pos_)];
      batch.x.row(half_ + i) = e.x.transpose();
      batch.y[half_ + i] = e.y;
      batch.domain[static_cast<size_t>(half_ + i)] = Domain::target;
    }
    return batch;
  }

 private:
  size_t next_index(std::vector<size_t>& order, size_t& pos) {
    if (pos >= order.size()) {
      std::shuffle(order.begin(), order.end(), rng_);
      pos = 0;
    }
    return order[pos++];
  }

  const SSDAEpisode* episode_;
  int half_;
  std::mt19937_64 rng_;
  std::vector<size_t> src_order_;
  std::vector<size_t> tgt_order_;
  size_t src_pos_ = 0;
  size_t tgt_pos_ = 0;
};

/**
 * Epoch-shuffled stream over the unlabeled target inputs. Yields inputs and
 * their episode indices only; hidden labels are unreachable from here.
 */
class UnlabeledIterator {
 public:
  UnlabeledIterator(const SSDAEpisode& episode, int batch_size, std::uint64_t seed)
      : episode_(&episode), batch_size_(batch_size), rng_(make_rng(seed, "unlabeled_iter")) {
    if (batch_size < 1) throw ConfigError("unlabeled iterator: batch_size must be >= 1");
    if (episode.target_unlabeled().empty()) throw DataError("unlabeled iterator: empty unlabeled set");
    order_.resize(episode.target_unlabeled().size());
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  UnlabeledBatch next() {
    const int d = episode_->input_dim();
    UnlabeledBatch batch;
    batch.x.resize(batch_size_, d);
    batch.index.resize(static_cast<size_t>(batch_size_));
    for (int i = 0; i < batch_size_; ++i) {
      if (pos_ >= order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      size_t idx = order_[pos_++];
      batch.x.row(i) = episode_->target_unlabeled()[idx].transpose();
      batch.index[static_cast<size_t>(i)] = static_cast<int>(idx);
    }
    return batch;
  }

 private:
  const SSDAEpisode* episode_;
  int batch_size_;
  std::mt19937_64 rng_;
  std::vector<size_t> order_;
  size_t pos_ = 0;
};

}  // namespace dfa
