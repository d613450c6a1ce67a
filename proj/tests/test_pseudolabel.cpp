#include "dfa/gradcheck.hpp"
#include "dfa/pseudolabel.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace dfa;

namespace {

Matrix random_unit_rows(int n, int d, std::uint64_t seed) {
  auto rng = make_rng(seed, "unit");
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = g(rng);
    m.row(i) /= m.row(i).norm();
  }
  return m;
}

}  // namespace

TEST_CASE("equidistant prototypes give a uniform pseudo-label distribution") {
  // identical prototypes are trivially equidistant from anything
  Matrix protos(3, 4);
  for (int r = 0; r < 3; ++r) protos.row(r) = random_unit_rows(1, 4, 1);
  Matrix f = random_unit_rows(5, 4, 2);
  Matrix p = prototype_softmax(f, protos, 0.07);
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 3; ++k) REQUIRE(p(i, k) == Catch::Approx(1.0 / 3).margin(1e-12));
}

TEST_CASE("prototype softmax matches a scalar oracle at tau_p 0.07") {
  // geometry realizing similarities (0.9, 0.1, 0.0) against f = e1
  Matrix protos(3, 3);
  protos.row(0) << 0.9, std::sqrt(1.0 - 0.81), 0.0;
  protos.row(1) << 0.1, std::sqrt(1.0 - 0.01), 0.0;
  protos.row(2) << 0.0, 0.0, 1.0;
  Matrix f(1, 3);
  f << 1.0, 0.0, 0.0;

  Matrix p = prototype_softmax(f, protos, 0.07);
  double l0 = 0.9 / 0.07, l1 = 0.1 / 0.07, l2 = 0.0;
  double z = std::exp(l0) + std::exp(l1) + std::exp(l2);
  REQUIRE(p(0, 0) == Catch::Approx(std::exp(l0) / z).epsilon(1e-12));
  REQUIRE(p(0, 1) == Catch::Approx(std::exp(l1) / z).epsilon(1e-12));
  REQUIRE(p(0, 2) == Catch::Approx(std::exp(l2) / z).epsilon(1e-12));

  REQUIRE_THROWS_AS(prototype_softmax(f, protos, 0.0), ConfigError);
  REQUIRE_THROWS_AS(prototype_softmax(f, protos, -1.0), ConfigError);
}

TEST_CASE("entropy of canonical distributions") {
  Vector uniform(4);
  uniform.setConstant(0.25);
  REQUIRE(entropy(uniform) == Catch::Approx(std::log(4.0)).margin(1e-12));

  Vector onehot(4);
  onehot << 1.0, 0.0, 0.0, 0.0;
  REQUIRE(entropy(onehot) == 0.0);

  Vector p(3);
  p << 0.7, 0.2, 0.1;
  REQUIRE(entropy(p) == Catch::Approx(0.8018).margin(1e-4));
  // frozen scalar value of -0.7 ln 0.7 - 0.2 ln 0.2 - 0.1 ln 0.1
  REQUIRE(entropy(p) == Catch::Approx(0.8018185525433372).margin(1e-12));
}

TEST_CASE("selection applies both thresholds and their intersection") {
  // prototypes on the axes; one sample close to e1, one ambiguous, one far
  Matrix protos(3, 3);
  protos << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  Matrix f(3, 3);
  f.row(0) << 0.99, std::sqrt(1 - 0.99 * 0.99), 0;        // close to proto 0
  f.row(1) = Vector::Ones(3).normalized().transpose();    // equidistant
  f.row(2) << -1, 0, 0;                                   // anti-aligned
  SelectionMask mask = select(f, protos, 0.07, 0.3, 0.5);
  REQUIRE(mask.in_dist == std::vector<bool>{true, true, false});
  REQUIRE(mask.in_ent == std::vector<bool>{true, false, false});
  REQUIRE(mask.in_pse == std::vector<bool>{true, false, false});

  SECTION("high similarity but high entropy is excluded from M_pse") {
    // sample 1 has max sim 1/sqrt(3) ~ 0.577 > 0.3 but entropy ~ ln 3
    REQUIRE(mask.in_dist[1]);
    REQUIRE_FALSE(mask.in_pse[1]);
  }
}

TEST_CASE("selection mask equals a per-sample scalar recomputation") {
  Matrix protos = random_unit_rows(4, 5, 3);
  Matrix f = random_unit_rows(20, 5, 4);
  double tau_p = 0.07, eps_dist = 0.25, eps_ent = 0.9;
  SelectionMask mask = select(f, protos, tau_p, eps_dist, eps_ent);
  for (int i = 0; i < 20; ++i) {
    double best = -2.0;
    Vector logits(4);
    for (int k = 0; k < 4; ++k) {
      double sim = 0.0;
      for (int j = 0; j < 5; ++j) sim += protos(k, j) * f(i, j);
      best = std::max(best, sim);
      logits[k] = sim / tau_p;
    }
    double mx = logits.maxCoeff();
    Vector e = (logits.array() - mx).exp();
    Vector p = e / e.sum();
    double h = 0.0;
    for (int k = 0; k < 4; ++k)
      if (p[k] > 0) h -= p[k] * std::log(p[k]);
    REQUIRE(mask.in_dist[static_cast<size_t>(i)] == (best > eps_dist));
    REQUIRE(mask.in_ent[static_cast<size_t>(i)] == (h < eps_ent));
    REQUIRE(mask.in_pse[static_cast<size_t>(i)] ==
            (mask.in_dist[static_cast<size_t>(i)] && mask.in_ent[static_cast<size_t>(i)]));
  }
}

TEST_CASE("threshold edge cases empty and saturate the gates") {
  Matrix protos = random_unit_rows(4, 5, 5);
  Matrix f = random_unit_rows(15, 5, 6);
  // cosine similarity of unit vectors cannot exceed 1
  SelectionMask none = select(f, protos, 0.07, 1.0 + 1e-12, 0.5);
  REQUIRE(none.count_dist() == 0);
  REQUIRE(none.count_pse() == 0);
  // entropy cannot reach ln K on generic inputs
  SelectionMask all = select(f, protos, 0.07, -2.0, std::log(4.0));
  REQUIRE(all.count_ent() == 15);
  REQUIRE(all.count_dist() == 15);
  REQUIRE(all.count_pse() == 15);
}

TEST_CASE("selection is monotone in both thresholds") {
  Matrix protos = random_unit_rows(5, 6, 7);
  Matrix f = random_unit_rows(30, 6, 8);
  std::vector<double> dist_grid = {-0.5, 0.0, 0.25, 0.5, 0.9};
  std::vector<double> ent_grid = {0.1, 0.4, 0.8, 1.2, 2.0};
  for (size_t a = 0; a + 1 < dist_grid.size(); ++a) {
    for (size_t b = 0; b + 1 < ent_grid.size(); ++b) {
      SelectionMask loose = select(f, protos, 0.07, dist_grid[a], ent_grid[b + 1]);
      SelectionMask tight_dist = select(f, protos, 0.07, dist_grid[a + 1], ent_grid[b + 1]);
      SelectionMask tight_ent = select(f, protos, 0.07, dist_grid[a], ent_grid[b]);
      for (size_t i = 0; i < loose.in_pse.size(); ++i) {
        if (tight_dist.in_pse[i]) REQUIRE(loose.in_pse[i]);  // raising eps_dist only removes
        if (tight_ent.in_pse[i]) REQUIRE(loose.in_pse[i]);   // lowering eps_ent only removes
      }
    }
  }
}

TEST_CASE("pseudo-labels come from the classifier, not the prototype argmax") {
  Matrix protos(2, 2);
  protos << 1, 0, 0, 1;
  // classifier weights swapped relative to the prototypes
  CosineClassifier clf(2, 2, 0.05, 0);
  Matrix w(2, 2);
  w << 0, 1, 1, 0;
  clf.set_weights(w);

  Matrix x(1, 2);
  x << 0.98, std::sqrt(1 - 0.98 * 0.98);
  Matrix f = x;  // features equal inputs here (already unit norm)
  PseudoBatch pb = build_pseudo_batch(x, f, protos, clf, 0.07, 0.3, 0.7);
  REQUIRE(pb.size() == 1);
  // prototype argmax is 0, classifier argmax must be 1
  REQUIRE(pb.pseudo_y[0] == 1);
  REQUIRE(pb.scores[0] == Catch::Approx(0.98).margin(1e-12));
}

TEST_CASE("empty selection yields zero loss and zero gradients") {
  MlpSpec spec;
  spec.input_dim = 3;
  spec.hidden = {4};
  spec.feature_dim = 4;
  MlpExtractor f(spec, 9);
  CosineClassifier clf(3, 4, 0.05, 10);
  PseudoBatch empty;
  empty.x = Matrix(0, 3);
  empty.pseudo_y = IntVector(0);
  empty.full_batch_size = 8;
  PseudoLossResult res = pseudo_loss(f, clf, empty);
  REQUIRE(res.loss == 0.0);
  REQUIRE(pack_grads(f, res.grads).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("confident correct pseudo-labels give (near) zero loss") {
  // identity feature map and saturated classifier
  MlpSpec spec;
  spec.input_dim = 2;
  spec.hidden = {};
  spec.feature_dim = 2;
  MlpExtractor f(spec, 0);
  Vector p = Vector::Zero(f.n_params());
  p[0] = 1.0;
  p[3] = 1.0;
  f.set_params(p);
  CosineClassifier clf(2, 2, 0.001, 0);
  Matrix w(2, 2);
  w << 1, 0, -1, 0;
  clf.set_weights(w);

  PseudoBatch pb;
  pb.x = Matrix(2, 2);
  pb.x << 5, 0, -5, 0;
  pb.pseudo_y = IntVector(2);
  pb.pseudo_y << 0, 1;
  pb.full_batch_size = 2;
  REQUIRE(pseudo_loss(f, clf, pb).loss < 1e-12);
}

TEST_CASE("indicator semantics divide by the full batch size") {
  MlpSpec spec;
  spec.input_dim = 2;
  spec.hidden = {};
  spec.feature_dim = 2;
  MlpExtractor f(spec, 0);
  Vector p = Vector::Zero(f.n_params());
  p[0] = 1.0;
  p[3] = 1.0;
  f.set_params(p);
  CosineClassifier clf(2, 2, 0.5, 11);

  PseudoBatch pb;
  pb.x = Matrix(1, 2);
  pb.x << 2.0, 1.0;
  pb.pseudo_y = IntVector(1);
  pb.pseudo_y << 0;
  pb.full_batch_size = 4;
  double loss4 = pseudo_loss(f, clf, pb).loss;
  pb.full_batch_size = 1;
  double loss1 = pseudo_loss(f, clf, pb).loss;
  REQUIRE(loss4 == Catch::Approx(loss1 / 4.0).epsilon(1e-12));
}

TEST_CASE("pseudo loss gradient matches finite differences") {
  MlpSpec spec;
  spec.input_dim = 4;
  spec.hidden = {6, 5};
  spec.feature_dim = 8;
  MlpExtractor f(spec, 12);
  CosineClassifier clf(3, 8, 0.05, 13);
  auto rng = make_rng(14, "x");
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix x(5, 4);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) x(i, j) = g(rng);

  PseudoBatch pb;
  pb.x = x.topRows(3);  // pretend 3 of 5 were selected
  pb.pseudo_y = IntVector(3);
  pb.pseudo_y << 2, 0, 1;
  pb.full_batch_size = 5;

  Vector params0 = pack_params(f, clf);
  auto res = pseudo_loss(f, clf, pb);
  Vector analytic = pack_grads(f, res.grads);
  auto loss_fn = [&](const Vector& pv) {
    unpack_params(f, clf, pv);
    return pseudo_loss(f, clf, pb).loss;
  };
  double err = gradient_check(loss_fn, params0, analytic);
  unpack_params(f, clf, params0);
  REQUIRE(err < 1e-4);
}
