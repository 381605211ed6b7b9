#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "opadv/corpus.hpp"
#include "opadv/error.hpp"
#include "opadv/ids.hpp"
#include "support.hpp"

using namespace opadv;
using testing::sample;

namespace {

FeatureVector fv(std::vector<std::int64_t> c) { return FeatureVector(std::move(c)); }

FeatureVector random_fv(std::mt19937_64& rng, std::size_t dim) {
  std::vector<std::int64_t> c(dim);
  for (auto& x : c) x = static_cast<std::int64_t>(rng() % 20);
  c[rng() % dim] += 1;
  return FeatureVector(c);
}

ids::IdsModel single_leaf_forest(std::size_t dim, double p) {
  ids::TreeNode leaf;
  leaf.probability = p;
  return ids::IdsModel(dim, ids::ForestParams{{ids::DecisionTree{{leaf}}}});
}

}  // namespace

TEST_CASE("logistic closed forms") {
  const auto zero = testing::logistic({0, 0, 0}, 0.0);
  CHECK(zero.predict_proba(fv({1, 2, 3})) == 0.5);
  CHECK(zero.predict_proba(fv({0, 0, 9})) == 0.5);
  const auto biased = testing::logistic({0, 0, 0}, 10.0);
  CHECK(biased.predict_proba(fv({4, 0, 1})) == doctest::Approx(0.9999546021).epsilon(1e-9));
  // w.x on normalized counts: (1,3) -> (0.25, 0.75), logit = 2*0.25 - 1*0.75 = -0.25
  const auto w = testing::logistic({2.0, -1.0}, 0.0);
  CHECK(w.predict_proba(fv({1, 3})) == doctest::Approx(1.0 / (1.0 + std::exp(0.25))));
}

TEST_CASE("single-leaf forest returns its leaf") {
  CHECK(single_leaf_forest(4, 0.3).predict_proba(fv({1, 0, 0, 2})) == doctest::Approx(0.3));
}

TEST_CASE("forest follows thresholds") {
  // root splits on feature 1 at 0.5 of normalized mass
  ids::TreeNode root{1, 0.5, 1, 2, 0.5};
  ids::TreeNode lo{-1, 0.0, -1, -1, 0.9};
  ids::TreeNode hi{-1, 0.0, -1, -1, 0.2};
  const ids::IdsModel m(2, ids::ForestParams{{ids::DecisionTree{{root, lo, hi}}}});
  CHECK(m.predict_proba(fv({3, 1})) == doctest::Approx(0.9));
  CHECK(m.predict_proba(fv({1, 1})) == doctest::Approx(0.9));  // x == threshold goes left
  CHECK(m.predict_proba(fv({1, 3})) == doctest::Approx(0.2));
}

TEST_CASE("predict_proba rejects bad inputs") {
  const auto m = testing::logistic({1, 2}, 0.0);
  CHECK_THROWS_AS(m.predict_proba(fv({1, 2, 3})), ValidationError);
  CHECK_THROWS_AS(m.predict_proba(fv({0, 0})), ValidationError);
  CHECK_THROWS_AS(ids::IdsModel(2, ids::LogisticParams{{1.0}, 0.0}), ValidationError);
  CHECK_THROWS_AS(testing::logistic({std::numeric_limits<double>::quiet_NaN(), 0.0}, 0.0),
                  ValidationError);
}

TEST_CASE("predict_proba in [0,1] and scale invariant") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 30.0);
  SyntheticCorpusSpec spec;
  spec.vocab_size = 12;
  spec.n_malware = 60;
  spec.n_benign = 60;
  ids::IdsConfig fcfg;
  fcfg.kind = ids::ModelKind::kForest;
  fcfg.trees = 10;
  fcfg.seed = 3;
  const auto forest = ids::train_ids(generate_synthetic_corpus(spec, 2), fcfg);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> w(12);
    for (auto& x : w) x = g(rng);
    const auto lr = testing::logistic(w, g(rng));
    const auto x = random_fv(rng, 12);
    auto scaled = x;
    const auto c = static_cast<std::int64_t>(1 + rng() % 50);
    for (auto& v : scaled.counts) v *= c;
    for (const auto* m : {&lr, &forest}) {
      const double p = m->predict_proba(x);
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      CHECK(std::abs(m->predict_proba(scaled) - p) <= 1e-12);
    }
  }
}

TEST_CASE("training separates the two-feature toy") {
  const auto corpus = testing::toy_corpus(50);
  // A separating hyperplane exists: w = (1,-1) puts every malware at +1 and
  // every benign at -1.
  for (const auto& s : corpus) {
    const auto p = normalize(s.counts);
    const double margin = p[0] - p[1];
    CHECK((s.label == Label::kMalware ? margin > 0 : margin < 0));
  }
  for (const auto kind : {ids::ModelKind::kLogistic, ids::ModelKind::kForest}) {
    ids::IdsConfig cfg;
    cfg.kind = kind;
    cfg.seed = 1;
    const auto m = ids::train_ids(corpus, cfg);
    const auto held = stratified_split(corpus, cfg.split, cfg.seed).held_out;
    CHECK(ids::evaluate_ids(m, held).accuracy == 1.0);
  }
}

TEST_CASE("training is deterministic and refuses one label") {
  SyntheticCorpusSpec spec;
  spec.vocab_size = 16;
  spec.n_malware = 40;
  spec.n_benign = 40;
  const auto corpus = generate_synthetic_corpus(spec, 5);
  for (const auto kind : {ids::ModelKind::kLogistic, ids::ModelKind::kForest}) {
    ids::IdsConfig cfg;
    cfg.kind = kind;
    cfg.seed = 9;
    cfg.trees = 5;
    CHECK(ids::train_ids(corpus, cfg) == ids::train_ids(corpus, cfg));
    CHECK_THROWS_WITH_AS(ids::train_ids(malware_only(corpus), cfg),
                         doctest::Contains("degenerate labels"), ValidationError);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  testing::TempDir dir;
  SyntheticCorpusSpec spec;
  spec.vocab_size = 10;
  spec.n_malware = 30;
  spec.n_benign = 30;
  const auto corpus = generate_synthetic_corpus(spec, 6);
  for (const auto kind : {ids::ModelKind::kLogistic, ids::ModelKind::kForest}) {
    ids::IdsConfig cfg;
    cfg.kind = kind;
    cfg.seed = 2;
    cfg.trees = 4;
    const auto m = ids::train_ids(corpus, cfg);
    CHECK(m.corpus_hash() == corpus_hash(corpus));
    m.save(dir / "ids.json");
    const auto back = ids::IdsModel::load(dir / "ids.json");
    CHECK(back == m);
    CHECK(back.kind() == kind);
  }
  testing::spit(dir / "bad.json", "{\"format\": \"something\"}");
  CHECK_THROWS_AS(ids::IdsModel::load(dir / "bad.json"), ValidationError);
}

TEST_CASE("evaluate_ids edge rules") {
  const auto corpus = testing::toy_corpus(5);
  const auto perfect = testing::logistic({20, -20}, 0.0);
  const auto all = ids::evaluate_ids(perfect, corpus);
  CHECK(all.accuracy == 1.0);
  CHECK(all.false_positive_rate == 0.0);
  CHECK(all.true_positive_rate == 1.0);

  // Constant 0.5 with the tie counted as malicious flags every benign sample.
  const auto half = testing::logistic({0, 0}, 0.0);
  const auto m = ids::evaluate_ids(half, corpus, 0.5);
  CHECK(m.false_positive_rate == 1.0);
  CHECK(m.accuracy == 0.5);

  CHECK_THROWS_AS(ids::evaluate_ids(perfect, Corpus{}), ValidationError);
}

TEST_CASE("evaluate_ids matches a confusion-matrix recount") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 3.0);
  Corpus c;
  for (int i = 0; i < 200; ++i) {
    c.push_back(sample("s" + std::to_string(i), i % 3 ? Label::kBenign : Label::kMalware,
                       random_fv(rng, 6).counts));
  }
  std::vector<double> w(6);
  for (auto& x : w) x = g(rng);
  const auto model = testing::logistic(w, 0.2);
  for (const double thr : {0.3, 0.5, 0.7}) {
    int tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& s : c) {
      const auto p = normalize(s.counts);
      double z = 0.2;
      for (std::size_t i = 0; i < 6; ++i) z += w[i] * p[i];
      const bool flagged = 1.0 / (1.0 + std::exp(-z)) >= thr;
      if (s.label == Label::kMalware) (flagged ? tp : fn)++;
      else (flagged ? fp : tn)++;
    }
    const auto m = ids::evaluate_ids(model, c, thr);
    CHECK(m.accuracy == doctest::Approx(double(tp + tn) / 200.0));
    CHECK(m.true_positive_rate == doctest::Approx(double(tp) / double(tp + fn)));
    CHECK(m.false_positive_rate == doctest::Approx(double(fp) / double(fp + tn)));
    CHECK(m.threshold == thr);
  }
}

TEST_CASE("router with k=1 is the mean of normalized counts") {
  const Corpus c = {sample("a", Label::kMalware, {1, 1}), sample("b", Label::kMalware, {3, 1}),
                    sample("c", Label::kBenign, {0, 2})};
  const auto r = ids::train_router(c, 1, 4);
  REQUIRE(r.k() == 1);
  const std::vector<double> mean = {(0.5 + 0.75 + 0.0) / 3.0, (0.5 + 0.25 + 1.0) / 3.0};
  CHECK(r.centroids()[0][0] == doctest::Approx(mean[0]).epsilon(1e-12));
  CHECK(r.centroids()[0][1] == doctest::Approx(mean[1]).epsilon(1e-12));
}

TEST_CASE("router separates two blobs") {
  std::mt19937_64 rng(3);
  Corpus c;
  for (int i = 0; i < 40; ++i) {
    const bool left = i % 2 == 0;
    std::vector<std::int64_t> counts = left ? std::vector<std::int64_t>{90, 5, 5}
                                            : std::vector<std::int64_t>{5, 5, 90};
    for (auto& x : counts) x += static_cast<std::int64_t>(rng() % 4);
    c.push_back(sample("s" + std::to_string(i), Label::kMalware, counts));
  }
  // The blobs are separated: every cross-blob distance exceeds every within-blob one.
  double within = 0.0, across = 1e9;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = i + 1; j < c.size(); ++j) {
      const auto a = normalize(c[i].counts), b = normalize(c[j].counts);
      double d = 0.0;
      for (int k = 0; k < 3; ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
      if (i % 2 == j % 2) within = std::max(within, d);
      else across = std::min(across, d);
    }
  }
  REQUIRE(within < across);
  const auto r = ids::train_router(c, 2, 11);
  for (std::size_t i = 2; i < c.size(); ++i) {
    CHECK(r.route(c[i].counts) == r.route(c[i % 2].counts));
  }
  CHECK(r.route(c[0].counts) != r.route(c[1].counts));
  CHECK(ids::train_router(c, 2, 11) == r);
}

TEST_CASE("route is nearest centroid with lowest-index ties") {
  const ids::RouterModel r({{1.0, 0.0}, {0.0, 1.0}, {0.5, 0.5}});
  CHECK(r.route(fv({1, 1})) == 2);
  CHECK(r.route(fv({7, 0})) == 0);
  const ids::RouterModel tie({{1.0, 0.0}, {0.0, 1.0}});
  CHECK(tie.route(fv({1, 1})) == 0);
  CHECK_THROWS_AS(r.route(fv({1, 1, 1})), ValidationError);

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::vector<double>> cents(1 + rng() % 6, std::vector<double>(5));
    for (auto& cc : cents)
      for (auto& x : cc) x = u(rng);
    const ids::RouterModel rm(cents);
    const auto x = random_fv(rng, 5);
    const auto p = normalize(x);
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < cents.size(); ++k) {
      double d = 0.0;
      for (int i = 0; i < 5; ++i) d += (p[i] - cents[k][i]) * (p[i] - cents[k][i]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    CHECK(rm.route(x) == best);
  }
}

TEST_CASE("router validation and persistence") {
  const auto c = testing::toy_corpus(3);
  CHECK_THROWS_AS(ids::train_router(c, 0, 1), ValidationError);
  CHECK_THROWS_AS(ids::train_router(c, 7, 1), ValidationError);
  testing::TempDir dir;
  const auto r = ids::train_router(c, 2, 1);
  r.save(dir / "router.json");
  CHECK(ids::RouterModel::load(dir / "router.json") == r);
}
