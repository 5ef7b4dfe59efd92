#include <gtest/gtest.h>

#include "fewsel/fewsel.hpp"
#include "oracles.hpp"

using namespace fewsel;

namespace {

Matrix two_blobs(Rng& rng, std::size_t per, double gap, std::vector<int>& labels) {
  Matrix x(2 * per, 2);
  labels.assign(2 * per, 0);
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const int y = i < per ? 0 : 1;
    labels[i] = y;
    x(i, 0) = y * gap + 0.1 * rng.normal();
    x(i, 1) = y * gap + 0.1 * rng.normal();
  }
  return x;
}

}  // namespace

TEST(Msre, HandValues) {
  EXPECT_DOUBLE_EQ(msre(Matrix{{1, 2}}, Matrix{{0, 0}}), 5.0);
  EXPECT_DOUBLE_EQ(msre(Matrix{{1, 2}, {0, 0}}, Matrix{{0, 0}, {0, 1}}), 3.0);
  EXPECT_THROW(msre(Matrix(1, 2), Matrix(2, 1)), std::invalid_argument);
}

TEST(Ari, KnownValues) {
  EXPECT_DOUBLE_EQ(ari({0, 0, 1, 1}, {1, 1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(ari({0, 0, 0, 0}, {0, 0, 0, 0}), 1.0);
  // sklearn: adjusted_rand_score([0,0,1,1],[0,0,1,2]) = 0.5714285714285715
  EXPECT_NEAR(ari({0, 0, 1, 1}, {0, 0, 1, 2}), 4.0 / 7.0, 1e-15);
  // adjusted_rand_score([0,0,1,1],[0,1,0,1]) = -0.5
  EXPECT_NEAR(ari({0, 0, 1, 1}, {0, 1, 0, 1}), -0.5, 1e-15);
  EXPECT_THROW(ari({0, 1}, {0}), std::invalid_argument);
}

TEST(Nmi, KnownValues) {
  EXPECT_DOUBLE_EQ(nmi({0, 0, 1, 1}, {1, 1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(nmi({0, 0, 1, 1}, {0, 1, 0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(nmi({0, 0, 0}, {0, 0, 0}), 0.0);
  // normalized_mutual_info_score([0,0,1,1],[0,0,1,2]) = 0.8
  EXPECT_NEAR(nmi({0, 0, 1, 1}, {0, 0, 1, 2}), 0.8, 1e-15);
}

TEST(Metrics, AgreeWithBruteForceExhaustively) {
  for (std::size_t n = 2; n <= 5; ++n)
    oracle::for_each_labeling(n, 3, [&](const std::vector<int>& a) {
      oracle::for_each_labeling(n, 3, [&](const std::vector<int>& b) {
        ASSERT_NEAR(ari(a, b), oracle::ari(a, b), 1e-12);
        ASSERT_NEAR(nmi(a, b), oracle::nmi(a, b), 1e-12);
      });
    });
}

TEST(Metrics, SymmetricAndRelabelInvariant) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<int> a(12), b(12);
    for (auto& v : a) v = static_cast<int>(rng.index(3));
    for (auto& v : b) v = static_cast<int>(rng.index(4));
    std::vector<int> a2 = a;
    for (auto& v : a2) v = (v + 1) % 3 + 10;
    EXPECT_NEAR(ari(a, b), ari(b, a), 1e-14);
    EXPECT_NEAR(nmi(a, b), nmi(b, a), 1e-14);
    EXPECT_NEAR(ari(a, b), ari(a2, b), 1e-14);
    EXPECT_NEAR(nmi(a, b), nmi(a2, b), 1e-14);
    EXPECT_LE(ari(a, b), 1.0);
    EXPECT_GE(nmi(a, b), 0.0);
    EXPECT_LE(nmi(a, b), 1.0);
  }
}

TEST(Metrics, RandomLabelingsScoreNearZero) {
  Rng rng(5);
  std::vector<int> truth(600), guess(600);
  for (std::size_t i = 0; i < 600; ++i) {
    truth[i] = static_cast<int>(i % 3);
    guess[i] = static_cast<int>(rng.index(3));
  }
  EXPECT_LT(std::abs(ari(truth, guess)), 0.02);
  EXPECT_LT(nmi(truth, guess), 0.02);
}

TEST(KMeans, SingleClusterPutsEverythingTogether) {
  Rng rng(1);
  Matrix x(10, 3);
  for (double& v : x.data()) v = rng.uniform();
  ClusterConfig cfg;
  cfg.k = 1;
  const KMeansResult r = kmeans(x, cfg);
  EXPECT_TRUE(std::all_of(r.labels.begin(), r.labels.end(), [](int l) { return l == 0; }));
  // Inertia of one cluster is the total sum of squares about the mean.
  EXPECT_NEAR(r.inertia, inertia_of(x, r.labels), 1e-12);
}

TEST(KMeans, InertiaIsMonotone) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    Matrix x(40, 3);
    for (double& v : x.data()) v = rng.uniform();
    ClusterConfig cfg;
    cfg.k = 4;
    cfg.seed = static_cast<std::uint64_t>(t);
    cfg.tol = 0.0;
    for (const auto& trace : kmeans(x, cfg).traces)
      for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] * (1 + 1e-12));
  }
}

TEST(KMeans, SeparatesTwoBlobs) {
  Rng rng(3);
  std::vector<int> labels;
  const Matrix x = two_blobs(rng, 25, 5.0, labels);
  ClusterConfig cfg;
  cfg.k = 2;
  EXPECT_DOUBLE_EQ(ari(labels, kmeans(x, cfg).labels), 1.0);
}

TEST(KMeans, SeedIsDeterministic) {
  Rng rng(4);
  Matrix x(30, 2);
  for (double& v : x.data()) v = rng.uniform();
  ClusterConfig cfg;
  cfg.k = 3;
  cfg.seed = 9;
  EXPECT_EQ(kmeans(x, cfg).labels, kmeans(x, cfg).labels);
  EXPECT_THROW(kmeans(Matrix(2, 2), cfg), std::invalid_argument);
}

TEST(KMeans, EmptyClustersAreRepaired) {
  // Three distinct points and one duplicate, k = 3: every cluster non-empty.
  const Matrix x{{0, 0}, {0, 0}, {1, 0}, {5, 5}};
  ClusterConfig cfg;
  cfg.k = 3;
  const KMeansResult r = kmeans(x, cfg);
  std::set<int> used(r.labels.begin(), r.labels.end());
  EXPECT_EQ(used.size(), 3u);
  EXPECT_NEAR(r.inertia, 0.0, 1e-12);
}

TEST(Selection, EvaluateUsesDedupColumns) {
  Rng rng(6);
  std::vector<int> labels;
  Matrix x = two_blobs(rng, 20, 4.0, labels);
  ClusterConfig cfg;
  const ClusterScores a = evaluate_selection(x, labels, 2, {0, 0, 1}, cfg);
  const ClusterScores b = evaluate_selection(x, labels, 2, {0, 1}, cfg);
  EXPECT_EQ(a.ari, b.ari);
  EXPECT_EQ(a.nmi, b.nmi);
  EXPECT_THROW(evaluate_selection(x, labels, 2, {}, cfg), std::invalid_argument);
  EXPECT_THROW(evaluate_selection(x, labels, 2, {2}, cfg), std::out_of_range);
}

TEST(Selection, RecoveryPrecision) {
  EXPECT_DOUBLE_EQ(recovery_precision({1, 2, 3, 3}, {2, 3, 4}), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(recovery_precision({5}, {2, 3}), 0.0);
  EXPECT_THROW(recovery_precision({}, {1}), std::invalid_argument);
}
