#include <gtest/gtest.h>

#include <cmath>

#include "cilf/errors.hpp"
#include "cilf/prototype_memory.hpp"
#include "test_support.hpp"

using namespace cilf;
using cilf::testing::random_tensor;

namespace {

// Per-class covariance by explicit outer products, biased.
std::vector<double> covariance_oracle(const Tensor& f, const std::vector<std::size_t>& labels, std::size_t cls) {
  const std::size_t d = f.dim(1);
  std::vector<double> mean(d, 0.0), cov(d * d, 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == cls) {
      for (std::size_t j = 0; j < d; ++j) mean[j] += f.at(i, j);
      ++n;
    }
  for (auto& m : mean) m /= double(n);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != cls) continue;
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += (f.at(i, a) - mean[a]) * (f.at(i, b) - mean[b]) / double(n);
  }
  return cov;
}

}  // namespace

TEST(Prototypes, Examples) {
  const Tensor f = Tensor::matrix({{0, 0}, {2, 2}, {5, -1}});
  const std::vector<std::size_t> labels = {0, 0, 7};
  const VectorMap p = compute_prototypes(f, labels);
  EXPECT_EQ(p.at(0), (std::vector<double>{1, 1}));
  EXPECT_EQ(p.at(7), (std::vector<double>{5, -1}));
  EXPECT_EQ(p.count(1), 0u);
}

TEST(Prototypes, MatchSummationOracle) {
  Rng rng(1);
  const Tensor f = random_tensor({100, 8}, rng, -5, 5);
  std::vector<std::size_t> labels(100);
  for (auto& l : labels) l = rng.index(4);
  const VectorMap p = compute_prototypes(f, labels);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t j = 0; j < 8; ++j) {
      long double s = 0.0L;
      std::size_t n = 0;
      for (std::size_t i = 0; i < 100; ++i)
        if (labels[i] == c) s += f.at(i, j), ++n;
      EXPECT_NEAR(p.at(c)[j], double(s / n), 1e-12);
    }
  }
}

TEST(Prototypes, PermutationInvariant) {
  Rng rng(2);
  const Tensor f = random_tensor({40, 5}, rng);
  std::vector<std::size_t> labels(40), perm(40);
  for (std::size_t i = 0; i < 40; ++i) labels[i] = i % 3, perm[i] = i;
  rng.shuffle(std::span<std::size_t>(perm));
  Tensor pf({40, 5});
  std::vector<std::size_t> pl(40);
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t j = 0; j < 5; ++j) pf.at(i, j) = f.at(perm[i], j);
    pl[i] = labels[perm[i]];
  }
  const VectorMap a = compute_prototypes(f, labels), b = compute_prototypes(pf, pl);
  for (const auto& [c, mu] : a)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(mu[j], b.at(c)[j], 1e-12);
}

TEST(Radius, HandCases) {
  const std::vector<std::size_t> one = {0, 0};
  EXPECT_EQ(compute_radius_first_task(Tensor::matrix({{1, 1}, {1, 1}}), one).radius, 0.0);
  EXPECT_NEAR(compute_radius_first_task(Tensor::matrix({{0, 0}, {2, 0}}), one).radius, std::sqrt(0.5), 1e-15);
  const std::vector<std::size_t> singletons = {0, 1};
  const RadiusEstimate e = compute_radius_first_task(Tensor::matrix({{0, 0}, {2, 0}}), singletons);
  EXPECT_TRUE(e.degenerate);
  EXPECT_EQ(e.radius, 0.0);
}

TEST(Radius, MatchesTraceOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor f = random_tensor({60, 6}, rng, -2, 2);
    std::vector<std::size_t> labels(60);
    for (std::size_t i = 0; i < 60; ++i) labels[i] = i % 5;
    double tr = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      const auto cov = covariance_oracle(f, labels, c);
      for (std::size_t a = 0; a < 6; ++a) tr += cov[a * 6 + a];
    }
    const double expect = std::sqrt(tr / 30.0);
    EXPECT_NEAR(compute_radius_first_task(f, labels).radius / expect, 1.0, 1e-10);
  }
}

TEST(RunningRadius, DegenerateAndFixedPoint) {
  Rng rng(4);
  const Tensor f = random_tensor({30, 4}, rng);
  std::vector<std::size_t> labels(30);
  for (std::size_t i = 0; i < 30; ++i) labels[i] = 10 + i % 3;
  const double first = compute_radius_first_task(f, labels).radius;
  EXPECT_NEAR(update_radius_running(123.0, 0, f, labels), first, 1e-14);
  EXPECT_NEAR(update_radius_running(first, 7, f, labels), first, 1e-14);
}

TEST(RunningRadius, TwoStagesMatchPooledTraces) {
  Rng rng(5);
  const Tensor f1 = random_tensor({40, 3}, rng, -1, 1), f2 = random_tensor({30, 3}, rng, -3, 3);
  std::vector<std::size_t> l1(40), l2(30);
  for (std::size_t i = 0; i < 40; ++i) l1[i] = i % 4;
  for (std::size_t i = 0; i < 30; ++i) l2[i] = 4 + i % 2;
  double tr = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    const auto cov = covariance_oracle(f1, l1, c);
    tr += cov[0] + cov[4] + cov[8];
  }
  for (std::size_t c = 4; c < 6; ++c) {
    const auto cov = covariance_oracle(f2, l2, c);
    tr += cov[0] + cov[4] + cov[8];
  }
  const double r1 = compute_radius_first_task(f1, l1).radius;
  EXPECT_NEAR(update_radius_running(r1, 4, f2, l2), std::sqrt(tr / 18.0), 1e-12);
}

TEST(Covariance, Modes) {
  Rng rng(6);
  const Tensor f = random_tensor({50, 4}, rng);
  std::vector<std::size_t> labels(50);
  for (std::size_t i = 0; i < 50; ++i) labels[i] = i % 2;
  EXPECT_TRUE(estimate_covariance(f, labels, CovarianceMode::Radius).values.empty());

  const auto full = estimate_covariance(f, labels, CovarianceMode::Full);
  const auto diag = estimate_covariance(f, labels, CovarianceMode::Diagonal);
  for (std::size_t c = 0; c < 2; ++c) {
    const auto oracle = covariance_oracle(f, labels, c);
    ASSERT_EQ(full.values.at(c).size(), 16u);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(full.values.at(c)[i], oracle[i], 1e-10);
    for (std::size_t a = 0; a < 4; ++a) {
      EXPECT_NEAR(diag.values.at(c)[a], oracle[a * 4 + a], 1e-10);
      for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(full.values.at(c)[a * 4 + b], full.values.at(c)[b * 4 + a]);
    }
  }
}

TEST(Covariance, OneDimensionalPopulationVariance) {
  const Tensor f = Tensor::matrix({{1}, {2}, {4}, {9}});
  const std::vector<std::size_t> labels = {0, 0, 0, 0};
  // mean 4, squared deviations 9+4+0+25 = 38
  EXPECT_NEAR(estimate_covariance(f, labels, CovarianceMode::Diagonal).values.at(0)[0], 38.0 / 4.0, 1e-14);
}

TEST(Covariance, FullFallsBackForSingletons) {
  const Tensor f = Tensor::matrix({{1, 2}, {0, 0}, {2, 2}});
  const std::vector<std::size_t> labels = {0, 1, 1};
  const auto est = estimate_covariance(f, labels, CovarianceMode::Full);
  EXPECT_EQ(est.fallbacks, (std::vector<std::size_t>{0}));
  EXPECT_EQ(est.values.at(0), (std::vector<double>(4, 0.0)));
}

TEST(Memory, AppendOnlyCommit) {
  PrototypeMemory m(2, CovarianceMode::Radius);
  m.commit({{0, {1, 2}}, {1, {3, 4}}});
  EXPECT_THROW(m.commit({{1, {0, 0}}}), ProtocolError);
  EXPECT_EQ(m.size(), 2u);
  EXPECT_THROW(m.commit({{5, {0, 0, 0}}}), DimensionError);
  EXPECT_THROW(m.set_radius(-1.0), ArgumentError);

  PrototypeMemory diag(2, CovarianceMode::Diagonal);
  EXPECT_THROW(diag.commit({{0, {1, 2}}}), PreconditionError);
}

TEST(Memory, EntryCountsByHand) {
  PrototypeMemory r(3, CovarianceMode::Radius);
  r.commit({{0, {1, 2, 3}}, {1, {1, 2, 3}}, {2, {0, 0, 0}}, {3, {0, 0, 0}}});
  EXPECT_EQ(r.entry_count(), 4u * 3u + 1u);

  PrototypeMemory d(3, CovarianceMode::Diagonal);
  d.commit({{0, {1, 2, 3}}, {1, {1, 2, 3}}}, {{0, {1, 1, 1}}, {1, {1, 1, 1}}});
  EXPECT_EQ(d.entry_count(), 2u * 3u + 1u + 2u * 3u);

  PrototypeMemory f(2, CovarianceMode::Full);
  f.commit({{4, {1, 2}}}, {{4, {1, 0, 0, 1}}});
  EXPECT_EQ(f.entry_count(), 2u + 1u + 4u);
}

TEST(Memory, DenseCovariance) {
  PrototypeMemory r(2, CovarianceMode::Radius);
  r.set_radius(0.5);
  r.commit({{0, {0, 0}}});
  EXPECT_EQ(r.dense_covariance(0), (std::vector<double>{0.25, 0, 0, 0.25}));
}
