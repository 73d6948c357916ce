// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "resdec/residual.hpp"

using namespace resdec;

namespace {

// Record whose restriction to the pool {0, 1, 2, 3} is exactly `probs`
// (the rest of the vocabulary carries a small leftover mass).
StepRecord pool_record(std::int64_t step, const std::vector<double>& probs, double pool_mass = 0.9) {
  std::vector<double> logits;
  for (double p : probs) logits.push_back(std::log(p * pool_mass));
  logits.push_back(std::log(1.0 - pool_mass));
  return truncate_to_record(step, Origin::generated, LogitVector::dense(logits), 16);
}

const CandidatePool kPool4{{0, 1, 2, 3}, 4};

}  // namespace

TEST(Confidence, UniformPoolIsLnK) {
  EXPECT_NEAR(confidence(DenseDistribution({0.25, 0.25, 0.25, 0.25})), std::log(4.0), 1e-15);
}

TEST(Confidence, SkewedPools) {
  const std::vector<double> a{0.7, 0.2, 0.1};
  EXPECT_NEAR(confidence(DenseDistribution(a)), 1.422899, 5e-7);
  EXPECT_NEAR(confidence(DenseDistribution(a)), oracle::mean_neg_log(a), 1e-15);
  const std::vector<double> b{0.998, 0.001, 0.001};
  // (-ln .998 - 2 ln .001) / 3 = 4.60584; quoted as "about 4.605".
  EXPECT_NEAR(confidence(DenseDistribution(b)), 4.605, 1e-3);
  EXPECT_NEAR(confidence(DenseDistribution(b)), oracle::mean_neg_log(b), 1e-15);
  EXPECT_GT(confidence(DenseDistribution(b)), confidence(DenseDistribution(a)));
}

TEST(Confidence, FromRecordUsesPoolRestriction) {
  const StepRecord r = pool_record(1, {0.4, 0.3, 0.2, 0.1}, 0.5);
  EXPECT_NEAR(confidence(r, kPool4), oracle::mean_neg_log({0.4, 0.3, 0.2, 0.1}), 1e-12);
  EXPECT_THROW(confidence(r, CandidatePool{}), EmptyPool);
}

TEST(NormalizeWeights, Examples) {
  const auto a = normalize_weights(std::vector<double>{1, 1, 1});
  for (double w : a.weights) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
  EXPECT_FALSE(a.degenerate);
  const auto b = normalize_weights(std::vector<double>{2, 1, 1});
  EXPECT_EQ(b.weights, (std::vector<double>{0.5, 0.25, 0.25}));
  const auto c = normalize_weights(std::vector<double>{0, 0});
  EXPECT_EQ(c.weights, (std::vector<double>{0.5, 0.5}));
  EXPECT_TRUE(c.degenerate);
  EXPECT_THROW(normalize_weights(std::vector<double>{}), EmptyHistory);
  EXPECT_THROW(normalize_weights(std::vector<double>{-1, 2}), DimensionError);
}

TEST(ResidualLogits, SingleRecordIsExact) {
  const StepRecord r = pool_record(3, {0.4, 0.3, 0.2, 0.1});
  const std::vector<RecordRef> d{r};
  const auto sig = residual_logits(d, kPool4);
  const auto expected = pool_logits(r, kPool4);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(sig.values[j], expected[j]);
  EXPECT_EQ(sig.weights, (std::vector<double>{1.0}));
  EXPECT_EQ(sig.source_steps, (std::vector<std::int64_t>{3}));
}

TEST(ResidualLogits, EqualConfidenceIsMean) {
  // Permuted pool distributions share the same confidence.
  const StepRecord a = pool_record(1, {0.4, 0.3, 0.2, 0.1});
  const StepRecord b = pool_record(2, {0.1, 0.2, 0.3, 0.4});
  const std::vector<RecordRef> d{a, b};
  const auto sig = residual_logits(d, kPool4);
  const auto va = pool_logits(a, kPool4), vb = pool_logits(b, kPool4);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(sig.values[j], 0.5 * (va[j] + vb[j]), 1e-14);
}

TEST(ResidualLogits, WeightedByConfidence) {
  const std::vector<std::vector<double>> probs{{0.97, 0.01, 0.01, 0.01}, {0.4, 0.3, 0.2, 0.1}, {0.25, 0.25, 0.25, 0.25}};
  std::vector<StepRecord> recs;
  for (std::size_t i = 0; i < probs.size(); ++i) recs.push_back(pool_record(static_cast<std::int64_t>(i) + 1, probs[i]));
  const auto sig = residual_logits(as_refs(recs), kPool4);

  std::vector<double> c;
  double total = 0;
  for (const auto& p : probs) {
    c.push_back(oracle::mean_neg_log(p));
    total += c.back();
  }
  for (std::size_t j = 0; j < 4; ++j) {
    double expected = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) expected += c[i] / total * std::log(probs[i][j] * 0.9);
    EXPECT_NEAR(sig.values[j], expected, 1e-12) << j;
  }
  for (std::size_t i = 0; i < probs.size(); ++i) EXPECT_NEAR(sig.weights[i], c[i] / total, 1e-14);
}

TEST(AggregateResidual, ConfidencesTwoOneOne) {
  const std::vector<std::vector<double>> values{{-1, -2, -3, -4}, {-4, -3, -2, -1}, {-2, -2, -2, -2}};
  const std::vector<double> conf{2, 1, 1};
  const std::vector<std::int64_t> steps{1, 2, 3};
  const auto sig = detail::aggregate_residual(values, conf, steps, kPool4, {}, 4, ConfidenceReading::as_written);
  const std::vector<double> expected{0.5 * -1 + 0.25 * -4 + 0.25 * -2, 0.5 * -2 + 0.25 * -3 + 0.25 * -2,
                                     0.5 * -3 + 0.25 * -2 + 0.25 * -2, 0.5 * -4 + 0.25 * -1 + 0.25 * -2};
  for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(sig.values[j], expected[j]);
}

TEST(AggregateResidual, AlternativeStrategies) {
  const std::vector<std::vector<double>> values{{-1, -1, -1, -1}, {-2, -2, -2, -2}, {-3, -3, -3, -3}};
  const std::vector<double> conf{3, 1, 2};
  const std::vector<std::int64_t> steps{1, 2, 3};

  const auto uni = detail::aggregate_residual(values, conf, steps, kPool4, {Aggregation::Kind::uniform}, 4,
                                              ConfidenceReading::as_written);
  EXPECT_NEAR(uni.values[0], -2.0, 1e-15);

  const auto decay = detail::aggregate_residual(values, conf, steps, kPool4, {Aggregation::Kind::distance_decay}, 4,
                                                ConfidenceReading::as_written);
  // 1/3, 1/2, 1 normalized by 11/6.
  EXPECT_NEAR(decay.weights[0], 2.0 / 11.0, 1e-15);
  EXPECT_NEAR(decay.weights[2], 6.0 / 11.0, 1e-15);
  EXPECT_THROW(detail::aggregate_residual(values, conf, steps, kPool4, {Aggregation::Kind::distance_decay}, 3,
                                          ConfidenceReading::as_written),
               OrderingError);

  const auto topn = detail::aggregate_residual(values, conf, steps, kPool4, {Aggregation::Kind::top_n_confident, 2}, 4,
                                               ConfidenceReading::as_written);
  EXPECT_EQ(topn.source_steps, (std::vector<std::int64_t>{1, 3}));
  EXPECT_NEAR(topn.weights[0], 0.6, 1e-15);

  const auto geo = detail::aggregate_residual(values, conf, steps, kPool4, {}, 4, ConfidenceReading::geometric_mean);
  EXPECT_GT(geo.weights[1], geo.weights[0]);
}

TEST(AggregateResidual, TopNTiesPreferRecent) {
  const std::vector<std::vector<double>> values{{0, 0}, {1, 1}, {2, 2}};
  const std::vector<double> conf{1, 1, 1};
  const std::vector<std::int64_t> steps{1, 2, 3};
  const auto sig = detail::aggregate_residual(values, conf, steps, CandidatePool{{0, 1}, 2},
                                              {Aggregation::Kind::top_n_confident, 2}, 4, ConfidenceReading::as_written);
  EXPECT_EQ(sig.source_steps, (std::vector<std::int64_t>{2, 3}));
}

TEST(ResidualLogits, Errors) {
  EXPECT_THROW(residual_logits({}, kPool4), EmptyHistory);
  const StepRecord r = pool_record(1, {0.25, 0.25, 0.25, 0.25});
  const std::vector<RecordRef> d{r};
  EXPECT_THROW(residual_logits(d, CandidatePool{}), EmptyPool);
}
