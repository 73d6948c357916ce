// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "resdec/history.hpp"

using namespace resdec;

namespace {

StepRecord rec(std::int64_t step, Origin origin = Origin::generated) {
  return truncate_to_record(step, origin, log_softmax(LogitVector::dense({2.0, 1.0, 0.0, -1.0})), 4);
}

std::vector<std::int64_t> steps_of(const std::vector<RecordRef>& w) {
  std::vector<std::int64_t> out;
  for (const StepRecord& r : w) out.push_back(r.step_index);
  return out;
}

}  // namespace

TEST(TopIndices, OrderAndTies) {
  const auto v = LogitVector::dense({1.0, 3.0, 3.0, kNegInf, 2.0});
  EXPECT_EQ(top_indices(v, 10), (std::vector<std::size_t>{1, 2, 4, 0}));
  EXPECT_EQ(top_indices(v, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_TRUE(top_indices(v, 0).empty());
}

TEST(StepRecordTest, FillIsFloorMinusOne) {
  const StepRecord r = make_record(1, Origin::generated, {{3, -0.1}, {5, -9.2}});
  EXPECT_DOUBLE_EQ(r.fill_logit(), -10.2);
}

TEST(StepRecordTest, ValidationCatchesBadRecords) {
  EXPECT_THROW(make_record(1, Origin::generated, {}), DimensionError);
  EXPECT_THROW(make_record(1, Origin::generated, {{1, -2.0}, {2, -1.0}}), DimensionError);
  EXPECT_THROW(make_record(1, Origin::generated, {{1, -1.0}, {1, -2.0}}), DimensionError);
  EXPECT_THROW(make_record(1, Origin::generated, {{1, 0.5}}), DimensionError);  // lse > 0
  EXPECT_THROW(make_record(0, Origin::generated, {{1, -1.0}}), OrderingError);
  EXPECT_THROW(make_record(1, Origin::prefill, {{1, -1.0}}), OrderingError);
  EXPECT_NO_THROW(make_record(0, Origin::prefill, {{1, -1.0}}));
}

TEST(StepRecordTest, TruncationKeepsTopM) {
  const auto norm = log_softmax(LogitVector::dense({0.0, 4.0, 1.0, 3.0}));
  const StepRecord r = truncate_to_record(2, Origin::generated, norm, 2, 1);
  ASSERT_EQ(r.entries.size(), 2u);
  EXPECT_EQ(r.entries[0].token, 1);
  EXPECT_EQ(r.entries[1].token, 3);
  EXPECT_DOUBLE_EQ(r.floor_logit, norm[3]);
  EXPECT_EQ(r.chosen, std::optional<TokenId>(1));
}

TEST(HistoryBufferTest, RingEvictsOldest) {
  HistoryBuffer buf(8, 8);
  for (int s = 1; s <= 10; ++s) buf.push(rec(s));
  EXPECT_EQ(buf.size(), 8u);
  EXPECT_EQ(buf.records().front().step_index, 3);
}

TEST(HistoryBufferTest, DuplicateStepThrows) {
  HistoryBuffer buf(8, 8);
  buf.push(rec(5));
  EXPECT_THROW(buf.push(rec(5)), OrderingError);
  EXPECT_THROW(buf.push(rec(4)), OrderingError);
}

TEST(HistoryBufferTest, PrefillThenGenerated) {
  HistoryBuffer buf(8, 8);
  for (int s = -3; s <= 0; ++s) buf.push(rec(s, Origin::prefill));
  for (int s = 1; s <= 4; ++s) buf.push(rec(s));
  EXPECT_EQ(steps_of(buf.window(5, 8)), (std::vector<std::int64_t>{-3, -2, -1, 0, 1, 2, 3, 4}));
}

TEST(HistoryBufferTest, WindowOfGeneratedOnly) {
  HistoryBuffer buf(8, 8);
  for (int s = 1; s <= 8; ++s) buf.push(rec(s));
  EXPECT_EQ(steps_of(buf.window(9, 8)), (std::vector<std::int64_t>{1, 2, 3, 4, 5, 6, 7, 8}));
}

TEST(HistoryBufferTest, BackfillFromPrefillTail) {
  HistoryBuffer buf(8, 8);
  for (int s = -5; s <= 0; ++s) buf.push(rec(s, Origin::prefill));
  for (int s = 1; s <= 2; ++s) buf.push(rec(s));
  EXPECT_EQ(steps_of(buf.window(3, 8)), (std::vector<std::int64_t>{-5, -4, -3, -2, -1, 0, 1, 2}));
}

TEST(HistoryBufferTest, PrefillKeepsOnlyItsTail) {
  HistoryBuffer buf(4, 3);
  for (int s = -9; s <= 0; ++s) buf.push(rec(s, Origin::prefill));
  EXPECT_EQ(buf.prefill_size(), 3u);
  buf.push(rec(1));
  EXPECT_EQ(steps_of(buf.window(2, 4)), (std::vector<std::int64_t>{-2, -1, 0, 1}));
}

TEST(HistoryBufferTest, EmptyWindowThrows) {
  HistoryBuffer buf(8, 8);
  EXPECT_THROW(buf.window(1, 8), EmptyHistory);
  EXPECT_THROW(buf.window(1, 1), ConfigError);
}

TEST(HistoryBufferTest, WindowExcludesCurrentAndLater) {
  HistoryBuffer buf(8, 8);
  for (int s = 1; s <= 6; ++s) buf.push(rec(s));
  EXPECT_EQ(steps_of(buf.window(4, 8)), (std::vector<std::int64_t>{1, 2, 3}));
}

TEST(PoolLogits, StoredValuesWhenPresent) {
  const StepRecord r = make_record(1, Origin::generated, {{3, -0.5}, {1, -1.5}, {0, -2.0}});
  const auto v = pool_logits(r, CandidatePool{{1, 3}, 2});
  EXPECT_DOUBLE_EQ(v[0], -1.5);
  EXPECT_DOUBLE_EQ(v[1], -0.5);
  EXPECT_EQ(v.token(0), 1);
}

TEST(PoolLogits, AbsentTokensGetFill) {
  const StepRecord r = make_record(1, Origin::generated, {{2, -0.001}, {6, -9.2}});
  const auto v = pool_logits(r, CandidatePool{{11}, 1});
  EXPECT_DOUBLE_EQ(v[0], -10.2);
}

TEST(PoolLogits, MixedPool) {
  const StepRecord r = make_record(1, Origin::generated, {{4, -0.2}, {0, -2.1}, {9, -3.0}});
  const auto v = pool_logits(r, CandidatePool{{9, 5, 4, 1}, 4});
  const std::vector<double> expected{-3.0, -4.0, -0.2, -4.0};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_DOUBLE_EQ(v[i], expected[i]) << i;
}
