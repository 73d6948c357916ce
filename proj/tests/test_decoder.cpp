// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "resdec/decoder.hpp"
#include "resdec/simulator.hpp"
#include "resdec/source.hpp"

using namespace resdec;

namespace {

ResidualSignal signal_over(std::vector<TokenId> pool, std::vector<double> values) {
  ResidualSignal s;
  s.pool = CandidatePool{pool, pool.size()};
  s.values = LogitVector::over(std::move(pool), std::move(values));
  s.weights = {1.0};
  s.source_steps = {0};
  return s;
}

}  // namespace

TEST(Fuse, AlphaZeroIsIdentity) {
  const auto cur = LogitVector::dense({2, 0, -1});
  EXPECT_EQ(fuse(cur, signal_over({0, 1}, {5, 5}), 0.0), cur);
}

TEST(Fuse, AlphaOneOnFullPoolIsResidual) {
  const auto out = fuse(LogitVector::dense({2, 0}), signal_over({0, 1}, {-3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(out[0], -3);
  EXPECT_DOUBLE_EQ(out[1], 4);
}

TEST(Fuse, Midpoint) {
  const auto out = fuse(LogitVector::dense({2, 0}), signal_over({0, 1}, {0, 2}), 0.5);
  EXPECT_DOUBLE_EQ(out[0], 1);
  EXPECT_DOUBLE_EQ(out[1], 1);
}

TEST(Fuse, OutsidePoolUntouched) {
  const auto out = fuse(LogitVector::dense({2, 0, -1, -7}), signal_over({1}, {4}), 0.5);
  EXPECT_DOUBLE_EQ(out[0], 2);
  EXPECT_DOUBLE_EQ(out[1], 2);
  EXPECT_DOUBLE_EQ(out[3], -7);
}

TEST(Fuse, Errors) {
  EXPECT_THROW(fuse(LogitVector::dense({1}), signal_over({0}, {1}), 1.5), ConfigError);
  EXPECT_THROW(fuse(LogitVector::dense({1}), signal_over({0}, {1}), -0.1), ConfigError);
  EXPECT_THROW(fuse(LogitVector::dense({1}), signal_over({3}, {1}), 0.5), DimensionError);
}

TEST(PlausibilityMask, Examples) {
  const auto v = LogitVector::dense({std::log(0.6), std::log(0.3), std::log(0.1)});
  EXPECT_EQ(plausibility_mask(v, 0.5), (std::vector<TokenId>{0, 1}));
  EXPECT_EQ(plausibility_mask(v, 0.0), (std::vector<TokenId>{0, 1, 2}));
  EXPECT_EQ(plausibility_mask(v, 1.0), (std::vector<TokenId>{0}));
  EXPECT_THROW(plausibility_mask(v, 1.1), ConfigError);
}

TEST(PlausibilityMask, TiedMaximaSurviveBetaOne) {
  EXPECT_EQ(plausibility_mask(LogitVector::dense({1, 0, 1}), 1.0), (std::vector<TokenId>{0, 2}));
}

TEST(ApplyMask, Examples) {
  const auto v = LogitVector::dense({3, 2, 1});
  const std::vector<TokenId> all{0, 1, 2}, one{1}, two{0, 2};
  EXPECT_EQ(apply_mask(v, all), v);
  const auto s = apply_mask(v, one);
  EXPECT_EQ(s[0], kNegInf);
  EXPECT_DOUBLE_EQ(s[1], 2);
  const auto m = apply_mask(v, two);
  EXPECT_DOUBLE_EQ(m[0], 3);
  EXPECT_EQ(m[1], kNegInf);
  EXPECT_DOUBLE_EQ(m[2], 1);
  EXPECT_THROW(apply_mask(v, std::vector<TokenId>{}), MaskError);
}

TEST(DecodeConfigTest, Validation) {
  DecodeConfig c;
  EXPECT_NO_THROW(c.validate());
  c.top_m = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.window_w = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.strategy = Nucleus{0.0};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.alpha = 2;
  EXPECT_THROW(Decoder{c}, ConfigError);
}

TEST(DecoderTest, FirstStepFallsBackWithoutHistory) {
  Decoder dec(DecodeConfig{});
  const auto out = dec.step(LogitVector::dense({0.0, 2.0, 1.0}));
  EXPECT_TRUE(out.fallback);
  EXPECT_EQ(out.token, 1);
  EXPECT_EQ(out.regular_token, 1);
  ASSERT_EQ(dec.diagnostics().size(), 1u);
  EXPECT_TRUE(dec.diagnostics()[0].fallback);
  EXPECT_EQ(dec.history().size(), 1u);
  EXPECT_EQ(dec.next_step(), 2);
}

TEST(DecoderTest, PrefillAfterGenerationRejected) {
  Decoder dec(DecodeConfig{});
  dec.step(LogitVector::dense({0.0, 1.0}));
  EXPECT_THROW(dec.add_prefill(make_record(0, Origin::prefill, {{0, -0.1}})), OrderingError);
}

TEST(DecoderTest, OneSegmentationPerStep) {
  const Trace t = generate_trace(SyntheticTaskSpec{}, 3);
  TraceReplaySource src(t);
  const DecodeResult r = decode(src, DecodeConfig{});
  ASSERT_EQ(r.tokens.size(), t.records.size());
  ASSERT_EQ(r.diagnostics.size(), t.records.size());
  EXPECT_TRUE(r.diagnostics[0].fallback);
  for (std::size_t i = 1; i < r.diagnostics.size(); ++i) {
    const auto& d = r.diagnostics[i];
    EXPECT_EQ(d.window_size, std::min<std::size_t>(i, 8));
    EXPECT_EQ(d.weights.size(), d.source_steps.size());
    double sum = 0;
    for (double w : d.weights) sum += w;
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(DecoderTest, CorrectsInjectedHallucination) {
  const Trace t = generate_trace(SyntheticTaskSpec{}, 17);
  DecodeConfig cfg;
  cfg.pool_k = 8;
  TraceReplaySource src(t);
  const auto r = decode(src, cfg);
  const auto reg = decode_regular(src, cfg);
  EXPECT_EQ(r.tokens.back(), 3);
  EXPECT_EQ(reg.back(), 7);
  EXPECT_EQ(r.regular_tokens.back(), 7);
}

TEST(DecoderTest, NoInjectionBothAnswer) {
  SyntheticTaskSpec spec;
  spec.injection_delta = 0.0;
  const Trace t = generate_trace(spec, 5);
  DecodeConfig cfg;
  cfg.pool_k = 8;
  TraceReplaySource src(t);
  EXPECT_EQ(decode(src, cfg).tokens.back(), 3);
  EXPECT_EQ(decode_regular(src, cfg).back(), 3);
}

TEST(DecoderTest, AlphaZeroCollapsesForEveryStrategy) {
  for (const Strategy& s : {Strategy{Greedy{}}, Strategy{TopK{3}}, Strategy{Nucleus{0.8}}, Strategy{Temperature{1.5}}}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Trace t = generate_trace(SyntheticTaskSpec{}, seed);
      DecodeConfig cfg;
      cfg.alpha = 0.0;
      cfg.strategy = s;
      cfg.seed = seed;
      TraceReplaySource src(t);
      const auto r = decode(src, cfg);
      EXPECT_EQ(r.tokens, decode_regular(src, cfg)) << to_string(s);
      EXPECT_EQ(r.flips, 0u);
    }
  }
}

TEST(DecoderTest, DeterministicPerSeed) {
  const Trace t = generate_trace(SyntheticTaskSpec{}, 8);
  DecodeConfig cfg;
  cfg.strategy = Temperature{2.0};
  cfg.seed = 99;
  TraceReplaySource a(t), b(t);
  EXPECT_EQ(decode(a, cfg).tokens, decode(b, cfg).tokens);
}

TEST(DecoderTest, RawFusionModeRuns) {
  DecodeConfig cfg;
  cfg.fusion = FusionScale::raw;
  Decoder dec(cfg);
  dec.step(LogitVector::dense({10.0, 12.0, 11.0}));
  EXPECT_NO_THROW(dec.step(LogitVector::dense({10.0, 12.0, 11.0})));
}

TEST(DecoderTest, ExplicitDomainLogits) {
  Decoder dec(DecodeConfig{});
  dec.step(LogitVector::over({40, 7, 12}, {-0.5, -1.5, -2.0}));
  const auto out = dec.step(LogitVector::over({7, 40, 12}, {-0.4, -1.2, -3.0}));
  EXPECT_EQ(out.regular_token, 7);
}

TEST(MarkovSourceTest, IdentityTableRepeats) {
  TransitionTable tab;
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> row(4, 0.0);
    row[i] = 1.0;
    tab.rows.push_back(row);
  }
  MarkovSource src(tab, {2}, 4);
  DecodeConfig cfg;
  cfg.max_new_tokens = 12;
  const auto r = decode(src, cfg);
  EXPECT_EQ(r.tokens, std::vector<TokenId>(12, 2));
}

TEST(MarkovSourceTest, UniformRowsAgree) {
  TransitionTable tab;
  for (std::size_t i = 0; i < 6; ++i) tab.rows.push_back(std::vector<double>(6, 1.0 / 6.0));
  MarkovSource src(tab, {3, 1}, 6);
  DecodeConfig cfg;
  cfg.max_new_tokens = 10;
  const auto r = decode(src, cfg);
  EXPECT_EQ(r.tokens, decode_regular(src, cfg));
  EXPECT_EQ(r.tokens, std::vector<TokenId>(10, 0));
}

TEST(MarkovSourceTest, DriftStateDiverges) {
  const TransitionTable tab = drift_table(16, 10, 14);
  MarkovSource src(tab, {0}, 16);
  DecodeConfig cfg;
  cfg.max_new_tokens = 16;
  const auto r = decode(src, cfg);
  const auto g = decode_regular(src, cfg);
  // Both walk 1, 2, ..., 10; from state 10 greedy jumps to 14 and ResDec keeps going.
  std::size_t first_diff = 0;
  while (first_diff < r.tokens.size() && r.tokens[first_diff] == g[first_diff]) ++first_diff;
  ASSERT_LT(first_diff, r.tokens.size());
  EXPECT_EQ(first_diff, 10u);
  EXPECT_EQ(r.tokens[first_diff - 1], 10);
  EXPECT_EQ(g[first_diff], 14);
  EXPECT_EQ(r.tokens[first_diff], 11);
}

TEST(MarkovSourceTest, PrefillRecordsFromPrompt) {
  const TransitionTable tab = drift_table();
  MarkovSource src(tab, {0, 1, 2, 3}, 16);
  const auto pre = src.begin();
  ASSERT_EQ(pre.size(), 3u);
  EXPECT_EQ(pre.front().step_index, -2);
  EXPECT_EQ(pre.back().step_index, 0);
  EXPECT_EQ(pre.back().chosen, std::optional<TokenId>(3));
}

TEST(MarkovSourceTest, EosStops) {
  TransitionTable tab = drift_table();
  tab.eos = 5;
  MarkovSource src(tab, {0}, 16);
  const auto r = decode(src, DecodeConfig{});
  EXPECT_EQ(r.tokens.back(), 5);
  EXPECT_EQ(r.tokens.size(), 5u);
}

TEST(MarkovSourceTest, RejectsMalformedTables) {
  TransitionTable bad;
  bad.rows = {{0.5, 0.4}, {0.5, 0.5}};
  EXPECT_THROW(MarkovSource(bad, {0}, 2), SpecError);
  bad.rows = {{1.0}, {0.5, 0.5}};
  EXPECT_THROW(MarkovSource(bad, {0}, 2), SpecError);
  EXPECT_THROW(MarkovSource(drift_table(), {}, 2), SpecError);
  EXPECT_THROW(MarkovSource(drift_table(), {99}, 2), SpecError);
}
