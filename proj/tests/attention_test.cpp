// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>

#include "ctxprobe/attention.hpp"
#include "test_util.hpp"

namespace ctxprobe {
namespace {

using testing::flat_dump;
using testing::random_dump;

TEST(Normalize, UniformOverTenWithFourContext) {
  AttentionDump d = flat_dump(1, 1, {false, true, true, false, true, false, true, false, false, false}, 0.1f);
  const auto n = normalize_context_attention(d);
  for (std::size_t t = 0; t < 10; ++t) EXPECT_NEAR(n.row(0)[t], d.context_mask[t] ? 0.25 : 0.0, 1e-7);
}

TEST(Normalize, PromptExclusion) {
  AttentionDump d = flat_dump(1, 1, {false, true}, 0.0f);
  d.attn = {0.9f, 0.1f};
  const auto n = normalize_context_attention(d);
  EXPECT_DOUBLE_EQ(n.row(0)[0], 0.0);
  EXPECT_DOUBLE_EQ(n.row(0)[1], 1.0);
}

TEST(Normalize, DivideByContextMass) {
  AttentionDump d = flat_dump(1, 1, {true, true, false}, 0.0f);
  d.attn = {0.2f, 0.3f, 0.5f};
  const auto n = normalize_context_attention(d);
  EXPECT_NEAR(n.row(0)[0], 0.4, 1e-7);
  EXPECT_NEAR(n.row(0)[1], 0.6, 1e-7);
}

TEST(Normalize, ZeroMassHeadFallsBackToUniform) {
  AttentionDump d = flat_dump(1, 2, {false, true, true}, 0.0f);
  d.attn = {1.0f, 0.0f, 0.0f, 0.0f, 0.5f, 0.5f};
  const auto n = normalize_context_attention(d);
  ASSERT_EQ(n.fallback_heads, (std::vector<std::size_t>{0}));
  EXPECT_DOUBLE_EQ(n.row(0)[1], 0.5);
  EXPECT_DOUBLE_EQ(n.row(0)[2], 0.5);
  EXPECT_THROW(normalize_context_attention(d, ZeroMassPolicy::kThrow), ZeroContextMass);
}

TEST(Normalize, RowsSumToOneAndScaleInvariant) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    AttentionDump d = random_dump(rng, 2, 3, 5 + rng.below(20));
    const auto n = normalize_context_attention(d);
    for (std::size_t f = 0; f < d.num_features(); ++f) {
      const auto row = n.row(f);
      EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-6);
    }
    AttentionDump scaled = d;
    const float c = static_cast<float>(rng.uniform(0.1, 1.0));
    for (auto& v : scaled.attn) v *= c;
    const auto m = normalize_context_attention(scaled);
    // Scaling in float32 rounds each entry; compare at float precision.
    for (std::size_t i = 0; i < n.weights.size(); ++i) EXPECT_NEAR(m.weights[i], n.weights[i], 1e-6);
  }
}

TEST(Normalize, ExactPowerOfTwoScalingIsBitInvariant) {
  Rng rng(11);
  AttentionDump d = random_dump(rng, 2, 2, 12);
  AttentionDump scaled = d;
  for (auto& v : scaled.attn) v *= 0.25f;
  const auto a = normalize_context_attention(d), b = normalize_context_attention(scaled);
  for (std::size_t i = 0; i < a.weights.size(); ++i) EXPECT_NEAR(a.weights[i], b.weights[i], 1e-9);
}

TEST(Aggregate, MeanOverSentenceTokens) {
  NormalizedAttention n{1, 1, 4, {0.1, 0.4, 0.6, 0.0}, {}};
  TokenSpanMap spans;
  spans.ranges = {{0, 1}, {1, 3}, {3, 3}};
  spans.empty_sentence = {false, false, true};
  const auto f = aggregate_sentence_features(n, spans);
  EXPECT_DOUBLE_EQ(f.at(0, 0), 0.1);
  EXPECT_DOUBLE_EQ(f.at(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(f.at(2, 0), 0.0);
  EXPECT_TRUE(f.empty_rows[2]);
  EXPECT_FALSE(f.empty_rows[1]);
}

TEST(Aggregate, EqualWeightsGiveThatWeight) {
  NormalizedAttention n{1, 1, 2, {0.5, 0.5}, {}};
  TokenSpanMap spans;
  spans.ranges = {{0, 2}};
  spans.empty_sentence = {false};
  EXPECT_DOUBLE_EQ(aggregate_sentence_features(n, spans).at(0, 0), 0.5);
}

TEST(Aggregate, MassConservation) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 20;
    std::vector<bool> mask(T, true);
    AttentionDump d = random_dump(rng, 2, 2, T);
    d.context_mask = mask;
    TokenSpanMap spans;
    for (std::size_t b = 0; b < T; b += 5) spans.ranges.push_back({b, b + 5});
    spans.empty_sentence.assign(spans.ranges.size(), false);
    const auto f = aggregate_sentence_features(normalize_context_attention(d), spans);
    for (std::size_t c = 0; c < f.cols; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < f.rows; ++i) total += f.at(i, c) * 5.0;
      EXPECT_NEAR(total, 1.0, 1e-6);
      for (std::size_t i = 0; i < f.rows; ++i) {
        EXPECT_GE(f.at(i, c), 0.0);
        EXPECT_LE(f.at(i, c), 1.0);
      }
    }
  }
}

TEST(Aggregate, RangePastTokenAxis) {
  NormalizedAttention n{1, 1, 2, {0.5, 0.5}, {}};
  TokenSpanMap spans;
  spans.ranges = {{0, 3}};
  spans.empty_sentence = {false};
  EXPECT_THROW(aggregate_sentence_features(n, spans), TokenAlignmentError);
}

TokenSpanMap pairs_map(std::size_t sentences) {
  TokenSpanMap spans;
  for (std::size_t s = 0; s < sentences; ++s) spans.ranges.push_back({2 * s, 2 * s + 2});
  spans.empty_sentence.assign(sentences, false);
  return spans;
}

TEST(RawScores, UniformHeadsScoreEqually) {
  AttentionDump d = flat_dump(2, 2, std::vector<bool>(6, true), 1.0f / 6.0f);
  const auto s = raw_attention_scores(d, pairs_map(3));
  EXPECT_NEAR(s[0], s[1], 1e-12);
  EXPECT_NEAR(s[1], s[2], 1e-12);
}

TEST(RawScores, DominantHeadWins) {
  AttentionDump d = flat_dump(1, 3, std::vector<bool>(6, true), 1.0f / 6.0f);
  auto row = d.row(0, 1);
  std::fill(row.begin(), row.end(), 0.0f);
  row[4] = row[5] = 0.5f;
  const auto s = raw_attention_scores(d, pairs_map(3));
  EXPECT_GT(s[2], s[0]);
  EXPECT_GT(s[2], s[1]);
}

TEST(RawScores, SingleHeadIsIdentity) {
  AttentionDump d = flat_dump(1, 1, std::vector<bool>(4, true), 0.0f);
  d.attn = {0.1f, 0.1f, 0.4f, 0.4f};
  const auto s = raw_attention_scores(d, pairs_map(2));
  EXPECT_NEAR(s[0], 0.1, 1e-7);
  EXPECT_NEAR(s[1], 0.4, 1e-7);
  FeatureMatrix f(2, 1);
  f.at(0, 0) = 0.2;
  f.at(1, 0) = 0.8;
  const auto m = mean_over_heads(f, all_heads(1));
  EXPECT_DOUBLE_EQ(m[0], 0.2);
  EXPECT_DOUBLE_EQ(m[1], 0.8);
}

TEST(RawScores, UnnormalizedVariantUsesRawWeights) {
  AttentionDump d = flat_dump(1, 1, {false, true, true}, 0.0f);
  d.attn = {0.5f, 0.1f, 0.4f};
  TokenSpanMap spans;
  spans.ranges = {{1, 2}, {2, 3}};
  spans.empty_sentence = {false, false};
  const auto raw = raw_attention_scores(d, spans, false);
  EXPECT_NEAR(raw[0], 0.1, 1e-7);
  const auto norm = raw_attention_scores(d, spans, true);
  EXPECT_NEAR(norm[0], 0.2, 1e-7);
}

TEST(Validate, RejectsBadDumps) {
  AttentionDump d = flat_dump(1, 1, {true, true}, 0.5f);
  EXPECT_NO_THROW(validate_dump(d, true));
  AttentionDump negative = d;
  negative.attn[0] = -0.1f;
  EXPECT_THROW(validate_dump(negative), InvalidDump);
  AttentionDump over = d;
  over.attn[0] = 0.7f;
  EXPECT_THROW(validate_dump(over), InvalidDump);
  AttentionDump nan = d;
  nan.attn[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(validate_dump(nan), InvalidDump);
  AttentionDump no_context = d;
  no_context.context_mask = {false, false};
  EXPECT_THROW(validate_dump(no_context, true), InvalidDump);
  AttentionDump short_payload = d;
  short_payload.attn.pop_back();
  EXPECT_THROW(validate_dump(short_payload), InvalidDump);
}

}  // namespace
}  // namespace ctxprobe
