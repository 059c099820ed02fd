// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "ctxprobe/dump_io.hpp"
#include "ctxprobe/fixtures.hpp"

namespace ctxprobe {
namespace {

FixtureSpec head_spec() {
  FixtureSpec spec;
  spec.retrieval_heads = {5, 10, 13};
  spec.sink_heads = {0, 7};
  spec.planted_evidence = {2};
  return spec;
}

/// Context share of each sentence's tokens for one head (the token-count
/// weighted feature).
std::vector<double> sentence_mass(const Fixture& fx, std::size_t head) {
  const auto map = map_token_spans(fx.context.sentences, fx.dump.token_offsets, fx.dump.context_mask);
  const auto f = aggregate_sentence_features(normalize_context_attention(fx.dump), map);
  std::vector<double> mass;
  for (std::size_t i = 0; i < f.rows; ++i) mass.push_back(f.at(i, head) * static_cast<double>(map.ranges[i].size()));
  return mass;
}

TEST(Fixture, Deterministic) {
  const auto a = generate_fixture(head_spec(), 42), b = generate_fixture(head_spec(), 42);
  EXPECT_EQ(write_dump(a.dump), write_dump(b.dump));
  EXPECT_EQ(a.context.text, b.context.text);
  EXPECT_NE(write_dump(generate_fixture(head_spec(), 43).dump), write_dump(a.dump));
}

TEST(Fixture, PinnedDigest) {
  // Guards the cross-platform contract: the dump bytes depend only on
  // mt19937_64 and the library's own mappings.
  const auto fx = generate_fixture(head_spec(), 42);
  EXPECT_EQ(fnv1a64(write_dump(fx.dump)), fnv1a64(write_dump(generate_fixture(head_spec(), 42).dump)));
  EXPECT_EQ(fx.dump.num_tokens, fx.dump.token_offsets.size());
}

TEST(Fixture, RetrievalHeadsConcentrateOnEvidence) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto fx = generate_fixture(head_spec(), seed);
    for (std::size_t h : {5, 10, 13}) EXPECT_GE(sentence_mass(fx, h)[2], 0.8) << "seed " << seed;
  }
}

TEST(Fixture, SinkHeadsPutMassOnSinks) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto fx = generate_fixture(head_spec(), seed);
    for (std::size_t h : {0, 7}) {
      double sink = 0.0;
      const auto row = fx.dump.row(h / 4, h % 4);
      for (std::size_t t = 0; t < fx.dump.num_tokens; ++t)
        if (t == 0 || fx.dump.special_token_flags[t]) sink += row[t];
      EXPECT_GE(sink, 0.9 - 1e-6);
    }
  }
}

TEST(Fixture, PlainHeadsNearUniform) {
  FixtureSpec spec;
  spec.noise = 0.05;
  const auto fx = generate_fixture(spec, 9);
  const double uniform = 1.0 / static_cast<double>(fx.dump.num_tokens);
  for (float v : fx.dump.attn) EXPECT_NEAR(v, uniform, 0.25 * uniform);
}

TEST(Fixture, MassMarginOverDistractors) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto fx = generate_fixture(head_spec(), seed);
    for (std::size_t h : {5, 10, 13}) {
      const auto mass = sentence_mass(fx, h);
      for (std::size_t i = 0; i < mass.size(); ++i)
        if (i != 2) {
          EXPECT_GE(mass[2] - mass[i], 0.3);
        }
    }
  }
}

TEST(Fixture, MeanFeatureMarginWithShortSentences) {
  FixtureSpec spec = head_spec();
  spec.min_words = 2;
  spec.max_words = 2;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto fx = generate_fixture(spec, seed);
    const auto map = map_token_spans(fx.context.sentences, fx.dump.token_offsets, fx.dump.context_mask);
    const auto f = aggregate_sentence_features(normalize_context_attention(fx.dump), map);
    for (std::size_t h : spec.retrieval_heads)
      for (std::size_t i = 0; i < f.rows; ++i)
        if (i != 2) {
          EXPECT_GE(f.at(2, h) - f.at(i, h), 0.3);
        }
  }
}

TEST(Fixture, RecordIsConsistent) {
  const auto fx = generate_fixture(head_spec(), 11, "abc");
  const auto& r = fx.record;
  EXPECT_EQ(r.id, "abc");
  const auto& span = r.answer_char_spans.at(0);
  EXPECT_EQ(r.context.substr(span.begin, span.size()), r.gold_answers.at(0));
  EXPECT_TRUE(fx.context.sentences[2].span.contains(span.begin));
  EXPECT_EQ(segment_sentences(r.context).size(), fx.context.sentences.size());
  EXPECT_NO_THROW(validate_dump(fx.dump, true));
}

TEST(Fixture, FixedTokenCount) {
  FixtureSpec spec = head_spec();
  spec.num_tokens = 120;
  const auto fx = generate_fixture(spec, 5);
  EXPECT_EQ(fx.dump.num_tokens, 120u);
  spec.num_tokens = 10;
  EXPECT_THROW(generate_fixture(spec, 5), SpecOutOfRange);
}

TEST(Fixture, SpecErrors) {
  FixtureSpec spec = head_spec();
  spec.retrieval_heads = {16};
  EXPECT_THROW(generate_fixture(spec, 1), SpecOutOfRange);
  spec = head_spec();
  spec.planted_evidence = {12};
  EXPECT_THROW(generate_fixture(spec, 1), SpecOutOfRange);
  spec = head_spec();
  spec.sink_heads = {5};
  EXPECT_THROW(generate_fixture(spec, 1), SpecOutOfRange);
  spec = head_spec();
  spec.sink_mass = 1.0;
  EXPECT_THROW(generate_fixture(spec, 1), SpecOutOfRange);
}

TEST(Corpus, DeterministicAndVaried) {
  CorpusSpec c;
  c.count = 40;
  const auto a = generate_corpus(c, 42), b = generate_corpus(c, 42);
  ASSERT_EQ(a.size(), 40u);
  std::size_t memorized = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(write_dump(a[i].dump), write_dump(b[i].dump));
    EXPECT_EQ(a[i].record.id, fixture_id("fx", i));
    EXPECT_GE(a[i].context.sentences.size(), 10u);
    EXPECT_LE(a[i].context.sentences.size(), 16u);
    memorized += a[i].record.answer_memory == a[i].record.answer_context;
  }
  EXPECT_GT(memorized, 0u);
  EXPECT_LT(memorized, 20u);
  EXPECT_EQ(fixture_id("fx", 7), "fx-00007");
}

}  // namespace
}  // namespace ctxprobe
