// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_FIXTURES_HPP
#define CTXPROBE_FIXTURES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "ctxprobe/attention.hpp"
#include "ctxprobe/context.hpp"
#include "ctxprobe/dataset.hpp"
#include "ctxprobe/errors.hpp"
#include "ctxprobe/metrics.hpp"
#include "ctxprobe/rng.hpp"

namespace ctxprobe {

/// Synthetic proxy-model behavior for one query.
///
/// Token layout: [BOS] [template] context words... question words...
/// Every word is one token; a sentence's final token carries its period.
///
/// Head behaviors, all with seeded multiplicative noise:
///   retrieval heads put retrieval_mass..0.95 of their context mass on the
///   planted evidence sentences;
///   sink heads put sink_mass..(1+sink_mass)/2 of their total mass on BOS and
///   leading_share of the rest on the first context sentence;
///   every other head is near-uniform over all tokens.
struct FixtureSpec {
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  std::size_t num_tokens = 0;  // 0: follows from the sampled sentence lengths
  std::size_t num_sentences = 12;
  std::vector<std::size_t> planted_evidence = {0};
  std::vector<std::size_t> retrieval_heads;  // flat l*H+h
  std::vector<std::size_t> sink_heads;
  double sink_mass = 0.9;
  double retrieval_mass = 0.85;
  double leading_share = 0.9;
  double noise = 0.1;  // log-normal sigma of per-token jitter
  std::size_t min_words = 4;
  std::size_t max_words = 20;
  std::size_t question_words = 6;
  // Sentence lengths are redrawn until floor(fit_ratio * context tokens) is at
  // least the longest sentence, so any single sentence fits that budget. 0 disables.
  double fit_ratio = 0.2;
  std::string model_id = "synthetic-proxy";

  static constexpr std::size_t kPrefixTokens = 2;  // BOS + template token

  void check() const {
    const std::size_t F = num_layers * num_heads;
    if (num_layers == 0 || num_heads == 0) throw SpecOutOfRange("L and H must be positive");
    if (num_sentences == 0) throw SpecOutOfRange("a fixture needs at least one sentence");
    if (min_words < 2 || max_words < min_words) throw SpecOutOfRange("word range must satisfy 2 <= min <= max");
    if (planted_evidence.empty()) throw SpecOutOfRange("at least one planted evidence sentence is required");
    for (std::size_t s : planted_evidence)
      if (s >= num_sentences) throw SpecOutOfRange("planted evidence index " + std::to_string(s) + " out of range");
    for (const auto* list : {&retrieval_heads, &sink_heads})
      for (std::size_t f : *list)
        if (f >= F) throw SpecOutOfRange("head index " + std::to_string(f) + " out of range");
    for (std::size_t f : retrieval_heads)
      if (std::find(sink_heads.begin(), sink_heads.end(), f) != sink_heads.end())
        throw SpecOutOfRange("head " + std::to_string(f) + " is both a retrieval and a sink head");
    if (!(sink_mass > 0.0 && sink_mass < 1.0)) throw SpecOutOfRange("sink_mass must lie in (0, 1)");
    if (!(retrieval_mass > 0.0 && retrieval_mass <= 0.95)) throw SpecOutOfRange("retrieval_mass must lie in (0, 0.95]");
    if (!(leading_share >= 0.0 && leading_share <= 1.0)) throw SpecOutOfRange("leading_share must lie in [0, 1]");
    if (!(noise >= 0.0 && noise <= 2.0)) throw SpecOutOfRange("noise must lie in [0, 2]");
    if (!(fit_ratio >= 0.0 && fit_ratio <= 1.0)) throw SpecOutOfRange("fit_ratio must lie in [0, 1]");
    if (num_tokens != 0) {
      const std::size_t fixed = kPrefixTokens + question_words;
      if (num_tokens < fixed + num_sentences * min_words || num_tokens > fixed + num_sentences * max_words)
        throw SpecOutOfRange("T = " + std::to_string(num_tokens) + " cannot hold the requested sentences");
    }
  }
};

struct Fixture {
  AttentionDump dump;
  SegmentedContext context;
  QARecord record;
  GoldRecord gold;
};

namespace fixture_detail {

inline constexpr std::string_view kWords[] = {
    "river",   "stone",  "garden", "window",  "market", "silver", "forest",  "harbor", "lantern", "meadow",
    "copper",  "valley", "bridge", "candle",  "winter", "summer", "orchard", "canyon", "island",  "tower",
    "village", "pepper", "marble", "thunder", "violet", "falcon", "basket",  "ribbon", "saddle",  "timber",
    "anchor",  "beacon", "cradle", "dagger",  "engine", "fabric", "gravel",  "hollow", "jacket",  "kettle",
    "ladder",  "mirror", "needle", "oyster",  "pillar", "quartz", "rocket",  "shovel", "tunnel",  "velvet",
    "wagon",   "yellow", "zephyr", "amber",   "breeze", "cactus", "desert",  "ember",  "glacier", "horizon",
    "indigo",  "jungle", "kernel", "lagoon",  "mosaic", "nectar", "olive",   "prairie", "quiver", "raven",
    "sparrow", "tulip",  "umber",  "walnut",  "willow", "cobalt", "fennel",  "ginger", "hazel",   "juniper",
};

inline constexpr std::string_view kSyllables[] = {"zor", "vex", "qua", "lim", "tor", "bex", "nix", "ulo",
                                                  "fra", "dex", "kiv", "mon", "pyr", "sul", "gan", "wid"};

inline std::string capitalize(std::string_view word) {
  std::string out(word);
  if (!out.empty() && out[0] >= 'a' && out[0] <= 'z') out[0] = static_cast<char>(out[0] - 'a' + 'A');
  return out;
}

/// A made-up code word that never collides with the vocabulary.
inline std::string code_word(Rng& rng) {
  std::string out;
  for (int k = 0; k < 3; ++k) out += kSyllables[rng.below(std::size(kSyllables))];
  out += std::to_string(10 + rng.below(90));
  return out;
}

/// Adds `mass` over `tokens` with weights proportional to exp(noise * z).
inline void spread(std::vector<double>& row, const std::vector<std::size_t>& tokens, double mass, double noise,
                   Rng& rng) {
  if (tokens.empty() || mass <= 0.0) return;
  std::vector<double> w(tokens.size());
  double total = 0.0;
  for (auto& v : w) {
    v = std::exp(noise * rng.normal());
    total += v;
  }
  for (std::size_t k = 0; k < tokens.size(); ++k) row[tokens[k]] += mass * w[k] / total;
}

inline std::vector<std::size_t> sample_lengths(const FixtureSpec& spec, Rng& rng) {
  const std::size_t n = spec.num_sentences;
  std::vector<std::size_t> lengths(n, spec.min_words);
  if (spec.num_tokens != 0) {
    // Distribute the fixed context length one token at a time.
    std::size_t extra = spec.num_tokens - FixtureSpec::kPrefixTokens - spec.question_words - n * spec.min_words;
    while (extra > 0) {
      const std::size_t i = rng.below(n);
      if (lengths[i] < spec.max_words) {
        ++lengths[i];
        --extra;
      }
    }
    return lengths;
  }
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::size_t total = 0, longest = 0;
    for (auto& len : lengths) {
      len = spec.min_words + rng.below(spec.max_words - spec.min_words + 1);
      total += len;
      longest = std::max(longest, len);
    }
    if (spec.fit_ratio == 0.0 ||
        static_cast<std::size_t>(std::floor(spec.fit_ratio * static_cast<double>(total) + 1e-9)) >= longest)
      return lengths;
  }
  throw SpecOutOfRange("no sentence lengths satisfy fit_ratio for this spec");
}

}  // namespace fixture_detail

/// Deterministic for (spec, seed, id).
inline Fixture generate_fixture(const FixtureSpec& spec, std::uint64_t seed, std::string_view id = "fixture") {
  using namespace fixture_detail;
  spec.check();
  Rng rng(seed);
  const std::size_t n = spec.num_sentences;
  const auto lengths = sample_lengths(spec, rng);
  const std::string answer = code_word(rng);
  const std::string subject = std::string(kWords[rng.below(std::size(kWords))]);

  Fixture fx;
  AttentionDump& dump = fx.dump;
  std::string& text = fx.context.text;
  std::vector<std::size_t> sentence_of;  // per context token
  std::vector<CharSpan> offsets = {CharSpan{0, 0}, CharSpan{0, 0}};
  std::vector<bool> is_evidence(n, false);
  for (std::size_t s : spec.planted_evidence) is_evidence[s] = true;
  const std::size_t answer_sentence = spec.planted_evidence.front();
  CharSpan answer_span;

  for (std::size_t s = 0; s < n; ++s) {
    if (s > 0) text.push_back(' ');
    const std::size_t begin = text.size();
    const std::size_t answer_slot = s == answer_sentence ? 1 + rng.below(lengths[s] - 1) : lengths[s];
    for (std::size_t w = 0; w < lengths[s]; ++w) {
      if (w > 0) text.push_back(' ');
      const std::size_t word_begin = text.size();
      if (w == answer_slot) {
        text += answer;
        answer_span = CharSpan{word_begin, text.size()};
      } else {
        const std::string_view word = kWords[rng.below(std::size(kWords))];
        text += w == 0 ? capitalize(word) : std::string(word);
      }
      if (w + 1 == lengths[s]) text.push_back('.');
      offsets.push_back(CharSpan{word_begin, text.size()});
      sentence_of.push_back(s);
    }
    fx.context.sentences.push_back(Sentence{s, CharSpan{begin, text.size()}, text.substr(begin)});
  }
  const std::size_t ctx_tokens = sentence_of.size();
  for (std::size_t q = 0; q < spec.question_words; ++q) offsets.push_back(CharSpan{0, 0});

  const std::size_t T = offsets.size();
  dump.model_id = spec.model_id;
  dump.num_layers = spec.num_layers;
  dump.num_heads = spec.num_heads;
  dump.num_tokens = T;
  dump.prompt_hash = "fixture-v1";
  dump.token_offsets = offsets;
  dump.context_mask.assign(T, false);
  dump.special_token_flags.assign(T, false);
  dump.special_token_flags[0] = true;
  for (std::size_t t = 0; t < ctx_tokens; ++t) dump.context_mask[FixtureSpec::kPrefixTokens + t] = true;

  std::vector<std::size_t> non_sink, prompt_side, evidence, distractor, leading;
  for (std::size_t t = 1; t < T; ++t) {
    non_sink.push_back(t);
    if (!dump.context_mask[t]) prompt_side.push_back(t);
  }
  for (std::size_t c = 0; c < ctx_tokens; ++c) {
    const std::size_t t = FixtureSpec::kPrefixTokens + c;
    (is_evidence[sentence_of[c]] ? evidence : distractor).push_back(t);
    if (sentence_of[c] == 0) leading.push_back(t);
  }

  const std::size_t F = spec.num_layers * spec.num_heads;
  dump.attn.resize(F * T);
  for (std::size_t f = 0; f < F; ++f) {
    std::vector<double> row(T, 0.0);
    const bool retrieval = std::find(spec.retrieval_heads.begin(), spec.retrieval_heads.end(), f) != spec.retrieval_heads.end();
    const bool sink = std::find(spec.sink_heads.begin(), spec.sink_heads.end(), f) != spec.sink_heads.end();
    if (sink) {
      const double s = spec.sink_mass + 0.5 * (1.0 - spec.sink_mass) * rng.uniform();
      row[0] = s;
      const double rest = 1.0 - s;
      spread(row, leading, rest * spec.leading_share, spec.noise, rng);
      spread(row, non_sink, rest * (1.0 - spec.leading_share), spec.noise, rng);
    } else if (retrieval) {
      const double bos = rng.uniform(0.05, 0.2);
      const double prompt = rng.uniform(0.0, 0.1);
      const double context = 1.0 - bos - prompt;
      const double share = spec.retrieval_mass + (0.95 - spec.retrieval_mass) * rng.uniform();
      row[0] = bos;
      spread(row, prompt_side, prompt, spec.noise, rng);
      spread(row, evidence, context * (distractor.empty() ? 1.0 : share), spec.noise, rng);
      spread(row, distractor, context * (1.0 - share), spec.noise, rng);
    } else {
      std::vector<std::size_t> all(T);
      for (std::size_t t = 0; t < T; ++t) all[t] = t;
      spread(row, all, 1.0, spec.noise, rng);
    }
    for (std::size_t t = 0; t < T; ++t) dump.attn[f * T + t] = static_cast<float>(row[t]);
  }
  validate_dump(dump, true);

  fx.context.query = "What is the code word for the " + subject + "?";
  QARecord& r = fx.record;
  r.id = std::string(id);
  r.question = fx.context.query;
  r.context = text;
  r.gold_answers = {answer};
  r.answer_char_spans = {answer_span};
  r.answer_memory = "unknown";
  r.answer_context = answer;
  r.dataset_tag = DatasetTag::kExactMatch;
  std::vector<CharSpan> spans;
  for (const auto& s : fx.context.sentences) spans.push_back(s.span);
  r.sentence_spans = spans;
  r.source = "synthetic";
  fx.gold = GoldRecord{r.id, "synthetic-qa", {answer}, Metric::kQaF1};
  return fx;
}

/// A corpus of fixtures sharing one head layout. Sentence counts and the
/// evidence position vary per record; a fraction of records claim the proxy
/// already knew the answer, so the reliance filter has something to drop.
struct CorpusSpec {
  std::size_t count = 200;
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  std::vector<std::size_t> retrieval_heads = {5, 10, 13};
  std::vector<std::size_t> sink_heads = {0, 7};
  std::size_t min_sentences = 10;
  std::size_t max_sentences = 16;
  double memorized_fraction = 0.1;
  std::string id_prefix = "fx";
  FixtureSpec base;

  void check() const {
    if (min_sentences < 2 || max_sentences < min_sentences) throw SpecOutOfRange("sentence range must satisfy 2 <= min <= max");
    if (!(memorized_fraction >= 0.0 && memorized_fraction <= 1.0))
      throw SpecOutOfRange("memorized_fraction must lie in [0, 1]");
  }
};

inline std::string fixture_id(std::string_view prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%05zu", i);
  return std::string(prefix) + buf;
}

inline std::vector<Fixture> generate_corpus(const CorpusSpec& corpus, std::uint64_t seed) {
  corpus.check();
  std::vector<Fixture> out;
  out.reserve(corpus.count);
  for (std::size_t i = 0; i < corpus.count; ++i) {
    Rng rng(derive_seed(seed, i));
    FixtureSpec spec = corpus.base;
    spec.num_layers = corpus.num_layers;
    spec.num_heads = corpus.num_heads;
    spec.retrieval_heads = corpus.retrieval_heads;
    spec.sink_heads = corpus.sink_heads;
    spec.num_tokens = 0;
    spec.num_sentences = corpus.min_sentences + rng.below(corpus.max_sentences - corpus.min_sentences + 1);
    spec.planted_evidence = {static_cast<std::size_t>(rng.below(spec.num_sentences))};
    const bool memorized = rng.uniform() < corpus.memorized_fraction;
    Fixture fx = generate_fixture(spec, rng.next_u64(), fixture_id(corpus.id_prefix, i));
    if (memorized) fx.record.answer_memory = fx.record.gold_answers.front();
    out.push_back(std::move(fx));
  }
  return out;
}

}  // namespace ctxprobe

#endif  // CTXPROBE_FIXTURES_HPP
