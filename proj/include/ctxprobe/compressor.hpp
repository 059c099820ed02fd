// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_COMPRESSOR_HPP
#define CTXPROBE_COMPRESSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxprobe/attention.hpp"
#include "ctxprobe/context.hpp"
#include "ctxprobe/errors.hpp"
#include "ctxprobe/probe.hpp"
#include "ctxprobe/rng.hpp"
#include "ctxprobe/utf8.hpp"
#include "json.hpp"

namespace ctxprobe {

/// Either a fixed token budget B or a ratio tau of the original length.
class Budget {
 public:
  static Budget tokens(std::size_t b) { return Budget(false, b, 0.0); }
  static Budget ratio(double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw InvalidArgument("compression ratio must lie in (0, 1]");
    return Budget(true, 0, tau);
  }

  bool is_ratio() const { return is_ratio_; }
  std::size_t token_budget() const { return tokens_; }
  double ratio_value() const { return ratio_; }

  /// B, or floor(tau * original). The 1e-9 guards products like 0.3 * 10 = 2.9999999999999996.
  std::size_t effective(std::size_t original_tokens) const {
    if (!is_ratio_) return tokens_;
    return static_cast<std::size_t>(std::floor(ratio_ * static_cast<double>(original_tokens) + 1e-9));
  }

 private:
  Budget(bool is_ratio, std::size_t tokens, double ratio) : is_ratio_(is_ratio), tokens_(tokens), ratio_(ratio) {}
  bool is_ratio_;
  std::size_t tokens_;
  double ratio_;
};

enum class TokenCounter { kDumpTokens, kWhitespace };
enum class SelectorKind { kProbe, kRawAttention, kRandom, kEmpty, kHeadSubset };

struct Selector {
  SelectorKind kind = SelectorKind::kProbe;
  std::uint64_t seed = 0;           // kRandom
  std::vector<std::size_t> heads;   // kHeadSubset, flat l*H+h indices
  bool raw_unnormalized = false;    // kRawAttention / kHeadSubset on raw weights

  bool needs_dump() const {
    return kind == SelectorKind::kProbe || kind == SelectorKind::kRawAttention || kind == SelectorKind::kHeadSubset;
  }
};

inline std::string selector_name(SelectorKind k) {
  switch (k) {
    case SelectorKind::kProbe: return "probe";
    case SelectorKind::kRawAttention: return "raw-attention";
    case SelectorKind::kRandom: return "random";
    case SelectorKind::kEmpty: return "empty";
    case SelectorKind::kHeadSubset: return "head-subset";
  }
  return "probe";
}

inline SelectorKind parse_selector(std::string_view s) {
  if (s == "probe") return SelectorKind::kProbe;
  if (s == "raw-attention") return SelectorKind::kRawAttention;
  if (s == "random") return SelectorKind::kRandom;
  if (s == "empty") return SelectorKind::kEmpty;
  if (s == "head-subset") return SelectorKind::kHeadSubset;
  throw InvalidArgument("unknown selector '" + std::string(s) + "'");
}

struct CompressionConfig {
  Budget budget = Budget::tokens(2000);
  std::size_t chunk_size = 1024;
  TokenCounter token_counter = TokenCounter::kDumpTokens;
  Selector selector;
  std::string join_str = " ";
};

struct CompressionResult {
  std::vector<std::size_t> selected_indices;  // strictly increasing
  std::string compressed_text;
  std::size_t original_tokens = 0;
  std::size_t retained_tokens = 0;
  std::size_t budget = 0;  // effective budget
  std::vector<double> scores;
  std::string selector;
};

/// Half-open range of sentence indices.
struct ChunkRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const ChunkRange&, const ChunkRange&) = default;
};

/// Greedy fill at sentence boundaries: a chunk grows while its total stays
/// within chunk_size; a sentence larger than chunk_size sits alone.
inline std::vector<ChunkRange> chunk_context(std::span<const std::size_t> token_counts, std::size_t chunk_size) {
  if (chunk_size < 1) throw InvalidArgument("chunk size must be at least 1");
  std::vector<ChunkRange> chunks;
  std::size_t begin = 0, total = 0;
  for (std::size_t i = 0; i < token_counts.size(); ++i) {
    if (i > begin && total + token_counts[i] > chunk_size) {
      chunks.push_back({begin, i});
      begin = i;
      total = 0;
    }
    total += token_counts[i];
  }
  if (begin < token_counts.size()) chunks.push_back({begin, token_counts.size()});
  return chunks;
}

/// First-fit-decreasing under a budget: visit sentences by descending score
/// (ties to the lower index), take each one that still fits, skip the rest.
/// Returns the chosen indices in ascending order.
inline std::vector<std::size_t> select_under_budget(std::span<const double> scores,
                                                    std::span<const std::size_t> token_counts, std::size_t budget) {
  if (scores.size() != token_counts.size()) throw DimensionMismatch("scores and token counts differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> chosen;
  std::size_t remaining = budget;
  for (std::size_t i : order) {
    if (token_counts[i] <= remaining) {
      chosen.push_back(i);
      remaining -= token_counts[i];
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

/// Selected sentences in original order. Consecutive sentences keep the
/// original text between them; non-adjacent ones are joined by `join_str`.
inline std::string compose_text(std::string_view context, std::span<const Sentence> sentences,
                                std::span<const std::size_t> selected, std::string_view join_str) {
  std::string out;
  for (std::size_t k = 0; k < selected.size(); ++k) {
    const Sentence& s = sentences[selected[k]];
    if (k > 0) {
      const Sentence& prev = sentences[selected[k - 1]];
      if (selected[k] == selected[k - 1] + 1 && prev.span.end <= s.span.begin && s.span.begin <= context.size())
        out.append(context.substr(prev.span.end, s.span.begin - prev.span.end));
      else
        out.append(join_str);
    }
    out.append(s.text);
  }
  return out;
}

/// Whitespace-separated words, each CJK character counting as one token.
inline std::size_t whitespace_token_count(std::string_view text) {
  std::size_t count = 0;
  bool in_word = false;
  for (std::size_t i = 0; i < text.size();) {
    const auto cp = utf8::decode(text, i);
    i += cp.length;
    if (utf8::is_space(cp.value)) {
      in_word = false;
    } else if (utf8::is_cjk(cp.value)) {
      ++count;
      in_word = false;
    } else if (!in_word) {
      ++count;
      in_word = true;
    }
  }
  return count;
}

inline CompressionResult finish_selection(std::string_view context, std::span<const Sentence> sentences,
                                          std::vector<double> scores, std::span<const std::size_t> token_counts,
                                          const CompressionConfig& config, bool select_nothing = false) {
  CompressionResult result;
  result.selector = selector_name(config.selector.kind);
  result.original_tokens = std::accumulate(token_counts.begin(), token_counts.end(), std::size_t{0});
  result.budget = config.budget.effective(result.original_tokens);
  if (!select_nothing) result.selected_indices = select_under_budget(scores, token_counts, result.budget);
  for (std::size_t i : result.selected_indices) result.retained_tokens += token_counts[i];
  result.compressed_text = compose_text(context, sentences, result.selected_indices, config.join_str);
  result.scores = std::move(scores);
  if (result.retained_tokens > result.budget) throw InvariantViolation("selection exceeds the token budget");
  return result;
}

/// Same budget and ordering contract as select_under_budget with scores from
/// a non-probe selector. Attention-based selectors need `features` (the
/// context-normalized sentence features, or raw ones for raw_unnormalized).
inline CompressionResult baseline_select(const Selector& selector, std::string_view context,
                                         std::span<const Sentence> sentences, std::span<const std::size_t> token_counts,
                                         const CompressionConfig& config, const FeatureMatrix* features = nullptr) {
  CompressionConfig cfg = config;
  cfg.selector = selector;
  const std::size_t n = sentences.size();
  if (token_counts.size() != n) throw DimensionMismatch("token counts and sentences differ in length");
  switch (selector.kind) {
    case SelectorKind::kEmpty:
      return finish_selection(context, sentences, std::vector<double>(n, 0.0), token_counts, cfg, true);
    case SelectorKind::kRandom: {
      Rng rng(selector.seed);
      std::vector<double> scores(n);
      for (auto& s : scores) s = rng.uniform();
      return finish_selection(context, sentences, std::move(scores), token_counts, cfg);
    }
    case SelectorKind::kRawAttention:
    case SelectorKind::kHeadSubset: {
      if (!features) throw MissingDump("selector '" + selector_name(selector.kind) + "' needs attention dumps");
      if (features->rows != n) throw DimensionMismatch("feature rows and sentences differ in count");
      const auto heads = selector.kind == SelectorKind::kRawAttention ? all_heads(features->cols) : selector.heads;
      if (selector.kind == SelectorKind::kHeadSubset && heads.empty())
        throw InvalidArgument("head-subset selector needs at least one head");
      return finish_selection(context, sentences, mean_over_heads(*features, heads), token_counts, cfg);
    }
    case SelectorKind::kProbe:
      break;
  }
  throw InvalidArgument("the probe selector is not a baseline");
}

/// Sentence features and dump token counts for a context split over chunk dumps.
struct ChunkedFeatures {
  FeatureMatrix normalized;  // rows follow the sentence list
  FeatureMatrix raw;         // unnormalized weights, same layout
  std::vector<std::size_t> dump_token_counts;
  std::vector<ChunkRange> chunks;
  std::vector<std::size_t> fallback_heads;  // chunk-local fallbacks, flattened as chunk * F + head
};

namespace compressor_detail {

inline void append_empty_row(ChunkedFeatures& out, std::size_t num_features, std::size_t& next) {
  FeatureMatrix empty(1, num_features);
  empty.empty_rows[0] = true;
  out.normalized.append_rows(empty);
  out.raw.append_rows(empty);
  out.dump_token_counts.push_back(0);
  out.chunks.back().end = ++next;
}

}  // namespace compressor_detail

/// Maps every chunk dump onto the sentence list. Each dump must cover a
/// contiguous run of sentences, and the runs must partition the sentence
/// list in chunk order; features never mix chunks.
inline ChunkedFeatures chunked_sentence_features(std::span<const Sentence> sentences,
                                                 std::span<const AttentionDump> dumps, std::size_t context_size) {
  if (dumps.empty()) throw MissingDump("no attention dumps for this context");
  const std::size_t F = dumps.front().num_features();
  ChunkedFeatures out;
  out.normalized = FeatureMatrix(0, F);
  out.raw = FeatureMatrix(0, F);
  std::size_t next = 0;
  for (std::size_t k = 0; k < dumps.size(); ++k) {
    const AttentionDump& dump = dumps[k];
    if (dump.num_features() != F) throw ChunkMisalignment("chunk dumps disagree on L*H");
    validate_dump(dump);

    // Sentences owning at least one context token of this dump.
    std::optional<std::size_t> first, last;
    for (std::size_t t = 0; t < dump.num_tokens; ++t) {
      if (!dump.context_mask[t]) continue;
      const std::size_t start = dump.token_offsets[t].begin;
      if (dump.token_offsets[t].end > context_size)
        throw ChunkMisalignment("chunk " + std::to_string(k) + " has a token beyond the context text");
      auto it = std::upper_bound(sentences.begin(), sentences.end(), start,
                                 [](std::size_t pos, const Sentence& s) { return pos < s.span.end; });
      if (it == sentences.end() || !it->span.contains(start)) continue;
      const auto s = static_cast<std::size_t>(it - sentences.begin());
      if (!first) first = s;
      if (last && s < *last) throw ChunkMisalignment("chunk " + std::to_string(k) + " token offsets go backwards");
      last = s;
    }
    if (!first) throw ChunkMisalignment("chunk " + std::to_string(k) + " covers no sentence");
    // Empty pre-segmented sentences between chunks belong to the earlier chunk.
    while (k > 0 && next < *first && sentences[next].span.empty()) compressor_detail::append_empty_row(out, F, next);
    if (next != *first && !(k == 0 && std::all_of(sentences.begin(), sentences.begin() + static_cast<std::ptrdiff_t>(*first),
                                                   [](const Sentence& s) { return s.span.empty(); })))
      throw ChunkMisalignment("chunk " + std::to_string(k) + " starts at sentence " + std::to_string(*first) +
                              ", expected " + std::to_string(next));
    const std::size_t end = *last + 1;
    const auto chunk_sentences = sentences.subspan(next, end - next);
    TokenSpanMap spans = map_token_spans(chunk_sentences, dump.token_offsets, dump.context_mask);
    const auto normalized = normalize_context_attention(dump);
    for (std::size_t f : normalized.fallback_heads) out.fallback_heads.push_back(k * F + f);
    out.normalized.append_rows(aggregate_sentence_features(normalized, spans));
    out.raw.append_rows(aggregate_unnormalized_features(dump, spans));
    for (std::size_t c : spans.token_counts()) out.dump_token_counts.push_back(c);
    out.chunks.push_back({next, end});
    next = end;
  }
  while (next < sentences.size() && sentences[next].span.empty()) compressor_detail::append_empty_row(out, F, next);
  if (next != sentences.size())
    throw ChunkMisalignment("chunk dumps cover " + std::to_string(next) + " of " +
                            std::to_string(sentences.size()) + " sentences");
  return out;
}

/// Normalized features for an arbitrary list of sentences from one context
/// (any order, any subset), looked up in whichever chunk dump owns each one.
/// A sentence split across two chunks is a ChunkMisalignment.
inline FeatureMatrix features_for_sentences(std::span<const Sentence> sentences, std::span<const AttentionDump> dumps) {
  if (dumps.empty()) throw MissingDump("no attention dumps for this context");
  const std::size_t F = dumps.front().num_features();
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return sentences[a].span.begin < sentences[b].span.begin; });
  std::vector<Sentence> sorted;
  for (std::size_t i : order) sorted.push_back(sentences[i]);
  for (std::size_t k = 1; k < sorted.size(); ++k)
    if (sorted[k].span.begin < sorted[k - 1].span.end) throw InvalidArgument("sentence spans overlap");

  FeatureMatrix out(sentences.size(), F);
  std::vector<int> owner(sentences.size(), -1);
  for (std::size_t k = 0; k < dumps.size(); ++k) {
    const AttentionDump& dump = dumps[k];
    if (dump.num_features() != F) throw ChunkMisalignment("chunk dumps disagree on L*H");
    validate_dump(dump);
    std::vector<std::size_t> owned_count(sorted.size(), 0);
    for (std::size_t t = 0; t < dump.num_tokens; ++t) {
      if (!dump.context_mask[t]) continue;
      const std::size_t start = dump.token_offsets[t].begin;
      auto it = std::upper_bound(sorted.begin(), sorted.end(), start,
                                 [](std::size_t pos, const Sentence& s) { return pos < s.span.end; });
      if (it != sorted.end() && it->span.contains(start)) ++owned_count[static_cast<std::size_t>(it - sorted.begin())];
    }
    std::vector<Sentence> mine;
    std::vector<std::size_t> slots;
    for (std::size_t j = 0; j < sorted.size(); ++j) {
      if (owned_count[j] == 0) continue;
      if (owner[j] >= 0) throw ChunkMisalignment("sentence " + std::to_string(sorted[j].index) + " spans two chunks");
      owner[j] = static_cast<int>(k);
      mine.push_back(sorted[j]);
      slots.push_back(j);
    }
    if (mine.empty()) continue;
    const auto rows = aggregate_sentence_features(normalize_context_attention(dump),
                                                  map_token_spans(mine, dump.token_offsets, dump.context_mask));
    for (std::size_t r = 0; r < mine.size(); ++r) {
      const std::size_t target = order[slots[r]];
      std::copy(rows.row(r).begin(), rows.row(r).end(), out.row(target).begin());
    }
  }
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    if (owner[j] >= 0) continue;
    if (!sorted[j].span.empty())
      throw TokenAlignmentError("sentence " + std::to_string(sorted[j].index) + " received no tokens");
    out.empty_rows[order[j]] = true;
  }
  return out;
}

struct PipelineInput {
  std::string_view query;
  std::string_view context;
  std::span<const Sentence> sentences;
  std::span<const AttentionDump> dumps;                     // one per chunk; may be empty for dump-free selectors
  std::optional<std::span<const std::size_t>> target_token_counts;  // overrides both counters when present
};

/// Full compression for one query: per-chunk features, probe (or baseline)
/// scores, then one global selection under a shared budget.
inline CompressionResult compress_pipeline(const PipelineInput& input, const ProbeModel* model,
                                           const CompressionConfig& config) {
  const std::size_t n = input.sentences.size();
  std::optional<ChunkedFeatures> chunked;
  if (config.selector.needs_dump() || (config.token_counter == TokenCounter::kDumpTokens && !input.target_token_counts)) {
    if (input.dumps.empty()) throw MissingDump("no attention dumps for this context");
    chunked = chunked_sentence_features(input.sentences, input.dumps, input.context.size());
    if (chunked->chunks != chunk_context(chunked->dump_token_counts, config.chunk_size))
      throw ChunkMisalignment("chunk dumps do not follow the chunk size of " + std::to_string(config.chunk_size));
  }

  std::vector<std::size_t> counts;
  if (input.target_token_counts) {
    if (input.target_token_counts->size() != n) throw DimensionMismatch("target token counts do not match sentences");
    counts.assign(input.target_token_counts->begin(), input.target_token_counts->end());
  } else if (config.token_counter == TokenCounter::kDumpTokens) {
    counts = chunked->dump_token_counts;
  } else {
    for (const auto& s : input.sentences) counts.push_back(whitespace_token_count(s.text));
  }

  if (config.selector.kind == SelectorKind::kProbe) {
    if (!model) throw InvalidArgument("the probe selector needs a probe model");
    auto scores = score_sentences(*model, chunked->normalized);
    for (std::size_t i = 0; i < n; ++i)
      if (chunked->normalized.empty_rows[i]) scores[i] = 0.0;
    return finish_selection(input.context, input.sentences, std::move(scores), counts, config);
  }
  const FeatureMatrix* features = nullptr;
  if (chunked) features = config.selector.raw_unnormalized ? &chunked->raw : &chunked->normalized;
  return baseline_select(config.selector, input.context, input.sentences, counts, config, features);
}

inline nlohmann::ordered_json compression_result_to_json(std::string_view id, const CompressionResult& r) {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["selected_indices"] = r.selected_indices;
  j["compressed_text"] = r.compressed_text;
  j["original_tokens"] = r.original_tokens;
  j["retained_tokens"] = r.retained_tokens;
  j["scores"] = r.scores;
  j["selector"] = r.selector;
  j["budget"] = r.budget;
  return j;
}

}  // namespace ctxprobe

#endif  // CTXPROBE_COMPRESSOR_HPP
