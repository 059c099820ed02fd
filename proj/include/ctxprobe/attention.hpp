// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_ATTENTION_HPP
#define CTXPROBE_ATTENTION_HPP

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ctxprobe/context.hpp"
#include "ctxprobe/errors.hpp"

namespace ctxprobe {

/// Final-token attention of a proxy model: one row over T input tokens for
/// every (layer, head). Values are stored layer-major, then head, then token.
struct AttentionDump {
  std::string model_id;
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;
  std::size_t num_tokens = 0;
  std::string prompt_hash;
  std::vector<CharSpan> token_offsets;  // byte spans into the context text
  std::vector<bool> context_mask;       // token lies inside the context span
  std::vector<bool> special_token_flags;
  std::vector<float> attn;              // num_layers * num_heads * num_tokens

  std::size_t num_features() const { return num_layers * num_heads; }

  std::span<const float> row(std::size_t layer, std::size_t head) const {
    return std::span<const float>(attn).subspan((layer * num_heads + head) * num_tokens,
                                                num_tokens);
  }
  std::span<float> row(std::size_t layer, std::size_t head) {
    return std::span<float>(attn).subspan((layer * num_heads + head) * num_tokens, num_tokens);
  }

  friend bool operator==(const AttentionDump&, const AttentionDump&) = default;
};

inline constexpr double kRowSumTolerance = 1e-4;
inline constexpr double kMinContextMass = 1e-12;

/// Throws InvalidDump unless shapes agree, every weight is finite and
/// non-negative, every row sums to at most 1 + 1e-4, and a non-empty context
/// has at least one masked token.
inline void validate_dump(const AttentionDump& dump, bool expect_context = false) {
  const std::size_t T = dump.num_tokens;
  if (dump.attn.size() != dump.num_layers * dump.num_heads * T)
    throw InvalidDump("attention payload size does not match L*H*T");
  if (dump.token_offsets.size() != T || dump.context_mask.size() != T ||
      dump.special_token_flags.size() != T)
    throw InvalidDump("per-token header arrays must have length T");
  for (const auto& span : dump.token_offsets)
    if (span.end < span.begin) throw InvalidDump("token offset with end < begin");
  for (std::size_t f = 0; f < dump.num_features(); ++f) {
    double sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const float v = dump.attn[f * T + t];
      if (!std::isfinite(v) || v < 0.0f)
        throw InvalidDump("attention weight must be finite and non-negative (feature " +
                          std::to_string(f) + ", token " + std::to_string(t) + ")");
      sum += v;
    }
    if (sum > 1.0 + kRowSumTolerance)
      throw InvalidDump("attention row " + std::to_string(f) + " sums to " + std::to_string(sum));
  }
  if (expect_context) {
    bool any = false;
    for (bool m : dump.context_mask) any = any || m;
    if (!any) throw InvalidDump("dump has a non-empty context but no context tokens");
  }
}

/// Attention renormalized over context tokens, as doubles, same layout as the dump.
struct NormalizedAttention {
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;
  std::size_t num_tokens = 0;
  std::vector<double> weights;
  std::vector<std::size_t> fallback_heads;  // flat l*H+h indices that had no context mass

  std::span<const double> row(std::size_t feature) const {
    return std::span<const double>(weights).subspan(feature * num_tokens, num_tokens);
  }
};

enum class ZeroMassPolicy { kUniformFallback, kThrow };

/// Per (layer, head): zero non-context tokens and divide the rest by the
/// context mass, so each row sums to 1 over the context. A head with less
/// than 1e-12 context mass becomes uniform over context tokens and is listed
/// in `fallback_heads`, or raises ZeroContextMass under kThrow.
inline NormalizedAttention normalize_context_attention(
    const AttentionDump& dump, ZeroMassPolicy policy = ZeroMassPolicy::kUniformFallback) {
  const std::size_t T = dump.num_tokens;
  if (dump.attn.size() != dump.num_features() * T || dump.context_mask.size() != T)
    throw InvalidDump("dump shape mismatch");
  NormalizedAttention out{dump.num_layers, dump.num_heads, T,
                          std::vector<double>(dump.attn.size(), 0.0), {}};
  std::size_t context_tokens = 0;
  for (bool m : dump.context_mask) context_tokens += m ? 1 : 0;
  if (context_tokens == 0) return out;

  for (std::size_t f = 0; f < dump.num_features(); ++f) {
    const float* in = dump.attn.data() + f * T;
    double* row = out.weights.data() + f * T;
    double mass = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      if (dump.context_mask[t]) mass += static_cast<double>(in[t]);
    if (mass < kMinContextMass) {
      if (policy == ZeroMassPolicy::kThrow)
        throw ZeroContextMass("head " + std::to_string(f) + " has no attention on the context");
      out.fallback_heads.push_back(f);
      const double uniform = 1.0 / static_cast<double>(context_tokens);
      for (std::size_t t = 0; t < T; ++t)
        if (dump.context_mask[t]) row[t] = uniform;
      continue;
    }
    for (std::size_t t = 0; t < T; ++t)
      if (dump.context_mask[t]) row[t] = static_cast<double>(in[t]) / mass;
  }
  return out;
}

/// Dense row-major matrix of per-sentence features. Column l*H+h is head h of
/// layer l unless `columns` says otherwise (after a projection).
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<bool> empty_rows;  // sentence had no tokens, row is all zero

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c)
      : rows(r), cols(c), values(r * c, 0.0), empty_rows(r, false) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols, cols);
  }
  std::span<double> row(std::size_t r) { return std::span<double>(values).subspan(r * cols, cols); }

  void append_rows(const FeatureMatrix& other) {
    if (rows == 0 && cols == 0) cols = other.cols;
    if (other.cols != cols) throw DimensionMismatch("cannot stack feature matrices of different width");
    values.insert(values.end(), other.values.begin(), other.values.end());
    empty_rows.insert(empty_rows.end(), other.empty_rows.begin(), other.empty_rows.end());
    rows += other.rows;
  }
};

/// Entry (i, l*H+h) is the mean normalized weight over sentence i's tokens.
/// Sentences without tokens get a zero row and are flagged in `empty_rows`.
inline FeatureMatrix aggregate_sentence_features(const NormalizedAttention& normalized,
                                                 const TokenSpanMap& spans) {
  const std::size_t F = normalized.num_layers * normalized.num_heads;
  FeatureMatrix features(spans.size(), F);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const TokenRange range = spans.ranges[i];
    if (range.end > normalized.num_tokens)
      throw TokenAlignmentError("token range exceeds the dump's token axis");
    if (range.empty()) {
      features.empty_rows[i] = true;
      continue;
    }
    const double n = static_cast<double>(range.size());
    for (std::size_t f = 0; f < F; ++f) {
      const auto row = normalized.row(f);
      double sum = 0.0;
      for (std::size_t t = range.begin; t < range.end; ++t) sum += row[t];
      features.at(i, f) = sum / n;
    }
  }
  return features;
}

/// Mean over the listed feature columns, per sentence. The raw-attention
/// baseline is this with every column; the head-subset baseline uses a subset.
inline std::vector<double> mean_over_heads(const FeatureMatrix& features,
                                           std::span<const std::size_t> heads) {
  for (std::size_t h : heads)
    if (h >= features.cols) throw InvalidArgument("head index " + std::to_string(h) + " out of range");
  std::vector<double> scores(features.rows, 0.0);
  if (heads.empty()) return scores;
  for (std::size_t i = 0; i < features.rows; ++i) {
    double sum = 0.0;
    for (std::size_t h : heads) sum += features.at(i, h);
    scores[i] = sum / static_cast<double>(heads.size());
  }
  return scores;
}

inline std::vector<std::size_t> all_heads(std::size_t num_features) {
  std::vector<std::size_t> heads(num_features);
  for (std::size_t f = 0; f < num_features; ++f) heads[f] = f;
  return heads;
}

/// Raw attention features: like aggregate_sentence_features but on the dump's
/// unnormalized weights (the `--raw-unnormalized` variant of the baseline).
inline FeatureMatrix aggregate_unnormalized_features(const AttentionDump& dump,
                                                     const TokenSpanMap& spans) {
  NormalizedAttention raw{dump.num_layers, dump.num_heads, dump.num_tokens,
                          std::vector<double>(dump.attn.begin(), dump.attn.end()), {}};
  return aggregate_sentence_features(raw, spans);
}

/// Raw-attention baseline score per sentence: the mean over all heads of the
/// context-normalized sentence features (or of the raw weights when
/// `normalize` is false).
inline std::vector<double> raw_attention_scores(const AttentionDump& dump, const TokenSpanMap& spans,
                                                bool normalize = true) {
  const FeatureMatrix features = normalize
                                     ? aggregate_sentence_features(normalize_context_attention(dump), spans)
                                     : aggregate_unnormalized_features(dump, spans);
  const auto heads = all_heads(features.cols);
  return mean_over_heads(features, heads);
}

}  // namespace ctxprobe

#endif  // CTXPROBE_ATTENTION_HPP
