// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_ANALYSIS_HPP
#define CTXPROBE_ANALYSIS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ctxprobe/attention.hpp"
#include "ctxprobe/context.hpp"
#include "ctxprobe/errors.hpp"
#include "ctxprobe/probe.hpp"

namespace ctxprobe {

using HeadId = std::pair<std::size_t, std::size_t>;  // (layer, head)

/// Probe weights reshaped to layers x heads.
struct HeadWeightMap {
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;
  std::vector<double> weights;  // flat l*H+h

  double at(std::size_t layer, std::size_t head) const { return weights[layer * num_heads + head]; }
  int sign(std::size_t layer, std::size_t head) const {
    const double w = at(layer, head);
    return (w > 0.0) - (w < 0.0);
  }
  std::size_t flat(const HeadId& id) const { return id.first * num_heads + id.second; }
  HeadId head_id(std::size_t flat_index) const { return {flat_index / num_heads, flat_index % num_heads}; }
};

/// Entry (l, h) is w[l*H+h]. Heads outside a projected model's selection get 0.
inline HeadWeightMap head_weight_map(const ProbeModel& model, std::size_t num_layers, std::size_t num_heads) {
  const std::size_t F = num_layers * num_heads;
  if (model.feature_dim != F)
    throw DimensionMismatch("probe has " + std::to_string(model.feature_dim) + " features, expected L*H = " +
                            std::to_string(F));
  HeadWeightMap map{num_layers, num_heads, std::vector<double>(F, 0.0)};
  if (model.selected_features) {
    if (model.selected_features->size() != model.weights.size())
      throw DimensionMismatch("selected feature list and weights differ in length");
    for (std::size_t k = 0; k < model.weights.size(); ++k) {
      const std::size_t f = (*model.selected_features)[k];
      if (f >= F) throw DimensionMismatch("selected feature index out of range");
      map.weights[f] = model.weights[k];
    }
  } else {
    if (model.weights.size() != F) throw DimensionMismatch("weight vector length differs from L*H");
    map.weights = model.weights;
  }
  return map;
}

/// Flat indices of the k largest weights, ties to the lower index.
inline std::vector<std::size_t> top_heads(const HeadWeightMap& map, std::size_t k) {
  if (k > map.weights.size()) throw InvalidArgument("k exceeds the number of heads");
  std::vector<std::size_t> order(map.weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.weights[a] > map.weights[b]; });
  order.resize(k);
  return order;
}

struct HeadOverlap {
  std::vector<HeadId> top;      // in rank order
  std::vector<HeadId> overlap;  // ascending flat index
  std::size_t count = 0;
};

inline HeadOverlap top_head_overlap(const HeadWeightMap& map, std::span<const HeadId> external_heads, std::size_t k) {
  std::vector<bool> external(map.weights.size(), false);
  for (const auto& id : external_heads) {
    if (id.first >= map.num_layers || id.second >= map.num_heads)
      throw InvalidArgument("external head (" + std::to_string(id.first) + ", " + std::to_string(id.second) +
                            ") out of range");
    external[map.flat(id)] = true;
  }
  HeadOverlap result;
  std::vector<std::size_t> shared;
  for (std::size_t f : top_heads(map, k)) {
    result.top.push_back(map.head_id(f));
    if (external[f]) shared.push_back(f);
  }
  std::sort(shared.begin(), shared.end());
  for (std::size_t f : shared) result.overlap.push_back(map.head_id(f));
  result.count = shared.size();
  return result;
}

enum class TokenCategory : std::uint8_t { kSink = 0, kSupporting = 1, kQuestion = 2, kOther = 3 };
inline constexpr std::size_t kNumTokenCategories = 4;

inline const char* token_category_name(TokenCategory c) {
  static constexpr const char* kNames[] = {"sink", "supporting", "question", "other"};
  return kNames[static_cast<std::size_t>(c)];
}

struct TokenCategoryAssignment {
  std::vector<TokenCategory> categories;  // one per token
};

/// Default grouping for a dump. Sinks are token 0 and every flagged special
/// token. Context tokens starting inside an evidence span are supporting.
/// Non-context tokens after the last context token are the question (the
/// prompt places it after the context). Everything else, including
/// template text, is other.
inline TokenCategoryAssignment assign_token_categories(const AttentionDump& dump, std::span<const CharSpan> evidence) {
  const std::size_t T = dump.num_tokens;
  std::size_t last_context = 0;
  bool any_context = false;
  for (std::size_t t = 0; t < T; ++t)
    if (dump.context_mask[t]) {
      last_context = t;
      any_context = true;
    }
  TokenCategoryAssignment out;
  out.categories.resize(T, TokenCategory::kOther);
  for (std::size_t t = 0; t < T; ++t) {
    if (t == 0 || dump.special_token_flags[t]) {
      out.categories[t] = TokenCategory::kSink;
    } else if (dump.context_mask[t]) {
      const std::size_t start = dump.token_offsets[t].begin;
      for (const auto& span : evidence)
        if (span.contains(start)) out.categories[t] = TokenCategory::kSupporting;
    } else if (any_context && t > last_context) {
      out.categories[t] = TokenCategory::kQuestion;
    }
  }
  return out;
}

struct CategoryProportions {
  std::vector<std::array<double, kNumTokenCategories>> per_head;  // flat l*H+h
  std::vector<std::size_t> zero_mass_heads;                       // got the uniform fallback
};

/// Share of each head's raw attention on every category, renormalized over
/// the four categories. A head with no mass at all gets 0.25 each.
inline CategoryProportions head_category_proportions(const AttentionDump& dump,
                                                     const TokenCategoryAssignment& assignment) {
  if (assignment.categories.size() != dump.num_tokens)
    throw DimensionMismatch("category assignment does not cover every token");
  validate_dump(dump);
  CategoryProportions out;
  out.per_head.resize(dump.num_features());
  for (std::size_t f = 0; f < dump.num_features(); ++f) {
    std::array<double, kNumTokenCategories> mass{};
    const auto row = std::span<const float>(dump.attn).subspan(f * dump.num_tokens, dump.num_tokens);
    for (std::size_t t = 0; t < dump.num_tokens; ++t)
      mass[static_cast<std::size_t>(assignment.categories[t])] += static_cast<double>(row[t]);
    const double total = mass[0] + mass[1] + mass[2] + mass[3];
    if (total < kMinContextMass) {
      mass.fill(0.25);
      out.zero_mass_heads.push_back(f);
    } else {
      for (double& m : mass) m /= total;
    }
    out.per_head[f] = mass;
  }
  return out;
}

/// Running mean of per-head proportions over many dumps.
class CategoryAccumulator {
 public:
  explicit CategoryAccumulator(std::size_t num_features) : sums_(num_features) {}

  void add(const CategoryProportions& p) {
    if (p.per_head.size() != sums_.size()) throw DimensionMismatch("dumps disagree on L*H");
    for (std::size_t f = 0; f < sums_.size(); ++f)
      for (std::size_t c = 0; c < kNumTokenCategories; ++c) sums_[f][c] += p.per_head[f][c];
    zero_mass_events_ += p.zero_mass_heads.size();
    ++count_;
  }

  std::vector<std::array<double, kNumTokenCategories>> mean() const {
    auto out = sums_;
    if (count_ == 0) return out;
    for (auto& head : out)
      for (double& v : head) v /= static_cast<double>(count_);
    return out;
  }

  std::size_t count() const { return count_; }
  std::size_t zero_mass_events() const { return zero_mass_events_; }

 private:
  std::vector<std::array<double, kNumTokenCategories>> sums_;
  std::size_t count_ = 0;
  std::size_t zero_mass_events_ = 0;
};

inline std::string head_weights_csv(const HeadWeightMap& map) {
  std::ostringstream os;
  os.precision(17);
  os << "layer,head,weight\n";
  for (std::size_t l = 0; l < map.num_layers; ++l)
    for (std::size_t h = 0; h < map.num_heads; ++h) os << l << ',' << h << ',' << map.at(l, h) << '\n';
  return os.str();
}

inline std::string category_csv(const HeadWeightMap& map,
                                const std::vector<std::array<double, kNumTokenCategories>>& proportions) {
  if (proportions.size() != map.weights.size()) throw DimensionMismatch("proportions do not match the head map");
  std::vector<std::size_t> order(map.weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.weights[a] < map.weights[b]; });
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "layer,head,weight,sink,supporting,question,other\n";
  for (std::size_t f : order) {
    const auto [l, h] = map.head_id(f);
    os << l << ',' << h << ',' << map.weights[f];
    for (double v : proportions[f]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

/// Binary PPM heat map, layers as rows and heads as columns, `cell` pixels
/// per entry. Negative weights shade blue, positive red, zero white.
inline std::string head_weight_ppm(const HeadWeightMap& map, std::size_t cell = 16) {
  double scale = 0.0;
  for (double w : map.weights) scale = std::max(scale, std::abs(w));
  const std::size_t width = map.num_heads * cell, height = map.num_layers * cell;
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + width * height * 3);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double v = scale > 0.0 ? map.at(y / cell, x / cell) / scale : 0.0;
      const auto fade = static_cast<unsigned char>(std::lround(255.0 * (1.0 - std::abs(v))));
      const unsigned char r = v < 0.0 ? fade : 255, g = fade, b = v > 0.0 ? fade : 255;
      out.push_back(static_cast<char>(r));
      out.push_back(static_cast<char>(g));
      out.push_back(static_cast<char>(b));
    }
  }
  return out;
}

/// Parses [[layer, head], ...] or {"heads": [[layer, head], ...]}.
inline std::vector<HeadId> head_list_from_json(const nlohmann::ordered_json& j) {
  try {
    const auto& list = j.is_object() ? j.at("heads") : j;
    std::vector<HeadId> heads;
    for (const auto& pair : list) {
      if (!pair.is_array() || pair.size() != 2) throw MalformedRecord("head entries must be [layer, head] pairs");
      heads.emplace_back(pair[0].get<std::size_t>(), pair[1].get<std::size_t>());
    }
    return heads;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedRecord(std::string("malformed head list: ") + e.what());
  }
}

}  // namespace ctxprobe

#endif  // CTXPROBE_ANALYSIS_HPP
