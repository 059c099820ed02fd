// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_DATASET_HPP
#define CTXPROBE_DATASET_HPP

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxprobe/context.hpp"
#include "ctxprobe/errors.hpp"
#include "ctxprobe/metrics.hpp"
#include "ctxprobe/rng.hpp"
#include "json.hpp"

namespace ctxprobe {

/// How a source dataset is scored for context reliance: exact match
/// (SQuAD/NewsQA-like) or token F1 (HotpotQA-like).
enum class DatasetTag { kExactMatch, kPartialMatch };

inline DatasetTag parse_dataset_tag(std::string_view s) {
  if (s == "exact-match-style") return DatasetTag::kExactMatch;
  if (s == "partial-match-style") return DatasetTag::kPartialMatch;
  throw InvalidArgument("unknown dataset tag '" + std::string(s) + "'");
}

inline std::string dataset_tag_name(DatasetTag t) {
  return t == DatasetTag::kExactMatch ? "exact-match-style" : "partial-match-style";
}

struct QARecord {
  std::string id;
  std::string question;
  std::string context;
  std::vector<std::string> gold_answers;
  std::vector<CharSpan> answer_char_spans;
  std::optional<std::string> answer_memory;   // proxy answer without the context
  std::optional<std::string> answer_context;  // proxy answer with the context
  std::optional<DatasetTag> dataset_tag;
  std::optional<std::vector<CharSpan>> sentence_spans;           // pre-segmented input
  std::optional<std::vector<std::size_t>> target_token_counts;   // per sentence, target tokenizer
  std::string source;                                            // e.g. "newsqa"; used for mix ratios
};

struct FilterThresholds {
  double em_memory_max = 0.0;
  double em_context_min = 1.0;
  double f1_memory_max = 0.2;
  double f1_context_min = 0.5;

  void check() const {
    for (double v : {em_memory_max, em_context_min, f1_memory_max, f1_context_min})
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("filter thresholds must lie in [0, 1]");
  }
};

struct FilterDecision {
  bool keep = false;
  double memory_score = 0.0;
  double context_score = 0.0;
  std::string reason;  // empty when kept
};

// Threshold comparisons are inclusive. The slack absorbs rounding in F1
// values such as 2 * (1/9) / (1 + 1/9) that are meant to equal 0.2 exactly.
inline constexpr double kThresholdSlack = 1e-9;

/// Keep iff memory score <= the memory max and context score >= the context min.
inline FilterDecision reliance_decision(DatasetTag tag, double memory_score, double context_score,
                                        const FilterThresholds& t) {
  const double memory_max = tag == DatasetTag::kExactMatch ? t.em_memory_max : t.f1_memory_max;
  const double context_min = tag == DatasetTag::kExactMatch ? t.em_context_min : t.f1_context_min;
  FilterDecision d{true, memory_score, context_score, {}};
  if (memory_score > memory_max + kThresholdSlack) {
    d.keep = false;
    d.reason = "answerable-without-context";
  } else if (context_score < context_min - kThresholdSlack) {
    d.keep = false;
    d.reason = "not-answered-with-context";
  }
  return d;
}

/// Keeps only records the proxy answers correctly with the context but not
/// without it, scored with EM or F1 against the gold answers per dataset tag.
inline FilterDecision context_reliance_filter(const QARecord& record, const FilterThresholds& thresholds,
                                              std::optional<DatasetTag> default_tag = std::nullopt) {
  thresholds.check();
  if (!record.answer_memory || !record.answer_context)
    throw MissingModelAnswer("record '" + record.id + "' lacks answer_memory or answer_context");
  const auto tag = record.dataset_tag ? record.dataset_tag : default_tag;
  if (!tag) throw MissingDatasetTag("record '" + record.id + "' has no dataset tag");
  if (*tag == DatasetTag::kExactMatch)
    return reliance_decision(*tag, qa_em(*record.answer_memory, record.gold_answers),
                             qa_em(*record.answer_context, record.gold_answers), thresholds);
  return reliance_decision(*tag, qa_f1(*record.answer_memory, record.gold_answers),
                           qa_f1(*record.answer_context, record.gold_answers), thresholds);
}

/// Label 1 iff any answer span overlaps the sentence.
inline std::vector<int> label_sentences(const QARecord& record, std::span<const Sentence> sentences) {
  for (const auto& span : record.answer_char_spans)
    if (span.end < span.begin || span.end > record.context.size())
      throw MalformedRecord("answer span outside the context in record '" + record.id + "'");
  std::vector<int> labels(sentences.size(), 0);
  bool any = false;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    for (const auto& span : record.answer_char_spans) {
      if (sentences[i].span.overlaps(span)) {
        labels[i] = 1;
        any = true;
        break;
      }
    }
  }
  if (!any) throw NoPositiveSentence("no sentence overlaps an answer span in record '" + record.id + "'");
  return labels;
}

struct ProbingExample {
  std::string id;
  std::string record_id;
  std::string dump_id;  // dumps are <dump_id>.chunk<k>.attn
  std::string query;
  std::vector<Sentence> sentences;  // Sentence::index is the position in the full context
  std::vector<int> labels;
  std::vector<std::size_t> permutation;  // permutation[k] = construction-order slot now at k
};

/// One positive (the first) and one negative (seeded uniform choice) from the
/// same context, kept in context order.
inline ProbingExample build_probing_example(const QARecord& record, std::span<const Sentence> sentences,
                                            std::span<const int> labels, std::uint64_t seed) {
  if (labels.size() != sentences.size()) throw DimensionMismatch("labels and sentences differ in count");
  std::optional<std::size_t> positive;
  std::vector<std::size_t> negatives;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1 && !positive) positive = i;
    if (labels[i] == 0) negatives.push_back(i);
  }
  if (!positive) throw NoPositiveSentence("record '" + record.id + "' has no positive sentence");
  if (negatives.empty()) throw InsufficientNegatives("record '" + record.id + "' has no negative sentence");

  Rng rng(derive_seed(seed, fnv1a64(record.id)));
  const std::size_t negative = negatives[rng.below(negatives.size())];

  ProbingExample ex;
  ex.id = record.id;
  ex.record_id = record.id;
  ex.dump_id = record.id;
  ex.query = record.question;
  for (std::size_t i : {std::min(*positive, negative), std::max(*positive, negative)}) {
    ex.sentences.push_back(sentences[i]);
    ex.labels.push_back(labels[i]);
  }
  ex.permutation = {0, 1};
  return ex;
}

/// Permutes sentences and labels together with a seeded Fisher-Yates shuffle.
inline ProbingExample shuffle_sentences(const ProbingExample& example, std::uint64_t seed) {
  Rng rng(seed);
  const auto perm = rng.permutation(example.sentences.size());
  ProbingExample out = example;
  out.permutation.resize(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) {
    out.sentences[k] = example.sentences[perm[k]];
    out.labels[k] = example.labels[perm[k]];
    out.permutation[k] = example.permutation.size() == perm.size() ? example.permutation[perm[k]] : perm[k];
  }
  return out;
}

struct ShuffledRecord {
  QARecord record;
  std::vector<Sentence> sentences;
  std::vector<std::size_t> permutation;  // new position k holds original sentence permutation[k]
};

/// A copy of the record whose context has its sentences in a seeded random
/// order, joined by single spaces. Answer spans are carried to the new
/// offsets piece by piece, so every sentence keeps its label. The new record
/// is pre-segmented so the extractor and the engine agree on boundaries.
inline ShuffledRecord shuffle_record(const QARecord& record, std::span<const Sentence> sentences,
                                     std::uint64_t seed, std::string_view id_suffix = "__shuf") {
  Rng rng(derive_seed(seed, fnv1a64(record.id) ^ 0x5348554646ULL));
  ShuffledRecord out;
  out.permutation = rng.permutation(sentences.size());
  out.record = record;
  out.record.id = record.id + std::string(id_suffix);
  out.record.context.clear();
  out.record.answer_char_spans.clear();
  std::vector<CharSpan> spans;
  std::vector<std::size_t> counts;
  for (std::size_t k = 0; k < out.permutation.size(); ++k) {
    const Sentence& src = sentences[out.permutation[k]];
    if (k > 0) out.record.context.push_back(' ');
    const std::size_t begin = out.record.context.size();
    out.record.context += src.text;
    const CharSpan dst{begin, out.record.context.size()};
    spans.push_back(dst);
    out.sentences.push_back(Sentence{k, dst, src.text});
    for (const auto& answer : record.answer_char_spans) {
      if (!src.span.overlaps(answer)) continue;
      const std::size_t a = std::max(answer.begin, src.span.begin) - src.span.begin + begin;
      const std::size_t b = std::min(std::max(answer.end, answer.begin), src.span.end) - src.span.begin + begin;
      out.record.answer_char_spans.push_back(CharSpan{a, std::max(a, b)});
    }
    if (record.target_token_counts) counts.push_back(record.target_token_counts->at(out.permutation[k]));
  }
  out.record.sentence_spans = spans;
  if (record.target_token_counts) out.record.target_token_counts = counts;
  return out;
}

/// The record's sentences: its pre-segmented spans when present, else the rule-based segmenter.
inline std::vector<Sentence> record_sentences(const QARecord& record) {
  if (record.sentence_spans) return sentences_from_spans(record.context, *record.sentence_spans);
  return segment_sentences(record.context);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace dataset_detail {

inline std::vector<CharSpan> spans_from_json(const nlohmann::json& j) {
  std::vector<CharSpan> spans;
  for (const auto& pair : j) {
    if (!pair.is_array() || pair.size() != 2) throw MalformedRecord("spans must be [begin, end] pairs");
    spans.push_back(CharSpan{pair[0].get<std::size_t>(), pair[1].get<std::size_t>()});
  }
  return spans;
}

inline nlohmann::ordered_json spans_to_json(std::span<const CharSpan> spans) {
  auto j = nlohmann::ordered_json::array();
  for (const auto& s : spans) j.push_back({s.begin, s.end});
  return j;
}

}  // namespace dataset_detail

inline QARecord qa_record_from_json(const nlohmann::json& j) {
  try {
    QARecord r;
    r.id = j.at("id").get<std::string>();
    r.question = j.at("question").get<std::string>();
    r.context = j.at("context").get<std::string>();
    r.gold_answers = j.value("gold_answers", std::vector<std::string>{});
    if (j.contains("answer_char_spans")) r.answer_char_spans = dataset_detail::spans_from_json(j.at("answer_char_spans"));
    if (j.contains("answer_memory") && !j.at("answer_memory").is_null())
      r.answer_memory = j.at("answer_memory").get<std::string>();
    if (j.contains("answer_context") && !j.at("answer_context").is_null())
      r.answer_context = j.at("answer_context").get<std::string>();
    if (j.contains("dataset_tag") && !j.at("dataset_tag").is_null())
      r.dataset_tag = parse_dataset_tag(j.at("dataset_tag").get<std::string>());
    if (j.contains("sentence_spans") && !j.at("sentence_spans").is_null())
      r.sentence_spans = dataset_detail::spans_from_json(j.at("sentence_spans"));
    if (j.contains("target_token_counts") && !j.at("target_token_counts").is_null())
      r.target_token_counts = j.at("target_token_counts").get<std::vector<std::size_t>>();
    r.source = j.value("source", std::string{});
    for (const auto& span : r.answer_char_spans)
      if (span.end < span.begin || span.end > r.context.size())
        throw MalformedRecord("answer span outside the context in record '" + r.id + "'");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedRecord(std::string("malformed QA record: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw MalformedRecord(e.what());
  }
}

inline nlohmann::ordered_json qa_record_to_json(const QARecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["question"] = r.question;
  j["context"] = r.context;
  j["gold_answers"] = r.gold_answers;
  j["answer_char_spans"] = dataset_detail::spans_to_json(r.answer_char_spans);
  if (r.answer_memory) j["answer_memory"] = *r.answer_memory;
  if (r.answer_context) j["answer_context"] = *r.answer_context;
  if (r.dataset_tag) j["dataset_tag"] = dataset_tag_name(*r.dataset_tag);
  if (r.sentence_spans) j["sentence_spans"] = dataset_detail::spans_to_json(*r.sentence_spans);
  if (r.target_token_counts) j["target_token_counts"] = *r.target_token_counts;
  if (!r.source.empty()) j["source"] = r.source;
  return j;
}

inline nlohmann::ordered_json probing_example_to_json(const ProbingExample& ex) {
  nlohmann::ordered_json j;
  j["id"] = ex.id;
  j["record_id"] = ex.record_id;
  j["dump_id"] = ex.dump_id;
  j["query"] = ex.query;
  auto sentences = nlohmann::ordered_json::array();
  for (const auto& s : ex.sentences)
    sentences.push_back({{"index", s.index}, {"span", {s.span.begin, s.span.end}}, {"text", s.text}});
  j["sentences"] = std::move(sentences);
  j["labels"] = ex.labels;
  j["permutation"] = ex.permutation;
  return j;
}

inline ProbingExample probing_example_from_json(const nlohmann::json& j) {
  try {
    ProbingExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.record_id = j.at("record_id").get<std::string>();
    ex.dump_id = j.at("dump_id").get<std::string>();
    ex.query = j.at("query").get<std::string>();
    for (const auto& s : j.at("sentences"))
      ex.sentences.push_back(Sentence{s.at("index").get<std::size_t>(),
                                      CharSpan{s.at("span")[0].get<std::size_t>(), s.at("span")[1].get<std::size_t>()},
                                      s.at("text").get<std::string>()});
    ex.labels = j.at("labels").get<std::vector<int>>();
    ex.permutation = j.value("permutation", std::vector<std::size_t>{});
    if (ex.labels.size() != ex.sentences.size())
      throw MalformedRecord("probing example '" + ex.id + "' has mismatched labels");
    return ex;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedRecord(std::string("malformed probing example: ") + e.what());
  }
}

}  // namespace ctxprobe

#endif  // CTXPROBE_DATASET_HPP
