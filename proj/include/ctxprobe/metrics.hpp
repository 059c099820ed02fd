// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_METRICS_HPP
#define CTXPROBE_METRICS_HPP

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxprobe/errors.hpp"
#include "ctxprobe/utf8.hpp"
#include "json.hpp"

namespace ctxprobe {

namespace metrics_detail {

inline bool is_ascii_punct(char32_t cp) {
  return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) || (cp >= 0x5B && cp <= 0x60) ||
         (cp >= 0x7B && cp <= 0x7E);
}

/// Lowercases ASCII, deletes punctuation, and isolates each CJK character as
/// its own whitespace-separated token. Returns the resulting tokens.
inline std::vector<std::string> base_tokens(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size() + 8);
  for (std::size_t i = 0; i < text.size();) {
    const auto cp = utf8::decode(text, i);
    i += cp.length;
    if (is_ascii_punct(cp.value) || (utf8::is_cjk_punct(cp.value) && cp.value != 0x3000)) continue;
    if (utf8::is_cjk(cp.value)) {
      cleaned.push_back(' ');
      utf8::append(cleaned, cp.value);
      cleaned.push_back(' ');
      continue;
    }
    if (utf8::is_space(cp.value)) {
      cleaned.push_back(' ');
      continue;
    }
    if (cp.value >= 'A' && cp.value <= 'Z') {
      cleaned.push_back(static_cast<char>(cp.value - 'A' + 'a'));
      continue;
    }
    utf8::append(cleaned, cp.value);
  }
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < cleaned.size()) {
    while (pos < cleaned.size() && cleaned[pos] == ' ') ++pos;
    std::size_t end = pos;
    while (end < cleaned.size() && cleaned[end] != ' ') ++end;
    if (end > pos) tokens.emplace_back(cleaned.substr(pos, end - pos));
    pos = end;
  }
  return tokens;
}

inline bool is_article(std::string_view token) { return token == "a" || token == "an" || token == "the"; }

inline std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

}  // namespace metrics_detail

/// SQuAD-style answer tokens: lowercase, no punctuation, no articles, CJK split per character.
inline std::vector<std::string> answer_tokens(std::string_view text) {
  auto tokens = metrics_detail::base_tokens(text);
  std::erase_if(tokens, [](const std::string& t) { return metrics_detail::is_article(t); });
  return tokens;
}

inline std::string normalize_answer(std::string_view text) { return metrics_detail::join(answer_tokens(text)); }

inline int qa_em(std::string_view prediction, std::span<const std::string> golds) {
  if (golds.empty()) throw EmptyGolds("exact match needs at least one gold answer");
  const std::string pred = normalize_answer(prediction);
  for (const auto& gold : golds)
    if (normalize_answer(gold) == pred) return 1;
  return 0;
}

/// Token-level F1 between two token lists. Two empty lists score 1.
inline double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() || gold.empty()) return pred.empty() && gold.empty() ? 1.0 : 0.0;
  std::unordered_map<std::string, int> counts;
  for (const auto& t : gold) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

inline double qa_f1(std::string_view prediction, std::span<const std::string> golds) {
  if (golds.empty()) throw EmptyGolds("F1 needs at least one gold answer");
  const auto pred = answer_tokens(prediction);
  double best = 0.0;
  for (const auto& gold : golds) best = std::max(best, token_f1(pred, answer_tokens(gold)));
  return best;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline constexpr double kRougeBeta = 1.2;

/// ROUGE-L F-measure with beta = 1.2 over lowercased, punctuation-free tokens
/// (articles kept). Empty on either side scores 0.
inline double rouge_l(std::string_view prediction, std::string_view reference) {
  const auto pred = metrics_detail::base_tokens(prediction);
  const auto ref = metrics_detail::base_tokens(reference);
  if (pred.empty() || ref.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(pred, ref));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(pred.size());
  const double recall = lcs / static_cast<double>(ref.size());
  const double beta2 = kRougeBeta * kRougeBeta;
  return (1.0 + beta2) * precision * recall / (recall + beta2 * precision);
}

// ---------------------------------------------------------------------------
// Batch evaluation
// ---------------------------------------------------------------------------

enum class Metric { kQaF1, kQaEm, kRougeL };

inline Metric parse_metric(std::string_view name) {
  if (name == "qa_f1") return Metric::kQaF1;
  if (name == "qa_em") return Metric::kQaEm;
  if (name == "rouge_l") return Metric::kRougeL;
  throw InvalidArgument("unknown metric '" + std::string(name) + "'");
}

inline std::string metric_name(Metric m) {
  switch (m) {
    case Metric::kQaF1: return "qa_f1";
    case Metric::kQaEm: return "qa_em";
    case Metric::kRougeL: return "rouge_l";
  }
  return "qa_f1";
}

inline double score_prediction(Metric metric, std::string_view prediction, std::span<const std::string> golds) {
  switch (metric) {
    case Metric::kQaF1: return qa_f1(prediction, golds);
    case Metric::kQaEm: return qa_em(prediction, golds);
    case Metric::kRougeL: {
      if (golds.empty()) throw EmptyGolds("ROUGE-L needs a reference");
      double best = 0.0;
      for (const auto& g : golds) best = std::max(best, rouge_l(prediction, g));
      return best;
    }
  }
  return 0.0;
}

struct GoldRecord {
  std::string id;
  std::string task;
  std::vector<std::string> answers;
  Metric metric = Metric::kQaF1;
};

struct TokenAccounting {
  std::string id;
  std::size_t original_tokens = 0;
  std::size_t retained_tokens = 0;
};

struct ExampleScore {
  std::string id;
  std::string task;
  double score = 0.0;
};

struct TaskSummary {
  Metric metric = Metric::kQaF1;
  double mean = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  std::map<std::string, TaskSummary> tasks;  // ordered by task name
  double overall = 0.0;                      // macro-average over tasks
  std::vector<ExampleScore> examples;        // ordered by id
  double mean_original_tokens = 0.0;
  double mean_retained_tokens = 0.0;
  std::optional<double> compression_factor;  // original / retained, absent when nothing retained
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

/// Scores every prediction against its golds and aggregates per task. All
/// three inputs must cover the same ids. Examples are processed in id order
/// so the floating-point sums do not depend on input order.
inline EvalReport evaluate_run(std::span<const TokenAccounting> results,
                               const std::map<std::string, std::string>& predictions,
                               std::span<const GoldRecord> golds) {
  std::map<std::string, const GoldRecord*> gold_by_id;
  for (const auto& g : golds)
    if (!gold_by_id.emplace(g.id, &g).second) throw IdMismatch("duplicate gold id '" + g.id + "'");
  std::map<std::string, const TokenAccounting*> result_by_id;
  for (const auto& r : results)
    if (!result_by_id.emplace(r.id, &r).second) throw IdMismatch("duplicate result id '" + r.id + "'");

  auto same_keys = [](const auto& a, const auto& b) {
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) { return x.first == y.first; });
  };
  if (!same_keys(gold_by_id, result_by_id) || !same_keys(gold_by_id, predictions))
    throw IdMismatch("results, predictions and golds must cover the same ids");

  EvalReport report;
  std::map<std::string, double> task_sums;
  double original = 0.0, retained = 0.0;
  for (const auto& [id, gold] : gold_by_id) {
    const double score = score_prediction(gold->metric, predictions.at(id), gold->answers);
    report.examples.push_back(ExampleScore{id, gold->task, score});
    auto& task = report.tasks[gold->task];
    if (task.count > 0 && task.metric != gold->metric)
      throw InvalidArgument("task '" + gold->task + "' mixes metrics");
    task.metric = gold->metric;
    ++task.count;
    task_sums[gold->task] += score;
    original += static_cast<double>(result_by_id.at(id)->original_tokens);
    retained += static_cast<double>(result_by_id.at(id)->retained_tokens);
  }
  double macro = 0.0;
  for (auto& [name, task] : report.tasks) {
    task.mean = task_sums[name] / static_cast<double>(task.count);
    macro += task.mean;
  }
  const std::size_t n = report.examples.size();
  if (!report.tasks.empty()) report.overall = macro / static_cast<double>(report.tasks.size());
  if (n > 0) {
    report.mean_original_tokens = original / static_cast<double>(n);
    report.mean_retained_tokens = retained / static_cast<double>(n);
  }
  if (retained > 0.0) report.compression_factor = original / retained;
  return report;
}

inline GoldRecord gold_record_from_json(const nlohmann::json& j) {
  try {
    GoldRecord g;
    g.id = j.at("id").get<std::string>();
    g.task = j.value("task", std::string("default"));
    g.answers = j.at("answers").get<std::vector<std::string>>();
    g.metric = parse_metric(j.value("metric", std::string("qa_f1")));
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedRecord(std::string("malformed gold record: ") + e.what());
  }
}

inline nlohmann::ordered_json gold_record_to_json(const GoldRecord& g) {
  return {{"id", g.id}, {"task", g.task}, {"answers", g.answers}, {"metric", metric_name(g.metric)}};
}

inline nlohmann::ordered_json eval_report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  auto tasks = nlohmann::ordered_json::object();
  for (const auto& [name, t] : report.tasks)
    tasks[name] = {{"metric", metric_name(t.metric)}, {"mean", t.mean}, {"count", t.count}};
  j["tasks"] = std::move(tasks);
  j["overall"] = report.overall;
  j["tokens"] = {{"mean_original", report.mean_original_tokens},
                 {"mean_retained", report.mean_retained_tokens},
                 {"compression_factor", report.compression_factor ? nlohmann::ordered_json(*report.compression_factor)
                                                                  : nlohmann::ordered_json(nullptr)}};
  auto examples = nlohmann::ordered_json::array();
  for (const auto& e : report.examples) examples.push_back({{"id", e.id}, {"task", e.task}, {"score", e.score}});
  j["examples"] = std::move(examples);
  j["config"] = report.config;
  return j;
}

}  // namespace ctxprobe

#endif  // CTXPROBE_METRICS_HPP
