// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_PIPELINE_HPP
#define CTXPROBE_PIPELINE_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxprobe/attention.hpp"
#include "ctxprobe/compressor.hpp"
#include "ctxprobe/dataset.hpp"
#include "ctxprobe/errors.hpp"
#include "ctxprobe/metrics.hpp"
#include "ctxprobe/mrmr.hpp"
#include "ctxprobe/probe.hpp"
#include "ctxprobe/rng.hpp"
#include "json.hpp"

namespace ctxprobe {

// ---------------------------------------------------------------------------
// Dataset building
// ---------------------------------------------------------------------------

struct BuildConfig {
  FilterThresholds thresholds;
  std::optional<DatasetTag> default_tag;
  bool augment_shuffle = false;
  std::map<std::string, double> mix;  // source -> share; needs max_examples
  std::size_t max_examples = 0;       // 0: no cap
  std::uint64_t seed = 42;
};

struct BuildOutput {
  std::vector<ProbingExample> examples;
  std::vector<nlohmann::ordered_json> decisions;  // one per input record
  std::vector<QARecord> shuffled_records;         // sentence-shuffled contexts for re-extraction
  std::size_t kept_records = 0;
};

/// Filter, label and pair every record. Dropped records are reported in
/// `decisions` with their reason; missing proxy answers or tags are errors.
inline BuildOutput build_dataset(std::span<const QARecord> records, const BuildConfig& config) {
  config.thresholds.check();
  if (!config.mix.empty() && config.max_examples == 0)
    throw InvalidArgument("a source mix needs --max-examples");
  for (const auto& [source, share] : config.mix)
    if (!(share >= 0.0)) throw InvalidArgument("mix share for '" + source + "' must be non-negative");

  BuildOutput out;
  std::vector<std::size_t> example_record;  // record index per base example
  std::vector<ProbingExample> base;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const QARecord& record = records[r];
    nlohmann::ordered_json decision = {{"id", record.id}};
    const FilterDecision d = context_reliance_filter(record, config.thresholds, config.default_tag);
    decision["memory_score"] = d.memory_score;
    decision["context_score"] = d.context_score;
    if (!d.keep) {
      decision["keep"] = false;
      decision["reason"] = d.reason;
      out.decisions.push_back(std::move(decision));
      continue;
    }
    const auto sentences = record_sentences(record);
    try {
      const auto labels = label_sentences(record, sentences);
      base.push_back(build_probing_example(record, sentences, labels, config.seed));
      example_record.push_back(r);
      decision["keep"] = true;
      if (config.augment_shuffle)
        out.shuffled_records.push_back(shuffle_record(record, sentences, config.seed).record);
    } catch (const NoPositiveSentence&) {
      decision["keep"] = false;
      decision["reason"] = "no-positive-sentence";
    } catch (const InsufficientNegatives&) {
      decision["keep"] = false;
      decision["reason"] = "no-negative-sentence";
    }
    out.decisions.push_back(std::move(decision));
  }
  out.kept_records = base.size();

  std::vector<std::size_t> chosen(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) chosen[i] = i;
  if (!config.mix.empty()) {
    double total_share = 0.0;
    for (const auto& [source, share] : config.mix) total_share += share;
    if (!(total_share > 0.0)) throw InvalidArgument("mix shares sum to zero");
    chosen.clear();
    for (const auto& [source, share] : config.mix) {
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < base.size(); ++i)
        if (records[example_record[i]].source == source) pool.push_back(i);
      Rng rng(derive_seed(config.seed, fnv1a64(source)));
      rng.shuffle(std::span<std::size_t>(pool));
      const auto quota = static_cast<std::size_t>(
          std::llround(share / total_share * static_cast<double>(config.max_examples)));
      pool.resize(std::min(pool.size(), quota));
      chosen.insert(chosen.end(), pool.begin(), pool.end());
    }
    std::sort(chosen.begin(), chosen.end());
  } else if (config.max_examples > 0 && chosen.size() > config.max_examples) {
    chosen.resize(config.max_examples);
  }

  for (std::size_t i : chosen) {
    out.examples.push_back(base[i]);
    if (config.augment_shuffle) {
      ProbingExample shuffled = shuffle_sentences(base[i], derive_seed(config.seed, fnv1a64(base[i].id) + 1));
      shuffled.id = base[i].id + "__perm";
      out.examples.push_back(std::move(shuffled));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

/// Sentence features of one probing example.
struct FeatureRecord {
  std::string id;
  std::string record_id;
  std::string model_id;
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;
  std::vector<int> labels;
  FeatureMatrix features;
};

inline FeatureRecord example_features(const ProbingExample& example, std::span<const AttentionDump> dumps) {
  if (dumps.empty()) throw MissingDump("no attention dumps for '" + example.dump_id + "'");
  FeatureRecord r;
  r.id = example.id;
  r.record_id = example.record_id;
  r.model_id = dumps.front().model_id;
  r.num_layers = dumps.front().num_layers;
  r.num_heads = dumps.front().num_heads;
  r.labels = example.labels;
  r.features = features_for_sentences(example.sentences, dumps);
  for (double v : r.features.values)
    if (!std::isfinite(v)) throw NonFiniteFeature("non-finite feature in example '" + example.id + "'");
  return r;
}

inline nlohmann::ordered_json feature_record_to_json(const FeatureRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["record_id"] = r.record_id;
  j["model_id"] = r.model_id;
  j["num_layers"] = r.num_layers;
  j["num_heads"] = r.num_heads;
  j["labels"] = r.labels;
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.features.rows; ++i) {
    const auto row = r.features.row(i);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["features"] = std::move(rows);
  return j;
}

inline FeatureRecord feature_record_from_json(const nlohmann::json& j) {
  try {
    FeatureRecord r;
    r.id = j.at("id").get<std::string>();
    r.record_id = j.value("record_id", r.id);
    r.model_id = j.value("model_id", std::string());
    r.num_layers = j.at("num_layers").get<std::size_t>();
    r.num_heads = j.at("num_heads").get<std::size_t>();
    r.labels = j.at("labels").get<std::vector<int>>();
    const auto rows = j.at("features").get<std::vector<std::vector<double>>>();
    const std::size_t F = r.num_layers * r.num_heads;
    r.features = FeatureMatrix(rows.size(), F);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != F) throw DimensionMismatch("feature row width differs from L*H in '" + r.id + "'");
      std::copy(rows[i].begin(), rows[i].end(), r.features.row(i).begin());
    }
    if (r.labels.size() != rows.size()) throw MalformedRecord("labels and feature rows differ in '" + r.id + "'");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedRecord(std::string("malformed feature record: ") + e.what());
  }
}

/// All rows of all records stacked into one training matrix.
struct TrainingSet {
  FeatureMatrix features;
  std::vector<int> labels;
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;
  std::string model_id;
};

inline TrainingSet stack_feature_records(std::span<const FeatureRecord> records) {
  if (records.empty()) throw InvalidArgument("no feature records to train on");
  TrainingSet set;
  set.num_layers = records.front().num_layers;
  set.num_heads = records.front().num_heads;
  set.model_id = records.front().model_id;
  set.features = FeatureMatrix(0, set.num_layers * set.num_heads);
  for (const auto& r : records) {
    if (r.num_layers != set.num_layers || r.num_heads != set.num_heads)
      throw DimensionMismatch("feature records disagree on L and H");
    set.features.append_rows(r.features);
    set.labels.insert(set.labels.end(), r.labels.begin(), r.labels.end());
  }
  return set;
}

// ---------------------------------------------------------------------------
// Training modes
// ---------------------------------------------------------------------------

enum class FeatureModeKind { kAll, kLastLayer, kLayer, kMrmr };

struct FeatureMode {
  FeatureModeKind kind = FeatureModeKind::kAll;
  std::size_t layer = 0;   // kLayer
  std::size_t mrmr_k = 0;  // kMrmr; 0 means H
};

/// "all", "last-layer", "layer:K" or "mrmr".
inline FeatureMode parse_feature_mode(std::string_view s) {
  if (s == "all") return {FeatureModeKind::kAll};
  if (s == "last-layer") return {FeatureModeKind::kLastLayer};
  if (s == "mrmr") return {FeatureModeKind::kMrmr};
  if (s.starts_with("layer:")) {
    const std::string digits(s.substr(6));
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
      throw InvalidArgument("feature mode 'layer:K' needs a non-negative integer K");
    return {FeatureModeKind::kLayer, std::stoul(digits)};
  }
  throw InvalidArgument("unknown feature mode '" + std::string(s) + "'");
}

/// Feature columns the mode trains on, or nullopt for all of them.
inline std::optional<std::vector<std::size_t>> feature_selection(const TrainingSet& set, const FeatureMode& mode) {
  switch (mode.kind) {
    case FeatureModeKind::kAll: return std::nullopt;
    case FeatureModeKind::kLastLayer: return layer_feature_indices(set.num_layers, set.num_heads, set.num_layers - 1);
    case FeatureModeKind::kLayer: return layer_feature_indices(set.num_layers, set.num_heads, mode.layer);
    case FeatureModeKind::kMrmr:
      return mrmr_select(set.features, set.labels, mode.mrmr_k == 0 ? set.num_heads : mode.mrmr_k);
  }
  return std::nullopt;
}

inline TrainResult train_with_mode(const TrainingSet& set, const FeatureMode& mode, const TrainConfig& config) {
  auto selection = feature_selection(set, mode);
  return train_probe(set.features, set.labels, config, std::move(selection), set.model_id);
}

// ---------------------------------------------------------------------------
// Compression per record
// ---------------------------------------------------------------------------

/// Compresses one dataset record. `dumps` may be empty for dump-free selectors.
inline CompressionResult compress_record(const QARecord& record, std::span<const AttentionDump> dumps,
                                         const ProbeModel* model, const CompressionConfig& config) {
  const auto sentences = record_sentences(record);
  PipelineInput input;
  input.query = record.question;
  input.context = record.context;
  input.sentences = sentences;
  input.dumps = dumps;
  if (record.target_token_counts) input.target_token_counts = std::span<const std::size_t>(*record.target_token_counts);
  if (model && !dumps.empty() && model->model_id != dumps.front().model_id && !model->model_id.empty())
    throw DimensionMismatch("probe was trained on '" + model->model_id + "' dumps, got '" + dumps.front().model_id + "'");
  CompressionConfig cfg = config;
  if (cfg.selector.kind == SelectorKind::kRandom)
    cfg.selector.seed = derive_seed(config.selector.seed, fnv1a64(record.id));
  return compress_pipeline(input, model, cfg);
}

/// Stand-in reader for pipeline checks: answers with the first gold answer
/// that appears verbatim in the compressed context, else nothing.
inline std::string oracle_reader(std::string_view compressed_text, std::span<const std::string> golds) {
  for (const auto& g : golds)
    if (!g.empty() && compressed_text.find(g) != std::string_view::npos) return g;
  return "";
}

}  // namespace ctxprobe

#endif  // CTXPROBE_PIPELINE_HPP
