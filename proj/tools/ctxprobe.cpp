// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: fixtures, build-dataset, features, train,
// compress, evaluate, analyze.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctxprobe/analysis.hpp"
#include "ctxprobe/compressor.hpp"
#include "ctxprobe/dataset.hpp"
#include "ctxprobe/dump_io.hpp"
#include "ctxprobe/errors.hpp"
#include "ctxprobe/fixtures.hpp"
#include "ctxprobe/io.hpp"
#include "ctxprobe/metrics.hpp"
#include "ctxprobe/pipeline.hpp"
#include "ctxprobe/probe.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace ctxprobe;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitInvariant = 4;

struct Globals {
  std::uint64_t seed = 42;
  std::size_t jobs = 1;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InvalidArgument("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<QARecord> load_records(const fs::path& path) {
  std::vector<QARecord> records;
  for (const auto& j : read_jsonl(path)) records.push_back(qa_record_from_json(j));
  std::map<std::string, int> seen;
  for (const auto& r : records)
    if (seen[r.id]++) throw MalformedRecord("duplicate record id '" + r.id + "' in " + path.string());
  return records;
}

/// Digest over "name sha256" lines of every file, sorted by name.
std::string directory_digest(const fs::path& dir, std::size_t* count) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::string lines;
  for (const auto& f : files) lines += f.filename().string() + " " + sha256_hex(read_file_bytes(f)) + "\n";
  *count = files.size();
  return sha256_hex(lines);
}

// ---------------------------------------------------------------------------
// fixtures
// ---------------------------------------------------------------------------

struct FixturesArgs {
  fs::path out;
  CorpusSpec corpus;
};

void run_fixtures(const FixturesArgs& a, const Globals& g) {
  const auto fixtures = generate_corpus(a.corpus, g.seed);
  ensure_dir(a.out / "dumps");
  ordered_json config = {{"count", a.corpus.count},
                         {"layers", a.corpus.num_layers},
                         {"heads", a.corpus.num_heads},
                         {"retrieval_heads", a.corpus.retrieval_heads},
                         {"sink_heads", a.corpus.sink_heads},
                         {"min_sentences", a.corpus.min_sentences},
                         {"max_sentences", a.corpus.max_sentences},
                         {"min_words", a.corpus.base.min_words},
                         {"max_words", a.corpus.base.max_words},
                         {"sink_mass", a.corpus.base.sink_mass},
                         {"retrieval_mass", a.corpus.base.retrieval_mass},
                         {"leading_share", a.corpus.base.leading_share},
                         {"noise", a.corpus.base.noise},
                         {"memorized_fraction", a.corpus.memorized_fraction},
                         {"id_prefix", a.corpus.id_prefix}};
  RunManifest manifest("fixtures", config, g.seed);
  std::vector<ordered_json> records, golds;
  for (const auto& fx : fixtures) {
    records.push_back(qa_record_to_json(fx.record));
    golds.push_back(gold_record_to_json(fx.gold));
    write_file_bytes(a.out / "dumps" / dump_file_name(fx.record.id, 0), write_dump(fx.dump));
  }
  manifest.write_output(a.out / "dataset.jsonl", to_jsonl(records));
  manifest.write_output(a.out / "golds.jsonl", to_jsonl(golds));
  std::size_t count = 0;
  const std::string digest = directory_digest(a.out / "dumps", &count);
  manifest.record_output_set(a.out / "dumps", count, digest);
  manifest.save(a.out / "manifest.json");
  std::printf("wrote %zu fixtures to %s\n", fixtures.size(), a.out.string().c_str());
}

// ---------------------------------------------------------------------------
// build-dataset
// ---------------------------------------------------------------------------

struct BuildArgs {
  fs::path data;
  fs::path out;
  std::string dataset_tag;
  std::vector<std::string> mix;
  BuildConfig config;
};

void run_build_dataset(BuildArgs a, const Globals& g) {
  a.config.seed = g.seed;
  if (!a.dataset_tag.empty()) a.config.default_tag = parse_dataset_tag(a.dataset_tag);
  for (const auto& item : a.mix) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidArgument("mix entries look like source=share, got '" + item + "'");
    try {
      a.config.mix[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw InvalidArgument("mix share in '" + item + "' is not a number");
    }
  }
  const auto records = load_records(a.data);
  const BuildOutput built = build_dataset(records, a.config);
  ensure_dir(a.out);

  ordered_json mix = ordered_json::object();
  for (const auto& [k, v] : a.config.mix) mix[k] = v;
  ordered_json config = {{"dataset_tag", a.dataset_tag.empty() ? ordered_json(nullptr) : ordered_json(a.dataset_tag)},
                         {"augment_shuffle", a.config.augment_shuffle},
                         {"mix", mix},
                         {"max_examples", a.config.max_examples},
                         {"em_memory_max", a.config.thresholds.em_memory_max},
                         {"em_context_min", a.config.thresholds.em_context_min},
                         {"f1_memory_max", a.config.thresholds.f1_memory_max},
                         {"f1_context_min", a.config.thresholds.f1_context_min}};
  RunManifest manifest("build-dataset", config, g.seed);
  manifest.add_input(a.data);
  std::vector<ordered_json> examples;
  for (const auto& ex : built.examples) examples.push_back(probing_example_to_json(ex));
  manifest.write_output(a.out / "examples.jsonl", to_jsonl(examples));
  manifest.write_output(a.out / "decisions.jsonl", to_jsonl(built.decisions));
  if (a.config.augment_shuffle) {
    std::vector<ordered_json> shuffled;
    for (const auto& r : built.shuffled_records) shuffled.push_back(qa_record_to_json(r));
    manifest.write_output(a.out / "shuffled_records.jsonl", to_jsonl(shuffled));
  }
  manifest.note("records", records.size());
  manifest.note("kept_records", built.kept_records);
  manifest.note("examples", built.examples.size());
  manifest.save(a.out / "manifest.json");
  std::printf("kept %zu of %zu records, wrote %zu examples\n", built.kept_records, records.size(),
              built.examples.size());
}

// ---------------------------------------------------------------------------
// features
// ---------------------------------------------------------------------------

struct FeaturesArgs {
  fs::path examples;
  fs::path dumps;
  fs::path out;
};

void run_features(const FeaturesArgs& a, const Globals& g) {
  std::vector<ProbingExample> examples;
  for (const auto& j : read_jsonl(a.examples)) examples.push_back(probing_example_from_json(j));
  if (!fs::is_directory(a.dumps)) throw MissingDump("dump directory " + a.dumps.string() + " does not exist");
  std::vector<ordered_json> rows(examples.size());
  parallel_for(examples.size(), g.jobs, [&](std::size_t i) {
    const auto dumps = load_chunk_dumps(a.dumps, examples[i].dump_id);
    rows[i] = feature_record_to_json(example_features(examples[i], dumps));
  });
  ensure_dir(a.out);
  RunManifest manifest("features", ordered_json::object(), g.seed);
  manifest.add_input(a.examples);
  manifest.add_input(a.dumps);
  manifest.write_output(a.out / "features.jsonl", to_jsonl(rows));
  manifest.note("examples", rows.size());
  manifest.save(a.out / "manifest.json");
  std::printf("wrote features for %zu examples\n", rows.size());
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path features;
  fs::path out;
  std::string feature_mode = "all";
  std::size_t mrmr_k = 0;
  bool unbalanced = false;
  TrainConfig config;
};

void run_train(TrainArgs a, const Globals& g) {
  a.config.seed = g.seed;
  a.config.balanced = !a.unbalanced;
  FeatureMode mode = parse_feature_mode(a.feature_mode);
  mode.mrmr_k = a.mrmr_k;
  std::vector<FeatureRecord> records;
  for (const auto& j : read_jsonl(a.features)) records.push_back(feature_record_from_json(j));
  const TrainingSet set = stack_feature_records(records);
  if (mode.kind == FeatureModeKind::kLayer && mode.layer >= set.num_layers)
    throw InvalidArgument("layer " + std::to_string(mode.layer) + " out of range for L = " +
                          std::to_string(set.num_layers));
  TrainResult result = train_with_mode(set, mode, a.config);
  result.model.training_meta["feature_mode"] = a.feature_mode;
  result.model.training_meta["num_layers"] = set.num_layers;
  result.model.training_meta["num_heads"] = set.num_heads;

  ensure_dir(a.out);
  ordered_json config = {{"feature_mode", a.feature_mode},
                         {"mrmr_k", a.mrmr_k},
                         {"grid", a.config.c_grid},
                         {"folds", a.config.folds},
                         {"max_iterations", a.config.max_iterations},
                         {"validation_fraction", a.config.validation_fraction},
                         {"balanced", a.config.balanced},
                         {"standardize", a.config.standardize}};
  RunManifest manifest("train", config, g.seed);
  manifest.add_input(a.features);
  manifest.write_output(a.out / "probe.json", probe_to_json(result.model).dump(2) + "\n");
  manifest.write_output(a.out / "cv_report.json", cv_report_to_json(result.report).dump(2) + "\n");
  manifest.save(a.out / "manifest.json");
  const auto& r = result.report;
  std::printf("chosen C = %g, validation AUC = %s, converged = %s\n", r.chosen_c,
              r.validation_auc ? std::to_string(*r.validation_auc).c_str() : "n/a",
              r.final_model_converged ? "yes" : "no");
}

// ---------------------------------------------------------------------------
// compress
// ---------------------------------------------------------------------------

struct CompressArgs {
  fs::path data;
  fs::path dumps;
  fs::path probe;
  fs::path out;
  std::string selector = "probe";
  std::vector<std::size_t> heads;
  fs::path heads_file;
  std::optional<double> ratio;
  std::optional<std::size_t> budget;
  std::size_t chunk_size = 1024;
  std::string token_counter = "dump-tokens";
  std::string join_str = " ";
  bool raw_unnormalized = false;
};

void run_compress(const CompressArgs& a, const Globals& g) {
  CompressionConfig config;
  config.budget = a.budget ? Budget::tokens(*a.budget) : Budget::ratio(a.ratio.value_or(0.2));
  config.chunk_size = a.chunk_size;
  config.token_counter = a.token_counter == "whitespace" ? TokenCounter::kWhitespace : TokenCounter::kDumpTokens;
  config.join_str = a.join_str;
  config.selector.kind = parse_selector(a.selector);
  config.selector.seed = g.seed;
  config.selector.raw_unnormalized = a.raw_unnormalized;

  std::optional<ProbeModel> model;
  if (config.selector.kind == SelectorKind::kProbe) {
    if (a.probe.empty()) throw InvalidArgument("--probe is required for the probe selector");
    model = probe_from_json(read_json_file(a.probe));
  }
  std::vector<HeadId> head_pairs;
  if (config.selector.kind == SelectorKind::kHeadSubset) {
    config.selector.heads = a.heads;
    if (!a.heads_file.empty()) head_pairs = head_list_from_json(read_json_file(a.heads_file));
    if (config.selector.heads.empty() && head_pairs.empty())
      throw InvalidArgument("head-subset needs --heads or --heads-file");
  }

  const auto records = load_records(a.data);
  const bool need_dumps = config.selector.needs_dump() || config.token_counter == TokenCounter::kDumpTokens;
  if (need_dumps && !fs::is_directory(a.dumps))
    throw MissingDump("dump directory '" + a.dumps.string() + "' does not exist");

  std::vector<ordered_json> rows(records.size());
  parallel_for(records.size(), g.jobs, [&](std::size_t i) {
    const QARecord& r = records[i];
    const bool counts_from_dataset = r.target_token_counts.has_value();
    std::vector<AttentionDump> dumps;
    if (config.selector.needs_dump() || (config.token_counter == TokenCounter::kDumpTokens && !counts_from_dataset))
      dumps = load_chunk_dumps(a.dumps, r.id);
    CompressionConfig cfg = config;
    for (const auto& [layer, head] : head_pairs) {
      // (layer, head) pairs become flat indices for this dump's shape.
      const auto& d = dumps.front();
      if (layer >= d.num_layers || head >= d.num_heads)
        throw InvalidArgument("head (" + std::to_string(layer) + ", " + std::to_string(head) + ") out of range");
      cfg.selector.heads.push_back(layer * d.num_heads + head);
    }
    rows[i] = compression_result_to_json(r.id, compress_record(r, dumps, model ? &*model : nullptr, cfg));
  });

  ensure_dir(a.out);
  ordered_json config_json = {{"selector", a.selector},
                              {"budget", a.budget ? ordered_json(*a.budget) : ordered_json(nullptr)},
                              {"ratio", a.budget ? ordered_json(nullptr) : ordered_json(a.ratio.value_or(0.2))},
                              {"chunk_size", a.chunk_size},
                              {"token_counter", a.token_counter},
                              {"join_str", a.join_str},
                              {"raw_unnormalized", a.raw_unnormalized},
                              {"heads", config.selector.heads},
                              {"heads_file", a.heads_file.string()}};
  RunManifest manifest("compress", config_json, g.seed);
  manifest.add_input(a.data);
  if (need_dumps) manifest.add_input(a.dumps);
  if (!a.probe.empty()) manifest.add_input(a.probe);
  manifest.write_output(a.out / "results.jsonl", to_jsonl(rows));
  manifest.save(a.out / "manifest.json");
  std::printf("compressed %zu records\n", rows.size());
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
  fs::path results;
  fs::path predictions;
  fs::path golds;
  fs::path out;
  bool oracle_reader = false;
};

void run_evaluate(const EvaluateArgs& a, const Globals& g) {
  if (a.predictions.empty() == !a.oracle_reader)
    throw InvalidArgument("give exactly one of --predictions and --oracle-reader");
  std::vector<GoldRecord> golds;
  for (const auto& j : read_jsonl(a.golds)) golds.push_back(gold_record_from_json(j));
  std::map<std::string, const GoldRecord*> gold_by_id;
  for (const auto& gr : golds) gold_by_id[gr.id] = &gr;

  std::vector<TokenAccounting> accounting;
  std::map<std::string, std::string> predictions;
  for (const auto& j : read_jsonl(a.results)) {
    try {
      TokenAccounting t{j.at("id").get<std::string>(), j.at("original_tokens").get<std::size_t>(),
                        j.at("retained_tokens").get<std::size_t>()};
      if (a.oracle_reader) {
        auto it = gold_by_id.find(t.id);
        if (it == gold_by_id.end()) throw IdMismatch("result id '" + t.id + "' has no gold record");
        predictions[t.id] = oracle_reader(j.at("compressed_text").get<std::string>(), it->second->answers);
      }
      accounting.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw MalformedRecord(std::string("malformed result record: ") + e.what());
    }
  }
  if (!a.oracle_reader) {
    for (const auto& j : read_jsonl(a.predictions)) {
      try {
        const auto id = j.at("id").get<std::string>();
        if (!predictions.emplace(id, j.at("prediction").get<std::string>()).second)
          throw IdMismatch("duplicate prediction id '" + id + "'");
      } catch (const nlohmann::json::exception& e) {
        throw MalformedRecord(std::string("malformed prediction record: ") + e.what());
      }
    }
  }

  EvalReport report = evaluate_run(accounting, predictions, golds);
  report.config = {{"reader", a.oracle_reader ? "oracle" : "predictions"}, {"seed", g.seed}};
  const fs::path parent = a.out.has_parent_path() ? a.out.parent_path() : fs::path(".");
  ensure_dir(parent);
  RunManifest manifest("evaluate", report.config, g.seed);
  manifest.add_input(a.results);
  manifest.add_input(a.golds);
  if (!a.oracle_reader) manifest.add_input(a.predictions);
  manifest.write_output(a.out, eval_report_to_json(report).dump(2) + "\n");
  manifest.save(fs::path(a.out.string() + ".manifest.json"));
  std::printf("overall %.6f over %zu examples\n", report.overall, report.examples.size());
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  fs::path probe;
  fs::path dumps;
  fs::path external_heads;
  fs::path data;
  fs::path out;
  std::size_t k = 14;
};

void run_analyze(const AnalyzeArgs& a, const Globals& g) {
  const ProbeModel model = probe_from_json(read_json_file(a.probe));
  if (!fs::is_directory(a.dumps)) throw MissingDump("dump directory '" + a.dumps.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(a.dumps))
    if (entry.is_regular_file() && entry.path().extension() == ".attn") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw MissingDump("no .attn files in " + a.dumps.string());

  std::map<std::string, std::vector<CharSpan>> evidence;
  if (!a.data.empty()) {
    for (const auto& r : load_records(a.data)) {
      const auto sentences = record_sentences(r);
      try {
        const auto labels = label_sentences(r, sentences);
        for (std::size_t i = 0; i < sentences.size(); ++i)
          if (labels[i]) evidence[r.id].push_back(sentences[i].span);
      } catch (const NoPositiveSentence&) {
      }
    }
  }

  const AttentionDump first = load_dump(files.front());
  const HeadWeightMap map = head_weight_map(model, first.num_layers, first.num_heads);
  std::vector<CategoryProportions> per_dump(files.size());
  parallel_for(files.size(), g.jobs, [&](std::size_t i) {
    const AttentionDump dump = load_dump(files[i]);
    if (dump.num_layers != map.num_layers || dump.num_heads != map.num_heads)
      throw DimensionMismatch(files[i].string() + " has a different L or H");
    std::string id = files[i].filename().string();
    id = id.substr(0, id.rfind(".chunk"));
    const auto it = evidence.find(id);
    const std::vector<CharSpan> none;
    per_dump[i] = head_category_proportions(dump, assign_token_categories(dump, it == evidence.end() ? none : it->second));
  });
  CategoryAccumulator acc(map.weights.size());
  for (const auto& p : per_dump) acc.add(p);

  ensure_dir(a.out);
  ordered_json config = {{"k", a.k}, {"dumps", files.size()}};
  RunManifest manifest("analyze", config, g.seed);
  manifest.add_input(a.probe);
  manifest.add_input(a.dumps);
  manifest.write_output(a.out / "head_weights.csv", head_weights_csv(map));
  manifest.write_output(a.out / "head_weights.ppm", head_weight_ppm(map));
  manifest.write_output(a.out / "categories.csv", category_csv(map, acc.mean()));
  ordered_json summary = {{"num_layers", map.num_layers},
                          {"num_heads", map.num_heads},
                          {"dumps", acc.count()},
                          {"zero_mass_heads", acc.zero_mass_events()}};
  if (!a.external_heads.empty()) {
    manifest.add_input(a.external_heads);
    const auto external = head_list_from_json(read_json_file(a.external_heads));
    const auto overlap = top_head_overlap(map, external, std::min(a.k, map.weights.size()));
    auto pairs = [](const std::vector<HeadId>& ids) {
      auto arr = ordered_json::array();
      for (const auto& [l, h] : ids) arr.push_back({l, h});
      return arr;
    };
    summary["overlap"] = {{"k", std::min(a.k, map.weights.size())},
                          {"count", overlap.count},
                          {"heads", pairs(overlap.overlap)},
                          {"top", pairs(overlap.top)}};
    std::printf("top-%zu overlap with external heads: %zu\n", std::min(a.k, map.weights.size()), overlap.count);
  }
  manifest.write_output(a.out / "summary.json", summary.dump(2) + "\n");
  manifest.save(a.out / "manifest.json");
}

void report_error(const std::string& error_class, const std::string& message) {
  const ordered_json j = {{"error_class", error_class}, {"message", message}};
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctxprobe: query-aware context compression from proxy-model attention"};
  app.set_config("--config", "", "TOML/INI file with option defaults; command-line flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every stochastic step")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Data-parallel width")->capture_default_str()->check(CLI::PositiveNumber);

  FixturesArgs fx;
  auto* fixtures = app.add_subcommand("fixtures", "Generate a synthetic corpus with planted evidence");
  fixtures->add_option("--out", fx.out, "Output directory")->required();
  fixtures->add_option("--count", fx.corpus.count)->capture_default_str();
  fixtures->add_option("--layers", fx.corpus.num_layers)->capture_default_str()->check(CLI::PositiveNumber);
  fixtures->add_option("--heads", fx.corpus.num_heads)->capture_default_str()->check(CLI::PositiveNumber);
  fixtures->add_option("--retrieval-heads", fx.corpus.retrieval_heads, "Flat l*H+h indices")->capture_default_str();
  fixtures->add_option("--sink-heads", fx.corpus.sink_heads, "Flat l*H+h indices")->capture_default_str();
  fixtures->add_option("--min-sentences", fx.corpus.min_sentences)->capture_default_str();
  fixtures->add_option("--max-sentences", fx.corpus.max_sentences)->capture_default_str();
  fixtures->add_option("--min-words", fx.corpus.base.min_words)->capture_default_str();
  fixtures->add_option("--max-words", fx.corpus.base.max_words)->capture_default_str();
  fixtures->add_option("--sink-mass", fx.corpus.base.sink_mass)->capture_default_str();
  fixtures->add_option("--retrieval-mass", fx.corpus.base.retrieval_mass)->capture_default_str();
  fixtures->add_option("--leading-share", fx.corpus.base.leading_share)->capture_default_str();
  fixtures->add_option("--noise", fx.corpus.base.noise)->capture_default_str();
  fixtures->add_option("--memorized-fraction", fx.corpus.memorized_fraction)->capture_default_str();
  fixtures->add_option("--id-prefix", fx.corpus.id_prefix)->capture_default_str();

  BuildArgs build;
  auto* build_cmd = app.add_subcommand("build-dataset", "Filter, label and pair records into probing examples");
  build_cmd->add_option("--data", build.data, "QARecord JSONL")->required();
  build_cmd->add_option("--out", build.out, "Output directory")->required();
  build_cmd->add_option("--dataset-tag", build.dataset_tag, "Tag for records without one")
      ->check(CLI::IsMember({"exact-match-style", "partial-match-style"}));
  build_cmd->add_flag("--augment-shuffle", build.config.augment_shuffle,
                      "Also store a sentence-shuffled copy of every example");
  build_cmd->add_option("--mix", build.mix, "source=share entries, needs --max-examples");
  build_cmd->add_option("--max-examples", build.config.max_examples, "0 keeps everything")->capture_default_str();
  build_cmd->add_option("--em-memory-max", build.config.thresholds.em_memory_max)->capture_default_str();
  build_cmd->add_option("--em-context-min", build.config.thresholds.em_context_min)->capture_default_str();
  build_cmd->add_option("--f1-memory-max", build.config.thresholds.f1_memory_max)->capture_default_str();
  build_cmd->add_option("--f1-context-min", build.config.thresholds.f1_context_min)->capture_default_str();

  FeaturesArgs feat;
  auto* features = app.add_subcommand("features", "Sentence attention features for probing examples");
  features->add_option("--examples", feat.examples, "ProbingExample JSONL")->required();
  features->add_option("--dumps", feat.dumps, "Dump directory")->required();
  features->add_option("--out", feat.out, "Output directory")->required();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the logistic probe with cross-validated C");
  train->add_option("--features", tr.features, "Feature JSONL")->required();
  train->add_option("--out", tr.out, "Output directory")->required();
  train->add_option("--feature-mode", tr.feature_mode, "all | last-layer | layer:K | mrmr")->capture_default_str();
  train->add_option("--mrmr-k", tr.mrmr_k, "Features kept by mrmr, 0 means H")->capture_default_str();
  train->add_option("--grid", tr.config.c_grid, "Inverse regularization grid")->capture_default_str();
  train->add_option("--folds", tr.config.folds)->capture_default_str()->check(CLI::Range(2, 1000));
  train->add_option("--max-iterations", tr.config.max_iterations)->capture_default_str();
  train->add_option("--validation-fraction", tr.config.validation_fraction)->capture_default_str()
      ->check(CLI::Range(0.0, 0.95));
  train->add_flag("--standardize", tr.config.standardize, "Z-score features before fitting");
  train->add_flag("--unbalanced", tr.unbalanced, "Disable balanced class weights");

  CompressArgs cp;
  auto* compress = app.add_subcommand("compress", "Select sentences under a token budget");
  compress->add_option("--data", cp.data, "QARecord JSONL")->required();
  compress->add_option("--dumps", cp.dumps, "Dump directory");
  compress->add_option("--probe", cp.probe, "Probe model JSON");
  compress->add_option("--out", cp.out, "Output directory")->required();
  compress->add_option("--selector", cp.selector)
      ->capture_default_str()
      ->check(CLI::IsMember({"probe", "raw-attention", "random", "empty", "head-subset"}));
  compress->add_option("--heads", cp.heads, "Flat head indices for head-subset");
  compress->add_option("--heads-file", cp.heads_file, "JSON list of [layer, head] pairs for head-subset");
  auto* ratio = compress->add_option("--ratio", cp.ratio, "Keep at most floor(ratio * original) tokens (default 0.2)")
                    ->check(CLI::Range(0.0, 1.0));
  auto* budget = compress->add_option("--budget", cp.budget, "Fixed token budget");
  ratio->excludes(budget);
  compress->add_option("--chunk-size", cp.chunk_size)->capture_default_str()->check(CLI::PositiveNumber);
  compress->add_option("--token-counter", cp.token_counter)
      ->capture_default_str()
      ->check(CLI::IsMember({"dump-tokens", "whitespace"}));
  compress->add_option("--join-str", cp.join_str, "Separator between non-adjacent sentences")->capture_default_str();
  compress->add_flag("--raw-unnormalized", cp.raw_unnormalized,
                     "Raw-attention baseline on unnormalized weights");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions and token statistics");
  evaluate->add_option("--results", ev.results, "Compression results JSONL")->required();
  evaluate->add_option("--predictions", ev.predictions, "JSONL of {id, prediction}");
  evaluate->add_flag("--oracle-reader", ev.oracle_reader,
                     "Predict a gold answer iff it survives compression verbatim");
  evaluate->add_option("--golds", ev.golds, "JSONL of {id, task, answers, metric}")->required();
  evaluate->add_option("--out", ev.out, "Report JSON path")->required();

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Head weight maps, overlap and token-category proportions");
  analyze->add_option("--probe", an.probe, "Probe model JSON")->required();
  analyze->add_option("--dumps", an.dumps, "Dump directory")->required();
  analyze->add_option("--external-heads", an.external_heads, "JSON list of [layer, head] pairs");
  analyze->add_option("--data", an.data, "QARecord JSONL for supporting-evidence spans");
  analyze->add_option("--k", an.k, "Top-k heads compared")->capture_default_str()->check(CLI::PositiveNumber);
  analyze->add_option("--out", an.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*fixtures) run_fixtures(fx, g);
    else if (*build_cmd) run_build_dataset(build, g);
    else if (*features) run_features(feat, g);
    else if (*train) run_train(tr, g);
    else if (*compress) run_compress(cp, g);
    else if (*evaluate) run_evaluate(ev, g);
    else if (*analyze) run_analyze(an, g);
  } catch (const InvariantViolation& e) {
    report_error(e.error_class(), e.what());
    return kExitInvariant;
  } catch (const Error& e) {
    report_error(e.error_class(), e.what());
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    report_error("IoError", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    report_error("InternalError", e.what());
    return kExitInvariant;
  }
  return 0;
}
