// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctxprobe/fixtures.hpp"
#include "ctxprobe/io.hpp"
#include "ctxprobe/pipeline.hpp"

namespace ctxprobe {
namespace {

namespace fs = std::filesystem;

QARecord tagged_record(std::string id, std::string mem, std::string ctx, std::string source = "") {
  QARecord r;
  r.id = std::move(id);
  r.question = "Where is the key?";
  r.context = "The key is under the mat. The door is red. The cat sleeps all day.";
  r.gold_answers = {"under the mat"};
  r.answer_char_spans = {{11, 24}};
  r.answer_memory = std::move(mem);
  r.answer_context = std::move(ctx);
  r.dataset_tag = DatasetTag::kExactMatch;
  r.source = std::move(source);
  return r;
}

TEST(BuildDataset, ReasonsPerRecord) {
  std::vector<QARecord> records = {tagged_record("a", "no idea", "under the mat"),
                                   tagged_record("b", "under the mat", "under the mat"),
                                   tagged_record("c", "no idea", "on the roof"),
                                   tagged_record("d", "no idea", "missing words")};
  records[3].answer_char_spans.clear();
  records[3].gold_answers = {"missing words"};
  const auto out = build_dataset(records, BuildConfig{});
  ASSERT_EQ(out.decisions.size(), 4u);
  EXPECT_TRUE(out.decisions[0]["keep"].get<bool>());
  EXPECT_EQ(out.decisions[1]["reason"], "answerable-without-context");
  EXPECT_EQ(out.decisions[2]["reason"], "not-answered-with-context");
  EXPECT_EQ(out.decisions[3]["reason"], "no-positive-sentence");
  ASSERT_EQ(out.examples.size(), 1u);
  EXPECT_EQ(out.kept_records, 1u);
  EXPECT_EQ(out.examples[0].labels.size(), 2u);
}

TEST(BuildDataset, MissingProxyAnswerIsAnError) {
  std::vector<QARecord> records = {tagged_record("a", "x", "y")};
  records[0].answer_memory.reset();
  EXPECT_THROW(build_dataset(records, BuildConfig{}), Error);
}

TEST(BuildDataset, AugmentAddsPermutedCopies) {
  std::vector<QARecord> records = {tagged_record("a", "no", "under the mat"), tagged_record("b", "no", "under the mat")};
  BuildConfig cfg;
  cfg.augment_shuffle = true;
  const auto out = build_dataset(records, cfg);
  ASSERT_EQ(out.examples.size(), 4u);
  EXPECT_EQ(out.examples[1].id, out.examples[0].id + "__perm");
  EXPECT_EQ(out.shuffled_records.size(), 2u);
}

TEST(BuildDataset, MixQuotas) {
  std::vector<QARecord> records;
  for (int i = 0; i < 10; ++i) records.push_back(tagged_record("n" + std::to_string(i), "no", "under the mat", "news"));
  for (int i = 0; i < 10; ++i) records.push_back(tagged_record("w" + std::to_string(i), "no", "under the mat", "wiki"));
  BuildConfig cfg;
  cfg.mix = {{"news", 3.0}, {"wiki", 1.0}};
  cfg.max_examples = 8;
  const auto out = build_dataset(records, cfg);
  std::size_t news = 0;
  for (const auto& e : out.examples) news += e.id.starts_with("n");
  EXPECT_EQ(out.examples.size(), 8u);
  EXPECT_EQ(news, 6u);
  const auto again = build_dataset(records, cfg);
  for (std::size_t i = 0; i < out.examples.size(); ++i) EXPECT_EQ(out.examples[i].id, again.examples[i].id);
  cfg.max_examples = 0;
  EXPECT_THROW(build_dataset(records, cfg), InvalidArgument);
}

TEST(FeatureMode, Parsing) {
  EXPECT_EQ(parse_feature_mode("all").kind, FeatureModeKind::kAll);
  EXPECT_EQ(parse_feature_mode("last-layer").kind, FeatureModeKind::kLastLayer);
  EXPECT_EQ(parse_feature_mode("mrmr").kind, FeatureModeKind::kMrmr);
  const auto m = parse_feature_mode("layer:3");
  EXPECT_EQ(m.kind, FeatureModeKind::kLayer);
  EXPECT_EQ(m.layer, 3u);
  EXPECT_THROW(parse_feature_mode("layer:"), InvalidArgument);
  EXPECT_THROW(parse_feature_mode("layer:-1"), InvalidArgument);
  EXPECT_THROW(parse_feature_mode("heads"), InvalidArgument);
}

TrainingSet fixture_training_set(std::size_t count, std::uint64_t seed) {
  CorpusSpec corpus;
  corpus.count = count;
  corpus.memorized_fraction = 0.0;
  std::vector<FeatureRecord> rows;
  for (const auto& fx : generate_corpus(corpus, seed)) {
    const auto sentences = record_sentences(fx.record);
    const auto labels = label_sentences(fx.record, sentences);
    const auto example = build_probing_example(fx.record, sentences, labels, seed);
    rows.push_back(example_features(example, std::span<const AttentionDump>(&fx.dump, 1)));
  }
  return stack_feature_records(rows);
}

TEST(Training, ModesSelectExpectedColumns) {
  const TrainingSet set = fixture_training_set(40, 42);
  ASSERT_EQ(set.features.cols, 16u);
  TrainConfig cfg;
  cfg.folds = 3;
  const auto last = train_with_mode(set, parse_feature_mode("last-layer"), cfg);
  EXPECT_EQ(*last.model.selected_features, (std::vector<std::size_t>{12, 13, 14, 15}));
  const auto layer = train_with_mode(set, parse_feature_mode("layer:1"), cfg);
  EXPECT_EQ(*layer.model.selected_features, (std::vector<std::size_t>{4, 5, 6, 7}));
  EXPECT_THROW(train_with_mode(set, parse_feature_mode("layer:4"), cfg), InvalidArgument);
  const auto mrmr = train_with_mode(set, parse_feature_mode("mrmr"), cfg);
  EXPECT_EQ(mrmr.model.selected_features->size(), 4u);
  const auto all = train_with_mode(set, parse_feature_mode("all"), cfg);
  EXPECT_FALSE(all.model.selected_features.has_value());
  EXPECT_EQ(all.model.weights.size(), 16u);
}

TEST(Training, FeatureRecordJsonRoundTrip) {
  const TrainingSet set = fixture_training_set(2, 5);
  CorpusSpec corpus;
  corpus.count = 1;
  const auto fx = generate_corpus(corpus, 5).front();
  const auto sentences = record_sentences(fx.record);
  const auto example = build_probing_example(fx.record, sentences, label_sentences(fx.record, sentences), 5);
  const auto r = example_features(example, std::span<const AttentionDump>(&fx.dump, 1));
  const auto back = feature_record_from_json(nlohmann::json::parse(feature_record_to_json(r).dump()));
  EXPECT_EQ(back.id, r.id);
  EXPECT_EQ(back.labels, r.labels);
  EXPECT_EQ(back.features.values, r.features.values);
  EXPECT_EQ(set.model_id, r.model_id);
}

TEST(CompressRecord, RandomSeedDependsOnRecordId) {
  const auto a = tagged_record("a", "", ""), b = tagged_record("b", "", "");
  CompressionConfig cfg;
  cfg.selector.kind = SelectorKind::kRandom;
  cfg.selector.seed = 7;
  cfg.budget = Budget::tokens(7);
  cfg.token_counter = TokenCounter::kWhitespace;
  const auto ra = compress_record(a, {}, nullptr, cfg), ra2 = compress_record(a, {}, nullptr, cfg);
  EXPECT_EQ(ra.selected_indices, ra2.selected_indices);
  EXPECT_LE(ra.retained_tokens, 7u);
  EXPECT_LE(compress_record(b, {}, nullptr, cfg).retained_tokens, 7u);
}

TEST(CompressRecord, ModelIdMismatch) {
  const auto fx = generate_fixture(FixtureSpec{}, 1);
  ProbeModel m;
  m.model_id = "other-model";
  m.feature_dim = 16;
  m.weights.assign(16, 0.0);
  CompressionConfig cfg;
  EXPECT_THROW(compress_record(fx.record, std::span<const AttentionDump>(&fx.dump, 1), &m, cfg), DimensionMismatch);
}

TEST(OracleReader, FirstVerbatimGold) {
  const std::vector<std::string> golds = {"blue whale", "whale"};
  EXPECT_EQ(oracle_reader("the whale swims", golds), "whale");
  EXPECT_EQ(oracle_reader("a blue whale", golds), "blue whale");
  EXPECT_EQ(oracle_reader("nothing here", golds), "");
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

struct CliRun {
  int code = -1;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ctxprobe_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliRun run(const std::string& args) const {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string("\"") + CTXPROBE_CLI + "\" " + args + " >/dev/null 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(err);
    std::stringstream ss;
    ss << in.rdbuf();
    r.err = ss.str();
    return r;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("compress --bogus").code, 2);
  EXPECT_EQ(run("train --features x").code, 2);
  EXPECT_EQ(run("train --features x --out y --folds 1").code, 2);
}

TEST_F(Cli, MissingDumpExitsThree) {
  ASSERT_EQ(run("fixtures --count 3 --out " + path("fx")).code, 0);
  const auto r = run("compress --selector raw-attention --data " + path("fx/dataset.jsonl") + " --dumps " +
                     path("nowhere") + " --out " + path("cmp"));
  EXPECT_EQ(r.code, 3);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j["error_class"], "MissingDump");
  EXPECT_FALSE(j["message"].get<std::string>().empty());
}

TEST_F(Cli, MalformedInputExitsThree) {
  std::ofstream(path("bad.jsonl")) << "{\"id\": 1}\n";
  const auto r = run("build-dataset --data " + path("bad.jsonl") + " --out " + path("b"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("error_class"), std::string::npos);
}

TEST_F(Cli, EndToEnd) {
  ASSERT_EQ(run("fixtures --count 40 --out " + path("fx")).code, 0);
  ASSERT_EQ(run("build-dataset --data " + path("fx/dataset.jsonl") + " --out " + path("ds")).code, 0);
  ASSERT_EQ(run("features --examples " + path("ds/examples.jsonl") + " --dumps " + path("fx/dumps") + " --out " +
                path("feat"))
                .code,
            0);
  ASSERT_EQ(run("train --folds 3 --features " + path("feat/features.jsonl") + " --out " + path("probe")).code, 0);
  ASSERT_EQ(run("compress --data " + path("fx/dataset.jsonl") + " --dumps " + path("fx/dumps") + " --probe " +
                path("probe/probe.json") + " --ratio 0.2 --out " + path("cmp"))
                .code,
            0);
  ASSERT_EQ(run("evaluate --oracle-reader --results " + path("cmp/results.jsonl") + " --golds " +
                path("fx/golds.jsonl") + " --out " + path("report.json"))
                .code,
            0);
  ASSERT_EQ(run("analyze --probe " + path("probe/probe.json") + " --dumps " + path("fx/dumps") + " --data " +
                path("fx/dataset.jsonl") + " --out " + path("an"))
                .code,
            0);
  const auto report = read_json_file(path("report.json"));
  EXPECT_TRUE(report.contains("overall"));
  for (const char* f : {"fx/manifest.json", "ds/manifest.json", "feat/manifest.json", "probe/manifest.json",
                        "cmp/manifest.json", "an/head_weights.csv", "an/summary.json"})
    EXPECT_TRUE(fs::exists(path(f))) << f;
}

}  // namespace
}  // namespace ctxprobe
