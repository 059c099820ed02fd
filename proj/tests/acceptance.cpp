// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails. `--criterion NAME` runs one.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "ctxprobe/analysis.hpp"
#include "ctxprobe/dump_io.hpp"
#include "ctxprobe/fixtures.hpp"
#include "ctxprobe/io.hpp"
#include "ctxprobe/metrics.hpp"
#include "ctxprobe/mrmr.hpp"
#include "ctxprobe/pipeline.hpp"
#include "test_util.hpp"

namespace ctxprobe {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

FeatureMatrix column_matrix(const std::vector<double>& xs) {
  FeatureMatrix m(xs.size(), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) m.at(i, 0) = xs[i];
  return m;
}

// ---------------------------------------------------------------------------

Outcome probe_correctness() {
  const auto start = Clock::now();
  // Two-point instance, balanced weights 1, C = 1.
  const auto objective = [](double w, double b) { return 0.5 * (softplus(b) + softplus(-(w + b))) + 0.5 * w * w; };
  double best = INFINITY, gw = 0, gb = 0;
  for (int i = -100; i <= 100; ++i)
    for (int j = -100; j <= 100; ++j)
      if (const double f = objective(i * 0.1, j * 0.1); f < best) best = f, gw = i * 0.1, gb = j * 0.1;
  const double cw = gw, cb = gb;
  best = INFINITY;
  for (int i = -200; i <= 200; ++i)
    for (int j = -200; j <= 200; ++j) {
      const double w = cw + i * 1e-3, b = cb + j * 1e-3;
      if (std::abs(w) > 10 || std::abs(b) > 10) continue;
      if (const double f = objective(w, b); f < best) best = f, gw = w, gb = b;
    }
  const auto fit = fit_logistic(column_matrix({0.0, 1.0}), std::vector<int>{0, 1}, 1.0, true, 2000);
  const double dw = std::abs(fit.weights[0] - gw), db = std::abs(fit.bias - gb);

  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 5 + rng.below(20), d = 1 + rng.below(6);
    FeatureMatrix x(n, d);
    for (auto& v : x.values) v = rng.uniform(-1.0, 1.0);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.below(2));
    const LogisticObjective obj(x, y, class_weights(y, true), rng.uniform(0.1, 10.0));
    Eigen::VectorXd p(static_cast<Eigen::Index>(d + 1));
    for (Eigen::Index k = 0; k < p.size(); ++k) p[k] = rng.uniform(-2.0, 2.0);
    const Eigen::VectorXd g = obj.gradient(p);
    Eigen::VectorXd fd(p.size());
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      Eigen::VectorXd a = p, b = p;
      a[k] += 1e-5;
      b[k] -= 1e-5;
      fd[k] = (obj.value(a) - obj.value(b)) / 2e-5;
    }
    worst = std::max(worst, (g - fd).norm() / std::max(1e-12, g.norm()));
  }
  const double elapsed = seconds_since(start);
  return {dw <= 2e-3 && db <= 2e-3 && worst < 1e-5 && elapsed < 5.0,
          fmt("|dw|=%.2e |db|=%.2e worst_grad_rel=%.2e time=%.2fs", dw, db, worst, elapsed)};
}

Outcome normalization_suite() {
  Rng rng(7);
  double worst_sum = 0.0, worst_scale = 0.0;
  for (int i = 0; i < 100; ++i) {
    const AttentionDump d = testing::random_dump(rng, 1 + rng.below(4), 1 + rng.below(4), 2 + rng.below(60));
    const auto n = normalize_context_attention(d);
    for (std::size_t f = 0; f < n.num_layers * n.num_heads; ++f) {
      double s = 0.0;
      for (double v : n.row(f)) s += v;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
    // Power-of-two scalings are exact in float32, so the comparison isolates
    // the normalization itself.
    for (float c : {0.5f, 0.25f, 0.125f}) {
      AttentionDump scaled = d;
      for (auto& v : scaled.attn) v *= c;
      const auto m = normalize_context_attention(scaled);
      for (std::size_t k = 0; k < n.weights.size(); ++k)
        worst_scale = std::max(worst_scale, std::abs(n.weights[k] - m.weights[k]));
    }
  }
  return {worst_sum <= 1e-6 && worst_scale <= 1e-9,
          fmt("max|row_sum-1|=%.2e max_scale_diff=%.2e over 100 dumps", worst_sum, worst_scale)};
}

Outcome budget_safety() {
  CorpusSpec corpus;
  corpus.count = 60;
  const auto fixtures = generate_corpus(corpus, 42);
  Rng rng(3);
  ProbeModel model;
  model.feature_dim = 16;
  for (std::size_t f = 0; f < 16; ++f) model.weights.push_back(rng.normal());
  std::vector<Budget> budgets;
  for (double tau : {0.1, 0.2, 0.3, 0.4, 0.5}) budgets.push_back(Budget::ratio(tau));
  for (std::size_t b : {0, 50, 200, 2000}) budgets.push_back(Budget::tokens(b));
  std::vector<Selector> selectors(4);
  selectors[0].kind = SelectorKind::kProbe;
  selectors[1].kind = SelectorKind::kRawAttention;
  selectors[2].kind = SelectorKind::kRandom;
  selectors[2].seed = 9;
  selectors[3].kind = SelectorKind::kHeadSubset;
  selectors[3].heads = {5, 10, 13};
  std::size_t runs = 0, violations = 0;
  for (const auto& fx : fixtures)
    for (const auto& budget : budgets)
      for (const auto& sel : selectors)
        for (TokenCounter counter : {TokenCounter::kDumpTokens, TokenCounter::kWhitespace}) {
          CompressionConfig cfg;
          cfg.budget = budget;
          cfg.selector = sel;
          cfg.token_counter = counter;
          const auto r = compress_record(fx.record, std::span<const AttentionDump>(&fx.dump, 1), &model, cfg);
          ++runs;
          bool ok = r.retained_tokens <= r.budget;
          for (std::size_t k = 1; k < r.selected_indices.size(); ++k)
            ok = ok && r.selected_indices[k - 1] < r.selected_indices[k];
          violations += !ok;
        }
  return {violations == 0, fmt("%zu runs, %zu violations", runs, violations)};
}

Outcome probe_vs_raw() {
  const auto start = Clock::now();
  CorpusSpec corpus;
  corpus.count = 300;
  corpus.base.sink_mass = 0.9;
  const auto all = generate_corpus(corpus, 42);
  std::vector<FeatureRecord> rows;
  for (std::size_t i = 0; i < 200; ++i) {
    const auto& fx = all[i];
    const auto sentences = record_sentences(fx.record);
    const auto example = build_probing_example(fx.record, sentences, label_sentences(fx.record, sentences), 42);
    rows.push_back(example_features(example, std::span<const AttentionDump>(&fx.dump, 1)));
  }
  const TrainingSet set = stack_feature_records(rows);
  TrainConfig tc;
  tc.seed = 42;
  const ProbeModel model = train_with_mode(set, FeatureMode{}, tc).model;

  double probe_hits = 0, raw_hits = 0, evidence = 0;
  for (std::size_t i = 200; i < 300; ++i) {
    const auto& fx = all[i];
    const auto labels = label_sentences(fx.record, record_sentences(fx.record));
    CompressionConfig cfg;
    cfg.budget = Budget::ratio(0.2);
    const auto p = compress_record(fx.record, std::span<const AttentionDump>(&fx.dump, 1), &model, cfg);
    cfg.selector.kind = SelectorKind::kRawAttention;
    const auto r = compress_record(fx.record, std::span<const AttentionDump>(&fx.dump, 1), nullptr, cfg);
    for (std::size_t s = 0; s < labels.size(); ++s) {
      if (!labels[s]) continue;
      evidence += 1;
      probe_hits += std::binary_search(p.selected_indices.begin(), p.selected_indices.end(), s);
      raw_hits += std::binary_search(r.selected_indices.begin(), r.selected_indices.end(), s);
    }
  }
  const double probe_recall = probe_hits / evidence, raw_recall = raw_hits / evidence;
  const double elapsed = seconds_since(start);
  return {probe_recall >= 0.95 && probe_recall > raw_recall && elapsed < 60.0,
          fmt("probe_recall=%.4f raw_recall=%.4f evidence=%.0f time=%.2fs", probe_recall, raw_recall, evidence,
              elapsed)};
}

Outcome separable_auc() {
  std::vector<double> xs;
  std::vector<int> y;
  for (int i = 0; i < 100; ++i) xs.push_back(-1.0), y.push_back(0);
  for (int i = 0; i < 100; ++i) xs.push_back(1.0), y.push_back(1);
  const auto sep = train_probe(column_matrix(xs), y, TrainConfig{});

  Rng rng(11);
  const std::size_t n = 2000;
  FeatureMatrix x(n, 4);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % 2);
    for (std::size_t j = 0; j < 4; ++j) x.at(i, j) = labels[i] + 0.5 * rng.normal();
  }
  rng.shuffle(std::span<int>(labels));
  const auto shuffled = train_probe(x, labels, TrainConfig{});
  const double a = sep.report.validation_auc.value_or(-1), b = shuffled.report.validation_auc.value_or(-1);
  return {a == 1.0 && b >= 0.4 && b <= 0.6, fmt("separable_auc=%.6f shuffled_auc=%.4f", a, b)};
}

Outcome mrmr_behavior() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3, 42}) {
    Rng rng(seed);
    FeatureMatrix x(200, 3);
    std::vector<int> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
      y[i] = static_cast<int>(rng.below(2));
      x.at(i, 0) = y[i];
      x.at(i, 1) = y[i];
      x.at(i, 2) = rng.uniform();
    }
    const auto picked = mrmr_select(x, y, 2);
    // Exhaustive greedy criterion over the three columns.
    const auto rel = feature_relevance(x, y);
    std::size_t first = 0;
    for (std::size_t j = 1; j < 3; ++j)
      if (rel[j] > rel[first] + 1e-12) first = j;
    std::vector<double> col[3];
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < 200; ++i) col[j].push_back(x.at(i, j));
    double best = -INFINITY;
    std::size_t second = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      if (j == first) continue;
      if (const double s = rel[j] - std::abs(pearson(col[j], col[first])); s > best + 1e-12) best = s, second = j;
    }
    ok = ok && picked == std::vector<std::size_t>{0, 2} && picked == std::vector<std::size_t>{first, second};
  }
  std::size_t cap_runs = 0, cap_violations = 0;
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t H = 1 + rng.below(6), d = H * (1 + rng.below(4)), n = 10 + rng.below(50);
    FeatureMatrix x(n, d);
    for (auto& v : x.values) v = rng.uniform();
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 2);
    cap_violations += mrmr_select(x, y, H).size() > H;
    ++cap_runs;
  }
  detail = fmt("order [0,2] on 4 seeds: %s; cap violations %zu/%zu", ok ? "yes" : "no", cap_violations, cap_runs);
  return {ok && cap_violations == 0, detail};
}

Outcome reliance_table() {
  struct Case {
    DatasetTag tag;
    double memory, context;
    bool keep;
  };
  const DatasetTag em = DatasetTag::kExactMatch, f1 = DatasetTag::kPartialMatch;
  const std::vector<Case> table = {
      {em, 0, 1, true},        {em, 1, 1, false},       {em, 0, 0, false},
      {f1, 0.19, 0.49, false}, {f1, 0.19, 0.50, true},  {f1, 0.19, 0.51, true},
      {f1, 0.20, 0.49, false}, {f1, 0.20, 0.50, true},  {f1, 0.20, 0.51, true},
      {f1, 0.21, 0.49, false}, {f1, 0.21, 0.50, false}, {f1, 0.21, 0.51, false},
  };
  std::size_t agree = 0;
  for (const auto& c : table) agree += reliance_decision(c.tag, c.memory, c.context, FilterThresholds{}).keep == c.keep;
  return {agree == table.size(), fmt("%zu/%zu cases", agree, table.size())};
}

Outcome metric_oracles() {
  const std::vector<std::string> obama = {"Barack Obama"};
  const double f1 = qa_f1("Obama", obama);
  const double rl = rouge_l("a b c d", "a c d");
  const std::vector<std::string> cat = {"cat"}, paris = {"Paris, France"};
  const bool em = qa_em("The Cat!", cat) == 1 && qa_em("  the   cat ", cat) == 1 && qa_em("a dog", cat) == 0 &&
                  qa_em("paris france", paris) == 1 && normalize_answer("An  Apple.") == "apple";
  return {std::abs(f1 - 2.0 / 3.0) <= 1e-9 && std::abs(rl - 0.8790) <= 1e-3 && em,
          fmt("f1=%.9f rouge_l=%.5f em_cases=%s", f1, rl, em ? "ok" : "fail")};
}

Outcome overlap_fixture() {
  const fs::path dir = CTXPROBE_FIXTURE_DIR;
  const fs::path probe_file = dir / "published_probe_heads.json", retrieval_file = dir / "published_retrieval_heads.json";
  if (!fs::exists(probe_file) || !fs::exists(retrieval_file))
    return {false, "published 14-head lists not available as fixtures (" + probe_file.string() + ", " +
                       retrieval_file.string() + ")"};
  const auto probe_heads = head_list_from_json(read_json_file(probe_file));
  const auto retrieval_heads = head_list_from_json(read_json_file(retrieval_file));
  std::size_t L = 0, H = 0;
  for (const auto& lists : {probe_heads, retrieval_heads})
    for (const auto& h : lists) L = std::max(L, h.first + 1), H = std::max(H, h.second + 1);
  ProbeModel m;
  m.feature_dim = L * H;
  m.weights.assign(L * H, 0.0);
  for (const auto& h : probe_heads) m.weights[h.first * H + h.second] = 1.0;
  const auto result = top_head_overlap(head_weight_map(m, L, H), retrieval_heads, probe_heads.size());
  return {result.count == 5, fmt("overlap=%zu", result.count)};
}

Outcome format_roundtrip() {
  Rng rng(42);
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const AttentionDump d = testing::random_dump(rng, 1 + rng.below(3), 1 + rng.below(4), rng.below(30));
    const std::string bytes = write_dump(d);
    bad += !(read_dump(bytes) == d && write_dump(read_dump(bytes)) == bytes);
  }
  const std::string bytes = write_dump(testing::random_dump(rng, 1, 2, 4));
  const auto header = nlohmann::ordered_json::parse(bytes.substr(0, bytes.find('\n')));
  const std::string payload = bytes.substr(bytes.find('\n') + 1);
  const auto with = [&](const nlohmann::ordered_json& h) { return h.dump() + "\n" + payload; };
  const auto raises = [](const std::string& b, const char* cls) {
    try {
      read_dump(b);
    } catch (const Error& e) {
      return e.error_class() == cls;
    }
    return false;
  };
  std::vector<std::pair<std::string, const char*>> cases = {
      {"no newline", "CorruptHeader"}, {"{not json\n", "CorruptHeader"}, {"[1,2]\n", "CorruptHeader"},
      {bytes.substr(0, bytes.size() - 1), "PayloadLengthMismatch"}, {bytes + "xy", "PayloadLengthMismatch"}};
  auto h = header;
  h["version"] = 2;
  cases.emplace_back(with(h), "UnsupportedVersion");
  h = header;
  h.erase("version");
  cases.emplace_back(with(h), "CorruptHeader");
  h = header;
  h["extra"] = 1;
  cases.emplace_back(with(h), "CorruptHeader");
  h = header;
  h["context_mask"][0] = 1;
  cases.emplace_back(with(h), "CorruptHeader");
  std::string negative = bytes;
  const std::size_t p = negative.find('\n') + 1;
  negative[p] = 0, negative[p + 1] = 0, negative[p + 2] = static_cast<char>(0x80), negative[p + 3] = static_cast<char>(0xbf);
  cases.emplace_back(negative, "InvalidDump");
  std::size_t malformed_ok = 0;
  for (const auto& [b, cls] : cases) malformed_ok += raises(b, cls);
  return {bad == 0 && malformed_ok == cases.size(),
          fmt("roundtrip failures %zu/1000, malformed cases %zu/%zu", bad, malformed_ok, cases.size())};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CTXPROBE_CLI + "\" --seed 42 " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome end_to_end_determinism() {
  const fs::path root = fs::temp_directory_path() / "ctxprobe_acceptance_e2e";
  fs::remove_all(root);
  std::string reports[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path d = root / ("run" + std::to_string(run));
    fs::create_directories(d);
    const auto p = [&](const char* s) { return (d / s).string(); };
    const int codes[] = {
        run_cli("fixtures --count 200 --out " + p("fx")),
        run_cli("build-dataset --data " + p("fx/dataset.jsonl") + " --out " + p("ds")),
        run_cli("features --examples " + p("ds/examples.jsonl") + " --dumps " + p("fx/dumps") + " --out " + p("feat")),
        run_cli("train --features " + p("feat/features.jsonl") + " --out " + p("probe")),
        run_cli("compress --ratio 0.2 --data " + p("fx/dataset.jsonl") + " --dumps " + p("fx/dumps") + " --probe " +
                p("probe/probe.json") + " --out " + p("cmp")),
        run_cli("evaluate --oracle-reader --results " + p("cmp/results.jsonl") + " --golds " + p("fx/golds.jsonl") +
                " --out " + p("report.json")),
    };
    for (int c : codes)
      if (c != 0) {
        fs::remove_all(root);
        return {false, fmt("run %d: a pipeline step exited with %d", run, c)};
      }
    reports[run] = slurp(d / "report.json");
  }
  fs::remove_all(root);
  const bool same = !reports[0].empty() && reports[0] == reports[1];
  return {same, fmt("report.json %zu bytes, identical=%s", reports[0].size(), same ? "yes" : "no")};
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome()>>> list = {
      {"probe-correctness", probe_correctness},
      {"normalization-suite", normalization_suite},
      {"budget-safety", budget_safety},
      {"probe-vs-raw-separation", probe_vs_raw},
      {"separable-probe-auc", separable_auc},
      {"mrmr-behavior", mrmr_behavior},
      {"reliance-filter-table", reliance_table},
      {"metric-oracles", metric_oracles},
      {"overlap-fixture", overlap_fixture},
      {"format-roundtrip", format_roundtrip},
      {"end-to-end-determinism", end_to_end_determinism},
  };
  return list;
}

}  // namespace
}  // namespace ctxprobe

int main(int argc, char** argv) {
  CLI::App app{"ctxprobe acceptance checks"};
  std::string only;
  bool list = false;
  app.add_option("--criterion", only, "Run a single criterion");
  app.add_flag("--list", list, "Print criterion names");
  CLI11_PARSE(app, argc, argv);

  const auto& all = ctxprobe::criteria();
  if (list) {
    for (const auto& [name, fn] : all) std::cout << name << "\n";
    return 0;
  }
  bool found = only.empty(), failed = false;
  for (const auto& [name, fn] : all) {
    if (!only.empty() && name != only) continue;
    found = true;
    ctxprobe::Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    failed = failed || !o.pass;
  }
  if (!found) {
    std::cerr << "unknown criterion '" << only << "'\n";
    return 2;
  }
  return failed ? 1 : 0;
}
