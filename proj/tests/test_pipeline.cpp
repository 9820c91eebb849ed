#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "avlabel/evaluate.hpp"
#include "avlabel/pipeline.hpp"
#include "avlabel/scaling.hpp"
#include "avlabel/synth.hpp"
#include "helpers.hpp"

using namespace avlabel;
using namespace testing_support;

namespace {

PipelineResources fig1_resources() {
  auto res = demo_resources();
  res.extra_aliases = fig1_aliases();
  return res;
}

const Tag* find_tag(const LabelOutput& out, const std::string& name) {
  auto it = std::find_if(out.tags.begin(), out.tags.end(), [&](const Tag& t) { return t.tag == name; });
  return it == out.tags.end() ? nullptr : &*it;
}

double accuracy(const std::vector<LabelOutput>& outs, const GroundTruth& truth) {
  return evaluate(outs, truth, {}).accuracy;
}

SynthCorpus small_corpus(std::uint64_t seed, std::size_t n = 1500) {
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.n_reports = n;
  cfg.n_families = 15;
  cfg.n_annotators = 10;
  return synth_generate(cfg);
}

}  // namespace

TEST(Pipeline, NineProductExample) {
  PipelineConfig cfg;
  auto res = fig1_resources();
  PipelineArtifacts art;
  PipelineSummary summary;
  auto outs = label_reports(fig1_corpus(), cfg, res, &art, &summary);
  ASSERT_EQ(outs.size(), 3u);
  EXPECT_EQ(outs[0].family, std::optional<std::string>("andromeda"));
  EXPECT_EQ(outs[1].family, std::optional<std::string>("zbot"));
  EXPECT_EQ(outs[2].family, std::optional<std::string>("andromeda"));
  EXPECT_EQ(outs[0].num_detected, 9u);
  EXPECT_EQ(outs[0].num_scanned, 10u);
  const Tag* trojan = find_tag(outs[0], "trojan");
  ASSERT_NE(trojan, nullptr);
  EXPECT_EQ(trojan->support, 6u);
  const Tag* win32 = find_tag(outs[0], "win32");
  ASSERT_NE(win32, nullptr);
  EXPECT_EQ(win32->support, 5u);
  EXPECT_EQ(find_tag(outs[0], "backdoor"), nullptr);
  EXPECT_EQ(art.aliases.canonical("gamarue"), "andromeda");
  EXPECT_EQ(art.aliases.canonical("wauchos"), "andromeda");
  EXPECT_EQ(art.taxonomy.category_of("trojan"), Category::BEH);
  EXPECT_EQ(art.taxonomy.category_of("generic"), Category::PRE);
  EXPECT_EQ(summary.reports, 3u);
  EXPECT_EQ(summary.with_family, 3u);
  for (const auto& o : outs) {
    EXPECT_GT(o.confidence, 0.0);
    EXPECT_LE(o.confidence, 1.0);
  }

  cfg.tags.set(Category::BEH, 1);
  auto loose = label_reports(fig1_corpus(), cfg, res);
  const Tag* backdoor = find_tag(loose[0], "backdoor");
  ASSERT_NE(backdoor, nullptr);
  EXPECT_EQ(backdoor->support, 1u);
}

TEST(Pipeline, VoteDetailMatchesOutput) {
  PipelineConfig cfg;
  auto res = fig1_resources();
  std::vector<std::pair<LabelOutput, ReportDetail>> seen;
  std::vector<FamilyVotes> votes;
  run_pipeline(memory_source(fig1_corpus()), cfg, res, [&](const LabelOutput& o, const ReportDetail& d) {
    votes.push_back(*d.votes);
    EXPECT_EQ(d.posterior.size(), d.candidates.size());
    if (o.family) {
      auto it = std::find(d.candidates.begin(), d.candidates.end(), *o.family);
      ASSERT_NE(it, d.candidates.end());
      EXPECT_DOUBLE_EQ(o.confidence, d.features.top_posterior);
      EXPECT_DOUBLE_EQ(d.posterior[static_cast<std::size_t>(it - d.candidates.begin())], d.features.top_posterior);
    }
  });
  ASSERT_EQ(votes.size(), 3u);
  const auto andromeda_votes =
      std::count_if(votes[0].begin(), votes[0].end(), [](const Vote& v) { return v.family == "andromeda"; });
  EXPECT_EQ(andromeda_votes, 6);
  EXPECT_EQ(votes[0].size(), 7u);
}

TEST(Pipeline, EmptyInput) {
  PipelineConfig cfg;
  auto res = demo_resources();
  PipelineSummary summary;
  auto outs = label_reports({}, cfg, res, nullptr, &summary);
  EXPECT_TRUE(outs.empty());
  EXPECT_EQ(summary.reports, 0u);
}

TEST(Pipeline, ReportsWithoutFamiliesStillEmitted) {
  PipelineConfig cfg;
  auto res = demo_resources();
  std::vector<ScanReport> reports = {make_report(1, {}, {"Sentinel"}), make_report(2, {{"Corvid", "Malicious (score: 80)"}}),
                                     make_report(3, {{"Sentinel", "!!!"}})};
  PipelineSummary summary;
  auto outs = label_reports(reports, cfg, res, nullptr, &summary);
  ASSERT_EQ(outs.size(), 3u);
  for (const auto& o : outs) {
    EXPECT_FALSE(o.family);
    EXPECT_EQ(o.confidence, 0.0);
  }
  EXPECT_EQ(summary.empty_detections, 1u);
}

TEST(Pipeline, RejectsBadConfig) {
  PipelineConfig cfg;
  cfg.threads = 0;
  auto res = demo_resources();
  EXPECT_THROW(label_reports(fig1_corpus(), cfg, res), ConfigError);
  EXPECT_THROW(parse_vote_mode("median"), ConfigError);
  PipelineConfig missing;
  missing.rulebook_path = "/nonexistent/rules.jsonl";
  EXPECT_THROW(PipelineResources::load(missing), ConfigError);
}

TEST(PipelineProperty, OneOutputPerInputInOrder) {
  auto corpus = small_corpus(3, 800);
  PipelineConfig cfg;
  cfg.batch_size = 97;
  auto res = demo_resources();
  auto outs = label_reports(corpus.reports, cfg, res);
  ASSERT_EQ(outs.size(), corpus.reports.size());
  for (std::size_t i = 0; i < outs.size(); ++i) EXPECT_EQ(outs[i].file_hash, corpus.reports[i].file_hash);
}

TEST(PipelineProperty, DeterministicAcrossRunsThreadsAndSpill) {
  auto corpus = small_corpus(4, 1200);
  auto res = demo_resources();
  PipelineConfig base;
  base.batch_size = 128;
  auto a = label_reports(corpus.reports, base, res);
  auto b = label_reports(corpus.reports, base, res);
  EXPECT_EQ(a, b);

  PipelineConfig threaded = base;
  threaded.threads = 3;
  auto c = label_reports(corpus.reports, threaded, res);
  ASSERT_EQ(a.size(), c.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].family, c[i].family);
    EXPECT_EQ(a[i].tags, c[i].tags);
    EXPECT_NEAR(a[i].confidence, c[i].confidence, 1e-9);
  }

  TempDir dir;
  PipelineConfig spill = base;
  spill.memory_budget = 4096;
  spill.temp_dir = dir.path().string();
  PipelineSummary summary;
  auto d = label_reports(corpus.reports, spill, res, nullptr, &summary);
  EXPECT_TRUE(summary.spilled);
  ASSERT_EQ(a.size(), d.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].file_hash, d[i].file_hash);
    EXPECT_EQ(a[i].family, d[i].family);
    EXPECT_EQ(a[i].confidence, d[i].confidence);
    ASSERT_EQ(a[i].tags.size(), d[i].tags.size());
    for (std::size_t t = 0; t < a[i].tags.size(); ++t) {
      EXPECT_EQ(a[i].tags[t].tag, d[i].tags[t].tag);
      EXPECT_EQ(a[i].tags[t].support, d[i].tags[t].support);
    }
  }
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
}

TEST(PipelineProperty, OutputJsonRoundTrip) {
  auto corpus = small_corpus(5, 300);
  PipelineConfig cfg;
  auto res = demo_resources();
  for (const auto& o : label_reports(corpus.reports, cfg, res)) {
    auto back = label_output_from_json(nlohmann::json::parse(to_json(o).dump()));
    EXPECT_EQ(back.file_hash, o.file_hash);
    EXPECT_EQ(back.family, o.family);
    EXPECT_EQ(back.confidence, o.confidence);
    EXPECT_EQ(back.tags.size(), o.tags.size());
  }
}

TEST(Evaluate, AliasesCountAsCorrect) {
  GroundTruth truth;
  truth.add(hash_of(1), "Andromeda");
  truth.add(hash_of(2), "Zbot");
  truth.add(hash_of(3), "Emotet");
  std::vector<LabelOutput> preds(3);
  preds[0] = LabelOutput{hash_of(1), 5, 6, "gamarue", 0.9, {}};
  preds[1] = LabelOutput{hash_of(2), 1, 6, std::nullopt, 0.0, {}};
  preds[2] = LabelOutput{hash_of(3), 4, 6, "emotet", 0.8, {}};
  auto r = evaluate(preds, truth, {{"gamarue", "andromeda"}});
  EXPECT_EQ(r.total, 3u);
  EXPECT_EQ(r.correct, 2u);
  EXPECT_NEAR(r.accuracy, 2.0 / 3.0, 1e-12);
  EXPECT_EQ(r.correct_by_prediction, (std::vector<bool>{true, false, true}));
  EXPECT_FALSE(r.impossible_fraction);
  auto without = evaluate(preds, truth, {});
  EXPECT_EQ(without.correct, 1u);
  EXPECT_EQ(r.per_family.at("andromeda").correct, 1u);
  EXPECT_THROW(truth.add(hash_of(1), "x"), ConfigError);
}

TEST(Evaluate, EmptyTruthAndMissingPredictions) {
  EXPECT_THROW(evaluate({}, GroundTruth{}, {}), EvaluationError);
  GroundTruth truth;
  truth.add(hash_of(1), "a");
  truth.add(hash_of(2), "b");
  auto r = evaluate({LabelOutput{hash_of(1), 1, 1, "a", 1.0, {}}}, truth, {});
  EXPECT_EQ(r.missing, 1u);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
}

TEST(Evaluate, ImpossibilityBound) {
  GroundTruth truth;
  truth.add(hash_of(1), "a");
  truth.add(hash_of(2), "b");
  truth.add(hash_of(3), "c");
  truth.add(hash_of(4), "d");
  std::vector<LabelOutput> preds = {{hash_of(1), 1, 1, "a", 1, {}}, {hash_of(2), 1, 1, "x", 1, {}},
                                    {hash_of(3), 1, 1, "y", 1, {}}};
  std::unordered_map<std::string, std::vector<std::string>> cands = {
      {hash_of(1), {"a"}}, {hash_of(2), {"x", "b"}}, {hash_of(3), {"y"}}};
  auto r = evaluate(preds, truth, {}, &cands);
  ASSERT_TRUE(r.impossible_fraction);
  EXPECT_DOUBLE_EQ(*r.impossible_fraction, 0.5);
  EXPECT_LE(r.accuracy, 1.0 - *r.impossible_fraction);
}

TEST(Evaluate, TruthFilesWithAliasGroups) {
  TempDir dir;
  write_text(dir.file("t.tsv"), hash_of(1) + "\tGamarue\n");
  write_text(dir.file("a.txt"), "andromeda, gamarue\n");
  auto truth = GroundTruth::load(dir.file("t.tsv"), dir.file("a.txt"));
  auto r = evaluate({LabelOutput{hash_of(1), 1, 1, "andromeda", 1, {}}}, truth, {});
  EXPECT_EQ(r.correct, 1u);
  write_text(dir.file("bad.tsv"), "onlyhash\n");
  EXPECT_THROW(GroundTruth::load(dir.file("bad.tsv")), MalformedRecord);
}

TEST(Synth, DeterministicForSeed) {
  auto a = small_corpus(9, 200);
  auto b = small_corpus(9, 200);
  auto c = small_corpus(10, 200);
  EXPECT_EQ(a.reports, b.reports);
  EXPECT_EQ(a.truth.family_of, b.truth.family_of);
  EXPECT_NE(a.reports, c.reports);
  TempDir dir;
  write_corpus(a, dir.path().string());
  auto truth = GroundTruth::load(dir.file("truth.tsv"), dir.file("truth_aliases.txt"));
  EXPECT_EQ(truth.family_of.size(), 200u);
  ReportReader reader(dir.file("reports.jsonl"));
  std::size_t n = 0;
  while (auto r = reader.next()) EXPECT_EQ(*r, a.reports[n++]);
  EXPECT_EQ(n, 200u);
}

TEST(Synth, RejectsInvalidProfile) {
  SynthConfig cfg;
  cfg.n_annotators = 3;
  ConfusionProfile p = ConfusionProfile::identity(3);
  p.annotators[0].accuracy = 1.5;
  cfg.confusion = p;
  EXPECT_THROW(synth_generate(cfg), ConfigError);
}

TEST(Synth, PerfectAnnotatorsGiveExactLabels) {
  SynthConfig cfg;
  cfg.seed = 2;
  cfg.n_reports = 600;
  cfg.n_families = 12;
  cfg.n_annotators = 10;
  cfg.confusion = ConfusionProfile::identity(10);
  cfg.aliases.variant_rate = 0.0;
  cfg.missing_scan_rate = 0.0;
  cfg.min_difficulty = 1.0;
  auto corpus = synth_generate(cfg);
  PipelineConfig pc;
  auto res = demo_resources();
  EXPECT_DOUBLE_EQ(accuracy(label_reports(corpus.reports, pc, res), corpus.truth), 1.0);
}

TEST(Synth, InferenceBeatsPluralityOnNoisyAnnotators) {
  auto corpus = small_corpus(21, 3000);
  auto res = demo_resources();
  PipelineConfig ibcc;
  PipelineConfig plural;
  plural.vote_mode = VoteMode::plurality;
  const double a_ibcc = accuracy(label_reports(corpus.reports, ibcc, res), corpus.truth);
  const double a_plural = accuracy(label_reports(corpus.reports, plural, res), corpus.truth);
  EXPECT_GT(a_ibcc, a_plural);
}

TEST(Scaling, QuadraticFitRecoversCoefficients) {
  std::vector<double> x = {1000, 2000, 4000, 8000};
  std::vector<double> y;
  for (double v : x) y.push_back(0.5 + 1e-3 * v + 2e-8 * v * v);
  auto fit = fit_quadratic(x, y);
  ASSERT_TRUE(fit);
  EXPECT_NEAR(fit->a, 0.5, 1e-9);
  EXPECT_NEAR(fit->b, 1e-3, 1e-12);
  EXPECT_NEAR(fit->c, 2e-8, 1e-15);
  EXPECT_FALSE(fit_quadratic({1, 2}, {1, 2}));
  EXPECT_FALSE(fit_quadratic({1, 1, 1}, {1, 2, 3}));
}

TEST(Scaling, ProbeRowsAndErrors) {
  PipelineConfig cfg;
  auto res = demo_resources();
  ScalingConfig sc;
  sc.n_families = 10;
  sc.n_annotators = 8;
  EXPECT_THROW(scaling_probe({}, sc, cfg, res), ConfigError);
  auto report = scaling_probe({300}, sc, cfg, res);
  ASSERT_EQ(report.rows.size(), 1u);
  EXPECT_FALSE(report.fit);
  EXPECT_EQ(report.rows[0].reports, 300u);
  EXPECT_GT(report.rows[0].voted_reports, 0u);
  EXPECT_GT(report.rows[0].iterations, 0u);
  EXPECT_TRUE(report.to_json().contains("rows"));
}
