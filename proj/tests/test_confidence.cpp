#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "avlabel/confidence.hpp"
#include "helpers.hpp"

using namespace avlabel;

namespace {

std::vector<TrainingExample> separable(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    TrainingExample e;
    e.features.top_posterior = u(rng);
    e.features.detect_ratio = u(rng);
    e.features.n_distinct_families = 1 + static_cast<double>(rng() % 4);
    e.correct = e.features.top_posterior > 0.6;
    out.push_back(e);
  }
  return out;
}

}  // namespace

TEST(Features, WorkedExample) {
  FamilyVotes votes = {{"A", "x"}, {"B", "x"}, {"C", "y"}, {"D", "z"}};
  std::vector<double> q = {0.5, 0.25, 0.25};
  auto f = extract_features(8, 10, votes, q);
  EXPECT_DOUBLE_EQ(f.n_distinct_families, 3);
  EXPECT_NEAR(f.family_entropy, 1.5, 1e-12);
  EXPECT_DOUBLE_EQ(f.detect_ratio, 0.8);
  EXPECT_DOUBLE_EQ(f.fam_per_detection, 0.5);
  EXPECT_DOUBLE_EQ(f.fam_per_scanned, 0.4);
  EXPECT_DOUBLE_EQ(f.top_posterior, 0.5);
  EXPECT_NEAR(f.posterior_entropy, 1.5, 1e-12);
}

TEST(Features, NoVotesNoScans) {
  auto f = extract_features(0, 0, {}, {});
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
  auto g = extract_features(3, 0, {{"A", "x"}}, std::vector<double>{1.0});
  EXPECT_EQ(g.detect_ratio, 0.0);
  EXPECT_DOUBLE_EQ(g.fam_per_detection, 1.0 / 3.0);
  EXPECT_EQ(g.family_entropy, 0.0);
  EXPECT_EQ(g.posterior_entropy, 0.0);
}

TEST(Training, SeparableDataLearned) {
  auto examples = separable(600, 1);
  auto res = train_model(examples, 5, {}, 3);
  ASSERT_EQ(res.folds.size(), 5u);
  EXPECT_GE(res.mean_accuracy(), 0.95);
  TrainingExample hi;
  hi.features.top_posterior = 0.95;
  TrainingExample lo;
  lo.features.top_posterior = 0.2;
  EXPECT_GT(res.model.score(hi.features), 0.9);
  EXPECT_LT(res.model.score(lo.features), 0.1);
  EXPECT_EQ(res.model.metadata()["examples"], 600);
}

TEST(Training, RandomLabelsStayNearBaseRate) {
  auto examples = separable(1000, 2);
  std::mt19937 rng(5);
  std::size_t pos = 0;
  for (auto& e : examples) {
    e.correct = rng() % 10 < 7;
    pos += e.correct;
  }
  auto res = train_model(examples, 5, {}, 1);
  const double base = static_cast<double>(pos) / 1000.0;
  for (const auto& f : res.folds) {
    EXPECT_NEAR(f.mean_predicted, base, 0.1);
    EXPECT_LT(f.accuracy, 0.8);
  }
}

TEST(Training, RejectsBadInputs) {
  auto examples = separable(100, 3);
  EXPECT_THROW(train_model(examples, 1), ConfigError);
  EXPECT_THROW(train_model(std::vector<TrainingExample>(examples.begin(), examples.begin() + 20), 5), TrainingError);
  for (auto& e : examples) e.correct = true;
  EXPECT_THROW(train_model(examples, 5), TrainingError);
}

TEST(Gbdt, ConstantLabelsPredictBaseRate) {
  std::vector<std::vector<double>> X;
  std::vector<std::uint8_t> y;
  for (int i = 0; i < 50; ++i) {
    X.push_back({static_cast<double>(i), 1.0});
    y.push_back(1);
  }
  GbdtClassifier model(GbdtParams{});
  model.fit(X, y);
  EXPECT_GT(model.predict_proba(X[0]), 0.99);
  EXPECT_GT(model.predict_proba(std::vector<double>{1e6, -3.0}), 0.99);
}

TEST(DifficultyModel, FeatureCountMismatch) {
  auto res = train_model(separable(200, 4), 2);
  std::vector<double> six(6, 0.5);
  EXPECT_THROW(res.model.score(std::span<const double>(six)), ScoringError);
}

TEST(DifficultyModel, SaveLoadRoundTrip) {
  auto res = train_model(separable(300, 5), 3);
  testing_support::TempDir dir;
  res.model.save(dir.file("m.json"));
  auto back = DifficultyModel::load(dir.file("m.json"));
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    ConfidenceFeatures f{u(rng) * 5, u(rng) * 2, u(rng), u(rng), u(rng), u(rng), u(rng)};
    EXPECT_DOUBLE_EQ(back.score(f), res.model.score(f));
  }
  EXPECT_EQ(back.metadata(), res.model.metadata());
  testing_support::write_text(dir.file("bad.json"), "{\"format\": 1");
  EXPECT_THROW(DifficultyModel::load(dir.file("bad.json")), ScoringError);
  EXPECT_THROW(DifficultyModel::load(dir.file("none.json")), ConfigError);
}

TEST(TrainingTsv, RoundTrip) {
  testing_support::TempDir dir;
  ConfidenceFeatures f{2, 1, 0.5, 0.25, 0.125, 0.75, 0.8112781244591328};
  testing_support::write_text(dir.file("t.tsv"), training_tsv_header() + "\n" + features_tsv_cells(f) + "\t1\n" +
                                                     features_tsv_cells(ConfidenceFeatures{}) + "\t0\n");
  auto rows = read_training_tsv(dir.file("t.tsv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].features.values(), f.values());
  EXPECT_TRUE(rows[0].correct);
  EXPECT_FALSE(rows[1].correct);
  testing_support::write_text(dir.file("bad.tsv"), "1\t2\t3\n");
  EXPECT_THROW(read_training_tsv(dir.file("bad.tsv")), MalformedRecord);
}

TEST(ThresholdFilter, RetainsAtOrAboveTau) {
  std::vector<LabelOutput> outs(4);
  const double conf[] = {0.2, 0.5, 0.7, 0.9};
  for (std::size_t i = 0; i < 4; ++i) outs[i].confidence = conf[i];
  std::vector<bool> correct = {false, true, false, true};
  auto [kept, s] = threshold_filter(outs, 0.5, &correct);
  EXPECT_EQ(kept.size(), 3u);
  EXPECT_EQ(s.retained, 3u);
  EXPECT_DOUBLE_EQ(s.retained_fraction, 0.75);
  EXPECT_DOUBLE_EQ(*s.retained_accuracy, 2.0 / 3.0);
  auto [none, s2] = threshold_filter(outs, 0.95, &correct);
  EXPECT_TRUE(none.empty());
  EXPECT_FALSE(s2.retained_accuracy);
  auto [all, s3] = threshold_filter(outs, 0.0);
  EXPECT_EQ(all.size(), 4u);
  EXPECT_FALSE(s3.retained_accuracy);
}

TEST(ThresholdFilter, RetainedSetShrinksWithTau) {
  std::mt19937 rng(7);
  std::vector<LabelOutput> outs(300);
  for (auto& o : outs) o.confidence = (rng() % 1000) / 1000.0;
  std::size_t prev = outs.size();
  for (double tau = 0.0; tau <= 1.0; tau += 0.05) {
    const std::size_t n = threshold_filter(outs, tau).first.size();
    EXPECT_LE(n, prev);
    prev = n;
  }
}
