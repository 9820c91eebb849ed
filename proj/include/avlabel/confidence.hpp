#pragma once

// Report-difficulty features and the model that turns them into the
// probability that the inferred family is correct.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "avlabel/error.hpp"
#include "avlabel/gbdt.hpp"
#include "avlabel/output.hpp"
#include "avlabel/report.hpp"
#include "avlabel/votes.hpp"

namespace avlabel {

inline constexpr std::size_t kNumConfidenceFeatures = 7;

inline constexpr std::array<const char*, kNumConfidenceFeatures> kConfidenceFeatureNames = {
    "n_distinct_families", "family_entropy", "detect_ratio",   "fam_per_detection",
    "fam_per_scanned",     "top_posterior",  "posterior_entropy"};

struct ConfidenceFeatures {
  double n_distinct_families = 0;
  double family_entropy = 0;     // bits, over deduplicated votes
  double detect_ratio = 0;       // detected / scanned
  double fam_per_detection = 0;  // votes / detected
  double fam_per_scanned = 0;    // votes / scanned
  double top_posterior = 0;
  double posterior_entropy = 0;  // bits

  std::array<double, kNumConfidenceFeatures> values() const {
    return {n_distinct_families, family_entropy, detect_ratio, fam_per_detection,
            fam_per_scanned,     top_posterior,  posterior_entropy};
  }
};

/// Shannon entropy in bits of a non-negative weight vector (0 log 0 = 0).
inline double entropy_bits(std::span<const double> weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double w : weights) {
    if (w <= 0.0) continue;
    const double p = w / total;
    h -= p * std::log2(p);
  }
  return std::max(0.0, h);
}

/// `posterior` is the report's q row (empty for family-less reports).
inline ConfidenceFeatures extract_features(std::size_t num_detected, std::size_t num_scanned,
                                           const FamilyVotes& votes, std::span<const double> posterior) {
  ConfidenceFeatures f;
  std::map<std::string, double> counts;
  for (const auto& v : votes) counts[v.family] += 1.0;
  std::vector<double> weights;
  for (const auto& [_, n] : counts) weights.push_back(n);
  f.n_distinct_families = static_cast<double>(counts.size());
  f.family_entropy = entropy_bits(weights);
  const double n_votes = static_cast<double>(votes.size());
  if (num_scanned > 0) {
    f.detect_ratio = static_cast<double>(num_detected) / static_cast<double>(num_scanned);
    f.fam_per_scanned = n_votes / static_cast<double>(num_scanned);
  }
  if (num_detected > 0) f.fam_per_detection = n_votes / static_cast<double>(num_detected);
  if (!posterior.empty()) {
    f.top_posterior = *std::max_element(posterior.begin(), posterior.end());
    f.posterior_entropy = entropy_bits(posterior);
  }
  return f;
}

inline ConfidenceFeatures extract_features(const ScanReport& report, const FamilyVotes& votes,
                                           std::span<const double> posterior) {
  return extract_features(report.num_detected, report.num_scanned, votes, posterior);
}

struct TrainingExample {
  ConfidenceFeatures features;
  bool correct = false;
};

struct FoldReport {
  std::size_t size = 0;
  double accuracy = 0;        // threshold 0.5
  double brier = 0;
  double mean_predicted = 0;  // calibration: mean score ...
  double observed_rate = 0;   // ... against the observed correct rate
};

/// Gradient-boosted probability model over ConfidenceFeatures, serialized
/// as JSON with format version and feature ordering.
class DifficultyModel {
 public:
  static constexpr int kFormatVersion = 1;

  DifficultyModel() = default;
  explicit DifficultyModel(GbdtClassifier model) : model_(std::move(model)) {}

  double score(std::span<const double> features) const {
    if (features.size() != feature_names_.size()) {
      throw ScoringError("model expects " + std::to_string(feature_names_.size()) + " features, got " +
                         std::to_string(features.size()));
    }
    return model_.predict_proba(features);
  }

  double score(const ConfidenceFeatures& f) const {
    const auto v = f.values();
    return score(std::span<const double>(v));
  }

  const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }
  nlohmann::json& metadata() noexcept { return metadata_; }
  const nlohmann::json& metadata() const noexcept { return metadata_; }

  nlohmann::json to_json() const {
    return {{"format", "avlabel-confidence"},
            {"version", kFormatVersion},
            {"features", feature_names_},
            {"estimator", "gbdt"},
            {"model", model_.to_json()},
            {"training", metadata_}};
  }

  static DifficultyModel from_json(const nlohmann::json& j) {
    try {
      if (j.at("format") != "avlabel-confidence") throw ScoringError("not a confidence model");
      if (j.at("version").get<int>() != kFormatVersion) throw ScoringError("unsupported model version");
      DifficultyModel m(GbdtClassifier::from_json(j.at("model")));
      m.feature_names_ = j.at("features").get<std::vector<std::string>>();
      if (m.model_.max_feature() >= static_cast<int>(m.feature_names_.size())) {
        throw ScoringError("model splits on a feature it does not declare");
      }
      m.metadata_ = j.value("training", nlohmann::json::object());
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw ScoringError(std::string("malformed confidence model: ") + e.what());
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write model: " + path);
    out << to_json().dump(1) << '\n';
  }

  static DifficultyModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open confidence model: " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ScoringError(std::string("malformed confidence model: ") + e.what());
    }
  }

 private:
  GbdtClassifier model_;
  std::vector<std::string> feature_names_{kConfidenceFeatureNames.begin(), kConfidenceFeatureNames.end()};
  nlohmann::json metadata_ = nlohmann::json::object();
};

struct TrainResult {
  DifficultyModel model;
  std::vector<FoldReport> folds;

  double mean_accuracy() const {
    double s = 0;
    for (const auto& f : folds) s += f.accuracy;
    return folds.empty() ? 0.0 : s / static_cast<double>(folds.size());
  }
};

inline FoldReport evaluate_fold(const GbdtClassifier& model, const std::vector<std::vector<double>>& X,
                                const std::vector<std::uint8_t>& y) {
  FoldReport r;
  r.size = X.size();
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double p = model.predict_proba(X[i]);
    r.accuracy += ((p >= 0.5) == (y[i] == 1)) ? 1.0 : 0.0;
    r.brier += (p - y[i]) * (p - y[i]);
    r.mean_predicted += p;
    r.observed_rate += y[i];
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, r.size));
  r.accuracy /= n;
  r.brier /= n;
  r.mean_predicted /= n;
  r.observed_rate /= n;
  return r;
}

/// k-fold cross-validation report plus a final model fit on all examples.
inline TrainResult train_model(const std::vector<TrainingExample>& examples, std::size_t folds = 5,
                               const GbdtParams& params = {}, std::uint64_t seed = 0) {
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (examples.size() < 10 * folds) {
    throw TrainingError("need at least " + std::to_string(10 * folds) + " examples, got " +
                        std::to_string(examples.size()));
  }
  const auto positives = std::count_if(examples.begin(), examples.end(), [](const auto& e) { return e.correct; });
  if (positives == 0 || static_cast<std::size_t>(positives) == examples.size()) {
    throw TrainingError("training set contains a single class");
  }

  std::vector<std::vector<double>> X;
  std::vector<std::uint8_t> y;
  for (const auto& e : examples) {
    const auto v = e.features.values();
    X.emplace_back(v.begin(), v.end());
    y.push_back(e.correct ? 1 : 0);
  }

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  TrainResult result;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::vector<double>> Xtr;
    std::vector<std::vector<double>> Xte;
    std::vector<std::uint8_t> ytr;
    std::vector<std::uint8_t> yte;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const std::size_t i = order[pos];
      const bool held_out = pos % folds == f;
      (held_out ? Xte : Xtr).push_back(X[i]);
      (held_out ? yte : ytr).push_back(y[i]);
    }
    GbdtClassifier model(params);
    model.fit(Xtr, ytr);
    result.folds.push_back(evaluate_fold(model, Xte, yte));
  }

  GbdtClassifier full(params);
  full.fit(X, y);
  result.model = DifficultyModel(std::move(full));
  nlohmann::json cv = nlohmann::json::array();
  for (const auto& f : result.folds) {
    cv.push_back({{"size", f.size},
                  {"accuracy", f.accuracy},
                  {"brier", f.brier},
                  {"mean_predicted", f.mean_predicted},
                  {"observed_rate", f.observed_rate}});
  }
  result.model.metadata() = {{"examples", examples.size()},
                             {"positive_rate", static_cast<double>(positives) / static_cast<double>(examples.size())},
                             {"folds", folds},
                             {"seed", seed},
                             {"cross_validation", std::move(cv)}};
  return result;
}

/// Training file: header line then one row per report with the seven
/// features (in kConfidenceFeatureNames order) and a 0/1 `correct` column.
inline std::vector<TrainingExample> read_training_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training file: " + path);
  std::vector<TrainingExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || line.front() == '#') continue;
    auto cells = split(line, '\t');
    if (lineno == 1 && !cells.empty() && cells[0] == kConfidenceFeatureNames[0]) continue;
    if (cells.size() != kNumConfidenceFeatures + 1) {
      throw MalformedRecord(path + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(kNumConfidenceFeatures + 1) + " columns");
    }
    TrainingExample e;
    std::array<double, kNumConfidenceFeatures> v{};
    try {
      for (std::size_t c = 0; c < kNumConfidenceFeatures; ++c) v[c] = std::stod(cells[c]);
      e.correct = std::stoi(cells[kNumConfidenceFeatures]) != 0;
    } catch (const std::exception&) {
      throw MalformedRecord(path + ":" + std::to_string(lineno) + ": non-numeric cell");
    }
    e.features = ConfidenceFeatures{v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
    out.push_back(e);
  }
  return out;
}

inline std::string training_tsv_header() {
  std::string h;
  for (const char* n : kConfidenceFeatureNames) h += std::string(n) + '\t';
  return h + "correct";
}

inline std::string features_tsv_cells(const ConfidenceFeatures& f) {
  std::string out;
  const auto v = f.values();
  for (std::size_t c = 0; c < v.size(); ++c) {
    if (c) out += '\t';
    out += nlohmann::json(v[c]).dump();
  }
  return out;
}

struct FilterSummary {
  std::size_t total = 0;
  std::size_t retained = 0;
  double retained_fraction = 0;
  std::optional<double> retained_accuracy;  // when correctness is known
};

/// Keeps outputs with confidence >= tau. `correct`, when given, is parallel
/// to `outputs` and yields accuracy over the retained set.
inline std::pair<std::vector<LabelOutput>, FilterSummary> threshold_filter(
    const std::vector<LabelOutput>& outputs, double tau, const std::vector<bool>* correct = nullptr) {
  std::vector<LabelOutput> kept;
  FilterSummary s;
  s.total = outputs.size();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].confidence >= tau) {
      kept.push_back(outputs[i]);
      if (correct && (*correct)[i]) ++hits;
    }
  }
  s.retained = kept.size();
  s.retained_fraction = s.total ? static_cast<double>(s.retained) / static_cast<double>(s.total) : 0.0;
  if (correct && s.retained > 0) s.retained_accuracy = static_cast<double>(hits) / static_cast<double>(s.retained);
  return {std::move(kept), s};
}

}  // namespace avlabel
