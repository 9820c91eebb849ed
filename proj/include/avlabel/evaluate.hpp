#pragma once

// Alias-aware accuracy against ground-truth family labels.

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "avlabel/alias.hpp"
#include "avlabel/alias_map.hpp"
#include "avlabel/error.hpp"
#include "avlabel/output.hpp"
#include "avlabel/strings.hpp"

namespace avlabel {

struct GroundTruth {
  std::unordered_map<std::string, std::string> family_of;  // hash -> family (lowercase)
  std::vector<std::vector<std::string>> alias_groups;      // lowercase names

  void add(const std::string& hash, const std::string& family) {
    auto [it, inserted] = family_of.emplace(to_lower(hash), to_lower(family));
    if (!inserted) throw ConfigError("duplicate hash in ground truth: " + hash);
  }

  /// `<hash>\t<family>` lines; optional alias file of comma-separated groups.
  static GroundTruth load(const std::string& truth_path, const std::string& alias_path = "") {
    std::ifstream in(truth_path);
    if (!in) throw IoError("cannot open ground truth: " + truth_path);
    GroundTruth gt;
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty() || line.front() == '#') continue;
      auto cells = split(line, '\t');
      if (cells.size() < 2) throw MalformedRecord("ground truth line needs hash and family: " + line);
      gt.add(std::string(trim(cells[0])), std::string(trim(cells[1])));
    }
    if (!alias_path.empty()) {
      std::ifstream ain(alias_path);
      if (!ain) throw IoError("cannot open alias groups: " + alias_path);
      while (std::getline(ain, line)) {
        if (trim(line).empty() || line.front() == '#') continue;
        std::vector<std::string> group;
        for (auto& n : split(line, ',')) {
          auto t = to_lower(trim(n));
          if (!t.empty()) group.push_back(std::move(t));
        }
        if (group.size() > 1) gt.alias_groups.push_back(std::move(group));
      }
    }
    return gt;
  }
};

struct FamilyBreakdown {
  std::size_t total = 0;
  std::size_t correct = 0;
};

struct EvalReport {
  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t missing = 0;  // truth hashes without a prediction
  double accuracy = 0;
  std::optional<double> impossible_fraction;  // truth family in no vote
  std::map<std::string, FamilyBreakdown> per_family;
  std::vector<bool> correct_by_prediction;    // parallel to the predictions
};

/// Union of the run's alias pairs and the truth's alias groups.
inline AliasMap evaluation_aliases(const std::vector<AliasPair>& run_aliases, const GroundTruth& truth) {
  AliasMap m;
  for (const auto& [a, b] : run_aliases) m.unite(to_lower(a), to_lower(b));
  for (const auto& g : truth.alias_groups) {
    for (std::size_t i = 1; i < g.size(); ++i) m.unite(g[0], g[i]);
  }
  m.finalize([](const std::string&) { return 0; });
  return m;
}

/// A prediction is correct when it shares an alias group with the true
/// family. `candidates`, when given, maps hash -> families voted for in
/// that report and enables the impossibility bound.
inline EvalReport evaluate(const std::vector<LabelOutput>& predictions, const GroundTruth& truth,
                           const std::vector<AliasPair>& run_aliases,
                           const std::unordered_map<std::string, std::vector<std::string>>* candidates = nullptr) {
  if (truth.family_of.empty()) throw EvaluationError("ground truth is empty");
  const AliasMap aliases = evaluation_aliases(run_aliases, truth);

  EvalReport r;
  r.correct_by_prediction.assign(predictions.size(), false);
  std::unordered_map<std::string, std::size_t> predicted;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto hash = to_lower(predictions[i].file_hash);
    predicted.emplace(hash, i);
    auto t = truth.family_of.find(hash);
    if (t != truth.family_of.end() && predictions[i].family) {
      r.correct_by_prediction[i] = aliases.same_group(to_lower(*predictions[i].family), t->second);
    }
  }

  std::size_t impossible = 0;
  for (const auto& [hash, family] : truth.family_of) {
    ++r.total;
    auto& fam = r.per_family[family];
    ++fam.total;
    auto p = predicted.find(hash);
    if (p == predicted.end()) {
      ++r.missing;
      ++impossible;
      continue;
    }
    if (r.correct_by_prediction[p->second]) {
      ++r.correct;
      ++fam.correct;
    }
    if (candidates) {
      bool present = false;
      if (auto c = candidates->find(hash); c != candidates->end()) {
        for (const auto& f : c->second) present = present || aliases.same_group(to_lower(f), family);
      }
      if (!present) ++impossible;
    }
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  if (candidates) r.impossible_fraction = static_cast<double>(impossible) / static_cast<double>(r.total);
  return r;
}

/// `<hash>\t<family>,<family>,...` lines as written by `label --output-candidates`.
inline std::unordered_map<std::string, std::vector<std::string>> read_candidates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open candidates file: " + path);
  std::unordered_map<std::string, std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto cells = split(line, '\t');
    auto& fams = out[to_lower(trim(cells[0]))];
    if (cells.size() > 1 && !trim(cells[1]).empty()) {
      for (auto& f : split(cells[1], ',')) fams.push_back(to_lower(trim(f)));
    }
  }
  return out;
}

}  // namespace avlabel
