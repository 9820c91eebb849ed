#pragma once

// Token statistics from the first parsing pass and the permanent token
// taxonomy derived from them.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "avlabel/alias_map.hpp"
#include "avlabel/category.hpp"
#include "avlabel/clusters.hpp"
#include "avlabel/error.hpp"
#include "avlabel/parsed.hpp"

namespace avlabel {

struct TokenEntry {
  std::array<std::uint64_t, kNumCategories> counts{};
  std::set<std::string> av_support;
  std::uint64_t report_count = 0;

  std::uint64_t count(Category c) const noexcept { return counts[index_of(c)]; }
};

/// Per-token category counts, supporting AVs and report counts. Shards
/// merge by addition and set union, so the merge order does not matter.
class TokenStats {
 public:
  /// Adds all detections of one scan report.
  void add_report(std::span<const ParsedDetection> parses) {
    std::unordered_set<std::string> seen;
    for (const auto& p : parses) {
      for (const auto& term : p.terms()) {
        auto& e = entries_[term.key];
        ++e.counts[index_of(term.category)];
        e.av_support.insert(p.av_name);
        if (seen.insert(term.key).second) ++e.report_count;
      }
    }
  }

  void merge(const TokenStats& other) {
    for (const auto& [key, src] : other.entries_) {
      auto& dst = entries_[key];
      for (std::size_t c = 0; c < kNumCategories; ++c) dst.counts[c] += src.counts[c];
      dst.av_support.insert(src.av_support.begin(), src.av_support.end());
      dst.report_count += src.report_count;
    }
  }

  const TokenEntry* find(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::uint64_t report_count(const std::string& key) const {
    const auto* e = find(key);
    return e ? e->report_count : 0;
  }

  TokenEntry& entry(const std::string& key) { return entries_[key]; }

  const std::unordered_map<std::string, TokenEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::unordered_map<std::string, TokenEntry> entries_;
};

/// Accumulates stats over a sequence of reports, each a list of parses.
template <typename ReportParses>
TokenStats accumulate_stats(const ReportParses& reports) {
  TokenStats stats;
  for (const auto& parses : reports) stats.add_report(parses);
  return stats;
}

inline constexpr double kDefaultDominance = 0.9;

/// Permanent category for a token. The most frequent informative category
/// wins when it holds at least `dominance` of all informative assignments;
/// otherwise PRE if the token was ever PRE, else UNK.
inline Category finalize_category(const TokenEntry& entry, double dominance = kDefaultDominance) {
  std::uint64_t informative = 0;
  std::optional<Category> best;
  for (Category c : kAllCategories) {
    if (!is_informative(c)) continue;
    std::uint64_t n = entry.count(c);
    informative += n;
    if (n > 0 && (!best || n > entry.count(*best))) best = c;
  }
  if (informative > 0 && static_cast<double>(entry.count(*best)) >= dominance * static_cast<double>(informative)) {
    return *best;
  }
  return entry.count(Category::PRE) > 0 ? Category::PRE : Category::UNK;
}

/// Token -> permanent category. Unknown tokens read as PRE.
class Taxonomy {
 public:
  void set(const std::string& token, Category c) { map_[token] = c; }

  std::optional<Category> find(const std::string& token) const {
    auto it = map_.find(token);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  Category category_of(const std::string& token) const { return find(token).value_or(Category::PRE); }

  std::size_t size() const noexcept { return map_.size(); }
  const std::unordered_map<std::string, Category>& entries() const noexcept { return map_; }

  /// `<token>\t<CATEGORY>` lines sorted by token.
  void write_tsv(std::ostream& out) const {
    std::vector<std::pair<std::string, Category>> rows(map_.begin(), map_.end());
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [token, c] : rows) out << token << '\t' << to_string(c) << '\n';
  }

  void write_tsv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write taxonomy: " + path);
    write_tsv(out);
  }

 private:
  std::unordered_map<std::string, Category> map_;
};

inline Taxonomy build_taxonomy(const TokenStats& stats, double dominance = kDefaultDominance) {
  if (!(dominance > 0.0 && dominance <= 1.0)) throw ConfigError("dominance must be in (0, 1]");
  Taxonomy tax;
  for (const auto& [token, entry] : stats.entries()) tax.set(token, finalize_category(entry, dominance));
  return tax;
}

inline std::size_t count_clusters(const std::set<std::string>& avs, const AVClusterMap& clusters) {
  std::unordered_set<std::string> ids;
  for (const auto& av : avs) ids.insert(clusters.cluster_of(av));
  return ids.size();
}

inline constexpr std::size_t kMinFamilyClusters = 3;

/// Downgrades FAM tokens backed by fewer than `min_clusters` unrelated AV
/// clusters to UNK, unless they share an alias group with another FAM
/// token. Returns the downgraded tokens, sorted.
inline std::vector<std::string> downgrade_rare_fams(Taxonomy& taxonomy, const TokenStats& stats,
                                                    const AliasMap& aliases, const AVClusterMap& clusters,
                                                    std::size_t min_clusters = kMinFamilyClusters) {
  std::vector<std::string> downgraded;
  for (const auto& [token, category] : taxonomy.entries()) {
    if (category != Category::FAM) continue;
    const auto* entry = stats.find(token);
    std::size_t support = entry ? count_clusters(entry->av_support, clusters) : 0;
    if (support >= min_clusters) continue;
    bool aliased = false;
    for (const auto& member : aliases.members_of(token)) {
      if (member != token && taxonomy.find(member) == Category::FAM) {
        aliased = true;
        break;
      }
    }
    if (!aliased) downgraded.push_back(token);
  }
  std::sort(downgraded.begin(), downgraded.end());
  for (const auto& token : downgraded) taxonomy.set(token, Category::UNK);
  return downgraded;
}

}  // namespace avlabel
