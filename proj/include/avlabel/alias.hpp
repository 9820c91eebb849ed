#pragma once

// Alias discovery: trivial (spelling) aliases, sibling aliases from two-way
// co-occurrence, and parent-child aliases from one-way co-occurrence plus
// spelling similarity.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "avlabel/alias_map.hpp"
#include "avlabel/category.hpp"
#include "avlabel/error.hpp"
#include "avlabel/strings.hpp"
#include "avlabel/taxonomy.hpp"

namespace avlabel {

struct AliasParams {
  double sibling_cooccur = 0.95;     // S
  std::uint64_t sibling_support = 1000;  // T
  double min_escore = 0.6;           // E
  double parent_child_score = 0.5;   // C

  void validate() const {
    if (!(sibling_cooccur > 0.0 && sibling_cooccur <= 1.0)) throw ConfigError("S must be in (0, 1]");
    if (sibling_support < 1) throw ConfigError("T must be >= 1");
    if (!(min_escore > 0.0 && min_escore <= 1.0)) throw ConfigError("E must be in (0, 1]");
    if (!(parent_child_score > 0.0 && parent_child_score <= 1.0)) throw ConfigError("C must be in (0, 1]");
  }
};

using AliasPair = std::pair<std::string, std::string>;

/// Sparse per-report co-occurrence counts. A token or pair is counted at
/// most once per report; pairs are unordered.
class CooccurrenceIndex {
 public:
  template <typename Keys>
  void add_report(const Keys& keys) {
    scratch_.clear();
    for (const auto& k : keys) scratch_.push_back(intern(k));
    std::sort(scratch_.begin(), scratch_.end());
    scratch_.erase(std::unique(scratch_.begin(), scratch_.end()), scratch_.end());
    for (std::size_t a = 0; a < scratch_.size(); ++a) {
      ++singles_[scratch_[a]];
      for (std::size_t b = a + 1; b < scratch_.size(); ++b) ++pairs_[pair_key(scratch_[a], scratch_[b])];
    }
  }

  void merge(const CooccurrenceIndex& other) {
    std::vector<std::uint32_t> remap(other.names_.size());
    for (std::size_t i = 0; i < other.names_.size(); ++i) {
      remap[i] = intern(other.names_[i]);
      singles_[remap[i]] += other.singles_[i];
    }
    for (const auto& [key, n] : other.pairs_) {
      pairs_[pair_key(remap[key >> 32], remap[key & 0xffffffffu])] += n;
    }
  }

  /// |t|: reports containing the token.
  std::uint64_t count(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? 0 : singles_[it->second];
  }

  /// |(a, b)|: reports containing both.
  std::uint64_t joint(const std::string& a, const std::string& b) const {
    auto ia = ids_.find(a);
    auto ib = ids_.find(b);
    if (ia == ids_.end() || ib == ids_.end()) return 0;
    if (ia->second == ib->second) return singles_[ia->second];
    auto it = pairs_.find(pair_key(ia->second, ib->second));
    return it == pairs_.end() ? 0 : it->second;
  }

  /// Calls fn(a, b, joint) for every observed pair.
  template <typename Fn>
  void for_each_pair(Fn&& fn) const {
    for (const auto& [key, n] : pairs_) fn(names_[key >> 32], names_[key & 0xffffffffu], n);
  }

  std::size_t num_tokens() const noexcept { return names_.size(); }
  std::size_t num_pairs() const noexcept { return pairs_.size(); }

 private:
  static std::uint64_t pair_key(std::uint32_t a, std::uint32_t b) noexcept {
    if (b < a) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | b;
  }

  std::uint32_t intern(const std::string& token) {
    auto [it, inserted] = ids_.try_emplace(token, static_cast<std::uint32_t>(names_.size()));
    if (inserted) {
      names_.push_back(token);
      singles_.push_back(0);
    }
    return it->second;
  }

  std::unordered_map<std::string, std::uint32_t> ids_;
  std::vector<std::string> names_;
  std::vector<std::uint64_t> singles_;
  std::unordered_map<std::uint64_t, std::uint64_t> pairs_;
  std::vector<std::uint32_t> scratch_;
};

/// Builds an index over per-report token lists, keeping tokens for which
/// `in_scope(token)` holds.
template <typename Reports, typename Scope>
CooccurrenceIndex build_cooccurrence(const Reports& reports, Scope&& in_scope) {
  CooccurrenceIndex index;
  std::vector<std::string> kept;
  for (const auto& tokens : reports) {
    kept.clear();
    for (const auto& t : tokens) {
      if (in_scope(t)) kept.push_back(t);
    }
    index.add_report(kept);
  }
  return index;
}

/// coocur(a, b) = |(a, b)| / |a|. Not symmetric.
inline double coocur(const std::string& a, const std::string& b, const CooccurrenceIndex& index) {
  const std::uint64_t n = index.count(a);
  if (n == 0) throw UndefinedToken("token '" + a + "' occurs in no report");
  return static_cast<double>(index.joint(a, b)) / static_cast<double>(n);
}

/// Levenshtein distance with unit costs, ASCII case-insensitive.
inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t up = row[j];
      std::size_t sub = diag + (ascii_lower(a[i - 1]) == ascii_lower(b[j - 1]) ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[b.size()];
}

/// 1 - edit_distance / min length, clamped below at 0.
inline double escore(std::string_view a, std::string_view b) {
  const std::size_t shorter = std::min(a.size(), b.size());
  if (shorter == 0) return 0.0;
  const double s = 1.0 - static_cast<double>(edit_distance(a, b)) / static_cast<double>(shorter);
  return std::max(0.0, s);
}

inline std::vector<std::string> default_alias_substrings() { return {"bot", "net", "ware", "ransom", "crypt", "worm"}; }

inline constexpr std::size_t kMinTrivialBase = 3;

/// Same-category pairs where one token is the other plus one trailing
/// character, or plus one listed substring at either end. The shorter
/// token must have at least kMinTrivialBase characters. Pairs are
/// (shorter, longer), sorted.
inline std::vector<AliasPair> find_trivial_aliases(const std::unordered_map<std::string, Category>& tokens,
                                                   const std::vector<std::string>& substrings) {
  std::vector<AliasPair> out;
  auto try_base = [&](const std::string& longer, Category c, std::string base) {
    if (base.size() < kMinTrivialBase) return;
    auto it = tokens.find(base);
    if (it != tokens.end() && it->second == c) out.emplace_back(std::move(base), longer);
  };
  for (const auto& [token, c] : tokens) {
    if (token.size() > kMinTrivialBase) try_base(token, c, token.substr(0, token.size() - 1));
    for (const auto& sub : substrings) {
      if (sub.empty() || token.size() <= sub.size()) continue;
      if (token.compare(token.size() - sub.size(), sub.size(), sub) == 0) {
        try_base(token, c, token.substr(0, token.size() - sub.size()));
      }
      if (token.compare(0, sub.size(), sub) == 0) try_base(token, c, token.substr(sub.size()));
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Governing inequality for sibling aliases; symmetric in (a, b).
inline bool is_sibling_pair(const std::string& a, const std::string& b, const CooccurrenceIndex& index, double S,
                            std::uint64_t T) {
  const std::uint64_t na = index.count(a);
  const std::uint64_t nb = index.count(b);
  if (std::min(na, nb) <= T) return false;
  return std::min(coocur(a, b, index), coocur(b, a, index)) > S;
}

/// Sibling aliases among FAM tokens: both supported by more than T reports
/// and each co-occurring with the other in more than S of its reports.
inline std::vector<AliasPair> find_sibling_aliases(const std::unordered_set<std::string>& fam_tokens,
                                                   const CooccurrenceIndex& index, double S, std::uint64_t T) {
  std::vector<AliasPair> out;
  index.for_each_pair([&](const std::string& a, const std::string& b, std::uint64_t) {
    if (!fam_tokens.count(a) || !fam_tokens.count(b)) return;
    if (is_sibling_pair(a, b, index, S, T)) out.emplace_back(std::min(a, b), std::max(a, b));
  });
  std::sort(out.begin(), out.end());
  return out;
}

/// (child, parent) roles: the less frequent token is the child; on equal
/// frequency the lexicographically smaller token is the child.
inline std::pair<std::string, std::string> child_parent(const std::string& a, const std::string& b,
                                                        const CooccurrenceIndex& index) {
  const std::uint64_t na = index.count(a);
  const std::uint64_t nb = index.count(b);
  if (na < nb || (na == nb && a < b)) return {a, b};
  return {b, a};
}

inline bool is_parent_child_pair(const std::string& child, const std::string& parent, const CooccurrenceIndex& index,
                                 double E, double C) {
  const double e = escore(child, parent);
  if (e < E) return false;
  return coocur(child, parent, index) * e >= C;
}

/// Parent-child candidates over observed same-category pairs. Returned as
/// (child, parent), sorted.
inline std::vector<AliasPair> find_parent_child(const CooccurrenceIndex& index,
                                                const std::unordered_map<std::string, Category>& categories, double E,
                                                double C) {
  std::vector<AliasPair> out;
  index.for_each_pair([&](const std::string& a, const std::string& b, std::uint64_t) {
    auto ia = categories.find(a);
    auto ib = categories.find(b);
    if (ia == categories.end() || ib == categories.end() || ia->second != ib->second) return;
    // escore <= 1 - |len difference| / min length: skip pairs that cannot reach E.
    const double shorter = static_cast<double>(std::min(a.size(), b.size()));
    const double gap = static_cast<double>(a.size() > b.size() ? a.size() - b.size() : b.size() - a.size());
    if (shorter == 0 || 1.0 - gap / shorter < E) return;
    auto [child, parent] = child_parent(a, b, index);
    if (is_parent_child_pair(child, parent, index, E, C)) out.emplace_back(std::move(child), std::move(parent));
  });
  std::sort(out.begin(), out.end());
  return out;
}

struct AliasBuild {
  AliasMap map;
  std::vector<AliasPair> discarded;  // pairs that would have mixed categories
};

/// Unions every accepted pair. A pair whose two groups already carry
/// different categories is discarded. Tokens absent from the taxonomy take
/// the category of the group they join.
inline AliasBuild build_alias_map(const std::vector<std::vector<AliasPair>>& pair_lists, const Taxonomy& taxonomy,
                                  const TokenStats& stats) {
  AliasBuild out;
  std::unordered_map<std::string, Category> group_category;  // keyed by union-find root
  auto category_of_group = [&](const std::string& token) -> std::optional<Category> {
    const std::string& root = out.map.representative(token);
    if (auto it = group_category.find(root); it != group_category.end()) return it->second;
    if (auto c = taxonomy.find(token)) {
      group_category.emplace(root, *c);
      return c;
    }
    return std::nullopt;
  };
  for (const auto& pairs : pair_lists) {
    for (const auto& [a, b] : pairs) {
      auto ca = category_of_group(a);
      auto cb = category_of_group(b);
      if (ca && cb && *ca != *cb) {
        out.discarded.emplace_back(a, b);
        continue;
      }
      out.map.unite(a, b);
      if (ca || cb) group_category[out.map.representative(a)] = ca ? *ca : *cb;
    }
  }
  out.map.finalize([&](const std::string& t) { return stats.report_count(t); });
  return out;
}

/// `<token>\t<canonical>` for every non-self mapping, sorted.
inline void write_alias_tsv(const AliasMap& map, std::ostream& out) {
  for (const auto& [token, canonical] : map.mappings()) out << token << '\t' << canonical << '\n';
}

inline void write_alias_tsv(const AliasMap& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write aliases: " + path);
  write_alias_tsv(map, out);
}

/// Reads alias groups: lines of comma-separated equivalent names, or
/// `<token>\t<canonical>` lines as written by write_alias_tsv. Names are
/// lowercased. Returns the implied pairs.
inline std::vector<AliasPair> read_alias_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open alias file: " + path);
  std::vector<AliasPair> pairs;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const char sep = line.find('\t') != std::string::npos ? '\t' : ',';
    std::vector<std::string> names;
    for (auto& n : split(line, sep)) {
      auto t = to_lower(trim(n));
      if (!t.empty()) names.push_back(std::move(t));
    }
    for (std::size_t i = 1; i < names.size(); ++i) pairs.emplace_back(names[0], names[i]);
  }
  return pairs;
}

}  // namespace avlabel
