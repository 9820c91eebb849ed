#pragma once

// Turns second-pass parses of one report into family votes and tags,
// counting correlated AV products once.

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "avlabel/category.hpp"
#include "avlabel/clusters.hpp"
#include "avlabel/error.hpp"
#include "avlabel/parsed.hpp"
#include "avlabel/strings.hpp"

namespace avlabel {

/// Canonical terms emitted by one AV product for one report.
struct AVTerms {
  std::string av_name;
  std::vector<Term> terms;

  bool operator==(const AVTerms&) const = default;
};

/// Keeps one occurrence per (cluster, token): the one from the
/// alphabetically first AV of the cluster. Output is sorted by AV name.
inline std::vector<AVTerms> collapse_correlated(std::vector<AVTerms> per_av, const AVClusterMap& clusters) {
  std::sort(per_av.begin(), per_av.end(), [](const AVTerms& a, const AVTerms& b) {
    auto la = to_lower(a.av_name);
    auto lb = to_lower(b.av_name);
    return la != lb ? la < lb : a.av_name < b.av_name;
  });
  std::set<std::pair<std::string, std::string>> seen;
  for (auto& av : per_av) {
    const std::string cluster = clusters.cluster_of(av.av_name);
    std::vector<Term> kept;
    kept.reserve(av.terms.size());
    for (auto& t : av.terms) {
      if (seen.emplace(cluster, t.key).second) kept.push_back(std::move(t));
    }
    av.terms = std::move(kept);
  }
  return per_av;
}

struct Vote {
  std::string annotator;  // AV product
  std::string family;     // canonical FAM token

  bool operator==(const Vote&) const = default;
};

using FamilyVotes = std::vector<Vote>;

/// Each AV votes for its first FAM term in detection order; AVs without a
/// FAM term abstain.
inline FamilyVotes extract_family_votes(const std::vector<AVTerms>& collapsed) {
  FamilyVotes votes;
  for (const auto& av : collapsed) {
    auto it = std::find_if(av.terms.begin(), av.terms.end(), [](const Term& t) { return t.category == Category::FAM; });
    if (it != av.terms.end()) votes.push_back(Vote{av.av_name, it->key});
  }
  return votes;
}

/// Lowercase, with every non-alphanumeric character replaced by '_'.
inline std::string normalize_tag(std::string_view token) {
  std::string out(token);
  for (char& c : out) c = is_alnum(c) ? ascii_lower(c) : '_';
  return out;
}

/// Minimum number of unrelated AV clusters a token needs to become a tag.
class TagThresholds {
 public:
  TagThresholds() {
    m_.fill(0);
    set(Category::BEH, 5);
    set(Category::FILE, 5);
    set(Category::VULN, 1);
    set(Category::PACK, 1);
    set(Category::GRP, 1);
  }

  void set(Category c, std::size_t m) {
    if (!is_taggable(c)) throw ConfigError("category " + std::string(to_string(c)) + " cannot be tagged");
    if (m < 1) throw ConfigError("tag threshold must be >= 1");
    m_[index_of(c)] = m;
  }

  std::size_t get(Category c) const noexcept { return m_[index_of(c)]; }

  /// Parses "CAT=N".
  void set_from_string(std::string_view spec) {
    auto eq = spec.find('=');
    if (eq == std::string_view::npos) throw ConfigError("tag threshold must look like CAT=N: " + std::string(spec));
    auto c = parse_category(trim(spec.substr(0, eq)));
    if (!c) throw ConfigError("unknown category in tag threshold: " + std::string(spec));
    std::size_t m = 0;
    try {
      m = std::stoul(std::string(trim(spec.substr(eq + 1))));
    } catch (const std::exception&) {
      throw ConfigError("bad tag threshold value: " + std::string(spec));
    }
    set(*c, m);
  }

 private:
  std::array<std::size_t, kNumCategories> m_{};
};

struct Tag {
  std::string tag;
  Category category = Category::BEH;
  std::size_t support = 0;  // unrelated AV clusters

  bool operator==(const Tag&) const = default;
};

using TagSet = std::vector<Tag>;

/// Tags every BEH/FILE/PACK/VULN/GRP token reported by at least M unrelated
/// clusters. Sorted by support (descending), then tag.
inline TagSet extract_tags(const std::vector<AVTerms>& collapsed, const TagThresholds& thresholds,
                           const AVClusterMap& clusters) {
  std::map<std::string, std::pair<Category, std::set<std::string>>> support;
  for (const auto& av : collapsed) {
    const std::string cluster = clusters.cluster_of(av.av_name);
    for (const auto& t : av.terms) {
      if (!is_taggable(t.category)) continue;
      auto [it, _] = support.try_emplace(normalize_tag(t.key), t.category, std::set<std::string>{});
      it->second.second.insert(cluster);
    }
  }
  TagSet tags;
  for (auto& [tag, entry] : support) {
    const auto& [category, supporters] = entry;
    if (supporters.size() >= thresholds.get(category)) tags.push_back(Tag{tag, category, supporters.size()});
  }
  std::stable_sort(tags.begin(), tags.end(), [](const Tag& a, const Tag& b) { return a.support > b.support; });
  return tags;
}

}  // namespace avlabel
