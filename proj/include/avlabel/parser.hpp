#pragma once

// Detection parsing: rule selection, fallback assignment, taxonomy override,
// vulnerability sequences, threat-group and placeholder handling.

#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "avlabel/category.hpp"
#include "avlabel/parsed.hpp"
#include "avlabel/rulebook.hpp"
#include "avlabel/strings.hpp"
#include "avlabel/taxonomy.hpp"
#include "avlabel/tokenize.hpp"

namespace avlabel {

/// Threat-group names and placeholder family names, lowercased.
struct SpecialLists {
  std::unordered_set<std::string> groups;
  std::unordered_set<std::string> placeholders;

  static SpecialLists load(const std::string& group_path, const std::string& placeholder_path) {
    SpecialLists lists;
    if (!group_path.empty()) {
      for (auto& w : read_word_list(group_path)) lists.groups.insert(std::move(w));
    }
    if (!placeholder_path.empty()) {
      for (auto& w : read_word_list(placeholder_path)) lists.placeholders.insert(std::move(w));
    }
    return lists;
  }
};

/// Threat groups become GRP; FAM placeholders are dropped (nullopt).
inline std::optional<Category> classify_special(std::string_view token, Category current, const SpecialLists& lists) {
  const std::string key = to_lower(token);
  if (lists.groups.count(key)) return Category::GRP;
  if (current == Category::FAM && lists.placeholders.count(key)) return std::nullopt;
  return current;
}

namespace detail {

inline bool all_digits(std::string_view s, std::size_t min_len, std::size_t max_len) noexcept {
  if (s.size() < min_len || s.size() > max_len) return false;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
  }
  return true;
}

inline bool iequals(std::string_view a, std::string_view b) noexcept {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (ascii_lower(a[i]) != ascii_lower(b[i])) return false;
  }
  return true;
}

inline bool istarts_with(std::string_view s, std::string_view prefix) noexcept {
  return s.size() >= prefix.size() && iequals(s.substr(0, prefix.size()), prefix);
}

struct VulnMatch {
  std::size_t length = 0;  // tokens consumed
  std::string id;
};

inline std::string cve_id(std::string_view year, std::string_view number) {
  return "cve_" + std::string(year) + "_" + std::string(number);
}

inline std::string ms_id(std::string_view year, std::string_view number) {
  return "ms" + std::string(year) + "_" + std::string(number);
}

/// Longest vulnerability identifier starting at tokens[i], if any.
inline std::optional<VulnMatch> match_vuln(const std::vector<std::string>& tokens, std::size_t i) {
  auto at = [&](std::size_t k) -> std::string_view { return k < tokens.size() ? std::string_view(tokens[k]) : ""; };
  std::string_view t = at(i);

  if (istarts_with(t, "cve")) {
    std::string_view rest = t.substr(3);
    if (rest.empty()) {
      // CVE 2017 0144 | CVE 20170144
      if (all_digits(at(i + 1), 4, 4) && all_digits(at(i + 2), 4, 7)) return VulnMatch{3, cve_id(at(i + 1), at(i + 2))};
      if (all_digits(at(i + 1), 8, 11)) return VulnMatch{2, cve_id(at(i + 1).substr(0, 4), at(i + 1).substr(4))};
    } else if (all_digits(rest, 4, 4) && all_digits(at(i + 1), 4, 7)) {
      // CVE2017 0144
      return VulnMatch{2, cve_id(rest, at(i + 1))};
    } else if (all_digits(rest, 8, 11)) {
      // CVE20170144
      return VulnMatch{1, cve_id(rest.substr(0, 4), rest.substr(4))};
    }
    return std::nullopt;
  }

  if (istarts_with(t, "ms")) {
    std::string_view rest = t.substr(2);
    if (rest.empty()) {
      // MS 08 067 | MS 08067
      if (all_digits(at(i + 1), 2, 2) && all_digits(at(i + 2), 3, 3)) return VulnMatch{3, ms_id(at(i + 1), at(i + 2))};
      if (all_digits(at(i + 1), 5, 5)) return VulnMatch{2, ms_id(at(i + 1).substr(0, 2), at(i + 1).substr(2))};
    } else if (all_digits(rest, 2, 2) && all_digits(at(i + 1), 3, 3)) {
      // MS08 067
      return VulnMatch{2, ms_id(rest, at(i + 1))};
    } else if (all_digits(rest, 5, 5)) {
      // MS08067
      return VulnMatch{1, ms_id(rest.substr(0, 2), rest.substr(2))};
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Finds CVE and MS-bulletin identifiers, possibly spread over several
/// tokens, and marks every covered token VULN. Spans do not overlap.
inline std::vector<VulnSpan> detect_vuln_sequence(const std::vector<std::string>& tokens,
                                                  std::vector<Category>& categories) {
  std::vector<VulnSpan> spans;
  for (std::size_t i = 0; i < tokens.size();) {
    if (auto m = detail::match_vuln(tokens, i)) {
      spans.push_back(VulnSpan{i, i + m->length, std::move(m->id)});
      for (std::size_t k = i; k < i + m->length; ++k) categories[k] = Category::VULN;
      i += m->length;
    } else {
      ++i;
    }
  }
  return spans;
}

/// Trailing tokens such as "xyz", "gen" or "0f3a": at most five characters,
/// either without uppercase letters or entirely hexadecimal.
inline bool looks_like_suffix(std::string_view token) noexcept {
  if (token.empty() || token.size() > 5) return false;
  bool no_upper = true;
  bool all_hex = true;
  for (char c : token) {
    if (c >= 'A' && c <= 'Z') no_upper = false;
    if (!is_hex(c)) all_hex = false;
  }
  return no_upper || all_hex;
}

inline constexpr std::size_t kMinInformativeLength = 2;

/// Parses one detection. Without a taxonomy this is the first-pass parse;
/// with one, every token takes its permanent category (unknown tokens PRE).
inline ParsedDetection parse_detection(std::string_view av_name, std::string_view detection, const Rulebook& rulebook,
                                       const Taxonomy* taxonomy = nullptr, const SpecialLists* lists = nullptr) {
  ParsedDetection out;
  out.av_name = std::string(av_name);
  out.tokenized = tokenize(trim(detection));
  const auto& tokens = out.tokenized.tokens;
  const std::size_t n = tokens.size();

  if (const ParseRule* rule = rulebook.select(av_name, out.tokenized.structure)) {
    out.categories = rule->apply(tokens);
    out.rule_matched = true;
  } else {
    out.categories.assign(n, Category::PRE);
    if (n >= 2 && looks_like_suffix(tokens.back())) out.categories.back() = Category::SUF;
  }

  if (taxonomy) {
    for (std::size_t i = 0; i < n; ++i) out.categories[i] = taxonomy->category_of(to_lower(tokens[i]));
  }

  out.vuln_spans = detect_vuln_sequence(tokens, out.categories);

  out.dropped.assign(n, false);
  std::size_t span = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (span < out.vuln_spans.size() && out.vuln_spans[span].end <= i) ++span;
    if (span < out.vuln_spans.size() && out.vuln_spans[span].begin <= i) continue;
    if (lists) {
      auto special = classify_special(tokens[i], out.categories[i], *lists);
      if (!special) {
        out.dropped[i] = true;
        continue;
      }
      out.categories[i] = *special;
    }
    if (tokens[i].size() < kMinInformativeLength) out.categories[i] = Category::SUF;
  }
  return out;
}

}  // namespace avlabel
