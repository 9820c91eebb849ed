#pragma once

#include <string>
#include <vector>

#include "avlabel/category.hpp"
#include "avlabel/strings.hpp"
#include "avlabel/tokenize.hpp"

namespace avlabel {

/// Half-open token range merged into one vulnerability identifier.
struct VulnSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string id;  // cve_YYYY_NNNN or msYY_NNN

  bool operator==(const VulnSpan&) const = default;
};

/// A unit of meaning extracted from a detection: a single token, or a whole
/// vulnerability span. `key` is the lowercased lookup form.
struct Term {
  std::string key;
  Category category = Category::UNK;

  bool operator==(const Term&) const = default;
};

struct ParsedDetection {
  std::string av_name;
  TokenizedDetection tokenized;
  std::vector<Category> categories;  // one per token
  std::vector<VulnSpan> vuln_spans;
  std::vector<bool> dropped;         // placeholder families, one flag per token
  bool rule_matched = false;

  const std::vector<std::string>& tokens() const noexcept { return tokenized.tokens; }

  /// Terms in detection order: vulnerability spans collapse to their
  /// identifier, dropped tokens are omitted.
  std::vector<Term> terms() const {
    std::vector<Term> out;
    std::size_t span = 0;
    for (std::size_t i = 0; i < tokens().size();) {
      if (span < vuln_spans.size() && vuln_spans[span].begin == i) {
        out.push_back(Term{vuln_spans[span].id, Category::VULN});
        i = vuln_spans[span].end;
        ++span;
        continue;
      }
      if (!dropped[i]) out.push_back(Term{to_lower(tokens()[i]), categories[i]});
      ++i;
    }
    return out;
  }
};

}  // namespace avlabel
