#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "avlabel/error.hpp"
#include "avlabel/strings.hpp"

namespace avlabel {

/// A detection string split into alphanumeric tokens and the delimiter runs
/// around them. `separators` holds only the runs *between* tokens; any
/// leading or trailing run lives in `prefix`/`suffix`.
struct TokenizedDetection {
  std::vector<std::string> tokens;
  std::vector<std::string> separators;  // size tokens.size() - 1
  std::string prefix;
  std::string suffix;
  std::string structure;  // every token replaced by "TOK"

  std::string reassemble() const {
    std::string out = prefix;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i > 0) out += separators[i - 1];
      out += tokens[i];
    }
    out += suffix;
    return out;
  }

  bool operator==(const TokenizedDetection&) const = default;
};

inline constexpr std::string_view kTokenMarker = "TOK";

/// Splits on non-alphanumeric (ASCII) characters, preserving case.
/// Throws EmptyDetection when the string has no alphanumeric character.
inline TokenizedDetection tokenize(std::string_view detection) {
  TokenizedDetection out;
  std::string pending;
  std::size_t i = 0;
  while (i < detection.size() && !is_alnum(detection[i])) out.prefix += detection[i++];
  if (i == detection.size()) throw EmptyDetection("no alphanumeric characters in detection '" + std::string(detection) + "'");

  out.structure = out.prefix;
  while (i < detection.size()) {
    std::size_t start = i;
    while (i < detection.size() && is_alnum(detection[i])) ++i;
    out.tokens.emplace_back(detection.substr(start, i - start));
    out.structure += kTokenMarker;
    start = i;
    while (i < detection.size() && !is_alnum(detection[i])) ++i;
    std::string_view run = detection.substr(start, i - start);
    if (i == detection.size()) {
      out.suffix = std::string(run);
    } else {
      out.separators.emplace_back(run);
    }
    out.structure += run;
  }
  return out;
}

/// Number of TOK slots in a structure string. Structures are built only
/// from delimiter characters and the marker, so counting markers is exact.
inline std::size_t count_slots(std::string_view structure) noexcept {
  std::size_t n = 0;
  for (std::size_t pos = structure.find(kTokenMarker); pos != std::string_view::npos;
       pos = structure.find(kTokenMarker, pos + kTokenMarker.size())) {
    ++n;
  }
  return n;
}

}  // namespace avlabel
