#pragma once

// Structure-keyed parsing rules.
//
// A rule is selected by (AV product, detection structure) and assigns one
// category per token slot. Each slot is either a fixed category or a chain
// of anchored, case-insensitive regular-expression tests ending in a
// mandatory fallback category.
//
// File format: one JSON object per line, `#` comment lines allowed:
//
//   {"av": "Sentinel", "structure": "TOK:TOK/TOK.TOK",
//    "positions": ["BEH", "FILE", {"pattern": "ms\\d{5}", "then": "VULN", "else": "FAM"}, "SUF"]}
//
// `else` may itself be a `{pattern, then, else}` object to chain tests.

#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "avlabel/category.hpp"
#include "avlabel/error.hpp"
#include "avlabel/strings.hpp"
#include "avlabel/tokenize.hpp"

namespace avlabel {

struct PatternTest {
  std::string pattern;
  std::regex compiled;
  Category then;
};

struct PositionLogic {
  std::vector<PatternTest> tests;  // tried in order
  Category fallback = Category::PRE;

  static PositionLogic fixed(Category c) { return PositionLogic{{}, c}; }

  Category apply(const std::string& token) const {
    for (const auto& t : tests) {
      if (std::regex_match(token, t.compiled)) return t.then;
    }
    return fallback;
  }
};

struct ParseRule {
  std::string av_name;
  std::string structure;
  std::vector<PositionLogic> positions;

  std::vector<Category> apply(const std::vector<std::string>& tokens) const {
    std::vector<Category> out;
    out.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) out.push_back(positions[i].apply(tokens[i]));
    return out;
  }
};

inline PatternTest make_test(const std::string& pattern, Category then) {
  try {
    return PatternTest{pattern, std::regex(pattern, std::regex::ECMAScript | std::regex::icase | std::regex::optimize), then};
  } catch (const std::regex_error& e) {
    throw ConfigError("invalid rule pattern '" + pattern + "': " + e.what());
  }
}

namespace detail {

inline Category category_from_json(const nlohmann::json& j) {
  if (!j.is_string()) throw ConfigError("expected a category name, got " + j.dump());
  auto c = parse_category(j.get<std::string>());
  if (!c) throw ConfigError("unknown category '" + j.get<std::string>() + "'");
  return *c;
}

inline PositionLogic position_from_json(const nlohmann::json& j) {
  if (j.is_string()) return PositionLogic::fixed(category_from_json(j));
  PositionLogic logic;
  const nlohmann::json* cur = &j;
  while (cur->is_object()) {
    if (!cur->contains("pattern") || !cur->contains("then") || !cur->contains("else")) {
      throw ConfigError("predicate needs pattern, then and else: " + cur->dump());
    }
    if (!(*cur)["pattern"].is_string()) throw ConfigError("pattern must be a string: " + cur->dump());
    logic.tests.push_back(make_test((*cur)["pattern"].get<std::string>(), category_from_json((*cur)["then"])));
    cur = &(*cur)["else"];
  }
  logic.fallback = category_from_json(*cur);
  return logic;
}

}  // namespace detail

inline ParseRule rule_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("av") || !j.contains("structure") || !j.contains("positions")) {
    throw ConfigError("rule needs av, structure and positions: " + j.dump());
  }
  ParseRule rule;
  rule.av_name = j["av"].get<std::string>();
  rule.structure = j["structure"].get<std::string>();
  for (const auto& p : j["positions"]) rule.positions.push_back(detail::position_from_json(p));
  const std::size_t slots = count_slots(rule.structure);
  if (slots == 0 || slots != rule.positions.size()) {
    throw ConfigError("rule for " + rule.av_name + " '" + rule.structure + "' has " +
                      std::to_string(rule.positions.size()) + " positions for " + std::to_string(slots) + " slots");
  }
  return rule;
}

/// Immutable set of rules keyed by (lowercased AV name, structure).
class Rulebook {
 public:
  Rulebook() = default;

  void add(ParseRule rule) {
    auto key = std::make_pair(to_lower(rule.av_name), rule.structure);
    if (rules_.count(key)) {
      throw ConfigError("duplicate rule for AV '" + rule.av_name + "' structure '" + rule.structure + "'");
    }
    rules_.emplace(std::move(key), std::move(rule));
  }

  /// The rule for (av, structure), or nullptr.
  const ParseRule* select(std::string_view av_name, const std::string& structure) const {
    auto it = rules_.find(std::make_pair(to_lower(av_name), structure));
    return it == rules_.end() ? nullptr : &it->second;
  }

  std::size_t size() const noexcept { return rules_.size(); }

  static Rulebook from_stream(std::istream& in, const std::string& origin = "<stream>") {
    Rulebook book;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto body = trim(line);
      if (body.empty() || body.front() == '#') continue;
      try {
        book.add(rule_from_json(nlohmann::json::parse(body)));
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return book;
  }

  static Rulebook load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open rulebook: " + path);
    return from_stream(in, path);
  }

 private:
  std::map<std::pair<std::string, std::string>, ParseRule> rules_;
};

inline const ParseRule* select_rule(std::string_view av_name, const std::string& structure, const Rulebook& book) {
  return book.select(av_name, structure);
}

}  // namespace avlabel
