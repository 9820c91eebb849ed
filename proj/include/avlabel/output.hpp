#pragma once

#include <optional>
#include <ostream>
#include <string>

#include <json.hpp>

#include "avlabel/error.hpp"
#include "avlabel/strings.hpp"
#include "avlabel/votes.hpp"

namespace avlabel {

/// Per-file result: hash, detection counts, family with confidence, tags.
/// A missing family always carries confidence 0.
struct LabelOutput {
  std::string file_hash;
  std::size_t num_detected = 0;
  std::size_t num_scanned = 0;
  std::optional<std::string> family;
  double confidence = 0.0;
  TagSet tags;

  bool operator==(const LabelOutput&) const = default;
};

inline nlohmann::json to_json(const LabelOutput& out) {
  nlohmann::json tags = nlohmann::json::array();
  for (const auto& t : out.tags) tags.push_back({{"tag", t.tag}, {"count", t.support}});
  return {{"sha256", out.file_hash},
          {"detected", std::to_string(out.num_detected) + "/" + std::to_string(out.num_scanned)},
          {"family", out.family ? nlohmann::json(*out.family) : nlohmann::json(nullptr)},
          {"confidence", out.confidence},
          {"tags", std::move(tags)}};
}

inline LabelOutput label_output_from_json(const nlohmann::json& j) {
  LabelOutput out;
  out.file_hash = j.at("sha256").get<std::string>();
  const auto detected = j.at("detected").get<std::string>();
  const auto slash = detected.find('/');
  if (slash == std::string::npos) throw MalformedRecord("bad detected field: " + detected);
  out.num_detected = std::stoul(detected.substr(0, slash));
  out.num_scanned = std::stoul(detected.substr(slash + 1));
  if (!j.at("family").is_null()) out.family = j.at("family").get<std::string>();
  out.confidence = j.at("confidence").get<double>();
  for (const auto& t : j.at("tags")) {
    out.tags.push_back(Tag{t.at("tag").get<std::string>(), Category::BEH, t.at("count").get<std::size_t>()});
  }
  return out;
}

/// Tab-separated: sha256, detected/scanned, family (empty if none),
/// confidence, comma-separated tag|count list.
inline std::string to_tsv(const LabelOutput& out) {
  std::string line = tsv_safe(out.file_hash) + '\t' + std::to_string(out.num_detected) + '/' +
                     std::to_string(out.num_scanned) + '\t' + (out.family ? tsv_safe(*out.family) : "") + '\t';
  line += nlohmann::json(out.confidence).dump();
  line += '\t';
  for (std::size_t i = 0; i < out.tags.size(); ++i) {
    if (i) line += ',';
    line += out.tags[i].tag + '|' + std::to_string(out.tags[i].support);
  }
  return line;
}

}  // namespace avlabel
