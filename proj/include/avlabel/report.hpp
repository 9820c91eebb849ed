#pragma once

// Scan-report data model and a streaming line-delimited reader.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "avlabel/error.hpp"
#include "avlabel/strings.hpp"

namespace avlabel {

struct AVResult {
  bool detected = false;
  std::string detection;  // empty when not detected

  bool operator==(const AVResult&) const = default;
};

/// One file's scan outcome across all AV products. Immutable once built by
/// normalize_report().
struct ScanReport {
  std::string file_hash;                   // 64 lowercase hex characters
  std::map<std::string, AVResult> scans;   // keyed by AV product name
  std::size_t num_detected = 0;
  std::size_t num_scanned = 0;

  bool operator==(const ScanReport&) const = default;
};

inline bool is_sha256_hex(std::string_view s) noexcept {
  if (s.size() != 64) return false;
  for (char c : s) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

namespace detail {

inline const nlohmann::json* find_path(const nlohmann::json& obj, std::initializer_list<const char*> path) {
  const nlohmann::json* cur = &obj;
  for (const char* key : path) {
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(key);
    if (it == cur->end()) return nullptr;
    cur = &*it;
  }
  return cur;
}

inline std::optional<std::string> string_field(const nlohmann::json& obj, std::initializer_list<const char*> keys) {
  for (const char* key : keys) {
    auto it = obj.find(key);
    if (it != obj.end() && it->is_string()) return it->get<std::string>();
  }
  return std::nullopt;
}

}  // namespace detail

/// Builds a ScanReport from a decoded record.
///
/// The minimal schema is `{"sha256": hex, "scans": {av: {"detected": bool,
/// "result": string|null}}}`. With `vt_format` the hash may also sit under
/// `resource`/`md5`-style aliases or `data.attributes`, the results map
/// under `last_analysis_results`, detection status may be given as
/// `category: "malicious"`, and the label under `label`/`detection`.
inline ScanReport normalize_report(const nlohmann::json& raw, bool vt_format = false) {
  if (!raw.is_object()) throw MalformedRecord("record is not an object");

  const nlohmann::json* root = &raw;
  if (vt_format) {
    if (auto* attrs = detail::find_path(raw, {"data", "attributes"}); attrs && attrs->is_object()) root = attrs;
  }

  std::optional<std::string> hash = vt_format ? detail::string_field(*root, {"sha256", "resource", "hash"})
                                              : detail::string_field(*root, {"sha256"});
  if (!hash) throw MalformedRecord("missing sha256");
  std::string file_hash = to_lower(trim(*hash));
  if (!is_sha256_hex(file_hash)) throw MalformedRecord("sha256 is not 64 hex characters: " + *hash);

  const nlohmann::json* scans = nullptr;
  if (auto it = root->find("scans"); it != root->end()) scans = &*it;
  if (!scans && vt_format) {
    if (auto it = root->find("last_analysis_results"); it != root->end()) scans = &*it;
  }
  if (!scans || !scans->is_object()) throw MalformedRecord("missing scans map");

  ScanReport report;
  report.file_hash = std::move(file_hash);
  for (const auto& [av_name, entry] : scans->items()) {
    if (!entry.is_object()) throw MalformedRecord("scan entry for " + av_name + " is not an object");
    AVResult result;
    if (auto it = entry.find("detected"); it != entry.end() && it->is_boolean()) {
      result.detected = it->get<bool>();
    } else if (vt_format) {
      auto category = detail::string_field(entry, {"category"});
      result.detected = category && (*category == "malicious" || *category == "suspicious");
    } else {
      throw MalformedRecord("scan entry for " + av_name + " lacks boolean 'detected'");
    }
    auto label = vt_format ? detail::string_field(entry, {"result", "label", "detection"})
                           : detail::string_field(entry, {"result"});
    if (result.detected && label) result.detection = std::string(trim(*label));
    report.scans.emplace(av_name, std::move(result));
  }
  report.num_scanned = report.scans.size();
  for (const auto& [_, r] : report.scans) report.num_detected += r.detected ? 1 : 0;
  return report;
}

/// Serializes in the minimal input schema; normalize_report() inverts it.
inline nlohmann::json to_json(const ScanReport& report) {
  nlohmann::json scans = nlohmann::json::object();
  for (const auto& [av, r] : report.scans) {
    scans[av] = {{"detected", r.detected},
                 {"result", r.detection.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.detection)}};
  }
  return {{"sha256", report.file_hash}, {"scans", std::move(scans)}};
}

/// Streams ScanReports from a line-delimited file in constant memory.
///
/// Malformed lines are skipped and counted. Once the stream is exhausted,
/// more than `max_malformed_fraction` malformed lines is fatal.
class ReportReader {
 public:
  explicit ReportReader(const std::string& path, bool vt_format = false, double max_malformed_fraction = 0.10)
      : path_(path), in_(path), vt_format_(vt_format), max_malformed_fraction_(max_malformed_fraction) {
    if (!in_) throw IoError("cannot open input: " + path);
  }

  /// Next valid report, or nullopt at end of input.
  std::optional<ScanReport> next() {
    std::string line;
    while (std::getline(in_, line)) {
      if (trim(line).empty()) continue;
      ++lines_;
      try {
        return normalize_report(nlohmann::json::parse(line), vt_format_);
      } catch (const nlohmann::json::exception& e) {
        note_malformed(std::string("invalid JSON: ") + e.what());
      } catch (const MalformedRecord& e) {
        note_malformed(e.what());
      }
    }
    if (in_.bad()) throw IoError("read error on " + path_);
    if (lines_ > 0 && static_cast<double>(malformed_) > max_malformed_fraction_ * static_cast<double>(lines_)) {
      throw IoError(path_ + ": " + std::to_string(malformed_) + " of " + std::to_string(lines_) +
                    " lines malformed (first: " + first_error_ + ")");
    }
    return std::nullopt;
  }

  std::size_t lines_read() const noexcept { return lines_; }
  std::size_t malformed() const noexcept { return malformed_; }
  const std::string& first_error() const noexcept { return first_error_; }

 private:
  void note_malformed(std::string msg) {
    if (malformed_++ == 0) first_error_ = "line " + std::to_string(lines_) + ": " + std::move(msg);
  }

  std::string path_;
  std::ifstream in_;
  bool vt_format_;
  double max_malformed_fraction_;
  std::size_t lines_ = 0;
  std::size_t malformed_ = 0;
  std::string first_error_;
};

}  // namespace avlabel
