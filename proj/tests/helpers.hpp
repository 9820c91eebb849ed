#pragma once

// Shared fixtures and independent reference computations for the tests.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "avlabel/pipeline.hpp"
#include "avlabel/report.hpp"

namespace testing_support {

using namespace avlabel;

inline std::string hash_of(std::size_t i) {
  char buf[65];
  std::snprintf(buf, sizeof buf, "%064zx", i);
  return buf;
}

inline ScanReport make_report(std::size_t id, const std::vector<std::pair<std::string, std::string>>& detections,
                              const std::vector<std::string>& clean = {}) {
  ScanReport r;
  r.file_hash = hash_of(id);
  for (const auto& [av, det] : detections) r.scans[av] = AVResult{true, det};
  for (const auto& av : clean) r.scans[av] = AVResult{false, ""};
  r.num_scanned = r.scans.size();
  for (const auto& [_, res] : r.scans) r.num_detected += res.detected ? 1 : 0;
  return r;
}

/// The fictitious nine-AV report: six products name the family under four
/// spellings, one names only behaviours, one is a generic ML verdict and
/// one names a different family. Two background reports give the canonical
/// spelling and the wrong family corpus-wide support.
inline std::vector<ScanReport> fig1_corpus() {
  return {
      make_report(1,
                  {{"Sentinel", "Trojan:Win32/Gamarue.A"},
                   {"Ironclad", "Trojan.Win32.Andromeda.xyz"},
                   {"Vigil", "Win32/Trojan.Androm.B"},
                   {"Quartz", "Win32:Wauchos-AB [Trj]"},
                   {"Lumen", "W32/Gamarue.C!tr"},
                   {"Orbit", "Win32.Trojan.Andromeda"},
                   {"Halcyon", "Trojan-Backdoor.Win32.Generic.abc"},
                   {"Corvid", "Malicious (score: 99)"},
                   {"Nimbus", "Trojan.Zbot!5.123"}},
                  {"Tessera"}),
      make_report(2, {{"Sentinel", "Trojan:Win32/Zbot.A"},
                      {"Ironclad", "Trojan.Win32.Zbot.abc"},
                      {"Vigil", "Win32/Zbot.B"}}),
      make_report(3, {{"Ironclad", "Trojan.Win32.Andromeda.qq"}, {"Orbit", "Win32.Trojan.Andromeda"}}),
  };
}

inline std::vector<AliasPair> fig1_aliases() {
  return {{"andromeda", "androm"}, {"andromeda", "gamarue"}, {"andromeda", "wauchos"}};
}

inline PipelineResources demo_resources() {
  PipelineConfig cfg;
  return PipelineResources::load(cfg);
}

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    namespace fs = std::filesystem;
    std::string templ = (fs::temp_directory_path() / "avlabel-test-XXXXXX").string();
    if (!mkdtemp(templ.data())) throw std::runtime_error("mkdtemp failed");
    path_ = templ;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Reference computations, written independently of the library code.

/// Levenshtein distance by plain recursion over suffixes with memoization.
inline std::size_t brute_levenshtein(const std::string& a, const std::string& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  auto lower = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best = std::min(go(i + 1, j), go(i, j + 1)) + 1;
    best = std::min(best, go(i + 1, j + 1) + (lower(a[i]) == lower(b[j]) ? 0 : 1));
    memo[key] = best;
    return best;
  };
  return go(0, 0);
}

}  // namespace testing_support
