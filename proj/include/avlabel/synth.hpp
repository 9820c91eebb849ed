#pragma once

// Seeded synthetic scan-report corpora with known ground truth.
//
// Detection strings follow the naming schemes of the demonstration AV
// products in data/rulebook.jsonl, so the demo rulebook parses them. Extra
// annotators beyond the demo products use unruled schemes and rely on the
// learned taxonomy.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "avlabel/error.hpp"
#include "avlabel/evaluate.hpp"
#include "avlabel/ibcc.hpp"
#include "avlabel/report.hpp"

namespace avlabel {

/// How one synthetic AV product behaves.
struct AnnotatorProfile {
  std::string name;
  double detect_rate = 0.9;       // P(detect) for an easy report
  double family_rate = 0.8;       // P(names a family | detected)
  double accuracy = 0.9;          // P(true family | names a family)
  double twin_bias = 0.8;         // P(the family's fixed look-alike | wrong)
  double placeholder_rate = 0.0;  // P(placeholder name | detected, no family)
  std::string copies;             // product whose family choice it tends to copy
  double copy_rate = 0.0;
};

inline constexpr std::array<const char*, 10> kDemoProducts = {"Sentinel", "Ironclad", "Tessera", "Vigil", "Nimbus",
                                                             "Quartz",   "Halcyon",  "Corvid",  "Lumen", "Orbit"};

struct ConfusionProfile {
  std::vector<AnnotatorProfile> annotators;

  /// Annotators that always detect and always name the true family.
  static ConfusionProfile identity(std::size_t n) {
    ConfusionProfile p;
    for (std::size_t k = 0; k < n; ++k) {
      AnnotatorProfile a;
      a.name = annotator_name(k);
      a.detect_rate = 1.0;
      a.family_rate = a.name == "Corvid" ? 0.0 : 1.0;
      a.accuracy = 1.0;
      a.twin_bias = 0.0;
      p.annotators.push_back(std::move(a));
    }
    return p;
  }

  /// A third of the annotators are reliable (90%); the rest are right 35%
  /// of the time and, when wrong, mostly name the family's look-alike.
  static ConfusionProfile heterogeneous(std::size_t n) {
    ConfusionProfile p;
    for (std::size_t k = 0; k < n; ++k) {
      AnnotatorProfile a;
      a.name = annotator_name(k);
      const bool reliable = k % 3 == 0;
      a.detect_rate = 0.55 + 0.4 * static_cast<double>((k * 7) % 10) / 9.0;
      a.family_rate = a.name == "Corvid" ? 0.0 : 0.5 + 0.4 * static_cast<double>((k * 3) % 10) / 9.0;
      a.accuracy = reliable ? 0.9 : 0.35;
      a.twin_bias = reliable ? 0.3 : 0.85;
      a.placeholder_rate = 0.15;
      if (a.name == "Tessera") {
        a.copies = "Ironclad";
        a.copy_rate = 0.8;
      } else if (a.name == "Halcyon") {
        a.copies = "Quartz";
        a.copy_rate = 0.8;
      }
      p.annotators.push_back(std::move(a));
    }
    return p;
  }

  static std::string annotator_name(std::size_t k) {
    if (k < kDemoProducts.size()) return kDemoProducts[k];
    char buf[32];
    std::snprintf(buf, sizeof buf, "Extra%02zu", k - kDemoProducts.size() + 1);
    return buf;
  }

  void validate() const {
    if (annotators.empty()) throw ConfigError("confusion profile has no annotators");
    bool can_name = false;
    for (const auto& a : annotators) {
      for (double v : {a.detect_rate, a.family_rate, a.accuracy, a.twin_bias, a.placeholder_rate, a.copy_rate}) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("annotator " + a.name + " has a rate outside [0, 1]");
      }
      can_name = can_name || (a.detect_rate > 0.0 && a.family_rate > 0.0);
    }
    if (!can_name) throw ConfigError("infeasible profile: no annotator can ever name a family");
  }
};

struct AliasProfile {
  double variant_rate = 0.1;  // fraction of families with a "<name>bot" spelling
  double variant_use = 0.4;   // fraction of annotators using that spelling
};

struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t n_reports = 1000;
  std::size_t n_families = 20;
  std::size_t n_annotators = 10;
  std::optional<ConfusionProfile> confusion;  // default: heterogeneous(n_annotators)
  AliasProfile aliases;
  double min_difficulty = 0.25;   // per-report detection multiplier drawn from [min, 1]
  double missing_scan_rate = 0.03;
  double exploit_rate = 0.02;     // reports that also carry a vulnerability detection
};

struct SynthCorpus {
  std::vector<ScanReport> reports;
  GroundTruth truth;
  std::vector<std::string> families;          // display names
  std::map<std::string, std::string> twin;    // family -> look-alike
  std::map<std::string, std::string> variant; // family -> alternate spelling
  ConfusionProfile profile;

  nlohmann::json confusions_json() const {
    nlohmann::json ann = nlohmann::json::array();
    for (const auto& a : profile.annotators) {
      ann.push_back({{"name", a.name},
                     {"detect_rate", a.detect_rate},
                     {"family_rate", a.family_rate},
                     {"accuracy", a.accuracy},
                     {"twin_bias", a.twin_bias},
                     {"placeholder_rate", a.placeholder_rate},
                     {"copies", a.copies},
                     {"copy_rate", a.copy_rate}});
    }
    return {{"annotators", std::move(ann)}, {"twin", twin}, {"variant", variant}};
  }
};

namespace synth_detail {

inline constexpr std::array<const char*, 36> kSyllables = {
    "an", "dro", "me", "ka", "zel", "ru", "wau", "chos", "tor", "vex", "lum", "qua", "sor", "bri", "dal", "fen",
    "gor", "hax", "jin", "kel", "mir", "nox", "pel", "rin", "sil", "tam", "ul", "var", "wen", "yor", "zan", "cor",
    "del", "fir", "lok", "pra"};

inline constexpr std::array<const char*, 6> kKinds = {"Trojan", "Backdoor", "Worm", "Ransom", "Downloader", "Spyware"};
inline constexpr std::array<const char*, 4> kSystems = {"Win32", "Win32", "Win64", "MSIL"};
inline constexpr std::array<const char*, 6> kPlaceholders = {"Artemis", "Razy", "Zusy", "Ulise", "Bulz", "Malgent"};

struct Rng {
  std::mt19937_64 engine;
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine); }
  bool chance(double p) { return uniform() < p; }
  template <typename C>
  const auto& pick(const C& c) {
    return c[index(c.size())];
  }
  std::string lower_suffix(std::size_t len) {
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s += static_cast<char>('a' + index(26));
    return s;
  }
  std::string hex(std::size_t len) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s += digits[index(16)];
    return s;
  }
  std::string upper_letter() { return std::string(1, static_cast<char>('A' + index(26))); }
};

inline std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

/// Unique pseudo-word family names that are not trivial variants of each other.
inline std::vector<std::string> family_names(std::size_t n, Rng& rng) {
  std::vector<std::string> out;
  std::unordered_set<std::string> taken;
  std::size_t attempts = 0;
  while (out.size() < n) {
    if (++attempts > 100000 * (n + 1)) throw ConfigError("cannot generate enough distinct family names");
    std::string w;
    const std::size_t parts = 2 + rng.index(2);
    for (std::size_t p = 0; p < parts; ++p) w += rng.pick(kSyllables);
    if (w.size() < 5 || w.size() > 10) continue;
    bool clash = taken.count(w) > 0;
    for (const auto& t : out) {
      if (clash) break;
      const auto lt = to_lower(t);
      clash = escore(lt, w) >= 0.5 || lt.find(w) != std::string::npos || w.find(lt) != std::string::npos;
    }
    if (clash) continue;
    taken.insert(w);
    out.push_back(capitalize(w));
  }
  return out;
}

/// Detection naming `family` (or a generic detection when nullopt) in the
/// scheme of AV product `av`.
inline std::string detection_for(const std::string& av, const std::optional<std::string>& family,
                                 const std::string& kind, const std::string& system, Rng& rng) {
  const std::string suffix = rng.lower_suffix(2 + rng.index(2));
  if (!family) {
    if (av == "Sentinel") return kind + ":" + system + "/Wacatac.B!ml";
    if (av == "Ironclad") return kind + "." + system + ".Generic";
    if (av == "Tessera") return "HEUR:" + kind + "." + system + ".Generic." + suffix;
    if (av == "Vigil") return system + "/Generic." + rng.upper_letter();
    if (av == "Nimbus") return kind + ".Gen";
    if (av == "Quartz") return system + ":Evo [" + std::string(kind == "Trojan" ? "Trj" : "Drp") + "]";
    if (av == "Halcyon") return kind + "." + system + ".Agent." + suffix;
    if (av == "Corvid") return "Malicious (score: " + std::to_string(60 + rng.index(40)) + ")";
    if (av == "Lumen") return "W32/Generic." + rng.upper_letter() + "!tr";
    if (av == "Orbit") return kind + " ( " + rng.hex(8) + " )";
    return kind + "/" + system + ".Generic";
  }
  const std::string& f = *family;
  if (av == "Sentinel") {
    switch (rng.index(3)) {
      case 0: return kind + ":" + system + "/" + f + "." + suffix;
      case 1: return kind + ":" + system + "/" + f;
      default: return kind + ":" + system + "/" + f + "!ml";
    }
  }
  if (av == "Ironclad") return kind + "." + system + "." + f + "." + suffix;
  if (av == "Tessera") {
    return rng.chance(0.5) ? "HEUR:" + kind + "." + system + "." + f + "." + suffix
                           : kind + "." + system + "." + f + "." + suffix;
  }
  if (av == "Vigil") {
    return rng.chance(0.5) ? system + "/" + f + "." + rng.upper_letter()
                           : system + "/" + kind + "." + f + "." + rng.upper_letter();
  }
  if (av == "Nimbus") return kind + "." + f + "!" + std::to_string(rng.index(10)) + "." + std::to_string(100 + rng.index(900));
  if (av == "Quartz") return system + ":" + f + "-" + rng.upper_letter() + rng.upper_letter() + " [Trj]";
  if (av == "Halcyon") {
    return rng.chance(0.5) ? kind + "." + system + "." + f + "." + suffix
                           : "Trojan-" + kind + "." + system + "." + f + "." + suffix;
  }
  if (av == "Lumen") {
    return rng.chance(0.5) ? "W32/" + f + "." + rng.upper_letter() + "!tr"
                           : "W32/" + f + "." + rng.upper_letter() + "!tr.dldr";
  }
  if (av == "Orbit") return system + "." + kind + "." + f;
  // Products without rules: two schemes, alternating by name.
  if (av.back() % 2 == 0) return kind + "/" + system + "." + f + "." + suffix;
  return f + "!" + kind + "." + suffix;
}

}  // namespace synth_detail

/// Generates a corpus with ground truth. Deterministic in the config.
inline SynthCorpus synth_generate(const SynthConfig& cfg) {
  if (cfg.n_reports == 0 || cfg.n_families == 0 || cfg.n_annotators == 0) {
    throw ConfigError("synthetic corpus sizes must be positive");
  }
  if (!(cfg.min_difficulty > 0.0 && cfg.min_difficulty <= 1.0)) throw ConfigError("min difficulty must be in (0, 1]");
  using namespace synth_detail;
  Rng rng{std::mt19937_64(cfg.seed)};

  SynthCorpus out;
  out.profile = cfg.confusion ? *cfg.confusion : ConfusionProfile::heterogeneous(cfg.n_annotators);
  out.profile.validate();
  const auto& annotators = out.profile.annotators;
  const std::size_t K = annotators.size();
  const std::size_t L = cfg.n_families;

  out.families = family_names(L, rng);
  std::vector<std::size_t> perm(L);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine);
  std::vector<std::size_t> twin(L);
  for (std::size_t p = 0; p < L; ++p) twin[perm[p]] = perm[(p + 1) % L];
  std::vector<std::string> kind(L);
  std::vector<std::string> system(L);
  std::vector<std::optional<std::string>> variant(L);
  std::vector<std::vector<bool>> uses_variant(L, std::vector<bool>(K, false));
  for (std::size_t j = 0; j < L; ++j) {
    out.twin[out.families[j]] = out.families[twin[j]];
    kind[j] = rng.pick(kKinds);
    system[j] = rng.pick(kSystems);
    if (rng.chance(cfg.aliases.variant_rate)) {
      variant[j] = out.families[j] + "bot";
      out.variant[out.families[j]] = *variant[j];
      out.truth.alias_groups.push_back({to_lower(out.families[j]), to_lower(*variant[j])});
      for (std::size_t k = 0; k < K; ++k) uses_variant[j][k] = rng.chance(cfg.aliases.variant_use);
    }
  }
  std::map<std::string, std::size_t> index_of_annotator;
  for (std::size_t k = 0; k < K; ++k) index_of_annotator[annotators[k].name] = k;

  // Family popularity is skewed, like real corpora.
  std::vector<double> weight(L);
  for (std::size_t j = 0; j < L; ++j) weight[j] = 1.0 / std::sqrt(static_cast<double>(j + 1));
  std::discrete_distribution<std::size_t> family_dist(weight.begin(), weight.end());

  out.reports.reserve(cfg.n_reports);
  for (std::size_t i = 0; i < cfg.n_reports; ++i) {
    const std::size_t truth = family_dist(rng.engine);
    const double ease = cfg.min_difficulty + (1.0 - cfg.min_difficulty) * rng.uniform();
    const bool exploit = rng.chance(cfg.exploit_rate);
    ScanReport report;
    report.file_hash = rng.hex(64);
    std::vector<std::optional<std::size_t>> named(K);
    for (std::size_t k = 0; k < K; ++k) {
      const auto& a = annotators[k];
      if (rng.chance(cfg.missing_scan_rate)) continue;
      AVResult result;
      result.detected = rng.chance(a.detect_rate * ease);
      if (result.detected) {
        std::optional<std::size_t> fam;
        std::optional<std::string> label;
        if (!a.copies.empty()) {
          auto src = index_of_annotator.find(a.copies);
          if (src != index_of_annotator.end() && src->second < k && named[src->second] && rng.chance(a.copy_rate)) {
            fam = named[src->second];
          }
        }
        if (!fam && rng.chance(a.family_rate)) {
          if (rng.chance(a.accuracy)) {
            fam = truth;
          } else if (rng.chance(a.twin_bias)) {
            fam = twin[truth];
          } else {
            fam = rng.index(L);
          }
        }
        if (fam) {
          named[k] = fam;
          label = (variant[*fam] && uses_variant[*fam][k]) ? *variant[*fam] : out.families[*fam];
        } else if (rng.chance(a.placeholder_rate)) {
          label = std::string(rng.pick(kPlaceholders));
        }
        const std::string& sys = system[truth];
        if (exploit && a.name == "Sentinel") {
          result.detection = "Exploit:" + sys + "/MS08067." + rng.lower_suffix(3);
        } else {
          result.detection = detection_for(a.name, label, fam ? kind[*fam] : kind[truth], sys, rng);
        }
      }
      report.scans.emplace(a.name, std::move(result));
    }
    report.num_scanned = report.scans.size();
    for (const auto& [_, r] : report.scans) report.num_detected += r.detected ? 1 : 0;
    out.truth.add(report.file_hash, out.families[truth]);
    out.reports.push_back(std::move(report));
  }
  return out;
}

/// Writes reports.jsonl, truth.tsv, truth_aliases.txt and confusions.json
/// under `dir` (which must exist).
inline void write_corpus(const SynthCorpus& corpus, const std::string& dir) {
  auto open = [&](const std::string& name) {
    std::ofstream f(dir + "/" + name);
    if (!f) throw IoError("cannot write " + dir + "/" + name);
    return f;
  };
  {
    auto f = open("reports.jsonl");
    for (const auto& r : corpus.reports) f << to_json(r).dump() << '\n';
  }
  {
    auto f = open("truth.tsv");
    for (const auto& r : corpus.reports) f << r.file_hash << '\t' << corpus.truth.family_of.at(r.file_hash) << '\n';
  }
  {
    auto f = open("truth_aliases.txt");
    for (const auto& g : corpus.truth.alias_groups) {
      for (std::size_t i = 0; i < g.size(); ++i) f << (i ? "," : "") << g[i];
      f << '\n';
    }
  }
  {
    auto f = open("confusions.json");
    f << corpus.confusions_json().dump(2) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Vote-level instances for exercising inference directly.

struct InstanceConfig {
  std::uint64_t seed = 1;
  std::size_t n_reports = 200;
  std::size_t n_families = 12;
  std::size_t n_annotators = 8;
  double vote_rate = 0.7;
  std::vector<double> accuracy;  // per annotator; default alternates 0.9 / 0.4
  double twin_bias = 0.7;
  bool cover_all_pairs = false;  // leading reports make every family pair co-occur
};

struct SyntheticInstance {
  InferenceInstance instance;
  std::vector<FamilyId> truth;  // per instance row
};

inline SyntheticInstance synth_instance(const InstanceConfig& cfg) {
  if (cfg.n_reports == 0 || cfg.n_families == 0 || cfg.n_annotators == 0) {
    throw ConfigError("instance sizes must be positive");
  }
  synth_detail::Rng rng{std::mt19937_64(cfg.seed)};
  const std::size_t L = cfg.n_families;
  const std::size_t K = cfg.n_annotators;
  std::vector<double> acc = cfg.accuracy;
  if (acc.empty()) {
    for (std::size_t k = 0; k < K; ++k) acc.push_back(k % 2 == 0 ? 0.9 : 0.4);
  }
  if (acc.size() != K) throw ConfigError("accuracy list must have one entry per annotator");

  SyntheticInstance out;
  auto& inst = out.instance;
  for (std::size_t j = 0; j < L; ++j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "f%03zu", j);
    inst.families.push_back(buf);
  }
  for (std::size_t k = 0; k < K; ++k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "a%03zu", k);
    inst.annotators.push_back(buf);
  }

  std::size_t row = 0;
  if (cfg.cover_all_pairs && L > 1) {
    if (K < 2) throw ConfigError("covering all family pairs needs at least 2 annotators");
    const std::size_t g = K / 2;
    std::vector<std::vector<FamilyId>> groups;
    for (std::size_t j = 0; j < L; j += g) {
      std::vector<FamilyId> grp;
      for (std::size_t m = j; m < std::min(L, j + g); ++m) grp.push_back(static_cast<FamilyId>(m));
      groups.push_back(std::move(grp));
    }
    auto emit = [&](const std::vector<FamilyId>& fams) {
      std::vector<IdVote> votes;
      for (std::size_t v = 0; v < fams.size(); ++v) votes.push_back(IdVote{static_cast<AnnotatorId>(v), fams[v]});
      out.truth.push_back(fams.front());
      inst.add_report(std::move(votes), row++);
    };
    if (groups.size() == 1) {
      emit(groups[0]);
    } else {
      for (std::size_t a = 0; a < groups.size(); ++a) {
        for (std::size_t b = a + 1; b < groups.size(); ++b) {
          auto both = groups[a];
          both.insert(both.end(), groups[b].begin(), groups[b].end());
          emit(both);
        }
      }
    }
    if (row > cfg.n_reports) throw ConfigError("too few reports to cover all family pairs");
  }

  while (row < cfg.n_reports) {
    const auto t = static_cast<FamilyId>(rng.index(L));
    std::vector<IdVote> votes;
    for (std::size_t k = 0; k < K; ++k) {
      if (!rng.chance(cfg.vote_rate)) continue;
      FamilyId l = t;
      if (!rng.chance(acc[k])) l = rng.chance(cfg.twin_bias) ? static_cast<FamilyId>((t + 1) % L) : static_cast<FamilyId>(rng.index(L));
      votes.push_back(IdVote{static_cast<AnnotatorId>(k), l});
    }
    if (votes.empty()) votes.push_back(IdVote{static_cast<AnnotatorId>(rng.index(K)), t});
    out.truth.push_back(t);
    inst.add_report(std::move(votes), row++);
  }
  return out;
}

}  // namespace avlabel
