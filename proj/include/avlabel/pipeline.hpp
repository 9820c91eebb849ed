#pragma once

// Two-pass labeling pipeline: parse and learn the taxonomy and aliases,
// reparse with them, assemble votes and tags, infer families, score
// confidence.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "avlabel/alias.hpp"
#include "avlabel/alias_map.hpp"
#include "avlabel/clusters.hpp"
#include "avlabel/confidence.hpp"
#include "avlabel/error.hpp"
#include "avlabel/ibcc.hpp"
#include "avlabel/output.hpp"
#include "avlabel/parser.hpp"
#include "avlabel/report.hpp"
#include "avlabel/rulebook.hpp"
#include "avlabel/taxonomy.hpp"
#include "avlabel/votes.hpp"

#ifndef AVLABEL_DATA_DIR
#define AVLABEL_DATA_DIR "data"
#endif

namespace avlabel {

enum class VoteMode { ibcc, plurality };

inline std::string_view to_string(VoteMode m) noexcept { return m == VoteMode::ibcc ? "ibcc" : "plurality"; }

inline VoteMode parse_vote_mode(std::string_view s) {
  if (s == "ibcc") return VoteMode::ibcc;
  if (s == "plurality") return VoteMode::plurality;
  throw ConfigError("vote mode must be ibcc or plurality, got " + std::string(s));
}

inline std::string default_data_path(const std::string& file) { return std::string(AVLABEL_DATA_DIR) + "/" + file; }

struct PipelineConfig {
  std::string rulebook_path = default_data_path("rulebook.jsonl");
  std::string groups_path = default_data_path("groups.txt");
  std::string placeholders_path = default_data_path("placeholders.txt");
  std::string clusters_path = default_data_path("clusters.txt");
  std::string substrings_path = default_data_path("alias_substrings.txt");
  std::string alias_path;             // extra alias groups merged into the learned map
  std::string confidence_model_path;  // empty: confidence is the top posterior

  AliasParams alias;
  TagThresholds tags;
  double dominance = kDefaultDominance;
  std::size_t min_family_clusters = kMinFamilyClusters;
  InferenceConfig ibcc;
  VoteMode vote_mode = VoteMode::ibcc;

  bool vt_format = false;
  double max_malformed_fraction = 0.10;
  std::size_t threads = 1;
  std::size_t batch_size = 2048;
  std::string temp_dir;
  std::size_t memory_budget = 0;  // bytes of buffered pass-2 records; 0 = unlimited

  void validate() const {
    alias.validate();
    ibcc.validate();
    if (!(dominance > 0.0 && dominance <= 1.0)) throw ConfigError("dominance must be in (0, 1]");
    if (min_family_clusters < 1) throw ConfigError("minimum family clusters must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(max_malformed_fraction >= 0.0 && max_malformed_fraction <= 1.0)) {
      throw ConfigError("malformed fraction must be in [0, 1]");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json thresholds = nlohmann::json::object();
    for (Category c : kAllCategories) {
      if (is_taggable(c)) thresholds[std::string(avlabel::to_string(c))] = tags.get(c);
    }
    return {{"rulebook", rulebook_path},
            {"groups", groups_path},
            {"placeholders", placeholders_path},
            {"clusters", clusters_path},
            {"alias_substrings", substrings_path},
            {"alias_file", alias_path},
            {"confidence_model", confidence_model_path},
            {"S", alias.sibling_cooccur},
            {"T", alias.sibling_support},
            {"E", alias.min_escore},
            {"C", alias.parent_child_score},
            {"tag_thresholds", thresholds},
            {"dominance", dominance},
            {"min_family_clusters", min_family_clusters},
            {"vote_mode", avlabel::to_string(vote_mode)},
            {"ibcc_tol", ibcc.tol},
            {"ibcc_max_iter", ibcc.max_iter},
            {"ibcc_base_mass", ibcc.prior.base_mass},
            {"ibcc_diag_boost", ibcc.prior.diag_boost},
            {"ibcc_class_prior", ibcc.prior.nu_base},
            {"vt_format", vt_format},
            {"max_malformed_fraction", max_malformed_fraction},
            {"threads", threads},
            {"batch_size", batch_size},
            {"temp_dir", temp_dir},
            {"memory_budget", memory_budget}};
  }
};

/// Everything loaded from configuration files.
struct PipelineResources {
  Rulebook rulebook;
  SpecialLists lists;
  AVClusterMap clusters;
  std::vector<std::string> substrings = default_alias_substrings();
  std::vector<AliasPair> extra_aliases;
  std::optional<DifficultyModel> model;

  static PipelineResources load(const PipelineConfig& cfg) {
    PipelineResources r;
    r.rulebook = Rulebook::load(cfg.rulebook_path);
    r.lists = SpecialLists::load(cfg.groups_path, cfg.placeholders_path);
    if (!cfg.clusters_path.empty()) r.clusters = AVClusterMap::load(cfg.clusters_path);
    if (!cfg.substrings_path.empty()) r.substrings = read_word_list(cfg.substrings_path);
    if (!cfg.alias_path.empty()) r.extra_aliases = read_alias_pairs(cfg.alias_path);
    if (!cfg.confidence_model_path.empty()) r.model = DifficultyModel::load(cfg.confidence_model_path);
    return r;
  }
};

/// Feeds every report to the callback, in order. Called once per pass.
using ReportSource = std::function<void(const std::function<void(ScanReport&&)>&)>;

inline ReportSource file_source(const std::string& path, bool vt_format, double max_malformed_fraction,
                                std::size_t* malformed = nullptr) {
  return [=](const std::function<void(ScanReport&&)>& sink) {
    ReportReader reader(path, vt_format, max_malformed_fraction);
    while (auto r = reader.next()) sink(std::move(*r));
    if (malformed) *malformed = reader.malformed();
  };
}

inline ReportSource memory_source(const std::vector<ScanReport>& reports) {
  return [&reports](const std::function<void(ScanReport&&)>& sink) {
    for (const auto& r : reports) sink(ScanReport(r));
  };
}

/// Per-report data handed to the output sink alongside the label.
struct ReportDetail {
  const FamilyVotes* votes = nullptr;
  std::span<const double> posterior;  // over `candidates`
  std::vector<std::string> candidates;
  ConfidenceFeatures features;
};

using OutputSink = std::function<void(const LabelOutput&, const ReportDetail&)>;

struct PipelineSummary {
  std::size_t reports = 0;
  std::size_t detections = 0;
  std::size_t empty_detections = 0;
  std::size_t malformed = 0;
  std::size_t with_family = 0;
  std::size_t taxonomy_size = 0;
  std::size_t alias_mappings = 0;
  std::size_t discarded_alias_pairs = 0;
  std::vector<std::string> downgraded;
  std::size_t inference_iterations = 0;
  bool inference_converged = true;
  double seconds_pass1 = 0;
  double seconds_pass2 = 0;
  double seconds_inference = 0;
  bool spilled = false;

  nlohmann::json to_json() const {
    return {{"reports", reports},
            {"detections", detections},
            {"empty_detections", empty_detections},
            {"malformed_lines", malformed},
            {"reports_with_family", with_family},
            {"taxonomy_size", taxonomy_size},
            {"alias_mappings", alias_mappings},
            {"discarded_alias_pairs", discarded_alias_pairs},
            {"downgraded_families", downgraded.size()},
            {"inference_iterations", inference_iterations},
            {"inference_converged", inference_converged},
            {"seconds_pass1", seconds_pass1},
            {"seconds_pass2", seconds_pass2},
            {"seconds_inference", seconds_inference},
            {"spilled_to_disk", spilled}};
  }
};

/// Learned artifacts kept after a run.
struct PipelineArtifacts {
  Taxonomy taxonomy;
  AliasMap aliases;
  std::vector<AliasPair> alias_pairs;  // every non-self (token, canonical) mapping
};

namespace detail {

/// Pass-1 parse: every detected AV's detection, with special lists applied.
/// Detections without any alphanumeric character are skipped.
inline std::vector<ParsedDetection> parse_report(const ScanReport& report, const Rulebook& rulebook,
                                                 const SpecialLists& lists, const Taxonomy* taxonomy,
                                                 std::size_t& empty) {
  std::vector<ParsedDetection> out;
  for (const auto& [av, result] : report.scans) {
    if (!result.detected || result.detection.empty()) continue;
    try {
      out.push_back(parse_detection(av, result.detection, rulebook, taxonomy, &lists));
    } catch (const EmptyDetection&) {
      ++empty;
    }
  }
  return out;
}

struct FirstPassShard {
  TokenStats stats;
  CooccurrenceIndex cooc;
  std::size_t detections = 0;
  std::size_t empty = 0;
  std::vector<std::string> keys;

  void add(const ScanReport& report, const PipelineResources& res) {
    auto parses = parse_report(report, res.rulebook, res.lists, nullptr, empty);
    detections += parses.size();
    stats.add_report(parses);
    keys.clear();
    for (const auto& p : parses) {
      for (auto& t : p.terms()) {
        if (t.category != Category::SUF) keys.push_back(std::move(t.key));
      }
    }
    cooc.add_report(keys);
  }
};

struct SecondPassRecord {
  FamilyVotes votes;
  TagSet tags;
};

inline SecondPassRecord second_pass(const ScanReport& report, const PipelineResources& res, const Taxonomy& taxonomy,
                                    const AliasMap& aliases, const TagThresholds& thresholds) {
  std::size_t empty = 0;
  auto parses = parse_report(report, res.rulebook, res.lists, &taxonomy, empty);
  std::vector<AVTerms> per_av;
  per_av.reserve(parses.size());
  for (const auto& p : parses) {
    AVTerms av{p.av_name, p.terms()};
    for (auto& t : av.terms) t.key = aliases.canonical(t.key);
    per_av.push_back(std::move(av));
  }
  auto collapsed = collapse_correlated(std::move(per_av), res.clusters);
  return SecondPassRecord{extract_family_votes(collapsed), extract_tags(collapsed, thresholds, res.clusters)};
}

/// Runs `fn(report, slot)` over a batch, sharded across threads. Results go
/// into slots by position, so the outcome does not depend on scheduling.
template <typename Fn>
void for_batch(std::vector<ScanReport>& batch, std::size_t threads, Fn&& fn) {
  for_shards(batch.size(), threads, [&](std::size_t s, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) fn(s, i);
  });
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Buffer of (hash, counts, tags) records kept in input order. Above the
/// memory budget the buffer moves to a temporary file and later records
/// are appended there.
class RecordSpool {
 public:
  RecordSpool(std::string temp_dir, std::size_t budget) : temp_dir_(std::move(temp_dir)), budget_(budget) {}
  RecordSpool(const RecordSpool&) = delete;
  RecordSpool& operator=(const RecordSpool&) = delete;
  ~RecordSpool() {
    if (!path_.empty()) {
      file_.close();
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }

  void push(LabelOutput rec) {
    ++count_;
    if (file_.is_open()) {
      write(rec);
      return;
    }
    bytes_ += estimate(rec);
    memory_.push_back(std::move(rec));
    if (budget_ > 0 && bytes_ > budget_) spill();
  }

  /// Visits records in insertion order.
  void for_each(const std::function<void(LabelOutput&&)>& fn) {
    if (!file_.is_open()) {
      for (auto& r : memory_) fn(std::move(r));
      return;
    }
    file_.flush();
    std::ifstream in(path_);
    if (!in) throw IoError("cannot reread spool file " + path_);
    std::string line;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      LabelOutput rec;
      rec.file_hash = j.at(0).get<std::string>();
      rec.num_detected = j.at(1).get<std::size_t>();
      rec.num_scanned = j.at(2).get<std::size_t>();
      for (const auto& t : j.at(3)) {
        rec.tags.push_back(Tag{t.at(0).get<std::string>(), *parse_category(t.at(1).get<std::string>()),
                               t.at(2).get<std::size_t>()});
      }
      fn(std::move(rec));
    }
  }

  bool spilled() const noexcept { return file_.is_open(); }
  std::size_t size() const noexcept { return count_; }

 private:
  static std::size_t estimate(const LabelOutput& r) {
    std::size_t n = sizeof(LabelOutput) + r.file_hash.size();
    for (const auto& t : r.tags) n += sizeof(Tag) + t.tag.size();
    return n;
  }

  void spill() {
    namespace fs = std::filesystem;
    const fs::path dir = temp_dir_.empty() ? fs::temp_directory_path() : fs::path(temp_dir_);
    char name[64];
    std::snprintf(name, sizeof name, "avlabel-spool-%p.jsonl", static_cast<const void*>(this));
    path_ = (dir / name).string();
    file_.open(path_, std::ios::out | std::ios::trunc);
    if (!file_) throw IoError("cannot create spool file in " + dir.string());
    for (const auto& r : memory_) write(r);
    std::vector<LabelOutput>().swap(memory_);
  }

  void write(const LabelOutput& r) {
    nlohmann::json tags = nlohmann::json::array();
    for (const auto& t : r.tags) tags.push_back({t.tag, avlabel::to_string(t.category), t.support});
    file_ << nlohmann::json::array({r.file_hash, r.num_detected, r.num_scanned, std::move(tags)}).dump() << '\n';
    if (!file_) throw IoError("write failed on spool file " + path_);
  }

  std::string temp_dir_;
  std::size_t budget_;
  std::size_t bytes_ = 0;
  std::size_t count_ = 0;
  std::vector<LabelOutput> memory_;
  std::string path_;
  std::fstream file_;
};

/// Learns the taxonomy and alias map from first-pass statistics.
inline PipelineArtifacts learn_artifacts(const TokenStats& stats, const CooccurrenceIndex& cooc,
                                         const PipelineResources& res, const PipelineConfig& cfg,
                                         PipelineSummary* summary = nullptr) {
  PipelineArtifacts art;
  art.taxonomy = build_taxonomy(stats, cfg.dominance);
  std::unordered_set<std::string> fams;
  for (const auto& [token, c] : art.taxonomy.entries()) {
    if (c == Category::FAM) fams.insert(token);
  }
  std::vector<std::vector<AliasPair>> lists;
  lists.push_back(res.extra_aliases);
  lists.push_back(find_trivial_aliases(art.taxonomy.entries(), res.substrings));
  lists.push_back(find_sibling_aliases(fams, cooc, cfg.alias.sibling_cooccur, cfg.alias.sibling_support));
  lists.push_back(find_parent_child(cooc, art.taxonomy.entries(), cfg.alias.min_escore, cfg.alias.parent_child_score));
  AliasBuild built = build_alias_map(lists, art.taxonomy, stats);
  auto downgraded = downgrade_rare_fams(art.taxonomy, stats, built.map, res.clusters, cfg.min_family_clusters);
  art.aliases = std::move(built.map);
  art.alias_pairs = art.aliases.mappings();
  if (summary) {
    summary->taxonomy_size = art.taxonomy.size();
    summary->alias_mappings = art.alias_pairs.size();
    summary->discarded_alias_pairs = built.discarded.size();
    summary->downgraded = std::move(downgraded);
  }
  return art;
}

/// Runs both passes over `source`, then inference and scoring. Every
/// report produces exactly one call to `sink`, in input order.
inline PipelineSummary run_pipeline(const ReportSource& source, const PipelineConfig& cfg,
                                    const PipelineResources& res, const OutputSink& sink,
                                    PipelineArtifacts* artifacts_out = nullptr) {
  cfg.validate();
  PipelineSummary summary;
  const std::size_t threads = cfg.threads;

  // Pass 1.
  auto t0 = std::chrono::steady_clock::now();
  std::vector<detail::FirstPassShard> shards(threads);
  {
    std::vector<ScanReport> batch;
    auto flush = [&] {
      detail::for_batch(batch, threads, [&](std::size_t s, std::size_t i) { shards[s].add(batch[i], res); });
      summary.reports += batch.size();
      batch.clear();
    };
    source([&](ScanReport&& r) {
      batch.push_back(std::move(r));
      if (batch.size() >= cfg.batch_size) flush();
    });
    flush();
  }
  for (std::size_t s = 1; s < shards.size(); ++s) {
    shards[0].stats.merge(shards[s].stats);
    shards[0].cooc.merge(shards[s].cooc);
    shards[0].detections += shards[s].detections;
    shards[0].empty += shards[s].empty;
    shards[s] = {};
  }
  summary.detections = shards[0].detections;
  summary.empty_detections = shards[0].empty;
  summary.seconds_pass1 = detail::seconds_since(t0);

  PipelineArtifacts art = learn_artifacts(shards[0].stats, shards[0].cooc, res, cfg, &summary);
  shards.clear();

  // Pass 2.
  t0 = std::chrono::steady_clock::now();
  RecordSpool spool(cfg.temp_dir, cfg.memory_budget);
  std::vector<FamilyVotes> votes;
  {
    std::vector<ScanReport> batch;
    std::vector<detail::SecondPassRecord> out;
    std::size_t seen = 0;
    auto flush = [&] {
      out.assign(batch.size(), {});
      detail::for_batch(batch, threads, [&](std::size_t, std::size_t i) {
        out[i] = detail::second_pass(batch[i], res, art.taxonomy, art.aliases, cfg.tags);
      });
      for (std::size_t i = 0; i < batch.size(); ++i) {
        votes.push_back(std::move(out[i].votes));
        spool.push(LabelOutput{batch[i].file_hash, batch[i].num_detected, batch[i].num_scanned, std::nullopt, 0.0,
                               std::move(out[i].tags)});
      }
      seen += batch.size();
      batch.clear();
    };
    source([&](ScanReport&& r) {
      batch.push_back(std::move(r));
      if (batch.size() >= cfg.batch_size) flush();
    });
    flush();
    if (seen != summary.reports) throw IoError("input changed between passes");
  }
  summary.spilled = spool.spilled();
  summary.seconds_pass2 = detail::seconds_since(t0);

  // Inference.
  t0 = std::chrono::steady_clock::now();
  std::vector<std::optional<std::size_t>> row_of(votes.size());
  InferenceInstance inst;
  SparsePosterior posterior;
  std::vector<FamilyId> winner;
  bool any_votes = false;
  for (const auto& v : votes) any_votes = any_votes || !v.empty();
  if (any_votes) {
    inst = build_instance(votes);
    for (std::size_t row = 0; row < inst.num_reports(); ++row) row_of[inst.source_index[row]] = row;
    if (cfg.vote_mode == VoteMode::ibcc) {
      auto ibcc = cfg.ibcc;
      ibcc.threads = threads;
      InferenceResult result = run_inference(inst, build_family_cooccurrence(inst), ibcc);
      winner = result.argmax(inst);
      posterior = std::move(result.posterior);
      summary.inference_iterations = result.iterations;
      summary.inference_converged = result.converged;
    } else {
      // Vote shares stand in for the posterior.
      winner = plurality_vote(inst);
      posterior.offsets = inst.candidate_offsets;
      posterior.q.assign(inst.candidates.size(), 0.0);
      for (std::size_t i = 0; i < inst.num_reports(); ++i) {
        auto cands = inst.candidates_of(i);
        auto q = posterior.row(i);
        for (const auto& v : inst.votes_of(i)) {
          q[static_cast<std::size_t>(std::lower_bound(cands.begin(), cands.end(), v.family) - cands.begin())] += 1.0;
        }
        for (double& x : q) x /= static_cast<double>(inst.votes_of(i).size());
      }
    }
  }
  summary.seconds_inference = detail::seconds_since(t0);

  // Scoring and output.
  std::size_t index = 0;
  spool.for_each([&](LabelOutput&& out) {
    ReportDetail detail;
    detail.votes = &votes[index];
    if (auto row = row_of[index]) {
      detail.posterior = posterior.row(*row);
      for (FamilyId j : inst.candidates_of(*row)) detail.candidates.push_back(inst.families[j]);
      out.family = inst.families[winner[*row]];
      ++summary.with_family;
    }
    detail.features = extract_features(out.num_detected, out.num_scanned, votes[index], detail.posterior);
    if (out.family) out.confidence = res.model ? res.model->score(detail.features) : detail.features.top_posterior;
    sink(out, detail);
    ++index;
  });
  if (artifacts_out) *artifacts_out = std::move(art);
  return summary;
}

/// Convenience wrapper collecting outputs in memory.
inline std::vector<LabelOutput> label_reports(const std::vector<ScanReport>& reports, const PipelineConfig& cfg,
                                              const PipelineResources& res, PipelineArtifacts* artifacts = nullptr,
                                              PipelineSummary* summary = nullptr) {
  std::vector<LabelOutput> out;
  out.reserve(reports.size());
  auto s = run_pipeline(memory_source(reports), cfg, res,
                        [&](const LabelOutput& o, const ReportDetail&) { out.push_back(o); }, artifacts);
  if (summary) *summary = std::move(s);
  return out;
}

}  // namespace avlabel
