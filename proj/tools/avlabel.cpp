// avlabel: label malware families from AV scan reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "avlabel/confidence.hpp"
#include "avlabel/error.hpp"
#include "avlabel/evaluate.hpp"
#include "avlabel/output.hpp"
#include "avlabel/pipeline.hpp"
#include "avlabel/scaling.hpp"
#include "avlabel/synth.hpp"

namespace {

using namespace avlabel;
using nlohmann::json;

constexpr int kExitStage = 1;
constexpr int kExitConfig = 2;

/// Writes to a file, or to stdout when the path is empty or "-".
class OutputFile {
 public:
  explicit OutputFile(const std::string& path) {
    if (path.empty() || path == "-") {
      out_ = &std::cout;
    } else {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw IoError("cannot write " + path);
      out_ = file_.get();
    }
  }
  std::ostream& operator*() { return *out_; }
  void close() {
    out_->flush();
    if (!*out_) throw IoError("write failed");
  }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* out_ = nullptr;
};

struct PipelineOptions {
  PipelineConfig cfg;
  std::vector<std::string> tag_thresholds;
  std::string vote_mode = "ibcc";
};

void add_pipeline_options(CLI::App* app, PipelineOptions& o) {
  auto& c = o.cfg;
  app->add_option("--rulebook", c.rulebook_path, "Parsing rules (JSON lines)")->capture_default_str();
  app->add_option("--groups", c.groups_path, "Threat-group names, one per line")->capture_default_str();
  app->add_option("--placeholders", c.placeholders_path, "Placeholder family names")->capture_default_str();
  app->add_option("--clusters", c.clusters_path, "Correlated AV clusters")->capture_default_str();
  app->add_option("--alias-substrings", c.substrings_path, "Substrings for trivial aliases")->capture_default_str();
  app->add_option("--alias-file", c.alias_path, "Extra alias groups merged into the learned map");
  app->add_option("-S", c.alias.sibling_cooccur, "Sibling co-occurrence threshold")->capture_default_str();
  app->add_option("-T", c.alias.sibling_support, "Sibling support threshold (reports)")->capture_default_str();
  app->add_option("-E", c.alias.min_escore, "Parent-child edit-similarity threshold")->capture_default_str();
  app->add_option("-C", c.alias.parent_child_score, "Parent-child combined threshold")->capture_default_str();
  app->add_option("--tag-threshold", o.tag_thresholds, "Per-category tag threshold, CAT=N (repeatable)");
  app->add_option("--dominance", c.dominance, "Category dominance for the taxonomy")->capture_default_str();
  app->add_option("--min-family-clusters", c.min_family_clusters, "Clusters needed to keep a FAM token")
      ->capture_default_str();
  app->add_option("--vote-mode", o.vote_mode, "ibcc or plurality")
      ->check(CLI::IsMember({"ibcc", "plurality"}))
      ->capture_default_str();
  app->add_option("--ibcc-tol", c.ibcc.tol, "Convergence tolerance on posteriors")->capture_default_str();
  app->add_option("--ibcc-max-iter", c.ibcc.max_iter, "Maximum e-steps")->capture_default_str();
  app->add_option("--ibcc-diag-boost", c.ibcc.prior.diag_boost, "Prior mass added on the diagonal")
      ->capture_default_str();
  app->add_option("--ibcc-base-mass", c.ibcc.prior.base_mass, "Prior mass on every confusion entry")
      ->capture_default_str();
  app->add_option("--ibcc-class-prior", c.ibcc.prior.nu_base, "Dirichlet prior on family proportions")
      ->capture_default_str();
  app->add_option("--confidence-model", c.confidence_model_path, "Trained confidence model");
  app->add_flag("--vt-format", c.vt_format, "Accept VirusTotal-style report nesting");
  app->add_option("--threads", c.threads, "Worker threads")->capture_default_str();
  app->add_option("--temp-dir", c.temp_dir, "Directory for spill files");
  app->add_option("--memory-budget", c.memory_budget, "Bytes of buffered records before spilling (0 = no limit)")
      ->capture_default_str();
}

void finish_pipeline_options(PipelineOptions& o) {
  for (const auto& t : o.tag_thresholds) o.cfg.tags.set_from_string(t);
  o.cfg.vote_mode = parse_vote_mode(o.vote_mode);
  o.cfg.validate();
}

// ---------------------------------------------------------------------------

struct LabelArgs {
  PipelineOptions pipe;
  std::string input;
  std::string output;
  std::string taxonomy_out;
  std::string aliases_out;
  std::string features_out;
  std::string candidates_out;
  std::string run_log;
  bool tsv = false;
  std::optional<double> threshold;
};

int run_label(LabelArgs& a) {
  finish_pipeline_options(a.pipe);
  if (a.threshold && !(*a.threshold >= 0.0 && *a.threshold <= 1.0)) {
    throw ConfigError("confidence threshold must be in [0, 1]");
  }
  const PipelineResources res = PipelineResources::load(a.pipe.cfg);

  OutputFile out(a.output);
  std::unique_ptr<OutputFile> features;
  std::unique_ptr<OutputFile> candidates;
  if (!a.features_out.empty()) {
    features = std::make_unique<OutputFile>(a.features_out);
    **features << "sha256\t" << training_tsv_header().substr(0, training_tsv_header().rfind('\t')) << '\n';
  }
  if (!a.candidates_out.empty()) candidates = std::make_unique<OutputFile>(a.candidates_out);

  std::size_t malformed = 0;
  std::size_t retained = 0;
  std::size_t emitted = 0;
  PipelineArtifacts art;
  auto sink = [&](const LabelOutput& o, const ReportDetail& d) {
    ++emitted;
    if (features) **features << o.file_hash << '\t' << features_tsv_cells(d.features) << '\n';
    if (candidates) {
      **candidates << o.file_hash << '\t';
      for (std::size_t i = 0; i < d.candidates.size(); ++i) **candidates << (i ? "," : "") << d.candidates[i];
      **candidates << '\n';
    }
    if (a.threshold && o.confidence < *a.threshold) return;
    ++retained;
    if (a.tsv) {
      *out << to_tsv(o) << '\n';
    } else {
      *out << to_json(o).dump() << '\n';
    }
  };
  const auto source = file_source(a.input, a.pipe.cfg.vt_format, a.pipe.cfg.max_malformed_fraction, &malformed);
  PipelineSummary summary = run_pipeline(source, a.pipe.cfg, res, sink, &art);
  summary.malformed = malformed;
  out.close();
  if (features) features->close();
  if (candidates) candidates->close();
  if (!a.taxonomy_out.empty()) art.taxonomy.write_tsv(a.taxonomy_out);
  if (!a.aliases_out.empty()) write_alias_tsv(art.aliases, a.aliases_out);

  json log = {{"command", "label"}, {"input", a.input}, {"config", a.pipe.cfg.to_json()}, {"summary", summary.to_json()}};
  if (a.threshold) {
    log["confidence_threshold"] = *a.threshold;
    log["retained"] = retained;
    log["retained_fraction"] = emitted ? static_cast<double>(retained) / static_cast<double>(emitted) : 0.0;
  }
  if (a.run_log.empty()) {
    std::cerr << log.dump() << '\n';
  } else {
    std::ofstream f(a.run_log);
    if (!f) throw IoError("cannot write run log " + a.run_log);
    f << log.dump(2) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<LabelOutput> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions: " + path);
  std::vector<LabelOutput> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      if (trim(line).front() == '{') {
        out.push_back(label_output_from_json(json::parse(line)));
        continue;
      }
      auto cells = split(line, '\t');
      if (cells.size() < 4) throw MalformedRecord("expected at least 4 columns");
      LabelOutput o;
      o.file_hash = cells[0];
      auto slash = cells[1].find('/');
      if (slash == std::string::npos) throw MalformedRecord("bad detected column");
      o.num_detected = std::stoul(cells[1].substr(0, slash));
      o.num_scanned = std::stoul(cells[1].substr(slash + 1));
      if (!cells[2].empty()) o.family = cells[2];
      o.confidence = std::stod(cells[3]);
      out.push_back(std::move(o));
    } catch (const MalformedRecord& e) {
      throw MalformedRecord(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception& e) {
      throw MalformedRecord(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

struct EvaluateArgs {
  std::string predictions;
  std::string truth;
  std::string truth_aliases;
  std::string run_aliases;
  std::string candidates;
  std::string features;
  std::string training_out;
  std::optional<double> threshold;
  bool per_family = false;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto predictions = read_predictions(a.predictions);
  const GroundTruth truth = GroundTruth::load(a.truth, a.truth_aliases);
  std::vector<AliasPair> run_aliases;
  if (!a.run_aliases.empty()) run_aliases = read_alias_pairs(a.run_aliases);
  std::optional<std::unordered_map<std::string, std::vector<std::string>>> cands;
  if (!a.candidates.empty()) cands = read_candidates(a.candidates);
  const EvalReport report = evaluate(predictions, truth, run_aliases, cands ? &*cands : nullptr);

  json out = {{"total", report.total},
              {"correct", report.correct},
              {"missing", report.missing},
              {"accuracy", report.accuracy}};
  if (report.impossible_fraction) out["impossible_fraction"] = *report.impossible_fraction;
  if (a.threshold) {
    auto [kept, s] = threshold_filter(predictions, *a.threshold, &report.correct_by_prediction);
    out["threshold"] = {{"tau", *a.threshold}, {"retained", s.retained}, {"retained_fraction", s.retained_fraction}};
    if (s.retained_accuracy) out["threshold"]["retained_accuracy"] = *s.retained_accuracy;
  }
  if (a.per_family) {
    json fams = json::object();
    for (const auto& [name, b] : report.per_family) {
      fams[name] = {{"total", b.total}, {"correct", b.correct}};
    }
    out["per_family"] = std::move(fams);
  }

  if (!a.training_out.empty()) {
    if (a.features.empty()) throw ConfigError("--output-training needs --features");
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < predictions.size(); ++i) index.emplace(to_lower(predictions[i].file_hash), i);
    std::ifstream in(a.features);
    if (!in) throw IoError("cannot open features: " + a.features);
    OutputFile train(a.training_out);
    *train << training_tsv_header() << '\n';
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      if (trim(line).empty() || line.rfind("sha256\t", 0) == 0) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw MalformedRecord("features line without columns");
      const auto hash = to_lower(line.substr(0, tab));
      auto p = index.find(hash);
      if (p == index.end() || !predictions[p->second].family || !truth.family_of.count(hash)) continue;
      *train << line.substr(tab + 1) << '\t' << (report.correct_by_prediction[p->second] ? 1 : 0) << '\n';
      ++rows;
    }
    train.close();
    out["training_rows"] = rows;
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string input;
  std::string output;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  GbdtParams params;
};

int run_train(const TrainArgs& a) {
  const auto examples = read_training_tsv(a.input);
  TrainResult result = train_model(examples, a.folds, a.params, a.seed);
  result.model.save(a.output);
  std::cout << result.model.metadata().dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  SynthConfig cfg;
  std::string profile = "heterogeneous";
  std::string output_dir;
};

int run_synth(SynthArgs& a) {
  if (a.profile == "identity") {
    a.cfg.confusion = ConfusionProfile::identity(a.cfg.n_annotators);
  } else {
    a.cfg.confusion = ConfusionProfile::heterogeneous(a.cfg.n_annotators);
  }
  const SynthCorpus corpus = synth_generate(a.cfg);
  std::filesystem::create_directories(a.output_dir);
  write_corpus(corpus, a.output_dir);
  std::cout << json{{"reports", corpus.reports.size()},
                    {"families", corpus.families.size()},
                    {"annotators", corpus.profile.annotators.size()},
                    {"output_dir", a.output_dir}}
                   .dump()
            << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct ScaleArgs {
  PipelineOptions pipe;
  std::vector<std::size_t> sizes;
  ScalingConfig sc;
};

int run_scale(ScaleArgs& a) {
  finish_pipeline_options(a.pipe);
  const PipelineResources res = PipelineResources::load(a.pipe.cfg);
  const ScalingReport report = scaling_probe(a.sizes, a.sc, a.pipe.cfg, res);
  std::cout << report.to_json().dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label malware families and behaviours from AV scan reports"};
  app.require_subcommand(1);

  LabelArgs label;
  auto* label_cmd = app.add_subcommand("label", "Run the full labeling pipeline");
  label_cmd->add_option("-i,--input,input", label.input, "Scan reports, one JSON record per line")->required();
  label_cmd->add_option("-o,--output", label.output, "Output path (default stdout)");
  label_cmd->add_flag("--tsv", label.tsv, "Tab-separated output instead of JSON lines");
  label_cmd->add_option("--output-taxonomy", label.taxonomy_out, "Write the learned token taxonomy");
  label_cmd->add_option("--output-aliases", label.aliases_out, "Write the learned alias mapping");
  label_cmd->add_option("--output-features", label.features_out, "Write per-report confidence features");
  label_cmd->add_option("--output-candidates", label.candidates_out, "Write per-report voted families");
  label_cmd->add_option("--run-log", label.run_log, "Write the run log here instead of stderr");
  label_cmd->add_option("--confidence-threshold", label.threshold, "Only emit reports with confidence >= tau");
  add_pipeline_options(label_cmd, label.pipe);

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against ground truth");
  eval_cmd->add_option("-p,--predictions", ev.predictions, "Output of `label`")->required();
  eval_cmd->add_option("-t,--truth", ev.truth, "Ground truth, <sha256>\\t<family> lines")->required();
  eval_cmd->add_option("--truth-aliases", ev.truth_aliases, "Comma-separated groups of equivalent family names");
  eval_cmd->add_option("--aliases", ev.run_aliases, "Alias mapping written by label --output-aliases");
  eval_cmd->add_option("--candidates", ev.candidates, "Voted families written by label --output-candidates");
  eval_cmd->add_option("--features", ev.features, "Features written by label --output-features");
  eval_cmd->add_option("--output-training", ev.training_out, "Write a confidence training file");
  eval_cmd->add_option("--confidence-threshold", ev.threshold, "Also report accuracy above this confidence");
  eval_cmd->add_flag("--per-family", ev.per_family, "Include per-family counts");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train-confidence", "Train the confidence model");
  train_cmd->add_option("-i,--input", tr.input, "Training file from evaluate --output-training")->required();
  train_cmd->add_option("-o,--output", tr.output, "Model path")->required();
  train_cmd->add_option("--folds", tr.folds, "Cross-validation folds")->capture_default_str();
  train_cmd->add_option("--seed", tr.seed, "Shuffle seed")->capture_default_str();
  train_cmd->add_option("--trees", tr.params.num_trees, "Boosting rounds")->capture_default_str();
  train_cmd->add_option("--max-depth", tr.params.max_depth, "Tree depth")->capture_default_str();
  train_cmd->add_option("--learning-rate", tr.params.learning_rate, "Shrinkage")->capture_default_str();
  train_cmd->add_option("--min-leaf", tr.params.min_samples_leaf, "Minimum samples per leaf")->capture_default_str();

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus with ground truth");
  synth_cmd->add_option("-o,--output-dir", sy.output_dir, "Directory for the generated files")->required();
  synth_cmd->add_option("--seed", sy.cfg.seed)->capture_default_str();
  synth_cmd->add_option("--reports", sy.cfg.n_reports)->capture_default_str();
  synth_cmd->add_option("--families", sy.cfg.n_families)->capture_default_str();
  synth_cmd->add_option("--annotators", sy.cfg.n_annotators)->capture_default_str();
  synth_cmd->add_option("--profile", sy.profile, "heterogeneous or identity")
      ->check(CLI::IsMember({"heterogeneous", "identity"}))
      ->capture_default_str();
  synth_cmd->add_option("--variant-rate", sy.cfg.aliases.variant_rate, "Fraction of families with a variant spelling")
      ->capture_default_str();
  synth_cmd->add_option("--variant-use", sy.cfg.aliases.variant_use, "Fraction of AVs using the variant")
      ->capture_default_str();

  ScaleArgs sc;
  sc.sizes = {10000, 40000};
  auto* scale_cmd = app.add_subcommand("scale-probe", "Time inference on synthetic corpora of several sizes");
  scale_cmd->add_option("--sizes", sc.sizes, "Corpus sizes")->delimiter(',')->capture_default_str();
  scale_cmd->add_option("--seed", sc.sc.seed)->capture_default_str();
  scale_cmd->add_option("--families", sc.sc.n_families)->capture_default_str();
  scale_cmd->add_option("--annotators", sc.sc.n_annotators)->capture_default_str();
  scale_cmd->add_option("--repeats", sc.sc.repeats, "Best-of timing repeats")->capture_default_str();
  add_pipeline_options(scale_cmd, sc.pipe);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*label_cmd) return run_label(label);
    if (*eval_cmd) return run_evaluate(ev);
    if (*train_cmd) return run_train(tr);
    if (*synth_cmd) return run_synth(sy);
    if (*scale_cmd) return run_scale(sc);
  } catch (const ConfigError& e) {
    std::cerr << "avlabel: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "avlabel: " << e.stage() << " error: " << e.what() << '\n';
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "avlabel: error: " << e.what() << '\n';
    return kExitStage;
  }
  return 0;
}
