#pragma once

// Inference wall time against corpus size.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <optional>
#include <vector>

#include <json.hpp>

#include "avlabel/error.hpp"
#include "avlabel/ibcc.hpp"
#include "avlabel/pipeline.hpp"
#include "avlabel/synth.hpp"

namespace avlabel {

struct ScalingRow {
  std::size_t reports = 0;
  std::size_t voted_reports = 0;
  std::size_t families = 0;
  std::size_t iterations = 0;
  double seconds = 0;
  double seconds_per_iteration = 0;
};

/// t(n) = a + b n + c n^2, least squares.
struct QuadraticFit {
  double a = 0;
  double b = 0;
  double c = 0;

  double operator()(double n) const noexcept { return a + b * n + c * n * n; }
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  std::optional<QuadraticFit> fit;  // with at least 3 sizes

  /// Time per report at the largest size is no more than at the smallest.
  bool sublinear_per_item() const {
    if (rows.size() < 2) return true;
    const auto& lo = rows.front();
    const auto& hi = rows.back();
    return hi.seconds / static_cast<double>(hi.reports) <= lo.seconds / static_cast<double>(lo.reports);
  }

  nlohmann::json to_json() const {
    nlohmann::json table = nlohmann::json::array();
    for (const auto& r : rows) {
      table.push_back({{"reports", r.reports},
                       {"voted_reports", r.voted_reports},
                       {"families", r.families},
                       {"iterations", r.iterations},
                       {"seconds", r.seconds},
                       {"seconds_per_iteration", r.seconds_per_iteration}});
    }
    nlohmann::json out = {{"rows", std::move(table)}, {"sublinear_per_item", sublinear_per_item()}};
    if (fit) out["fit"] = {{"a", fit->a}, {"b", fit->b}, {"c", fit->c}};
    return out;
  }
};

/// Solves the 3x3 normal equations by Gaussian elimination with pivoting.
inline std::optional<QuadraticFit> fit_quadratic(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 3 || x.size() != y.size()) return std::nullopt;
  double scale = 0.0;
  for (double v : x) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return std::nullopt;
  std::array<std::array<double, 4>, 3> m{};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = x[i] / scale;
    const std::array<double, 3> phi = {1.0, u, u * u};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m[r][c] += phi[r] * phi[c];
      m[r][3] += phi[r] * y[i];
    }
  }
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
    }
    if (std::abs(m[pivot][col]) < 1e-12) return std::nullopt;
    std::swap(m[col], m[pivot]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
    }
  }
  return QuadraticFit{m[0][3] / m[0][0], m[1][3] / m[1][1] / scale, m[2][3] / m[2][2] / (scale * scale)};
}

struct ScalingConfig {
  std::uint64_t seed = 1;
  std::size_t n_families = 50;
  std::size_t n_annotators = 20;
  std::size_t repeats = 1;  // best-of timing
};

/// Generates a corpus per size, builds votes with the full pipeline
/// (untimed), then times inference alone.
inline ScalingReport scaling_probe(const std::vector<std::size_t>& sizes, const ScalingConfig& sc,
                                   const PipelineConfig& cfg, const PipelineResources& res) {
  if (sizes.empty()) throw ConfigError("scaling probe needs at least one size");
  if (sc.repeats < 1) throw ConfigError("scaling probe needs at least one repeat");
  ScalingReport report;
  for (std::size_t n : sizes) {
    SynthConfig syn;
    syn.seed = sc.seed;
    syn.n_reports = n;
    syn.n_families = sc.n_families;
    syn.n_annotators = sc.n_annotators;
    const SynthCorpus corpus = synth_generate(syn);
    std::vector<FamilyVotes> votes;
    run_pipeline(memory_source(corpus.reports), cfg, res,
                 [&](const LabelOutput&, const ReportDetail& d) { votes.push_back(*d.votes); });
    const InferenceInstance inst = build_instance(votes);
    ScalingRow row;
    row.reports = n;
    row.voted_reports = inst.num_reports();
    row.families = inst.num_families();
    row.seconds = INFINITY;
    for (std::size_t r = 0; r < sc.repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const InferenceResult result = run_inference(inst, build_family_cooccurrence(inst), cfg.ibcc);
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (s < row.seconds) {
        row.seconds = s;
        row.iterations = result.iterations;
      }
    }
    row.seconds_per_iteration = row.seconds / static_cast<double>(std::max<std::size_t>(1, row.iterations));
    report.rows.push_back(row);
  }
  std::vector<double> x;
  std::vector<double> y;
  for (const auto& r : report.rows) {
    x.push_back(static_cast<double>(r.reports));
    y.push_back(r.seconds);
  }
  report.fit = fit_quadratic(x, y);
  return report;
}

}  // namespace avlabel
