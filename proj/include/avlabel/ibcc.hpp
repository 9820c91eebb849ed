#pragma once

// Sparse variational-Bayes independent Bayesian classifier combination.
//
// Each annotator k has, for every true family j, a Dirichlet-distributed
// row of output probabilities. Rows are stored only over F_j, the families
// that ever co-occur with j in some report's candidate set, packed into a
// (sum_j |F_j|) x K matrix. Each report's posterior is stored only over its
// candidate set (the families somebody voted for).
//
//   E-step:  log rho_ij = psi(nu_j) - psi(sum nu)
//                       + sum_{k votes on i} [psi(alpha_{j, c_ik}^k) - psi(sum_{l in F_j} alpha_{jl}^k)]
//            q_i = softmax over candidates(i)
//   M-step:  nu_j        = nu0_j + sum_i q_ij
//            alpha_jl^k  = alpha0_jl^k + sum_i q_ij [c_ik = l]

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

#include "avlabel/error.hpp"
#include "avlabel/votes.hpp"

namespace avlabel {

using FamilyId = std::uint32_t;
using AnnotatorId = std::uint32_t;

struct IdVote {
  AnnotatorId annotator;
  FamilyId family;

  bool operator==(const IdVote&) const = default;
};

/// Votes and candidate sets for the reports that carry at least one family
/// vote, in CSR layout.
struct InferenceInstance {
  std::vector<std::string> families;    // id -> canonical name, sorted
  std::vector<std::string> annotators;  // id -> AV name, sorted
  std::vector<std::size_t> vote_offsets{0};
  std::vector<IdVote> votes;                  // per report, sorted by annotator
  std::vector<std::size_t> candidate_offsets{0};
  std::vector<FamilyId> candidates;           // per report, sorted ascending
  std::vector<std::size_t> source_index;      // instance row -> input report index
  std::vector<std::size_t> excluded;          // input reports without any vote

  std::size_t num_reports() const noexcept { return vote_offsets.size() - 1; }
  std::size_t num_annotators() const noexcept { return annotators.size(); }
  std::size_t num_families() const noexcept { return families.size(); }

  std::span<const IdVote> votes_of(std::size_t i) const {
    return {votes.data() + vote_offsets[i], vote_offsets[i + 1] - vote_offsets[i]};
  }
  std::span<const FamilyId> candidates_of(std::size_t i) const {
    return {candidates.data() + candidate_offsets[i], candidate_offsets[i + 1] - candidate_offsets[i]};
  }

  /// Appends one report. Its candidate set is the distinct voted families.
  void add_report(std::vector<IdVote> report_votes, std::size_t source) {
    std::sort(report_votes.begin(), report_votes.end(),
              [](const IdVote& a, const IdVote& b) { return a.annotator < b.annotator; });
    for (std::size_t v = 1; v < report_votes.size(); ++v) {
      if (report_votes[v].annotator == report_votes[v - 1].annotator) {
        throw InferenceError("annotator voted twice on one report");
      }
    }
    std::vector<FamilyId> cands;
    for (const auto& v : report_votes) {
      if (v.annotator >= num_annotators() || v.family >= num_families()) throw InferenceError("vote id out of range");
      cands.push_back(v.family);
    }
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    votes.insert(votes.end(), report_votes.begin(), report_votes.end());
    vote_offsets.push_back(votes.size());
    candidates.insert(candidates.end(), cands.begin(), cands.end());
    candidate_offsets.push_back(candidates.size());
    source_index.push_back(source);
  }
};

/// Builds an instance from named votes. Families and annotators get dense
/// ids in sorted-name order; reports without votes go to `excluded`.
inline InferenceInstance build_instance(const std::vector<FamilyVotes>& reports) {
  std::map<std::string, FamilyId> family_ids;
  std::map<std::string, AnnotatorId> annotator_ids;
  for (const auto& r : reports) {
    for (const auto& v : r) {
      family_ids.emplace(v.family, 0);
      annotator_ids.emplace(v.annotator, 0);
    }
  }
  if (family_ids.empty()) throw InferenceError("no report carries a family vote");
  InferenceInstance inst;
  for (auto& [name, id] : family_ids) {
    id = static_cast<FamilyId>(inst.families.size());
    inst.families.push_back(name);
  }
  for (auto& [name, id] : annotator_ids) {
    id = static_cast<AnnotatorId>(inst.annotators.size());
    inst.annotators.push_back(name);
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (reports[i].empty()) {
      inst.excluded.push_back(i);
      continue;
    }
    std::vector<IdVote> ids;
    ids.reserve(reports[i].size());
    for (const auto& v : reports[i]) ids.push_back(IdVote{annotator_ids.at(v.annotator), family_ids.at(v.family)});
    inst.add_report(std::move(ids), i);
  }
  return inst;
}

/// F_j for every family j: the sorted families sharing a candidate set with
/// j (always including j), flattened with prefix-sum offsets.
struct FamilyCooccurrence {
  std::vector<std::size_t> offsets;  // size L + 1
  std::vector<FamilyId> members;

  std::size_t total() const noexcept { return members.size(); }

  std::span<const FamilyId> row(FamilyId j) const {
    return {members.data() + offsets[j], offsets[j + 1] - offsets[j]};
  }

  /// Packed row index of (j, l), or nullopt when l is not in F_j.
  std::optional<std::size_t> index(FamilyId j, FamilyId l) const {
    auto r = row(j);
    auto it = std::lower_bound(r.begin(), r.end(), l);
    if (it == r.end() || *it != l) return std::nullopt;
    return offsets[j] + static_cast<std::size_t>(it - r.begin());
  }
};

inline FamilyCooccurrence build_family_cooccurrence(const InferenceInstance& inst) {
  const std::size_t L = inst.num_families();
  std::vector<std::vector<FamilyId>> sets(L);
  for (FamilyId j = 0; j < L; ++j) sets[j].push_back(j);
  for (std::size_t i = 0; i < inst.num_reports(); ++i) {
    auto cands = inst.candidates_of(i);
    for (FamilyId a : cands) {
      for (FamilyId b : cands) {
        if (a != b) sets[a].push_back(b);
      }
    }
  }
  FamilyCooccurrence out;
  out.offsets.reserve(L + 1);
  out.offsets.push_back(0);
  for (auto& s : sets) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    out.members.insert(out.members.end(), s.begin(), s.end());
    out.offsets.push_back(out.members.size());
    std::vector<FamilyId>().swap(s);
  }
  return out;
}

/// Dirichlet pseudo-counts for all confusion rows, packed as
/// (sum_j |F_j|) x K, row-major by packed row.
struct SparseConfusion {
  std::size_t num_annotators = 0;
  std::vector<double> alpha0;
  std::vector<double> alpha;

  double& at(std::size_t packed_row, AnnotatorId k) { return alpha[packed_row * num_annotators + k]; }
  double at(std::size_t packed_row, AnnotatorId k) const { return alpha[packed_row * num_annotators + k]; }
  std::size_t entries() const noexcept { return alpha.size(); }
};

struct ClassPrior {
  std::vector<double> nu0;
  std::vector<double> nu;
};

struct PriorConfig {
  double base_mass = 0.5;
  double diag_boost = 1.5;
  double nu_base = 1.0;

  void validate() const {
    if (!(base_mass > 0.0)) throw ConfigError("ibcc base mass must be > 0");
    if (!(diag_boost >= 0.0)) throw ConfigError("ibcc diagonal boost must be >= 0");
    if (!(nu_base > 0.0)) throw ConfigError("ibcc class prior must be > 0");
  }
};

inline std::pair<SparseConfusion, ClassPrior> init_priors(const InferenceInstance& inst, const FamilyCooccurrence& cooc,
                                                          const PriorConfig& cfg = {}) {
  cfg.validate();
  const std::size_t K = inst.num_annotators();
  SparseConfusion conf;
  conf.num_annotators = K;
  conf.alpha0.assign(cooc.total() * K, cfg.base_mass);
  for (FamilyId j = 0; j < inst.num_families(); ++j) {
    const std::size_t diag = *cooc.index(j, j);
    for (AnnotatorId k = 0; k < K; ++k) conf.alpha0[diag * K + k] += cfg.diag_boost;
  }
  conf.alpha = conf.alpha0;
  ClassPrior prior;
  prior.nu0.assign(inst.num_families(), cfg.nu_base);
  prior.nu = prior.nu0;
  return {std::move(conf), std::move(prior)};
}

/// q_ij over each report's candidates, same CSR layout as the instance.
struct SparsePosterior {
  std::vector<std::size_t> offsets;
  std::vector<double> q;

  std::size_t num_reports() const noexcept { return offsets.size() - 1; }
  std::span<const double> row(std::size_t i) const { return {q.data() + offsets[i], offsets[i + 1] - offsets[i]}; }
  std::span<double> row(std::size_t i) { return {q.data() + offsets[i], offsets[i + 1] - offsets[i]}; }
  std::size_t stored_entries() const noexcept { return q.size(); }
};

namespace detail {

/// Runs fn(shard, begin, end) over `threads` contiguous ranges of [0, n).
template <typename Fn>
void for_shards(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n == 0 ? 1 : n));
  if (threads == 1) {
    fn(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  workers.reserve(threads);
  for (std::size_t s = 0; s < threads; ++s) {
    const std::size_t begin = n * s / threads;
    const std::size_t end = n * (s + 1) / threads;
    workers.emplace_back([&fn, &errors, s, begin, end] {
      try {
        fn(s, begin, end);
      } catch (...) {
        errors[s] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline double digamma(double x) { return boost::math::digamma(x); }

}  // namespace detail

/// Softmax in place with max-subtraction.
inline void softmax_inplace(std::span<double> v) {
  if (v.empty()) return;
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline SparsePosterior vb_e_step(const InferenceInstance& inst, const FamilyCooccurrence& cooc,
                                 const SparseConfusion& conf, const ClassPrior& prior, std::size_t threads = 1) {
  const std::size_t K = inst.num_annotators();
  const std::size_t L = inst.num_families();

  double nu_sum = 0.0;
  for (double v : prior.nu) nu_sum += v;
  const double psi_nu_sum = detail::digamma(nu_sum);
  std::vector<double> log_kappa(L);
  for (FamilyId j = 0; j < L; ++j) log_kappa[j] = detail::digamma(prior.nu[j]) - psi_nu_sum;

  std::vector<double> log_pi(conf.alpha.size());
  for (std::size_t e = 0; e < conf.alpha.size(); ++e) log_pi[e] = detail::digamma(conf.alpha[e]);
  std::vector<double> row_norm(L * K, 0.0);
  for (FamilyId j = 0; j < L; ++j) {
    for (std::size_t r = cooc.offsets[j]; r < cooc.offsets[j + 1]; ++r) {
      for (AnnotatorId k = 0; k < K; ++k) row_norm[j * K + k] += conf.alpha[r * K + k];
    }
  }
  for (double& v : row_norm) v = detail::digamma(v);

  SparsePosterior post;
  post.offsets = inst.candidate_offsets;
  post.q.assign(inst.candidates.size(), 0.0);
  detail::for_shards(inst.num_reports(), threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto cands = inst.candidates_of(i);
      auto q = post.row(i);
      for (std::size_t c = 0; c < cands.size(); ++c) {
        const FamilyId j = cands[c];
        double lr = log_kappa[j];
        for (const IdVote& v : inst.votes_of(i)) {
          auto r = cooc.index(j, v.family);
          if (!r) throw InferenceError("vote for family outside F_j");
          lr += log_pi[*r * K + v.annotator] - row_norm[j * K + v.annotator];
        }
        q[c] = lr;
      }
      softmax_inplace(q);
    }
  });
  return post;
}

inline void vb_m_step(const InferenceInstance& inst, const FamilyCooccurrence& cooc, const SparsePosterior& post,
                      SparseConfusion& conf, ClassPrior& prior, std::size_t threads = 1) {
  const std::size_t K = inst.num_annotators();
  const std::size_t L = inst.num_families();
  const std::size_t shards = std::max<std::size_t>(1, std::min(threads, inst.num_reports()));

  std::vector<std::vector<double>> alpha_acc(shards);
  std::vector<std::vector<double>> nu_acc(shards);
  detail::for_shards(inst.num_reports(), shards, [&](std::size_t s, std::size_t begin, std::size_t end) {
    auto& a = alpha_acc[s];
    auto& n = nu_acc[s];
    a.assign(conf.alpha0.size(), 0.0);
    n.assign(L, 0.0);
    for (std::size_t i = begin; i < end; ++i) {
      auto cands = inst.candidates_of(i);
      auto q = post.row(i);
      for (std::size_t c = 0; c < cands.size(); ++c) {
        const FamilyId j = cands[c];
        n[j] += q[c];
        for (const IdVote& v : inst.votes_of(i)) a[*cooc.index(j, v.family) * K + v.annotator] += q[c];
      }
    }
  });

  conf.alpha = conf.alpha0;
  prior.nu = prior.nu0;
  for (std::size_t s = 0; s < shards; ++s) {
    if (alpha_acc[s].empty()) continue;
    for (std::size_t e = 0; e < conf.alpha.size(); ++e) conf.alpha[e] += alpha_acc[s][e];
    for (FamilyId j = 0; j < L; ++j) prior.nu[j] += nu_acc[s][j];
  }
}

struct InferenceConfig {
  double tol = 1e-4;
  std::size_t max_iter = 100;
  PriorConfig prior;
  std::size_t threads = 1;

  void validate() const {
    if (!(tol > 0.0)) throw ConfigError("ibcc tolerance must be > 0");
    prior.validate();
  }
};

struct InferenceResult {
  SparsePosterior posterior;
  SparseConfusion confusion;
  ClassPrior prior;
  bool converged = false;
  std::size_t iterations = 0;  // e-steps performed

  /// Most probable family per instance row; ties go to the smaller id.
  std::vector<FamilyId> argmax(const InferenceInstance& inst) const {
    std::vector<FamilyId> out(inst.num_reports());
    for (std::size_t i = 0; i < out.size(); ++i) {
      auto q = posterior.row(i);
      auto best = std::max_element(q.begin(), q.end());
      out[i] = inst.candidates_of(i)[static_cast<std::size_t>(best - q.begin())];
    }
    return out;
  }
};

inline double max_abs_change(const SparsePosterior& a, const SparsePosterior& b) {
  double d = 0.0;
  for (std::size_t e = 0; e < a.q.size(); ++e) d = std::max(d, std::abs(a.q[e] - b.q[e]));
  return d;
}

/// Alternates e- and m-steps from the prior. The first e-step uses the
/// prior alone; convergence is tested from the second e-step on, against
/// max |delta q| < tol. At most max(1, max_iter) e-steps run.
inline InferenceResult run_inference(const InferenceInstance& inst, const FamilyCooccurrence& cooc,
                                     const InferenceConfig& cfg = {}) {
  cfg.validate();
  if (inst.num_reports() == 0) throw InferenceError("empty inference instance");
  auto [conf, prior] = init_priors(inst, cooc, cfg.prior);
  InferenceResult res;
  res.posterior = vb_e_step(inst, cooc, conf, prior, cfg.threads);
  res.iterations = 1;
  while (res.iterations < cfg.max_iter) {
    vb_m_step(inst, cooc, res.posterior, conf, prior, cfg.threads);
    SparsePosterior next = vb_e_step(inst, cooc, conf, prior, cfg.threads);
    ++res.iterations;
    const double delta = max_abs_change(next, res.posterior);
    res.posterior = std::move(next);
    if (delta < cfg.tol) {
      res.converged = true;
      break;
    }
  }
  res.confusion = std::move(conf);
  res.prior = std::move(prior);
  return res;
}

/// Number of reports in which each family appears as a candidate.
inline std::vector<std::size_t> candidate_report_counts(const InferenceInstance& inst) {
  std::vector<std::size_t> counts(inst.num_families(), 0);
  for (FamilyId j : inst.candidates) ++counts[j];
  return counts;
}

/// Family with the most votes per instance row. Ties go to the family
/// present in more reports corpus-wide, then to the smaller name.
inline std::vector<FamilyId> plurality_vote(const InferenceInstance& inst) {
  const auto corpus = candidate_report_counts(inst);
  std::vector<FamilyId> out(inst.num_reports());
  std::unordered_map<FamilyId, std::size_t> tally;
  for (std::size_t i = 0; i < inst.num_reports(); ++i) {
    tally.clear();
    for (const auto& v : inst.votes_of(i)) ++tally[v.family];
    FamilyId best = inst.candidates_of(i).front();
    for (FamilyId j : inst.candidates_of(i)) {
      const auto nj = tally[j];
      const auto nb = tally[best];
      if (nj > nb || (nj == nb && (corpus[j] > corpus[best] ||
                                   (corpus[j] == corpus[best] && inst.families[j] < inst.families[best])))) {
        best = j;
      }
    }
    out[i] = best;
  }
  return out;
}

/// Plurality over named votes; nullopt for reports without votes.
inline std::vector<std::optional<std::string>> plurality_vote(const std::vector<FamilyVotes>& reports) {
  std::vector<std::optional<std::string>> out(reports.size());
  bool any = false;
  for (const auto& r : reports) any = any || !r.empty();
  if (!any) return out;
  const InferenceInstance inst = build_instance(reports);
  const auto winners = plurality_vote(inst);
  for (std::size_t row = 0; row < winners.size(); ++row) out[inst.source_index[row]] = inst.families[winners[row]];
  return out;
}

}  // namespace avlabel
