#pragma once

// Textbook VB-IBCC with full L x L confusion matrices per annotator and a
// full N x L posterior. Reference for checking the sparse engine on small
// instances; refuses large L.

#include <cmath>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

#include "avlabel/error.hpp"
#include "avlabel/ibcc.hpp"

namespace avlabel {

inline constexpr std::size_t kDenseMaxFamilies = 64;

struct DenseResult {
  std::vector<std::vector<double>> q;  // N x L
  std::size_t iterations = 0;
  bool converged = false;

  /// Posterior restricted to report i's candidates, in candidate order.
  std::vector<double> restricted(const InferenceInstance& inst, std::size_t i) const {
    std::vector<double> out;
    for (FamilyId j : inst.candidates_of(i)) out.push_back(q[i][j]);
    return out;
  }
};

/// `restrict_to_candidates` zeroes q outside each report's voted families
/// inside every e-step, which is the model the sparse engine implements.
/// Without it the posterior spans all L families.
inline DenseResult dense_oracle(const InferenceInstance& inst, double tol, std::size_t max_iter,
                                const PriorConfig& cfg = {}, bool restrict_to_candidates = true) {
  const std::size_t N = inst.num_reports();
  const std::size_t K = inst.num_annotators();
  const std::size_t L = inst.num_families();
  if (L > kDenseMaxFamilies) throw InferenceError("dense oracle refuses L > " + std::to_string(kDenseMaxFamilies));
  cfg.validate();

  // alpha[k][j][l]
  std::vector<std::vector<std::vector<double>>> alpha0(
      K, std::vector<std::vector<double>>(L, std::vector<double>(L, cfg.base_mass)));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < L; ++j) alpha0[k][j][j] += cfg.diag_boost;
  }
  std::vector<double> nu0(L, cfg.nu_base);
  auto alpha = alpha0;
  auto nu = nu0;

  // Dense vote matrix: label[i][k] = family or -1 for abstention.
  std::vector<std::vector<int>> label(N, std::vector<int>(K, -1));
  for (std::size_t i = 0; i < N; ++i) {
    for (const auto& v : inst.votes_of(i)) label[i][v.annotator] = static_cast<int>(v.family);
  }
  std::vector<std::vector<bool>> allowed(N, std::vector<bool>(L, !restrict_to_candidates));
  for (std::size_t i = 0; i < N; ++i) {
    for (FamilyId j : inst.candidates_of(i)) allowed[i][j] = true;
  }

  auto e_step = [&] {
    std::vector<std::vector<double>> q(N, std::vector<double>(L, 0.0));
    double nu_total = 0.0;
    for (double v : nu) nu_total += v;
    for (std::size_t i = 0; i < N; ++i) {
      double best = -INFINITY;
      for (std::size_t j = 0; j < L; ++j) {
        if (!allowed[i][j]) continue;
        double lr = boost::math::digamma(nu[j]) - boost::math::digamma(nu_total);
        for (std::size_t k = 0; k < K; ++k) {
          if (label[i][k] < 0) continue;
          double row = 0.0;
          for (std::size_t l = 0; l < L; ++l) row += alpha[k][j][l];
          lr += boost::math::digamma(alpha[k][j][static_cast<std::size_t>(label[i][k])]) - boost::math::digamma(row);
        }
        q[i][j] = lr;
        best = std::max(best, lr);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        q[i][j] = allowed[i][j] ? std::exp(q[i][j] - best) : 0.0;
        z += q[i][j];
      }
      for (std::size_t j = 0; j < L; ++j) q[i][j] /= z;
    }
    return q;
  };

  auto m_step = [&](const std::vector<std::vector<double>>& q) {
    alpha = alpha0;
    nu = nu0;
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < L; ++j) {
        nu[j] += q[i][j];
        for (std::size_t k = 0; k < K; ++k) {
          if (label[i][k] >= 0) alpha[k][j][static_cast<std::size_t>(label[i][k])] += q[i][j];
        }
      }
    }
  };

  DenseResult res;
  res.q = e_step();
  res.iterations = 1;
  while (res.iterations < max_iter) {
    m_step(res.q);
    auto next = e_step();
    ++res.iterations;
    double delta = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < L; ++j) delta = std::max(delta, std::abs(next[i][j] - res.q[i][j]));
    }
    res.q = std::move(next);
    if (delta < tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace avlabel
