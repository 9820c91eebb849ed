#pragma once

// Small gradient-boosted decision-tree ensemble for binary probabilities
// (logistic loss, second-order leaf values, exact greedy splits).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <json.hpp>

#include "avlabel/error.hpp"

namespace avlabel {

struct GbdtParams {
  std::size_t num_trees = 100;
  std::size_t max_depth = 3;
  double learning_rate = 0.1;
  std::size_t min_samples_leaf = 10;
  double l2 = 1.0;
  double min_gain = 1e-6;
};

inline void to_json(nlohmann::json& j, const GbdtParams& p) {
  j = {{"num_trees", p.num_trees}, {"max_depth", p.max_depth}, {"learning_rate", p.learning_rate},
       {"min_samples_leaf", p.min_samples_leaf}, {"l2", p.l2}, {"min_gain", p.min_gain}};
}

inline void from_json(const nlohmann::json& j, GbdtParams& p) {
  p.num_trees = j.at("num_trees").get<std::size_t>();
  p.max_depth = j.at("max_depth").get<std::size_t>();
  p.learning_rate = j.at("learning_rate").get<double>();
  p.min_samples_leaf = j.at("min_samples_leaf").get<std::size_t>();
  p.l2 = j.at("l2").get<double>();
  p.min_gain = j.value("min_gain", 1e-6);
}

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

class RegressionTree {
 public:
  double predict(std::span<const double> x) const {
    int n = 0;
    while (nodes_[n].feature >= 0) {
      const auto& node = nodes_[n];
      n = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
    }
    return nodes_[n].value;
  }

  /// Fits to gradients/hessians of the rows in `rows`.
  void fit(const std::vector<std::vector<double>>& X, std::span<const double> grad, std::span<const double> hess,
           std::vector<std::size_t> rows, const GbdtParams& p) {
    nodes_.clear();
    grow(X, grad, hess, rows, 0, p);
  }

  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  void set_nodes(std::vector<TreeNode> nodes) { nodes_ = std::move(nodes); }

 private:
  int grow(const std::vector<std::vector<double>>& X, std::span<const double> grad, std::span<const double> hess,
           std::vector<std::size_t>& rows, std::size_t depth, const GbdtParams& p) {
    double G = 0.0;
    double H = 0.0;
    for (auto r : rows) {
      G += grad[r];
      H += hess[r];
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(TreeNode{-1, 0.0, -1, -1, -p.learning_rate * G / (H + p.l2)});
    if (depth >= p.max_depth || rows.size() < 2 * p.min_samples_leaf) return id;

    const double parent_score = G * G / (H + p.l2);
    double best_gain = p.min_gain;
    int best_feature = -1;
    double best_threshold = 0.0;
    const std::size_t num_features = X.empty() ? 0 : X[rows.front()].size();
    std::vector<std::size_t> order = rows;
    for (std::size_t f = 0; f < num_features; ++f) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return X[a][f] < X[b][f]; });
      double gl = 0.0;
      double hl = 0.0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        gl += grad[order[i]];
        hl += hess[order[i]];
        const std::size_t left_n = i + 1;
        if (left_n < p.min_samples_leaf || order.size() - left_n < p.min_samples_leaf) continue;
        const double xv = X[order[i]][f];
        const double xn = X[order[i + 1]][f];
        if (xv == xn) continue;
        const double gr = G - gl;
        const double hr = H - hl;
        const double gain = gl * gl / (hl + p.l2) + gr * gr / (hr + p.l2) - parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (xv + xn);
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (auto r : rows) (X[r][static_cast<std::size_t>(best_feature)] <= best_threshold ? left : right).push_back(r);
    std::vector<std::size_t>().swap(rows);
    nodes_[id].feature = best_feature;
    nodes_[id].threshold = best_threshold;
    const int l = grow(X, grad, hess, left, depth + 1, p);
    const int r = grow(X, grad, hess, right, depth + 1, p);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  std::vector<TreeNode> nodes_;
};

inline double sigmoid(double z) noexcept { return 1.0 / (1.0 + std::exp(-z)); }

class GbdtClassifier {
 public:
  explicit GbdtClassifier(GbdtParams params = {}) : params_(params) {}

  void fit(const std::vector<std::vector<double>>& X, std::span<const std::uint8_t> y) {
    if (X.size() != y.size() || X.empty()) throw TrainingError("feature and label counts differ or are empty");
    const std::size_t n = X.size();
    const double pos = static_cast<double>(std::count(y.begin(), y.end(), std::uint8_t{1}));
    const double rate = std::clamp(pos / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
    base_score_ = std::log(rate / (1.0 - rate));
    trees_.clear();
    std::vector<double> margin(n, base_score_);
    std::vector<double> grad(n);
    std::vector<double> hess(n);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t t = 0; t < params_.num_trees; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        const double p = sigmoid(margin[i]);
        grad[i] = p - static_cast<double>(y[i]);
        hess[i] = std::max(p * (1.0 - p), 1e-12);
      }
      RegressionTree tree;
      tree.fit(X, grad, hess, all, params_);
      for (std::size_t i = 0; i < n; ++i) margin[i] += tree.predict(X[i]);
      trees_.push_back(std::move(tree));
    }
  }

  double predict_proba(std::span<const double> x) const {
    double m = base_score_;
    for (const auto& t : trees_) m += t.predict(x);
    return sigmoid(m);
  }

  const GbdtParams& params() const noexcept { return params_; }

  /// Largest feature index any split reads, or -1 for split-free models.
  int max_feature() const noexcept {
    int mx = -1;
    for (const auto& t : trees_) {
      for (const auto& n : t.nodes()) mx = std::max(mx, n.feature);
    }
    return mx;
  }

  nlohmann::json to_json() const {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : trees_) {
      nlohmann::json nodes = nlohmann::json::array();
      for (const auto& n : t.nodes()) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
      trees.push_back(std::move(nodes));
    }
    return {{"params", params_}, {"base_score", base_score_}, {"trees", std::move(trees)}};
  }

  static GbdtClassifier from_json(const nlohmann::json& j) {
    GbdtClassifier model(j.at("params").get<GbdtParams>());
    model.base_score_ = j.at("base_score").get<double>();
    for (const auto& t : j.at("trees")) {
      std::vector<TreeNode> nodes;
      for (const auto& n : t) {
        nodes.push_back(TreeNode{n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                                 n.at(4).get<double>()});
      }
      const int count = static_cast<int>(nodes.size());
      if (count == 0) throw ScoringError("model tree has no nodes");
      for (int i = 0; i < count; ++i) {
        const auto& n = nodes[static_cast<std::size_t>(i)];
        if (n.feature >= 0 && (n.left <= i || n.right <= i || n.left >= count || n.right >= count)) {
          throw ScoringError("model tree has invalid child links");
        }
      }
      RegressionTree tree;
      tree.set_nodes(std::move(nodes));
      model.trees_.push_back(std::move(tree));
    }
    return model;
  }

 private:
  GbdtParams params_;
  double base_score_ = 0.0;
  std::vector<RegressionTree> trees_;
};

}  // namespace avlabel
