#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace avlabel {

/// Union-find over token keys with one canonical token per group.
///
/// Build with unite(), then call finalize() to pick canonical names: the
/// member with the highest report count, ties to the lexicographically
/// smallest. Tokens never added resolve to themselves.
class AliasMap {
 public:
  std::size_t add(const std::string& token) {
    auto [it, inserted] = ids_.try_emplace(token, names_.size());
    if (inserted) {
      names_.push_back(token);
      parent_.push_back(parent_.size());
      finalized_ = false;
    }
    return it->second;
  }

  void unite(const std::string& a, const std::string& b) {
    std::size_t ra = find(add(a));
    std::size_t rb = find(add(b));
    if (ra == rb) return;
    if (rb < ra) std::swap(ra, rb);
    parent_[rb] = ra;
    finalized_ = false;
  }

  /// Current union-find root name of `token` (adds the token if new).
  const std::string& representative(const std::string& token) { return names_[find(add(token))]; }

  bool same_group(const std::string& a, const std::string& b) const {
    if (a == b) return true;
    auto ia = ids_.find(a);
    auto ib = ids_.find(b);
    if (ia == ids_.end() || ib == ids_.end()) return false;
    return find(ia->second) == find(ib->second);
  }

  void finalize(const std::function<std::uint64_t(const std::string&)>& report_count) {
    canonical_.assign(names_.size(), 0);
    std::vector<std::size_t> best(names_.size(), SIZE_MAX);
    std::vector<std::uint64_t> counts(names_.size());
    for (std::size_t i = 0; i < names_.size(); ++i) counts[i] = report_count(names_[i]);
    for (std::size_t i = 0; i < names_.size(); ++i) {
      std::size_t root = find(i);
      std::size_t& cur = best[root];
      if (cur == SIZE_MAX || counts[i] > counts[cur] || (counts[i] == counts[cur] && names_[i] < names_[cur])) {
        cur = i;
      }
    }
    groups_.assign(names_.size(), {});
    for (std::size_t i = 0; i < names_.size(); ++i) {
      std::size_t root = find(i);
      canonical_[i] = best[root];
      groups_[root].push_back(i);
    }
    finalized_ = true;
  }

  /// Canonical name for `token`; the token itself when it has no aliases.
  const std::string& canonical(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end() || !finalized_) return token;
    return names_[canonical_[it->second]];
  }

  std::vector<std::string> members_of(const std::string& token) const {
    std::vector<std::string> out;
    auto it = ids_.find(token);
    if (it == ids_.end()) return {token};
    std::size_t root = find(it->second);
    if (finalized_) {
      for (std::size_t i : groups_[root]) out.push_back(names_[i]);
    } else {
      for (std::size_t i = 0; i < names_.size(); ++i) {
        if (find(i) == root) out.push_back(names_[i]);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Every (token, canonical) pair with token != canonical, sorted by token.
  std::vector<std::pair<std::string, std::string>> mappings() const {
    std::vector<std::pair<std::string, std::string>> out;
    if (!finalized_) return out;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (canonical_[i] != i) out.emplace_back(names_[i], names_[canonical_[i]]);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t size() const noexcept { return names_.size(); }

 private:
  // Read-only lookups never compress, so concurrent const use is safe.
  std::size_t find(std::size_t i) const {
    while (parent_[i] != i) i = parent_[i];
    return i;
  }

  std::size_t find(std::size_t i) {
    while (parent_[i] != i) {
      parent_[i] = parent_[parent_[i]];
      i = parent_[i];
    }
    return i;
  }

  std::unordered_map<std::string, std::size_t> ids_;
  std::vector<std::string> names_;
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> canonical_;
  std::vector<std::vector<std::size_t>> groups_;  // by root, after finalize()
  bool finalized_ = false;
};

}  // namespace avlabel
