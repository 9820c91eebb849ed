#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "avlabel/error.hpp"
#include "avlabel/strings.hpp"

namespace avlabel {

/// Groups of correlated AV products (shared engines, common ownership).
/// A cluster is identified by its alphabetically first member, lowercased;
/// products not listed form singleton clusters named after themselves.
class AVClusterMap {
 public:
  AVClusterMap() = default;

  void add_cluster(const std::vector<std::string>& members) {
    std::vector<std::string> lowered;
    for (const auto& m : members) {
      auto name = to_lower(trim(m));
      if (!name.empty()) lowered.push_back(std::move(name));
    }
    if (lowered.empty()) return;
    std::sort(lowered.begin(), lowered.end());
    for (const auto& name : lowered) {
      if (cluster_of_.count(name)) throw ConfigError("AV '" + name + "' listed in two clusters");
      cluster_of_[name] = lowered.front();
    }
    ++num_clusters_;
  }

  std::string cluster_of(std::string_view av_name) const {
    auto key = to_lower(av_name);
    auto it = cluster_of_.find(key);
    return it == cluster_of_.end() ? key : it->second;
  }

  bool related(std::string_view a, std::string_view b) const { return cluster_of(a) == cluster_of(b); }

  std::size_t num_listed_clusters() const noexcept { return num_clusters_; }

  /// One cluster per line, members separated by commas. `#` comments.
  static AVClusterMap load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open cluster map: " + path);
    AVClusterMap map;
    std::string line;
    while (std::getline(in, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      if (trim(line).empty()) continue;
      map.add_cluster(split(line, ','));
    }
    return map;
  }

 private:
  std::unordered_map<std::string, std::string> cluster_of_;
  std::size_t num_clusters_ = 0;
};

}  // namespace avlabel
