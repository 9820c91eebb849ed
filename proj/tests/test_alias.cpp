#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "avlabel/alias.hpp"
#include "helpers.hpp"

using namespace avlabel;
using C = Category;
using testing_support::brute_levenshtein;

namespace {

void add_reports(CooccurrenceIndex& idx, const std::vector<std::string>& keys, int n) {
  for (int i = 0; i < n; ++i) idx.add_report(keys);
}

/// Three family names that appear together in 1440 reports and alone in 60
/// more each: 1500 reports per name, pairwise co-occurrence 0.96.
CooccurrenceIndex three_way_corpus() {
  CooccurrenceIndex idx;
  add_reports(idx, {"andromeda", "gamarue", "wauchos"}, 1440);
  for (const char* name : {"andromeda", "gamarue", "wauchos"}) add_reports(idx, {name}, 60);
  return idx;
}

TokenStats stats_from_counts(const CooccurrenceIndex& idx, const std::vector<std::string>& tokens) {
  TokenStats s;
  for (const auto& t : tokens) s.entry(t).report_count = idx.count(t);
  return s;
}

CooccurrenceIndex random_index(std::mt19937& rng, const std::vector<std::string>& vocab, int reports) {
  CooccurrenceIndex idx;
  for (int r = 0; r < reports; ++r) {
    std::vector<std::string> keys;
    for (const auto& t : vocab) {
      if (rng() % 3 == 0) keys.push_back(t);
    }
    // Correlated pairs so that some sibling and parent-child pairs exist.
    if (rng() % 2) {
      keys.push_back(vocab[0]);
      keys.push_back(vocab[1]);
    }
    idx.add_report(keys);
  }
  return idx;
}

bool is_subset(const std::vector<AliasPair>& a, const std::vector<AliasPair>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace

TEST(Cooccurrence, CountsOncePerReport) {
  CooccurrenceIndex idx;
  idx.add_report(std::vector<std::string>{"a", "b", "a"});
  idx.add_report(std::vector<std::string>{"a"});
  idx.add_report(std::vector<std::string>{"b", "c"});
  EXPECT_EQ(idx.count("a"), 2u);
  EXPECT_EQ(idx.count("b"), 2u);
  EXPECT_EQ(idx.joint("a", "b"), 1u);
  EXPECT_EQ(idx.joint("b", "a"), 1u);
  EXPECT_EQ(idx.joint("a", "c"), 0u);
  EXPECT_EQ(idx.joint("a", "a"), 2u);
  EXPECT_DOUBLE_EQ(coocur("a", "b", idx), 0.5);
  EXPECT_DOUBLE_EQ(coocur("c", "b", idx), 1.0);
  EXPECT_THROW(coocur("zzz", "a", idx), UndefinedToken);
}

TEST(Cooccurrence, MergeMatchesSingleIndex) {
  std::mt19937 rng(1);
  const std::vector<std::string> vocab = {"p", "q", "r", "s", "t"};
  std::vector<std::vector<std::string>> reports;
  for (int i = 0; i < 200; ++i) {
    std::vector<std::string> keys;
    for (const auto& t : vocab) {
      if (rng() % 2) keys.push_back(t);
    }
    reports.push_back(keys);
  }
  CooccurrenceIndex whole;
  CooccurrenceIndex left;
  CooccurrenceIndex right;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    whole.add_report(reports[i]);
    (i % 3 ? left : right).add_report(reports[i]);
  }
  right.merge(left);
  for (const auto& a : vocab) {
    EXPECT_EQ(right.count(a), whole.count(a));
    for (const auto& b : vocab) EXPECT_EQ(right.joint(a, b), whole.joint(a, b));
  }
}

TEST(Escore, AgreesWithReferenceDistance) {
  EXPECT_DOUBLE_EQ(escore("kronos", "kronosbot"), 0.5);
  EXPECT_DOUBLE_EQ(escore("gamarue", "gamarue"), 1.0);
  EXPECT_DOUBLE_EQ(escore("", "abc"), 0.0);
  std::mt19937 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    std::string a;
    std::string b;
    for (std::size_t i = 0, n = rng() % 9; i < n; ++i) a += static_cast<char>('a' + rng() % 4);
    for (std::size_t i = 0, n = rng() % 9; i < n; ++i) b += static_cast<char>('a' + rng() % 4);
    EXPECT_EQ(edit_distance(a, b), brute_levenshtein(a, b)) << a << " " << b;
    const double shorter = static_cast<double>(std::min(a.size(), b.size()));
    const double expected = shorter == 0 ? 0.0 : std::max(0.0, 1.0 - brute_levenshtein(a, b) / shorter);
    EXPECT_DOUBLE_EQ(escore(a, b), expected);
  }
}

TEST(TrivialAliases, TrailingCharacterAndSubstring) {
  std::unordered_map<std::string, C> tokens = {{"backdoor", C::BEH},  {"backdoor0", C::BEH}, {"kronos", C::FAM},
                                               {"kronosbot", C::FAM}, {"netwire", C::FAM},   {"wire", C::FAM},
                                               {"abc", C::FAM},       {"abcd", C::BEH},      {"ab", C::FAM},
                                               {"abx", C::FAM}};
  auto pairs = find_trivial_aliases(tokens, default_alias_substrings());
  EXPECT_EQ(pairs, (std::vector<AliasPair>{{"backdoor", "backdoor0"}, {"kronos", "kronosbot"}, {"wire", "netwire"}}));
}

TEST(SiblingAliases, ThreeWayCluster) {
  auto idx = three_way_corpus();
  EXPECT_EQ(idx.count("gamarue"), 1500u);
  EXPECT_DOUBLE_EQ(coocur("gamarue", "wauchos", idx), 0.96);
  std::unordered_set<std::string> fams = {"andromeda", "gamarue", "wauchos"};
  auto pairs = find_sibling_aliases(fams, idx, 0.95, 1000);
  EXPECT_EQ(pairs.size(), 3u);
  Taxonomy tax;
  for (const auto& f : fams) tax.set(f, C::FAM);
  auto stats = stats_from_counts(idx, {"andromeda", "gamarue", "wauchos"});
  auto built = build_alias_map({pairs}, tax, stats);
  EXPECT_TRUE(built.discarded.empty());
  for (const auto& f : fams) EXPECT_EQ(built.map.canonical(f), "andromeda");
}

TEST(SiblingAliases, OneWayPairRejected) {
  CooccurrenceIndex idx;
  add_reports(idx, {"small", "large"}, 1980);
  add_reports(idx, {"small"}, 20);
  add_reports(idx, {"large"}, 2970);
  EXPECT_DOUBLE_EQ(coocur("small", "large", idx), 0.99);
  EXPECT_DOUBLE_EQ(coocur("large", "small", idx), 0.40);
  EXPECT_FALSE(is_sibling_pair("small", "large", idx, 0.95, 1000));
  EXPECT_TRUE(find_sibling_aliases({"small", "large"}, idx, 0.95, 1000).empty());
}

TEST(SiblingAliases, SupportMustExceedT) {
  CooccurrenceIndex idx;
  add_reports(idx, {"x1", "x2"}, 1000);
  EXPECT_FALSE(is_sibling_pair("x1", "x2", idx, 0.95, 1000));
  EXPECT_TRUE(is_sibling_pair("x1", "x2", idx, 0.95, 999));
}

TEST(SiblingAliases, SymmetricProperty) {
  std::mt19937 rng(4);
  const std::vector<std::string> vocab = {"a1", "b2", "c3", "d4", "e5"};
  for (int trial = 0; trial < 20; ++trial) {
    auto idx = random_index(rng, vocab, 300);
    for (const auto& a : vocab) {
      for (const auto& b : vocab) {
        if (a == b) continue;
        EXPECT_EQ(is_sibling_pair(a, b, idx, 0.5, 50), is_sibling_pair(b, a, idx, 0.5, 50));
      }
    }
  }
}

TEST(ParentChild, FrequentSpellingIsParent) {
  CooccurrenceIndex idx;
  add_reports(idx, {"androm", "andromeda"}, 40);
  add_reports(idx, {"andromeda"}, 200);
  add_reports(idx, {"androm"}, 10);
  std::unordered_map<std::string, C> cats = {{"androm", C::FAM}, {"andromeda", C::FAM}};
  // escore = 1 - 3/6 = 0.5 < E.
  EXPECT_TRUE(find_parent_child(idx, cats, 0.6, 0.5).empty());
  // coocur(androm, andromeda) = 0.8; 0.8 * 0.5 = 0.4.
  EXPECT_EQ(find_parent_child(idx, cats, 0.5, 0.4), (std::vector<AliasPair>{{"androm", "andromeda"}}));
  EXPECT_TRUE(find_parent_child(idx, cats, 0.5, 0.41).empty());
  cats["androm"] = C::BEH;
  EXPECT_TRUE(find_parent_child(idx, cats, 0.5, 0.4).empty());
}

TEST(ParentChild, RolesOnTies) {
  CooccurrenceIndex idx;
  add_reports(idx, {"qbot", "qakbot"}, 5);
  EXPECT_EQ(child_parent("qbot", "qakbot", idx), (std::pair<std::string, std::string>{"qakbot", "qbot"}));
}

TEST(AliasMap, ChainsAndCanonical) {
  Taxonomy tax;
  for (const char* t : {"a", "b", "c", "d"}) tax.set(t, C::FAM);
  tax.set("trojan", C::BEH);
  TokenStats stats;
  stats.entry("a").report_count = 3;
  stats.entry("b").report_count = 9;
  stats.entry("c").report_count = 9;
  auto built = build_alias_map({{{"a", "b"}}, {{"b", "c"}, {"c", "trojan"}}}, tax, stats);
  EXPECT_EQ(built.map.canonical("a"), "b");
  EXPECT_EQ(built.map.canonical("c"), "b");
  EXPECT_EQ(built.map.canonical("d"), "d");
  EXPECT_EQ(built.map.canonical("trojan"), "trojan");
  EXPECT_EQ(built.discarded, (std::vector<AliasPair>{{"c", "trojan"}}));
  EXPECT_EQ(built.map.members_of("a"), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(built.map.mappings(), (std::vector<std::pair<std::string, std::string>>{{"a", "b"}, {"c", "b"}}));
}

TEST(AliasMap, UnknownTokenJoinsGroupCategory) {
  Taxonomy tax;
  tax.set("zbot", C::FAM);
  tax.set("trojan", C::BEH);
  TokenStats stats;
  auto built = build_alias_map({{{"zeus", "zbot"}, {"zeus", "trojan"}}}, tax, stats);
  EXPECT_TRUE(built.map.same_group("zeus", "zbot"));
  EXPECT_FALSE(built.map.same_group("zeus", "trojan"));
}

TEST(AliasMap, IdempotentProperty) {
  std::mt19937 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    AliasMap map;
    std::vector<std::string> names;
    for (int i = 0; i < 30; ++i) names.push_back("t" + std::to_string(i));
    for (int e = 0; e < 25; ++e) map.unite(names[rng() % names.size()], names[rng() % names.size()]);
    std::map<std::string, std::uint64_t> counts;
    for (const auto& n : names) counts[n] = rng() % 5;
    map.finalize([&](const std::string& t) { return counts[t]; });
    for (const auto& n : names) {
      const std::string& c = map.canonical(n);
      EXPECT_EQ(map.canonical(c), c);
      for (const auto& m : map.members_of(n)) {
        EXPECT_EQ(map.canonical(m), c);
        EXPECT_TRUE(counts[c] > counts[m] || (counts[c] == counts[m] && c <= m));
      }
    }
  }
}

TEST(AliasThresholds, AntiMonotoneProperty) {
  std::mt19937 rng(8);
  const std::vector<std::string> vocab = {"zeus", "zeusx", "zbot", "zbota", "kelihos", "kelihosa", "hlux"};
  std::unordered_map<std::string, C> cats;
  std::unordered_set<std::string> fams;
  for (const auto& v : vocab) {
    cats[v] = C::FAM;
    fams.insert(v);
  }
  for (int trial = 0; trial < 10; ++trial) {
    auto idx = random_index(rng, vocab, 400);
    const std::vector<double> grid = {0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
    for (std::size_t g = 0; g + 1 < grid.size(); ++g) {
      const double lo = grid[g];
      const double hi = grid[g + 1];
      EXPECT_TRUE(is_subset(find_sibling_aliases(fams, idx, hi, 10), find_sibling_aliases(fams, idx, lo, 10)));
      EXPECT_TRUE(is_subset(find_parent_child(idx, cats, hi, 0.2), find_parent_child(idx, cats, lo, 0.2)));
      EXPECT_TRUE(is_subset(find_parent_child(idx, cats, 0.5, hi), find_parent_child(idx, cats, 0.5, lo)));
    }
    for (std::uint64_t T : {0, 50, 100, 150, 200, 400}) {
      EXPECT_TRUE(is_subset(find_sibling_aliases(fams, idx, 0.3, T + 50), find_sibling_aliases(fams, idx, 0.3, T)));
    }
  }
}

TEST(AliasFile, ReadsGroupsAndTsv) {
  testing_support::TempDir dir;
  testing_support::write_text(dir.file("a.txt"), "# comment\nAndromeda, Gamarue ,wauchos\nzeus\tzbot\n");
  EXPECT_EQ(read_alias_pairs(dir.file("a.txt")),
            (std::vector<AliasPair>{{"andromeda", "gamarue"}, {"andromeda", "wauchos"}, {"zeus", "zbot"}}));
  EXPECT_THROW(read_alias_pairs(dir.file("missing.txt")), ConfigError);
}

TEST(AliasParams, Validation) {
  AliasParams p;
  EXPECT_NO_THROW(p.validate());
  p.sibling_cooccur = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
  p = AliasParams{};
  p.min_escore = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
}
