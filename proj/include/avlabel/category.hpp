#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "avlabel/strings.hpp"

namespace avlabel {

/// Lexical category of a detection token.
enum class Category : std::uint8_t { FAM, GRP, BEH, FILE, VULN, PACK, HEUR, SUF, PRE, UNK };

inline constexpr std::size_t kNumCategories = 10;

inline constexpr std::array<Category, kNumCategories> kAllCategories = {
    Category::FAM,  Category::GRP,  Category::BEH, Category::FILE, Category::VULN,
    Category::PACK, Category::HEUR, Category::SUF, Category::PRE,  Category::UNK};

inline constexpr std::string_view to_string(Category c) noexcept {
  constexpr std::array<std::string_view, kNumCategories> names = {
      "FAM", "GRP", "BEH", "FILE", "VULN", "PACK", "HEUR", "SUF", "PRE", "UNK"};
  return names[static_cast<std::size_t>(c)];
}

inline constexpr std::size_t index_of(Category c) noexcept { return static_cast<std::size_t>(c); }

/// Case-insensitive parse of a category name.
inline std::optional<Category> parse_category(std::string_view name) {
  const std::string upper = [&] {
    std::string s(name);
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
  }();
  for (Category c : kAllCategories) {
    if (to_string(c) == upper) return c;
  }
  return std::nullopt;
}

/// PRE and UNK carry no information about what a token is.
inline constexpr bool is_informative(Category c) noexcept {
  return c != Category::PRE && c != Category::UNK;
}

/// Categories that can become tags.
inline constexpr bool is_taggable(Category c) noexcept {
  return c == Category::BEH || c == Category::FILE || c == Category::PACK || c == Category::VULN ||
         c == Category::GRP;
}

}  // namespace avlabel
