#pragma once

#include <algorithm>
#include <cstddef>
#include <string_view>
#include <vector>

#include "carto/text.hpp"

namespace carto {

/// Levenshtein distance between two sequences (unit insert/delete/substitute).
template <typename Seq>
std::size_t levenshtein(const Seq& a, const Seq& b) {
  const auto& shorter = a.size() <= b.size() ? a : b;
  const auto& longer = a.size() <= b.size() ? b : a;
  std::vector<std::size_t> row(shorter.size() + 1);
  for (std::size_t j = 0; j < row.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= longer.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= shorter.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t subst = diag + (longer[i - 1] == shorter[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, subst});
      diag = up;
    }
  }
  return row.back();
}

/// Character-level edit distance over Unicode scalar values of UTF-8 input.
inline std::size_t char_edit_distance(std::string_view a, std::string_view b) {
  if (a == b) return 0;
  return levenshtein(text::decode_utf8(a), text::decode_utf8(b));
}

}  // namespace carto
