// SPDX-License-Identifier: Apache-2.0
//
// Conserved-fragment mining from a multiple sequence alignment. A column's
// identity is the share of rows holding its most frequent residue (gaps
// never count); columns whose identity exceeds tau percent are conserved,
// and every residue sitting in a conserved column becomes a fragment of
// its sequence.
#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace naepro::fragments {

struct AlignmentRow {
  std::string id;
  std::string aligned;  // uppercase letters and '-'
};

struct Alignment {
  std::vector<AlignmentRow> rows;

  std::size_t width() const noexcept { return rows.empty() ? 0 : rows.front().aligned.size(); }
  /// Throws ParseError naming the row (and column) of the first problem.
  void validate() const;
};

/// Percentage in [0, 100]; `col` is 0-based.
double column_identity(const Alignment& alignment, std::size_t col);

struct SequenceMask {
  std::string id;
  std::vector<std::size_t> indices;  // 0-based positions in the ungapped sequence
};

struct FragmentMask {
  double tau = 0.0;
  std::vector<SequenceMask> sequences;  // alignment row order

  const std::vector<std::size_t>& at(std::string_view id) const;
};

FragmentMask mine_fragments(const Alignment& alignment, double tau);

/// {"tau": .., "fragments": {"<id>": [1-based indices], ...}} in row order.
std::string to_json(const FragmentMask& mask);
FragmentMask parse_fragment_mask(std::string_view text, const std::string& source = "fragment mask");

}  // namespace naepro::fragments
