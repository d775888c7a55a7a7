// SPDX-License-Identifier: Apache-2.0
#include "naepro/fragments.hpp"

#include <array>
#include <cmath>
#include <set>

#include "json.hpp"
#include "naepro/error.hpp"
#include "naepro/record.hpp"

namespace naepro::fragments {

void Alignment::validate() const {
  if (rows.empty()) throw ParseError("alignment", 0, "alignment has no rows");
  std::set<std::string> ids;
  const std::size_t w = width();
  for (const AlignmentRow& row : rows) {
    if (!ids.insert(row.id).second) throw ParseError("alignment", 0, "duplicate row id '" + row.id + "'");
    if (row.aligned.size() != w) {
      throw ParseError("alignment", 0, "ragged alignment: row '" + row.id + "' has " +
                                           std::to_string(row.aligned.size()) + " columns, expected " +
                                           std::to_string(w));
    }
    for (std::size_t c = 0; c < w; ++c) {
      const char ch = row.aligned[c];
      if (ch != '-' && amino_acid_index(ch) < 0) {
        throw ParseError("alignment", 0, "row '" + row.id + "' column " + std::to_string(c + 1) +
                                             ": illegal character '" + std::string(1, ch) + "'");
      }
    }
  }
}

double column_identity(const Alignment& alignment, std::size_t col) {
  if (col >= alignment.width()) {
    throw DimensionError("column " + std::to_string(col + 1) + " outside alignment of width " +
                         std::to_string(alignment.width()));
  }
  std::array<std::size_t, kNumAminoAcids> counts{};
  for (const AlignmentRow& row : alignment.rows) {
    const int a = amino_acid_index(row.aligned[col]);
    if (a >= 0) ++counts[static_cast<std::size_t>(a)];
  }
  std::size_t modal = 0;
  for (std::size_t c : counts) modal = std::max(modal, c);
  return 100.0 * static_cast<double>(modal) / static_cast<double>(alignment.rows.size());
}

const std::vector<std::size_t>& FragmentMask::at(std::string_view id) const {
  for (const SequenceMask& s : sequences) {
    if (s.id == id) return s.indices;
  }
  throw ValidationError("no fragment mask for sequence '" + std::string(id) + "'");
}

FragmentMask mine_fragments(const Alignment& alignment, double tau) {
  if (!(tau >= 0.0 && tau <= 100.0)) throw ConfigError("tau must lie in [0, 100]");
  alignment.validate();
  const std::size_t w = alignment.width();
  std::vector<bool> conserved(w);
  for (std::size_t c = 0; c < w; ++c) conserved[c] = column_identity(alignment, c) > tau;

  FragmentMask mask;
  mask.tau = tau;
  for (const AlignmentRow& row : alignment.rows) {
    SequenceMask s{row.id, {}};
    std::size_t position = 0;
    for (std::size_t c = 0; c < w; ++c) {
      if (row.aligned[c] == '-') continue;
      if (conserved[c]) s.indices.push_back(position);
      ++position;
    }
    mask.sequences.push_back(std::move(s));
  }
  return mask;
}

std::string to_json(const FragmentMask& mask) {
  nlohmann::ordered_json frags = nlohmann::ordered_json::object();
  for (const SequenceMask& s : mask.sequences) {
    std::vector<std::size_t> one_based(s.indices);
    for (auto& i : one_based) ++i;
    frags[s.id] = one_based;
  }
  nlohmann::ordered_json doc;
  doc["tau"] = mask.tau;
  doc["fragments"] = std::move(frags);
  return doc.dump(2) + "\n";
}

FragmentMask parse_fragment_mask(std::string_view text, const std::string& source) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source, 0, std::string("not valid JSON: ") + e.what());
  }
  FragmentMask mask;
  try {
    mask.tau = doc.at("tau").get<double>();
    for (const auto& [id, indices] : doc.at("fragments").items()) {
      SequenceMask s{id, {}};
      for (const auto& v : indices) {
        const auto i = v.get<std::size_t>();
        if (i == 0) throw ParseError(source, 0, "fragment indices are 1-based; got 0 for '" + id + "'");
        if (!s.indices.empty() && i - 1 <= s.indices.back()) {
          throw ParseError(source, 0, "fragment indices for '" + id + "' must be strictly increasing");
        }
        s.indices.push_back(i - 1);
      }
      mask.sequences.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source, 0, std::string("malformed fragment mask: ") + e.what());
  }
  return mask;
}

}  // namespace naepro::fragments
