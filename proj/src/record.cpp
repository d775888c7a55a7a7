// SPDX-License-Identifier: Apache-2.0
#include "naepro/record.hpp"

#include <cmath>
#include <string>

#include "naepro/error.hpp"

namespace naepro {

int amino_acid_index(char letter) noexcept {
  const auto pos = kAminoAcids.find(letter);
  return pos == std::string_view::npos ? -1 : static_cast<int>(pos);
}

geometry::Coordinates ProteinRecord::fragment_coords(const std::vector<std::size_t>& indices) const {
  geometry::Coordinates out(static_cast<Eigen::Index>(indices.size()), 3);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = coords.row(static_cast<Eigen::Index>(indices[r]));
  }
  return out;
}

void validate_record(const ProteinRecord& record) {
  const std::size_t n = record.sequence.size();
  if (n < 2) throw ValidationError("record '" + record.id + "' has " + std::to_string(n) + " residues, need >= 2");
  if (static_cast<std::size_t>(record.coords.rows()) != n) {
    throw ValidationError("record '" + record.id + "': sequence length " + std::to_string(n) + " but " +
                          std::to_string(record.coords.rows()) + " coordinate rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (amino_acid_index(record.sequence[i]) < 0) {
      throw ValidationError("record '" + record.id + "': residue " + std::to_string(i + 1) + " is '" +
                            std::string(1, record.sequence[i]) + "', not one of the 20 standard amino acids");
    }
  }
  if (!record.coords.allFinite()) throw ValidationError("record '" + record.id + "': non-finite coordinate");
  for (std::size_t i = 0; i < record.fragments.size(); ++i) {
    const std::size_t f = record.fragments[i];
    if (f >= n) {
      throw ValidationError("record '" + record.id + "': fragment index " + std::to_string(f + 1) +
                            " outside 1.." + std::to_string(n));
    }
    if (i > 0 && f <= record.fragments[i - 1]) {
      throw ValidationError("record '" + record.id + "': fragment indices must be strictly increasing");
    }
  }
  for (std::size_t i = 1; i < n; ++i) {
    const double d =
        (record.coords.row(static_cast<Eigen::Index>(i)) - record.coords.row(static_cast<Eigen::Index>(i - 1))).norm();
    if (d < kMinCaDistance || d > kMaxCaDistance) {
      throw ValidationError("record '" + record.id + "': Cα distance between residues " + std::to_string(i) +
                            " and " + std::to_string(i + 1) + " is " + std::to_string(d) + " Å, outside [2, 6]");
    }
  }
}

std::vector<std::size_t> complement(const std::vector<std::size_t>& visible, std::size_t n) {
  std::vector<std::size_t> out;
  out.reserve(n - std::min(n, visible.size()));
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (next < visible.size() && visible[next] == i) {
      ++next;
      continue;
    }
    out.push_back(i);
  }
  return out;
}

}  // namespace naepro
