// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "naepro/geometry.hpp"

namespace naepro {

/// The 20 common amino acids; position in this string is the class index.
inline constexpr std::string_view kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";
inline constexpr std::size_t kNumAminoAcids = 20;

/// Class index of an uppercase one-letter code, or -1.
int amino_acid_index(char letter) noexcept;

/// Accepted band for consecutive Cα distances on ingestion (Å).
inline constexpr double kMinCaDistance = 2.0;
inline constexpr double kMaxCaDistance = 6.0;

struct ProteinRecord {
  std::string id;
  std::string sequence;
  geometry::Coordinates coords;
  std::vector<std::size_t> fragments;  // 0-based, strictly increasing

  std::size_t size() const noexcept { return sequence.size(); }
  geometry::Coordinates fragment_coords(const std::vector<std::size_t>& indices) const;
};

/// Throws ValidationError describing the first broken invariant.
void validate_record(const ProteinRecord& record);

/// Indices of {0..n-1} not in `visible` (sorted input).
std::vector<std::size_t> complement(const std::vector<std::size_t>& visible, std::size_t n);

}  // namespace naepro
