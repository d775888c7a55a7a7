// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "naepro/record.hpp"

namespace naepro {

/// Self-avoiding Cα trace: fixed 3.75 Å steps in random directions, each new
/// point at least `min_separation` Å from every earlier non-adjacent point.
geometry::Coordinates self_avoiding_chain(std::size_t n, Rng& rng, double min_separation = 4.0);

/// Random sequence over the 20 letters, self-avoiding coordinates and
/// `num_fragments` distinct fragment indices drawn uniformly.
ProteinRecord synthetic_record(const std::string& id, std::size_t n, std::size_t num_fragments, Rng& rng);

std::vector<ProteinRecord> synthetic_dataset(std::size_t count, std::size_t n, std::size_t num_fragments,
                                             std::uint64_t seed, const std::string& prefix = "synthetic");

}  // namespace naepro
