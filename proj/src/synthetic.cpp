// SPDX-License-Identifier: Apache-2.0
#include "naepro/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "naepro/error.hpp"

namespace naepro {

geometry::Coordinates self_avoiding_chain(std::size_t n, Rng& rng, double min_separation) {
  constexpr int kMaxTries = 10000;
  geometry::Coordinates x(static_cast<Eigen::Index>(n), 3);
  if (n == 0) return x;
  x.row(0).setZero();
  for (std::size_t i = 1; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
      // uniform direction on the sphere
      const double z = uniform(rng, -1.0, 1.0);
      const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double s = std::sqrt(1.0 - z * z);
      const geometry::Vec3 step(s * std::cos(phi), s * std::sin(phi), z);
      const geometry::Vec3 p = x.row(row - 1).transpose() + geometry::kCaSpacing * step;
      placed = true;
      for (Eigen::Index j = 0; j + 1 < row; ++j) {
        if ((x.row(j).transpose() - p).norm() < min_separation) {
          placed = false;
          break;
        }
      }
      if (placed) x.row(row) = p.transpose();
    }
    if (!placed) throw NumericError("could not extend self-avoiding chain at residue " + std::to_string(i + 1));
  }
  return x;
}

ProteinRecord synthetic_record(const std::string& id, std::size_t n, std::size_t num_fragments, Rng& rng) {
  if (num_fragments > n) throw ConfigError("more fragments than residues");
  ProteinRecord r;
  r.id = id;
  r.sequence.resize(n);
  for (char& c : r.sequence) c = kAminoAcids[static_cast<std::size_t>(rng() % kNumAminoAcids)];
  r.coords = self_avoiding_chain(n, rng);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < num_fragments; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(all[i], all[j]);
  }
  r.fragments.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(num_fragments));
  std::sort(r.fragments.begin(), r.fragments.end());
  return r;
}

std::vector<ProteinRecord> synthetic_dataset(std::size_t count, std::size_t n, std::size_t num_fragments,
                                             std::uint64_t seed, const std::string& prefix) {
  Rng rng(seed);
  std::vector<ProteinRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(synthetic_record(prefix + "_" + std::to_string(i + 1), n, num_fragments, rng));
  }
  return out;
}

}  // namespace naepro
