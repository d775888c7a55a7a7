// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "naepro/tensor.hpp"

namespace naepro {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

}  // namespace naepro

namespace naepro::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// N×3 Cα positions in Å.
using Coordinates = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Typical Cα–Cα spacing used to lay out unknown residues.
inline constexpr double kCaSpacing = 3.75;

Tensor to_tensor(const Coordinates& x);
Coordinates from_tensor(const Tensor& t);

Eigen::MatrixXd pairwise_distances(const Coordinates& x);

/// Fixed-degree neighbour lists; residue i's neighbours occupy
/// neighbors[i*degree, (i+1)*degree), nearest first, ties broken by index.
struct NeighborGraph {
  std::size_t k = 0;
  std::size_t num_nodes = 0;
  std::size_t degree = 0;  // min(k, N-1)
  std::vector<std::size_t> neighbors;

  std::span<const std::size_t> neighbors_of(std::size_t i) const {
    return {neighbors.data() + i * degree, degree};
  }
  std::size_t num_edges() const { return neighbors.size(); }
  /// Edge source residue for every entry of `neighbors`.
  std::vector<std::size_t> sources() const;
};

/// Squared distances within this relative band of the k-th smallest count
/// as tied with it; tied candidates are taken in index order. The starting
/// layout produces exact ties, and without the band round-off from a rigid
/// motion would decide which of them is kept.
inline constexpr double kNeighborTieTolerance = 1e-9;

NeighborGraph knn(const Coordinates& x, std::size_t k);

/// Every other residue as a neighbour, in the same (distance, index) order
/// knn uses, so the two graphs coincide exactly when k >= N-1.
NeighborGraph complete_graph(const Coordinates& x);

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  bool proper = true;

  static RigidTransform identity() { return {}; }
  Coordinates apply(const Coordinates& x) const;
  Vec3 apply(const Vec3& v) const { return rotation * v + translation; }
};

/// Haar-uniform rotation (Shoemake quaternion); proper == false flips one
/// column to produce a reflection. Translation components ~ U(-10, 10) Å.
RigidTransform random_rigid(Rng& rng, bool proper);

/// Offset of length r at polar angle omega1 (from +z) and azimuth omega2.
Vec3 spherical_offset(double omega1, double omega2, double r = kCaSpacing);

/// Starting layout: fragment rows are copied verbatim, every other residue
/// sits one Cα spacing from its left neighbour in a random direction. A
/// non-fragment first residue is chained from the origin. `fragments` is
/// 0-based and sorted; `fragment_coords` has one row per fragment.
Coordinates init_coordinates(std::span<const std::size_t> fragments, const Coordinates& fragment_coords,
                             std::size_t n, Rng& rng);

/// RMSD after optimal proper superposition of a onto b.
double kabsch_rmsd(const Coordinates& a, const Coordinates& b);

}  // namespace naepro::geometry
