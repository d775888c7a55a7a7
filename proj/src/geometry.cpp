// SPDX-License-Identifier: Apache-2.0
#include "naepro/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "naepro/error.hpp"

namespace naepro::geometry {

Tensor to_tensor(const Coordinates& x) {
  Tensor t(Shape{static_cast<std::size_t>(x.rows()), 3});
  Eigen::Map<Coordinates>(t.data(), x.rows(), 3) = x;
  return t;
}

Coordinates from_tensor(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 3) {
    throw DimensionError("coordinates must be N×3, got " + shape_string(t.shape()));
  }
  return Eigen::Map<const Coordinates>(t.data(), static_cast<Eigen::Index>(t.dim(0)), 3);
}

Eigen::MatrixXd pairwise_distances(const Coordinates& x) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (x.row(i) - x.row(j)).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

std::vector<std::size_t> NeighborGraph::sources() const {
  std::vector<std::size_t> src(neighbors.size());
  for (std::size_t e = 0; e < src.size(); ++e) src[e] = e / degree;
  return src;
}

NeighborGraph knn(const Coordinates& x, std::size_t k) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < 2) throw ValidationError("knn needs at least 2 residues, got " + std::to_string(n));
  if (k == 0) throw ValidationError("knn needs k >= 1");

  NeighborGraph g;
  g.k = k;
  g.num_nodes = n;
  g.degree = std::min(k, n - 1);
  g.neighbors.resize(n * g.degree);

  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n - 1);
  std::vector<std::size_t> tied;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) cand.emplace_back((x.row(i) - x.row(j)).squaredNorm(), j);
    }
    // pair ordering is (distance, index)
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(g.degree), cand.end());
    const double dk = cand[g.degree - 1].first;
    const double band = kNeighborTieTolerance * dk;
    std::size_t r = 0;
    for (; r < g.degree && cand[r].first < dk - band; ++r) g.neighbors[i * g.degree + r] = cand[r].second;
    tied.clear();
    for (std::size_t q = r; q < cand.size(); ++q) {
      if (std::abs(cand[q].first - dk) <= band) tied.push_back(cand[q].second);
    }
    std::sort(tied.begin(), tied.end());
    for (std::size_t t = 0; r < g.degree; ++r, ++t) g.neighbors[i * g.degree + r] = tied[t];
  }
  return g;
}

NeighborGraph complete_graph(const Coordinates& x) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < 2) throw ValidationError("complete graph needs at least 2 residues, got " + std::to_string(n));
  NeighborGraph g = knn(x, n - 1);
  return g;
}

Coordinates RigidTransform::apply(const Coordinates& x) const {
  Coordinates out(x.rows(), 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = (rotation * x.row(i).transpose() + translation).transpose();
  return out;
}

RigidTransform random_rigid(Rng& rng, bool proper) {
  const double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  const double u3 = uniform01(rng);
  const double two_pi = 2.0 * std::numbers::pi;
  Eigen::Quaterniond q(std::sqrt(u1) * std::cos(two_pi * u3), std::sqrt(1.0 - u1) * std::sin(two_pi * u2),
                       std::sqrt(1.0 - u1) * std::cos(two_pi * u2), std::sqrt(u1) * std::sin(two_pi * u3));
  q.normalize();

  RigidTransform t;
  t.rotation = q.toRotationMatrix();
  t.proper = proper;
  if (!proper) t.rotation.col(0) = -t.rotation.col(0);
  for (int a = 0; a < 3; ++a) t.translation[a] = uniform(rng, -10.0, 10.0);
  return t;
}

Vec3 spherical_offset(double omega1, double omega2, double r) {
  return r * Vec3(std::sin(omega1) * std::cos(omega2), std::sin(omega1) * std::sin(omega2), std::cos(omega1));
}

Coordinates init_coordinates(std::span<const std::size_t> fragments, const Coordinates& fragment_coords,
                             std::size_t n, Rng& rng) {
  if (static_cast<std::size_t>(fragment_coords.rows()) != fragments.size()) {
    throw DimensionError("init_coordinates: " + std::to_string(fragments.size()) + " fragment indices but " +
                         std::to_string(fragment_coords.rows()) + " coordinate rows");
  }
  if (!fragment_coords.allFinite()) throw ValidationError("init_coordinates: non-finite fragment coordinate");

  Coordinates x(static_cast<Eigen::Index>(n), 3);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (next < fragments.size() && fragments[next] == i) {
      x.row(static_cast<Eigen::Index>(i)) = fragment_coords.row(static_cast<Eigen::Index>(next));
      ++next;
      continue;
    }
    const Vec3 prev = i == 0 ? Vec3::Zero() : Vec3(x.row(static_cast<Eigen::Index>(i - 1)).transpose());
    const double omega1 = uniform(rng, 0.0, std::numbers::pi);
    const double omega2 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    x.row(static_cast<Eigen::Index>(i)) = (prev + spherical_offset(omega1, omega2)).transpose();
  }
  if (next != fragments.size()) {
    throw ValidationError("init_coordinates: fragment indices must be sorted, unique and < " + std::to_string(n));
  }
  return x;
}

double kabsch_rmsd(const Coordinates& a, const Coordinates& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("kabsch_rmsd: " + std::to_string(a.rows()) + " vs " + std::to_string(b.rows()) + " points");
  }
  if (a.rows() == 0) throw DimensionError("kabsch_rmsd of empty structures");
  const Eigen::RowVector3d ca = a.colwise().mean();
  const Eigen::RowVector3d cb = b.colwise().mean();
  const Eigen::MatrixX3d pa = a.rowwise() - ca;
  const Eigen::MatrixX3d pb = b.rowwise() - cb;

  const Mat3 h = pa.transpose() * pb;
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 fix = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) fix(2, 2) = -1.0;
  const Mat3 r = svd.matrixV() * fix * svd.matrixU().transpose();

  const Eigen::MatrixX3d diff = (pa * r.transpose()) - pb;
  return std::sqrt(diff.squaredNorm() / static_cast<double>(a.rows()));
}

}  // namespace naepro::geometry
