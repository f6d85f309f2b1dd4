#include "elastica/binding.hpp"

#include "elastica/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace elastica {

std::uint64_t object_seed(std::string_view object_id) {
  if (object_id.empty()) throw DataError("object id must be non-empty", "object_id");
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : object_id) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Two voxels of padding per side: one for the dilation, one so the exterior
// flood fill can wrap around the whole object.
constexpr int kPad = 2;

OccupancyGrid::OccupancyGrid(const Points& cloud, int resolution) {
  if (cloud.cols() == 0) throw DataError("occupancy grid needs at least one point");
  if (resolution < 1) throw DataError("grid resolution must be positive");
  const Vec3 lo = cloud.rowwise().minCoeff();
  const Vec3 hi = cloud.rowwise().maxCoeff();
  const double extent = (hi - lo).maxCoeff();
  voxel_ = extent > 0.0 ? extent / resolution : 1e-3;
  origin_ = lo - Vec3::Constant(kPad * voxel_);
  for (int a = 0; a < 3; ++a)
    dims_[a] = static_cast<int>(std::floor((hi[a] - lo[a]) / voxel_)) + 1 + 2 * kPad;

  const std::size_t total = static_cast<std::size_t>(dims_.x()) * dims_.y() * dims_.z();
  std::vector<std::uint8_t> raw(total, 0);
  for (Eigen::Index i = 0; i < cloud.cols(); ++i) {
    const Eigen::Vector3i c = cell_of(cloud.col(i));
    raw[flat(c.x(), c.y(), c.z())] = 1;
  }

  std::vector<std::uint8_t> dilated(total, 0);
  for (int z = 0; z < dims_.z(); ++z)
    for (int y = 0; y < dims_.y(); ++y)
      for (int x = 0; x < dims_.x(); ++x) {
        if (!raw[flat(x, y, z)]) continue;
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) dilated[flat(x + dx, y + dy, z + dz)] = 1;
      }

  // Flood the exterior from the grid border; whatever it cannot reach is solid.
  std::vector<std::uint8_t> outside(total, 0);
  std::vector<Eigen::Vector3i> stack{Eigen::Vector3i::Zero()};
  outside[0] = 1;
  const int nbr[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  while (!stack.empty()) {
    const Eigen::Vector3i c = stack.back();
    stack.pop_back();
    for (const auto& d : nbr) {
      const Eigen::Vector3i n(c.x() + d[0], c.y() + d[1], c.z() + d[2]);
      if ((n.array() < 0).any() || (n.array() >= dims_.array()).any()) continue;
      const std::size_t k = flat(n.x(), n.y(), n.z());
      if (outside[k] || dilated[k]) continue;
      outside[k] = 1;
      stack.push_back(n);
    }
  }
  cells_.resize(total);
  for (std::size_t k = 0; k < total; ++k) cells_[k] = outside[k] ? 0 : 1;
}

Eigen::Vector3i OccupancyGrid::cell_of(const Vec3& p) const {
  const Vec3 rel = (p - origin_) / voxel_;
  return {static_cast<int>(std::floor(rel.x())), static_cast<int>(std::floor(rel.y())),
          static_cast<int>(std::floor(rel.z()))};
}

bool OccupancyGrid::occupied(const Eigen::Vector3i& c) const {
  if ((c.array() < 0).any() || (c.array() >= dims_.array()).any()) return false;
  return cells_[flat(c.x(), c.y(), c.z())] != 0;
}

bool OccupancyGrid::contains(const Vec3& p) const { return occupied(cell_of(p)); }

std::size_t OccupancyGrid::occupied_count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

Points OccupancyGrid::occupied_centers() const {
  Points out(3, static_cast<Eigen::Index>(occupied_count()));
  Eigen::Index k = 0;
  for (int z = 0; z < dims_.z(); ++z)
    for (int y = 0; y < dims_.y(); ++y)
      for (int x = 0; x < dims_.x(); ++x)
        if (cells_[flat(x, y, z)]) out.col(k++) = origin_ + voxel_ * Vec3(x + 0.5, y + 0.5, z + 0.5);
  return out;
}

Points sample_anchors(const Points& centers, int n_anchors, std::uint64_t seed, int grid_resolution) {
  if (centers.cols() < 4) throw DataError("anchor sampling needs at least 4 points", "centers");
  if (n_anchors < 4) throw DataError("anchor sampling needs at least 4 anchors", "n_anchors");
  const OccupancyGrid grid(centers, grid_resolution);
  const Points candidates = grid.occupied_centers();
  const Eigen::Index m = candidates.cols();
  if (m < n_anchors)
    throw DataError("only " + std::to_string(m) + " occupied voxels for " + std::to_string(n_anchors) +
                        " anchors; use a coarser grid (lower resolution) or fewer anchors",
                    "grid_resolution");

  Rng rng(seed);
  Points out(3, n_anchors);
  Eigen::VectorXd nearest = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::infinity());
  Eigen::Index pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m)));
  for (int a = 0; a < n_anchors; ++a) {
    out.col(a) = candidates.col(pick);
    nearest = nearest.cwiseMin((candidates.colwise() - candidates.col(pick)).colwise().squaredNorm().transpose());
    nearest.maxCoeff(&pick);  // first maximum: ties go to the lower index
  }
  return out;
}

SpringTopology build_topology(const Points& anchors, int k_neighbors, double eps) {
  const Eigen::Index n = anchors.cols();
  if (k_neighbors < 1 || k_neighbors >= n)
    throw DataError("K must satisfy 1 <= K < N_A (K=" + std::to_string(k_neighbors) + ", N_A=" + std::to_string(n) +
                        ")",
                    "k_neighbors");

  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(n * k_neighbors));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd d2 = (anchors.colwise() - anchors.col(i)).colwise().squaredNorm().transpose();
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::erase(order, i);
    std::partial_sort(order.begin(), order.begin() + k_neighbors, order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return d2[a] < d2[b] || (d2[a] == d2[b] && a < b);
    });
    for (int k = 0; k < k_neighbors; ++k) {
      const auto j = static_cast<int>(order[static_cast<std::size_t>(k)]);
      edges.push_back({std::min(static_cast<int>(i), j), std::max(static_cast<int>(i), j)});
    }
    order.resize(static_cast<std::size_t>(n));
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  SpringTopology t;
  t.k_neighbors = k_neighbors;
  t.rest_lengths.resize(static_cast<Eigen::Index>(edges.size()));
  std::string degenerate;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const double len = (anchors.col(edges[e].i) - anchors.col(edges[e].j)).norm();
    t.rest_lengths[static_cast<Eigen::Index>(e)] = len;
    if (len < eps) degenerate += " (" + std::to_string(edges[e].i) + "," + std::to_string(edges[e].j) + ")";
  }
  if (!degenerate.empty()) throw DataError("degenerate springs with near-zero rest length:" + degenerate, "anchors");
  t.edges = std::move(edges);
  return t;
}

BindingTable build_binding(const Points& gaussian_centers, const Points& anchors, int n_b, double p_b, double eps_r) {
  const Eigen::Index n_anchors = anchors.cols();
  if (n_b < 1 || n_b > n_anchors) throw DataError("n_b must satisfy 1 <= n_b <= N_A", "n_b");
  if (!(p_b > 0.0)) throw DataError("p_b must be positive", "p_b");
  BindingTable b;
  b.n_b = n_b;
  b.p_b = p_b;
  b.eps_r = eps_r;
  b.indices.resize(n_b, gaussian_centers.cols());
  b.rest_distances.resize(n_b, gaussian_centers.cols());
  b.rest_anchors = anchors;
  b.rest_centers = gaussian_centers;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_anchors));
  for (Eigen::Index g = 0; g < gaussian_centers.cols(); ++g) {
    const Eigen::VectorXd d = (anchors.colwise() - gaussian_centers.col(g)).colwise().norm().transpose();
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::partial_sort(order.begin(), order.begin() + n_b, order.end(),
                      [&](Eigen::Index a, Eigen::Index c) { return d[a] < d[c] || (d[a] == d[c] && a < c); });
    for (int r = 0; r < n_b; ++r) {
      const Eigen::Index a = order[static_cast<std::size_t>(r)];
      b.indices(r, g) = static_cast<int>(a);
      b.rest_distances(r, g) = d[a];
    }
  }
  return b;
}

Eigen::MatrixXd binding_weights(const BindingTable& b) {
  Eigen::MatrixXd w(b.n_b, b.size());
  for (Eigen::Index g = 0; g < b.size(); ++g) {
    Eigen::Index nearest;
    const double r_min = b.rest_distances.col(g).minCoeff(&nearest);
    if (r_min < b.eps_r) {
      w.col(g).setZero();
      w(nearest, g) = 1.0;
      continue;
    }
    for (int r = 0; r < b.n_b; ++r) w(r, g) = std::pow(std::max(b.rest_distances(r, g), b.eps_r), -b.p_b);
    w.col(g) /= w.col(g).sum();
  }
  return w;
}

Points interpolate_centers(const BindingTable& b, const Points& anchor_positions) {
  const Eigen::MatrixXd w = binding_weights(b);
  const bool displacement = b.mode == BindingMode::Displacement;
  Points out(3, b.size());
  for (Eigen::Index g = 0; g < b.size(); ++g) {
    Vec3 acc = Vec3::Zero();
    for (int r = 0; r < b.n_b; ++r) {
      const int a = b.indices(r, g);
      if (w(r, g) == 0.0) continue;
      acc += w(r, g) * (displacement ? Vec3(anchor_positions.col(a) - b.rest_anchors.col(a))
                                     : Vec3(anchor_positions.col(a)));
    }
    out.col(g) = displacement ? Vec3(b.rest_centers.col(g) + acc) : acc;
  }
  // Coincident anchors: follow that anchor's displacement in either mode.
  if (!displacement) {
    for (Eigen::Index g = 0; g < b.size(); ++g) {
      Eigen::Index nearest;
      if (b.rest_distances.col(g).minCoeff(&nearest) < b.eps_r) {
        const int a = b.indices(static_cast<int>(nearest), g);
        out.col(g) = b.rest_centers.col(g) + anchor_positions.col(a) - b.rest_anchors.col(a);
      }
    }
  }
  return out;
}

Points interpolate_centers_adjoint(const BindingTable& b, const Points& center_gradients, Eigen::Index n_anchors) {
  const Eigen::MatrixXd w = binding_weights(b);
  Points out = Points::Zero(3, n_anchors);
  for (Eigen::Index g = 0; g < b.size(); ++g)
    for (int r = 0; r < b.n_b; ++r) out.col(b.indices(r, g)) += w(r, g) * center_gradients.col(g);
  return out;
}

}  // namespace elastica
