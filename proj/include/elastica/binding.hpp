#pragma once

#include "elastica/core.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace elastica {

/// FNV-1a (64-bit) over the UTF-8 bytes of an object identifier.
std::uint64_t object_seed(std::string_view object_id);

/// Solid occupancy of a point cloud on a cubic-voxel grid: voxels holding a
/// point, dilated by one voxel, with enclosed cavities filled.
class OccupancyGrid {
 public:
  OccupancyGrid(const Points& cloud, int resolution);

  double voxel_size() const { return voxel_; }
  Eigen::Vector3i dims() const { return dims_; }
  bool occupied(const Eigen::Vector3i& cell) const;
  /// Whether the voxel containing `p` is occupied (false outside the grid).
  bool contains(const Vec3& p) const;
  Eigen::Vector3i cell_of(const Vec3& p) const;
  /// Centers of all occupied voxels in x-fastest scan order.
  Points occupied_centers() const;
  std::size_t occupied_count() const;

 private:
  std::size_t flat(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * static_cast<std::size_t>(dims_.y()) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(dims_.x()) +
           static_cast<std::size_t>(x);
  }

  Vec3 origin_;
  double voxel_ = 1.0;
  Eigen::Vector3i dims_;
  std::vector<std::uint8_t> cells_;
};

/// Volume anchors: occupancy voxel centers thinned by seeded farthest-point
/// sampling. Output order is the sampling order. Throws DataError when the
/// grid has fewer occupied voxels than requested anchors.
Points sample_anchors(const Points& centers, int n_anchors, std::uint64_t seed, int grid_resolution = 32);

/// Directed K-nearest-neighbour graph (brute force, ties to the lower index)
/// symmetrised into sorted, deduplicated undirected edges with i < j.
SpringTopology build_topology(const Points& anchors, int k_neighbors, double eps = 1e-8);

/// Each Gaussian's n_b nearest anchors (ascending distance, ties to the lower index).
BindingTable build_binding(const Points& gaussian_centers, const Points& anchors, int n_b, double p_b = 2.0,
                           double eps_r = 1e-9);

/// Normalised IDW weights, n_b x N. A Gaussian whose nearest anchor is closer
/// than eps_r gets weight 1 on that anchor and 0 elsewhere.
Eigen::MatrixXd binding_weights(const BindingTable& binding);

/// Moves Gaussian centers with the anchors.
Points interpolate_centers(const BindingTable& binding, const Points& anchor_positions);

/// Transpose of interpolate_centers' linear map: d loss / d anchors from
/// d loss / d centers.
Points interpolate_centers_adjoint(const BindingTable& binding, const Points& center_gradients,
                                   Eigen::Index n_anchors);

}  // namespace elastica
