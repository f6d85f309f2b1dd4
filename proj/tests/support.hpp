#pragma once

#include "elastica/binding.hpp"
#include "elastica/core.hpp"
#include "elastica/rng.hpp"

#include <algorithm>
#include <cmath>

namespace elastica::testing {

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline Points random_cloud(Rng& rng, int n, const Vec3& center, double radius) {
  Points p(3, n);
  for (int i = 0; i < n; ++i) {
    Vec3 v;
    do v = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    while (v.squaredNorm() > 1.0);
    p.col(i) = center + radius * v;
  }
  return p;
}

inline GaussianSet gaussians_at(const Points& centers, double scale = 0.05) {
  GaussianSet g;
  g.resize(centers.cols());
  g.centers = centers;
  g.scales.setConstant(scale);
  g.colors.setConstant(0.9);
  g.opacities.setConstant(0.8);
  g.rotations.setZero();
  g.rotations.row(0).setOnes();
  return g;
}

/// Scene around the given anchors, with Gaussians placed on the anchors.
inline SceneBundle make_bundle(const Points& anchors, int k_neighbors, const PhysicalAttributes& attrs,
                               const SimConfig& config = {}, const Points* gaussian_centers = nullptr) {
  SceneBundle b;
  b.object_id = "test-object";
  b.anchors.positions = anchors;
  b.anchors.velocities = Points::Zero(3, anchors.cols());
  b.topology = build_topology(anchors, k_neighbors);
  const Points& centers = gaussian_centers ? *gaussian_centers : anchors;
  b.gaussians = gaussians_at(centers);
  b.binding = build_binding(centers, anchors, std::min<int>(4, static_cast<int>(anchors.cols())));
  b.attributes = attrs;
  b.config = config;
  return b;
}

inline SimConfig zero_gravity_config() {
  SimConfig c;
  c.gravity.setZero();
  c.ground_height = -1e9;
  return c;
}

}  // namespace elastica::testing
