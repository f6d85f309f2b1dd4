#include "elastica/core.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace elastica {
namespace {

bool finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

template <typename... Args>
std::string msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

void check_attributes(const PhysicalAttributes& a, Eigen::Index n_anchors, Eigen::Index n_edges,
                      std::vector<std::string>& out) {
  if (a.shared) {
    if (a.mass.size() != 1 || a.stiffness.size() != 1 || a.damping.size() != 1)
      out.push_back("attributes: shared mode requires exactly one mass, stiffness and damping value");
  } else {
    if (a.mass.size() != n_anchors)
      out.push_back(msg("attributes.mass: expected ", n_anchors, " per-anchor values, got ", a.mass.size()));
    if (a.stiffness.size() != n_edges)
      out.push_back(msg("attributes.stiffness: expected ", n_edges, " per-spring values, got ", a.stiffness.size()));
    if (a.damping.size() != n_edges)
      out.push_back(msg("attributes.damping: expected ", n_edges, " per-spring values, got ", a.damping.size()));
  }
  for (Eigen::Index i = 0; i < a.mass.size(); ++i)
    if (!(a.mass[i] > 0.0) || !std::isfinite(a.mass[i]))
      out.push_back(msg("attributes.mass[", i, "]: must be positive and finite"));
  for (Eigen::Index i = 0; i < a.stiffness.size(); ++i)
    if (!(a.stiffness[i] >= 0.0) || !std::isfinite(a.stiffness[i]))
      out.push_back(msg("attributes.stiffness[", i, "]: must be non-negative and finite"));
  for (Eigen::Index i = 0; i < a.damping.size(); ++i)
    if (!(a.damping[i] >= 0.0) || !std::isfinite(a.damping[i]))
      out.push_back(msg("attributes.damping[", i, "]: must be non-negative and finite"));
  if (!(a.friction >= 0.0) || !std::isfinite(a.friction))
    out.push_back("attributes.friction: must be non-negative and finite");
}

}  // namespace

std::vector<std::string> validate_bundle(const SceneBundle& b) {
  std::vector<std::string> out;
  const Eigen::Index n_anchors = b.anchors.positions.cols();

  if (b.object_id.empty()) out.push_back("object_id: must be non-empty");

  // Gaussians
  const auto& g = b.gaussians;
  const Eigen::Index n = g.centers.cols();
  if (g.scales.size() != n || g.colors.cols() != n || g.opacities.size() != n || g.rotations.cols() != n)
    out.push_back("gaussians: field lengths disagree");
  else {
    if (!finite(g.centers)) out.push_back("gaussians.center: non-finite component");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(g.scales[i] > 0.0)) out.push_back(msg("gaussians[", i, "].scale: must be positive"));
      if (!(g.opacities[i] >= 0.0 && g.opacities[i] <= 1.0))
        out.push_back(msg("gaussians[", i, "].opacity: must lie in [0, 1], got ", g.opacities[i]));
      for (int c = 0; c < 3; ++c)
        if (!(g.colors(c, i) >= 0.0 && g.colors(c, i) <= 1.0)) {
          out.push_back(msg("gaussians[", i, "].color: components must lie in [0, 1]"));
          break;
        }
      if (std::abs(g.rotations.col(i).norm() - 1.0) > 1e-6)
        out.push_back(msg("gaussians[", i, "].rotation: quaternion norm must be 1 within 1e-6"));
    }
  }

  // Anchor state
  if (b.anchors.velocities.cols() != n_anchors)
    out.push_back("anchors: positions and velocities differ in length");
  if (!finite(b.anchors.positions) || !finite(b.anchors.velocities))
    out.push_back("anchors: non-finite component");

  // Springs
  const auto& t = b.topology;
  if (t.rest_lengths.size() != t.size())
    out.push_back("springs: rest_lengths length differs from edge count");
  std::set<std::pair<int, int>> seen;
  for (std::size_t e = 0; e < t.edges.size(); ++e) {
    const Edge& edge = t.edges[e];
    if (edge.i == edge.j) {
      out.push_back(msg("springs.edges[", e, "]: self-loop (", edge.i, ",", edge.j, ")"));
      continue;
    }
    if (edge.i > edge.j) out.push_back(msg("springs.edges[", e, "]: expected i < j"));
    if (edge.i < 0 || edge.j < 0 || edge.i >= n_anchors || edge.j >= n_anchors)
      out.push_back(msg("springs.edges[", e, "]: index out of range"));
    const auto key = std::minmax(edge.i, edge.j);
    if (!seen.insert({key.first, key.second}).second)
      out.push_back(msg("springs.edges[", e, "]: duplicate pair (", key.first, ",", key.second, ")"));
    if (static_cast<Eigen::Index>(e) < t.rest_lengths.size() && !(t.rest_lengths[e] > 0.0))
      out.push_back(msg("springs.rest_lengths[", e, "]: must be positive"));
  }

  // Binding
  const auto& bt = b.binding;
  if (bt.indices.cols() != n || bt.rest_distances.cols() != n)
    out.push_back("binding: must have one column per Gaussian");
  if (bt.indices.rows() != bt.n_b || bt.rest_distances.rows() != bt.n_b)
    out.push_back(msg("binding: each Gaussian must have exactly n_b = ", bt.n_b, " entries"));
  if (!(bt.p_b > 0.0)) out.push_back("binding.p_b: must be positive");
  if ((bt.indices.array() < 0).any() || (bt.indices.array() >= n_anchors).any())
    out.push_back("binding.indices: reference a non-existent anchor");
  if ((bt.rest_distances.array() < 0.0).any() || !finite(bt.rest_distances))
    out.push_back("binding.rest_distances: must be finite and non-negative");

  check_attributes(b.attributes, n_anchors, t.size(), out);

  // Config
  const auto& c = b.config;
  if (!(c.dt > 0.0)) out.push_back("config.dt: must be positive");
  if (c.substeps_per_frame < 1) out.push_back("config.substeps_per_frame: must be at least 1");
  if (!(c.frame_rate > 0.0)) out.push_back("config.frame_rate: must be positive");
  else if (std::abs(c.dt * c.substeps_per_frame * c.frame_rate - 1.0) > 1e-9)
    out.push_back("config: dt * substeps_per_frame must equal 1 / frame_rate");
  if (!c.gravity.allFinite()) out.push_back("config.gravity: non-finite component");

  if (b.trajectory) {
    for (std::size_t f = 0; f < b.trajectory->size(); ++f) {
      const Points& frame = (*b.trajectory)[f];
      if (frame.cols() != n_anchors) {
        out.push_back(msg("trajectory[", f, "]: expected ", n_anchors, " points, got ", frame.cols()));
      } else if (!finite(frame)) {
        out.push_back(msg("trajectory[", f, "]: non-finite component"));
      }
    }
  }
  return out;
}

}  // namespace elastica
