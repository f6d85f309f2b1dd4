#include "elastica/simulator.hpp"

#include <string>

namespace elastica {
namespace {

void check_dimensions(const SpringMassState& state, const SpringTopology& topology,
                      const PhysicalAttributes& attrs) {
  const Eigen::Index n = state.positions.cols();
  if (state.velocities.cols() != n)
    throw DataError("state: positions and velocities differ in length", "state");
  if (topology.rest_lengths.size() != topology.size())
    throw DataError("topology: rest_lengths length differs from edge count", "topology");
  for (const Edge& e : topology.edges)
    if (e.i < 0 || e.j < 0 || e.i >= n || e.j >= n)
      throw DataError("topology: edge (" + std::to_string(e.i) + "," + std::to_string(e.j) +
                          ") references an anchor outside the state of size " + std::to_string(n),
                      "topology");
  if (attrs.shared) {
    if (attrs.mass.size() != 1 || attrs.stiffness.size() != 1 || attrs.damping.size() != 1)
      throw DataError("attributes: shared mode expects scalar values", "attributes");
  } else if (attrs.mass.size() != n || attrs.stiffness.size() != topology.size() ||
             attrs.damping.size() != topology.size()) {
    throw DataError("attributes: per-element sizes do not match state/topology", "attributes");
  }
}

ForceAccumulator forces_unchecked(const SpringMassState& state, const SpringTopology& topology,
                                  const PhysicalAttributes& attrs, const SimConfig& config) {
  const Eigen::Index n = state.positions.cols();
  ForceAccumulator f(3, n);
  for (Eigen::Index i = 0; i < n; ++i) f.col(i) = attrs.mass_at(i) * config.gravity;

  const auto& x = state.positions;
  const auto& v = state.velocities;
  for (Eigen::Index e = 0; e < topology.size(); ++e) {
    const Edge& edge = topology.edges[static_cast<std::size_t>(e)];
    const Vec3 xi = x.col(edge.i), xj = x.col(edge.j);
    const Vec3 pair = spring_force<double>(xi, xj, topology.rest_lengths[e], attrs.stiffness_at(e), config.p_k,
                                           config.length_eps) +
                      damping_force<double>(xi, xj, v.col(edge.i), v.col(edge.j), attrs.damping_at(e),
                                            config.length_eps);
    f.col(edge.i) += pair;
    f.col(edge.j) -= pair;
  }
  return f;
}

}  // namespace

ForceAccumulator accumulate_forces(const SpringMassState& state, const SpringTopology& topology,
                                   const PhysicalAttributes& attrs, const SimConfig& config) {
  check_dimensions(state, topology, attrs);
  return forces_unchecked(state, topology, attrs, config);
}

SpringMassState step(const SpringMassState& state, const SpringTopology& topology, const PhysicalAttributes& attrs,
                     const SimConfig& config, StepRecord* record) {
  check_dimensions(state, topology, attrs);
  const Eigen::Index n = state.positions.cols();
  const double dt = config.dt;

  ForceAccumulator forces = forces_unchecked(state, topology, attrs, config);

  SpringMassState next;
  next.positions.resize(3, n);
  next.velocities.resize(3, n);
  next.time_index = state.time_index + 1;

  Points v_hat(3, n), x_hat(3, n);
  std::vector<ContactBranch> contact(static_cast<std::size_t>(record ? n : 0));
  for (Eigen::Index i = 0; i < n; ++i) {
    v_hat.col(i) = state.velocities.col(i) + forces.col(i) / attrs.mass_at(i) * dt;
    x_hat.col(i) = state.positions.col(i) + v_hat.col(i) * dt;
    const auto c = resolve_contact<double>(x_hat.col(i), v_hat.col(i), attrs.friction, config.ground_height);
    next.positions.col(i) = c.position;
    next.velocities.col(i) = c.velocity;
    if (record) contact[static_cast<std::size_t>(i)] = c.branch;
  }

  if (!next.positions.allFinite() || !next.velocities.allFinite()) throw DivergenceError(state.time_index);

  if (record) {
    record->positions = state.positions;
    record->velocities = state.velocities;
    record->forces = std::move(forces);
    record->v_hat = std::move(v_hat);
    record->x_hat = std::move(x_hat);
    record->contact = std::move(contact);
  }
  return next;
}

std::vector<SpringMassState> rollout(const SpringMassState& initial, const SpringTopology& topology,
                                     const PhysicalAttributes& attrs, const SimConfig& config, int frames,
                                     int substeps) {
  if (frames < 1) throw Error(ErrorCode::Usage, "rollout needs at least one frame");
  if (substeps < 1) throw Error(ErrorCode::Usage, "rollout needs at least one substep per frame");
  std::vector<SpringMassState> out;
  out.reserve(static_cast<std::size_t>(frames));
  SpringMassState s = initial;
  for (int f = 0; f < frames; ++f) {
    try {
      for (int k = 0; k < substeps; ++k) s = step(s, topology, attrs, config);
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.step(), f);
    }
    out.push_back(s);
  }
  return out;
}

Trajectory positions_of(const std::vector<SpringMassState>& states) {
  Trajectory t;
  t.reserve(states.size());
  for (const auto& s : states) t.push_back(s.positions);
  return t;
}

Trajectory simulate_trajectory(const SpringMassState& initial, const SpringTopology& topology,
                               const PhysicalAttributes& attrs, const SimConfig& config, int frames) {
  Trajectory t{initial.positions};
  if (frames > 1) {
    auto rest = rollout(initial, topology, attrs, config, frames - 1);
    for (auto& s : rest) t.push_back(std::move(s.positions));
  }
  return t;
}

Vec3 total_momentum(const SpringMassState& state, const PhysicalAttributes& attrs) {
  Vec3 p = Vec3::Zero();
  for (Eigen::Index i = 0; i < state.size(); ++i) p += attrs.mass_at(i) * state.velocities.col(i);
  return p;
}

double total_energy(const SpringMassState& state, const SpringTopology& topology, const PhysicalAttributes& attrs,
                    const SimConfig& config) {
  double e = 0.0;
  for (Eigen::Index i = 0; i < state.size(); ++i) {
    const double m = attrs.mass_at(i);
    e += 0.5 * m * state.velocities.col(i).squaredNorm();
    e -= m * config.gravity.dot(state.positions.col(i));
  }
  for (Eigen::Index k = 0; k < topology.size(); ++k) {
    const Edge& edge = topology.edges[static_cast<std::size_t>(k)];
    const double ext = (state.positions.col(edge.i) - state.positions.col(edge.j)).norm() - topology.rest_lengths[k];
    e += attrs.stiffness_at(k) * std::pow(std::abs(ext), config.p_k + 1.0) / (config.p_k + 1.0);
  }
  return e;
}

}  // namespace elastica
