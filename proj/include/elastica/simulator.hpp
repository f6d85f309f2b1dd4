#pragma once

#include "elastica/core.hpp"

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace elastica {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

/// sgn(e) * |e|^p, the odd extension of the power law.
template <typename Scalar>
Scalar signed_power(Scalar e, Scalar p) {
  using std::abs;
  using std::pow;
  if (e == Scalar(0)) return Scalar(0);
  const Scalar mag = (p == Scalar(1)) ? abs(e) : pow(abs(e), p);
  return e > Scalar(0) ? mag : -mag;
}

/// d/de of signed_power; zero at e = 0 (branch convention for p < 1).
template <typename Scalar>
Scalar signed_power_derivative(Scalar e, Scalar p) {
  using std::abs;
  using std::pow;
  if (p == Scalar(1)) return Scalar(1);
  if (e == Scalar(0)) return Scalar(0);
  return p * pow(abs(e), p - Scalar(1));
}

/// Spring force on anchor i from the spring (i, j) with rest length `rest`.
template <typename Scalar>
Vector3<Scalar> spring_force(const Vector3<Scalar>& xi, const Vector3<Scalar>& xj, Scalar rest, Scalar k,
                             Scalar p_k, Scalar eps) {
  const Vector3<Scalar> r = xi - xj;
  const Scalar len = r.norm();
  if (len < eps) return Vector3<Scalar>::Zero();
  const Vector3<Scalar> n = r / len;
  return -k * signed_power(len - rest, p_k) * n;
}

/// Axial damping force on anchor i: relative velocity projected on the spring axis.
template <typename Scalar>
Vector3<Scalar> damping_force(const Vector3<Scalar>& xi, const Vector3<Scalar>& xj, const Vector3<Scalar>& vi,
                              const Vector3<Scalar>& vj, Scalar d, Scalar eps) {
  const Vector3<Scalar> r = xi - xj;
  const Scalar len = r.norm();
  if (len < eps) return Vector3<Scalar>::Zero();
  const Vector3<Scalar> n = r / len;
  return -d * (vi - vj).dot(n) * n;
}

enum class ContactBranch : std::uint8_t { Free, Stick, Slip };

template <typename Scalar>
struct ContactResult {
  Vector3<Scalar> position;
  Vector3<Scalar> velocity;
  ContactBranch branch = ContactBranch::Free;
};

/// Ground contact with y as the up axis: clamp to the plane, zero the normal
/// velocity, and apply a Coulomb impulse of magnitude f * (incoming normal speed)
/// to the tangential velocity.
template <typename Scalar>
ContactResult<Scalar> resolve_contact(const Vector3<Scalar>& position, const Vector3<Scalar>& velocity,
                                      Scalar friction, Scalar ground_height) {
  ContactResult<Scalar> out{position, velocity, ContactBranch::Free};
  if (position.y() >= ground_height) return out;
  out.position.y() = ground_height;
  using std::max;
  using std::sqrt;
  const Scalar normal_speed = max(Scalar(0), -velocity.y());
  out.velocity.y() = Scalar(0);
  const Scalar tangential = sqrt(velocity.x() * velocity.x() + velocity.z() * velocity.z());
  const Scalar impulse = friction * normal_speed;
  if (tangential <= impulse) {
    out.velocity.x() = Scalar(0);
    out.velocity.z() = Scalar(0);
    out.branch = ContactBranch::Stick;
  } else {
    const Scalar scale = Scalar(1) - impulse / tangential;
    out.velocity.x() *= scale;
    out.velocity.z() *= scale;
    out.branch = ContactBranch::Slip;
  }
  return out;
}

template <typename Scalar>
std::pair<Vector3<Scalar>, Vector3<Scalar>> boundary(const Vector3<Scalar>& position, const Vector3<Scalar>& velocity,
                                                     Scalar friction, Scalar ground_height) {
  auto r = resolve_contact(position, velocity, friction, ground_height);
  return {r.position, r.velocity};
}

/// Net force per anchor, one column each.
using ForceAccumulator = Points;

/// Spring + damping forces over all edges (paired, equal and opposite) plus gravity.
/// Throws DataError on dimension mismatch between state, topology and attributes.
ForceAccumulator accumulate_forces(const SpringMassState& state, const SpringTopology& topology,
                                   const PhysicalAttributes& attrs, const SimConfig& config);

/// Primal values of one substep, as needed by the adjoint pass.
struct StepRecord {
  Points positions;   // x (input)
  Points velocities;  // v (input)
  Points forces;      // F(x, v)
  Points v_hat;       // v + F/m dt
  Points x_hat;       // x + v_hat dt, before contact
  std::vector<ContactBranch> contact;
};

/// One semi-implicit Euler substep followed by ground contact. When `record`
/// is non-null it receives the primal intermediates. Throws DivergenceError
/// if the new state is not finite.
SpringMassState step(const SpringMassState& state, const SpringTopology& topology, const PhysicalAttributes& attrs,
                     const SimConfig& config, StepRecord* record = nullptr);

/// T frames, each the state after `substeps` further calls to step.
std::vector<SpringMassState> rollout(const SpringMassState& initial, const SpringTopology& topology,
                                     const PhysicalAttributes& attrs, const SimConfig& config, int frames,
                                     int substeps);

inline std::vector<SpringMassState> rollout(const SpringMassState& initial, const SpringTopology& topology,
                                            const PhysicalAttributes& attrs, const SimConfig& config, int frames) {
  return rollout(initial, topology, attrs, config, frames, config.substeps_per_frame);
}

Trajectory positions_of(const std::vector<SpringMassState>& states);

/// Stored-scene convention: the initial positions followed by `frames - 1`
/// simulated frames.
Trajectory simulate_trajectory(const SpringMassState& initial, const SpringTopology& topology,
                               const PhysicalAttributes& attrs, const SimConfig& config, int frames);

Vec3 total_momentum(const SpringMassState& state, const PhysicalAttributes& attrs);

/// Kinetic + spring potential (p_k = 1) + gravitational potential.
double total_energy(const SpringMassState& state, const SpringTopology& topology, const PhysicalAttributes& attrs,
                    const SimConfig& config);

}  // namespace elastica
