#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace elastica {

using Vec3 = Eigen::Vector3d;
// Point sets are stored column-wise: one 3-vector per column.
using Points = Eigen::Matrix3Xd;
using Trajectory = std::vector<Points>;

enum class ErrorCode { Usage = 1, Data = 2, Divergence = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string context = {})
      : std::runtime_error(message), code_(code), context_(std::move(context)) {}

  ErrorCode code() const { return code_; }
  const std::string& context() const { return context_; }

 private:
  ErrorCode code_;
  std::string context_;
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message, std::string context = {})
      : Error(ErrorCode::Data, message, std::move(context)) {}
};

/// Raised when a simulated state stops being finite. `step` is the global
/// substep index; `frame` is filled in by rollout-level callers (-1 if unknown).
class DivergenceError : public Error {
 public:
  DivergenceError(long step, long frame = -1)
      : Error(ErrorCode::Divergence, describe(step, frame)), step_(step), frame_(frame) {}

  long step() const { return step_; }
  long frame() const { return frame_; }

 private:
  static std::string describe(long step, long frame) {
    std::string s = "integration diverged at step " + std::to_string(step);
    if (frame >= 0) s += " (frame " + std::to_string(frame) + ")";
    return s;
  }
  long step_;
  long frame_;
};

/// Mass, stiffness, damping and friction. In shared mode the vectors hold a
/// single entry that stands for every anchor / spring.
struct PhysicalAttributes {
  Eigen::VectorXd mass;
  Eigen::VectorXd stiffness;
  Eigen::VectorXd damping;
  double friction = 0.0;
  bool shared = true;

  static PhysicalAttributes Shared(double m, double k, double d, double f) {
    PhysicalAttributes a;
    a.mass = Eigen::VectorXd::Constant(1, m);
    a.stiffness = Eigen::VectorXd::Constant(1, k);
    a.damping = Eigen::VectorXd::Constant(1, d);
    a.friction = f;
    a.shared = true;
    return a;
  }

  double mass_at(Eigen::Index anchor) const { return shared ? mass[0] : mass[anchor]; }
  double stiffness_at(Eigen::Index edge) const { return shared ? stiffness[0] : stiffness[edge]; }
  double damping_at(Eigen::Index edge) const { return shared ? damping[0] : damping[edge]; }

  // Shared-mode scalars.
  double m() const { return mass[0]; }
  double k() const { return stiffness[0]; }
  double d() const { return damping[0]; }
  double f() const { return friction; }

  /// (m, k, d, f) packed; only meaningful in shared mode.
  Eigen::Vector4d as_vector() const { return {m(), k(), d(), f()}; }
  static PhysicalAttributes FromVector(const Eigen::Vector4d& p) { return Shared(p[0], p[1], p[2], p[3]); }
};

struct SpringMassState {
  Points positions;
  Points velocities;
  long time_index = 0;

  Eigen::Index size() const { return positions.cols(); }
};

struct Edge {
  int i = 0;
  int j = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct SpringTopology {
  std::vector<Edge> edges;
  Eigen::VectorXd rest_lengths;
  int k_neighbors = 0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(edges.size()); }
};

/// Isotropic Gaussian kernels in structure-of-arrays layout.
struct GaussianSet {
  Points centers;
  Eigen::VectorXd scales;
  Eigen::Matrix3Xd colors;
  Eigen::VectorXd opacities;
  Eigen::Matrix4Xd rotations;  // (w, x, y, z) per column

  Eigen::Index size() const { return centers.cols(); }
  void resize(Eigen::Index n) {
    centers.resize(3, n);
    scales.resize(n);
    colors.resize(3, n);
    opacities.resize(n);
    rotations.resize(4, n);
  }
};

enum class BindingMode { Displacement, Absolute };

/// Per-Gaussian anchor neighbourhoods for inverse-distance weighting.
/// Column g of `indices`/`rest_distances` describes Gaussian g.
struct BindingTable {
  int n_b = 0;
  double p_b = 2.0;
  double eps_r = 1e-9;
  BindingMode mode = BindingMode::Displacement;
  Eigen::MatrixXi indices;
  Eigen::MatrixXd rest_distances;
  // Rest pose the table was built against (used by displacement mode).
  Points rest_anchors;
  Points rest_centers;

  Eigen::Index size() const { return indices.cols(); }
};

struct SimConfig {
  double dt = 1.0 / 300.0;
  int substeps_per_frame = 10;
  Vec3 gravity{0.0, -9.8, 0.0};
  double p_k = 1.0;
  double ground_height = 0.0;
  double frame_rate = 30.0;
  double length_eps = 1e-8;
};

struct SceneBundle {
  std::string object_id;
  GaussianSet gaussians;
  SpringMassState anchors;
  SpringTopology topology;
  BindingTable binding;
  PhysicalAttributes attributes;
  SimConfig config;
  std::optional<Trajectory> trajectory;
};

/// Checks every type invariant; returns one description per violation.
std::vector<std::string> validate_bundle(const SceneBundle& bundle);

}  // namespace elastica
