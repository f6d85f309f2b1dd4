#pragma once

#include "elastica/core.hpp"
#include "elastica/renderer.hpp"
#include "elastica/simulator.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <vector>

namespace elastica {

/// Loss for one rollout frame. `frame` is the 0-based rollout frame (the
/// state after (frame + 1) * substeps steps). When `gradient` is non-null it
/// receives d loss / d positions (3 x N_A).
using FrameLoss = std::function<double(int frame, const Points& positions, Points* gradient)>;

/// Mean squared anchor distance to targets[frame].
FrameLoss trajectory_loss(Trajectory targets);

/// Photometric loss of the rendered, binding-deformed Gaussians against
/// observed[frame]. Appearance stays frozen; only centers move.
FrameLoss photometric_frame_loss(GaussianSet gaussians, BindingTable binding, Camera camera,
                                 std::vector<Image> observed);

/// Rollout frames aligned with a stored trajectory that starts at the initial state.
inline Trajectory observation_targets(const Trajectory& stored, int frames) {
  return Trajectory(stored.begin() + 1, stored.begin() + 1 + frames);
}

struct GradientReport {
  double d_mass = 0.0;
  double d_stiffness = 0.0;
  double d_damping = 0.0;
  double d_friction = 0.0;
  std::vector<double> frame_losses;
  /// First rollout frame whose accumulated gradient stopped being finite.
  std::optional<int> nonfinite_frame;

  Eigen::Vector4d as_vector() const { return {d_mass, d_stiffness, d_damping, d_friction}; }
  double total_loss() const;
};

nlohmann::json to_json(const GradientReport& report);

/// Recorded primal substeps of a rollout segment, replayed in reverse.
class Tape {
 public:
  void push(StepRecord record) { records_.push_back(std::move(record)); }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  void clear() { records_.clear(); }
  const StepRecord& operator[](std::size_t i) const { return records_[i]; }

  /// Reverse pass. On entry (grad_x, grad_v) are the adjoints of the state
  /// after the last record; on exit, of the state before the first one.
  /// Parameter gradients (m, k, d, f) are added into grad_params.
  void backward(const SpringTopology& topology, const PhysicalAttributes& attrs, const SimConfig& config,
                Points& grad_x, Points& grad_v, Eigen::Vector4d& grad_params) const;

  /// Re-runs the recorded steps from the first record's input and reports
  /// whether every output matches the next record's input bitwise.
  bool replay_matches(const SpringTopology& topology, const PhysicalAttributes& attrs, const SimConfig& config,
                      const SpringMassState& final_state) const;

 private:
  std::vector<StepRecord> records_;
};

/// Adjoint of one simulator step (branch taken in the primal pass).
void step_adjoint(const StepRecord& record, const SpringTopology& topology, const PhysicalAttributes& attrs,
                  const SimConfig& config, Points& grad_x, Points& grad_v, Eigen::Vector4d& grad_params);

struct RolloutGradients {
  std::vector<SpringMassState> states;
  double total_loss = 0.0;
  GradientReport report;
};

/// Self-forced rollout from the bundle's initial anchors with reverse-mode
/// parameter gradients. With detach_states each frame's loss reaches the
/// parameters only through that frame's substeps; otherwise full BPTT.
/// Requires shared-mode attributes.
RolloutGradients rollout_with_gradients(const SceneBundle& bundle, const PhysicalAttributes& attrs,
                                        const FrameLoss& loss, int frames, bool detach_states);

/// Loss of a plain rollout (no recording).
double rollout_loss(const SceneBundle& bundle, const PhysicalAttributes& attrs, const FrameLoss& loss, int frames);

/// Central differences with relative step h (absolute h for zero-valued
/// parameters), rerunning the full rollout per evaluation.
GradientReport finite_difference_gradients(const SceneBundle& bundle, const PhysicalAttributes& attrs,
                                           const FrameLoss& loss, int frames, double h);

/// The same oracle for the detached objective: each frame is re-simulated
/// from its unperturbed entry state, so only that frame's substeps see the
/// perturbation.
GradientReport finite_difference_gradients_detached(const SceneBundle& bundle, const PhysicalAttributes& attrs,
                                                    const FrameLoss& loss, int frames, double h);

}  // namespace elastica
