#pragma once

#include "elastica/autodiff.hpp"
#include "elastica/core.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace elastica {

/// Valid (min, max) per shared parameter, in (m, k, d, f) order.
struct ParameterRanges {
  std::array<double, 4> min{0.2, 10.0, 0.1, 0.0};
  std::array<double, 4> max{6.0, 1200.0, 5.0, 1.0};

  static const std::array<const char*, 4>& names();

  bool contains(const PhysicalAttributes& attrs) const;
  /// Names the first violated parameter, empty when in range.
  std::string violation(const Eigen::Vector4d& params) const;
  Eigen::Vector4d midpoint() const;
  Eigen::Vector4d width() const;
};

nlohmann::json to_json(const ParameterRanges& ranges);
ParameterRanges ranges_from_json(const nlohmann::json& j);

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

PhysicalAttributes squash(const Eigen::Vector4d& raw, const ParameterRanges& ranges = {});
/// d params / d raw, elementwise.
Eigen::Vector4d squash_derivative(const Eigen::Vector4d& raw, const ParameterRanges& ranges = {});
/// Inverse of squash for parameters strictly inside the ranges.
Eigen::Vector4d unsquash(const PhysicalAttributes& attrs, const ParameterRanges& ranges = {});

/// Adam on a fixed-size parameter vector.
class Adam {
 public:
  explicit Adam(Eigen::Index size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  Eigen::VectorXd update(const Eigen::VectorXd& gradient, double learning_rate);
  int steps() const { return t_; }

 private:
  Eigen::VectorXd m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

/// Cosine decay from lr0 to zero over total steps.
double cosine_lr(double lr0, int step, int total);

enum class LossKind { Trajectory, Photometric };
LossKind parse_loss_kind(const std::string& name);

struct IdentifyOptions {
  int iterations = 500;
  double learning_rate = 0.2;
  std::uint64_t seed = 0;
  /// Stored observation frames used (the recon window).
  int observed_frames = 20;
  int max_rejections = 30;
  /// Spend the remaining budget after the Adam phase on quasi-Newton
  /// refinement (every loss evaluation counts as an iteration).
  bool refine = true;
  double adam_fraction = 0.5;
  ParameterRanges ranges;
};

struct IdentifyIteration {
  int iteration = 0;
  double loss = 0.0;
  Eigen::Vector4d params = Eigen::Vector4d::Zero();
  Eigen::Vector4d gradient = Eigen::Vector4d::Zero();
  double learning_rate = 0.0;
  bool rejected = false;
};

struct IdentifyResult {
  PhysicalAttributes attributes;
  double best_loss = 0.0;
  int best_iteration = 0;
  std::vector<IdentifyIteration> history;
};

/// Per-scene fit from the range midpoints: Adam with cosine decay, then BFGS
/// (unless refine is off), full BPTT through `frames` rollout frames. `loss` is summed over frames; the reported loss
/// is its per-frame mean.
IdentifyResult identify_scene(const SceneBundle& bundle, const FrameLoss& loss, int frames,
                              const IdentifyOptions& options = {});

/// Trajectory MSE against a stored observation (frame 0 = initial state).
IdentifyResult identify_scene(const SceneBundle& bundle, const Trajectory& observed,
                              const IdentifyOptions& options = {});

/// Photometric loss against observed frames of one view (frame 0 = initial state).
IdentifyResult identify_scene(const SceneBundle& bundle, const std::vector<Image>& observed, const Camera& camera,
                              const IdentifyOptions& options = {});

std::string loss_curve_csv(const IdentifyResult& result);

inline constexpr int kDescriptorFrames = 20;
inline constexpr int kFeaturesPerFrame = 8;

/// Per frame: centroid (3), extents (3), mean speed, mean vertical kinetic
/// energy per unit mass. Speeds are backward differences at the frame rate;
/// frame 0 has zero speed.
Eigen::VectorXd extract_descriptor(const Trajectory& frames, double frame_rate, int expected_frames = kDescriptorFrames);

class MlpModel {
 public:
  MlpModel() = default;
  /// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  MlpModel(std::vector<int> layers, std::uint64_t seed, ParameterRanges ranges = {});

  const std::vector<int>& layers() const { return layers_; }
  int input_size() const { return layers_.front(); }
  std::size_t parameter_count() const;

  Eigen::VectorXd flat_parameters() const;
  void set_flat_parameters(const Eigen::VectorXd& theta);

  void set_feature_statistics(Eigen::VectorXd mean, Eigen::VectorXd std);
  const Eigen::VectorXd& feature_mean() const { return feature_mean_; }
  const Eigen::VectorXd& feature_std() const { return feature_std_; }
  const ParameterRanges& ranges() const { return ranges_; }

  /// Raw (pre-squash) outputs for a raw descriptor.
  Eigen::Vector4d raw_output(const Eigen::VectorXd& descriptor) const;
  PhysicalAttributes predict(const Eigen::VectorXd& descriptor) const;

  /// Gradient of a scalar w.r.t. the flat parameters, given d scalar / d raw.
  Eigen::VectorXd backward(const Eigen::VectorXd& descriptor, const Eigen::Vector4d& d_raw) const;

  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

 private:
  Eigen::VectorXd standardize(const Eigen::VectorXd& descriptor) const;

  std::vector<int> layers_;
  Eigen::VectorXd feature_mean_, feature_std_;
  ParameterRanges ranges_;
};

nlohmann::json to_json(const MlpModel& model);
MlpModel model_from_json(const nlohmann::json& j);
void save_model(const std::filesystem::path& path, const MlpModel& model);
MlpModel load_model(const std::filesystem::path& path);

struct TrainOptions {
  int epochs = 200;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int jobs = 1;
  LossKind loss = LossKind::Trajectory;
  std::vector<int> layers{kDescriptorFrames * kFeaturesPerFrame, 128, 64, 4};
  ParameterRanges ranges;
  /// Per-frame loss assigned to a divergent sample.
  double divergence_loss = 1.0;
  /// Called after each epoch with (epoch, mean loss).
  std::function<void(int, double)> on_epoch;
};

struct TrainingSample {
  SceneBundle bundle;  // scaffold plus observed trajectory; attributes are never read
  std::vector<Image> views;  // observed frames of the first view, photometric loss only
  Camera camera;
};

struct TrainResult {
  MlpModel model;
  std::vector<double> epoch_losses;
  /// (epoch, sample index) of every clipped divergent rollout.
  std::vector<std::pair<int, int>> divergent;
};

TrainResult train_predictor(const std::vector<TrainingSample>& dataset, const TrainOptions& options = {});

std::string epoch_loss_csv(const std::vector<double>& losses);

/// Descriptor of the stored observation's recon window, then one forward pass.
PhysicalAttributes predict(const MlpModel& model, const Trajectory& observed, double frame_rate);

}  // namespace elastica
