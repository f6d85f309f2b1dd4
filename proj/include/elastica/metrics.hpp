#pragma once

#include "elastica/core.hpp"
#include "elastica/datagen.hpp"
#include "elastica/identify.hpp"
#include "elastica/renderer.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace elastica {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all channels, capped at 99 dB.
double psnr(const Image& a, const Image& b);

/// Single-scale SSIM on Rec. 601 luma: 11x11 Gaussian window (sigma 1.5),
/// C1 = 0.01^2, C2 = 0.03^2, population statistics, mean over the windows
/// that fit inside the image.
double ssim(const Image& a, const Image& b);
double ssim(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b);

/// Mean squared nearest distance a -> b plus b -> a.
double chamfer(const Points& a, const Points& b);

/// Mean Euclidean distance under the optimal one-to-one matching. Exact
/// (Hungarian) up to kEmdExactLimit points, entropic Sinkhorn above.
inline constexpr int kEmdExactLimit = 256;
inline constexpr int kEmdMaxPoints = 1024;
double emd(const Points& a, const Points& b);

/// Minimum-cost perfect assignment for a square cost matrix; returns the
/// column assigned to each row.
std::vector<int> hungarian(const Eigen::MatrixXd& cost);
/// Log-domain Sinkhorn transport cost with uniform marginals.
double sinkhorn_cost(const Eigen::MatrixXd& cost, double epsilon = 1e-3, int max_iterations = 5000);

/// Mean |predicted - truth| per selected quantity, from {m, k, d, f, k/m, d/m}.
std::map<std::string, double> parameter_mae(const std::vector<PhysicalAttributes>& predicted,
                                            const std::vector<PhysicalAttributes>& truth,
                                            const std::vector<std::string>& which = {"m", "k", "d", "f", "k/m", "d/m"});

enum class ParameterSource { Model, ParamsDir, MeanBaseline, GroundTruth };

struct EvaluateOptions {
  ParameterSource source = ParameterSource::MeanBaseline;
  std::filesystem::path model_path;
  /// ParamsDir files are {object_id}-{sample}.json.
  std::filesystem::path params_dir;
  std::string split = "test";
  std::string view = "+x";
  int resolution = 64;
  bool use_centers = false;
  bool timing = true;
  int jobs = 1;
};

struct WindowMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double cd = 0.0;
  double emd = 0.0;
};

struct SceneReport {
  std::string object_id;
  int sample = 0;
  std::string path;
  PhysicalAttributes truth;
  PhysicalAttributes estimate;
  WindowMetrics recon;
  WindowMetrics future;
  std::optional<double> time_ms;
  std::optional<std::string> error;
};

struct EvaluationReport {
  std::string source;
  std::string split;
  std::vector<SceneReport> scenes;
  std::vector<std::string> missing;
};

/// Rolls every manifest row of the split forward from its initial anchors
/// under the estimated attributes and compares with the stored trajectory.
EvaluationReport evaluate(const std::filesystem::path& manifest_path, const EvaluateOptions& options);

/// Median over scenes that evaluated successfully.
double median_metric(const EvaluationReport& report, bool future, double WindowMetrics::*metric);

nlohmann::json to_json(const EvaluationReport& report);
std::string report_csv(const EvaluationReport& report);
void write_report(const std::filesystem::path& out, const EvaluationReport& report);

}  // namespace elastica
