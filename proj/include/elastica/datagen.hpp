#pragma once

#include "elastica/core.hpp"
#include "elastica/identify.hpp"
#include "elastica/renderer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace elastica {

enum class Shape { Sphere, Box, Torus, Ellipsoid, Capsule };

Shape parse_shape(std::string_view name);
std::string shape_name(Shape shape);
const std::vector<Shape>& all_shapes();

/// Whether p (relative to the shape center) lies inside the solid.
bool shape_contains(Shape shape, const Vec3& p);

/// Seeded uniform samples inside the solid shape, centered at (0, 1, 0).
/// Sphere radius 0.5, box half extents (0.45, 0.3, 0.35), torus radii 0.38 /
/// 0.16 around y, ellipsoid semi-axes (0.55, 0.35, 0.42), capsule radius
/// 0.25 with half length 0.3 along x. Scale is half the mean nearest-neighbour
/// spacing; opacity 0.8; colors from a three-color seeded palette.
GaussianSet make_asset(Shape shape, int n_gaussians, std::string_view object_id);

PhysicalAttributes sample_attributes(std::uint64_t seed, const ParameterRanges& ranges = {});

inline constexpr int kReconFrames = 20;
inline constexpr int kFutureFrames = 10;
/// "recon" for the first kReconFrames stored frames, "future" after.
std::string frame_tag(int frame);

struct SceneOptions {
  int n_gaussians = 512;
  int n_anchors = 128;
  int k_neighbors = 8;
  int n_b = 4;
  double p_b = 2.0;
  int grid_resolution = 32;
  double drop_height = 1.0;
  int frames = kReconFrames + kFutureFrames;
  int resolution = 64;
  bool render_views = true;
  int max_resamples = 10;
  SimConfig config;
};

/// Dataset camera for a named view: target (0, 0.9, 0), 2.4 m across.
Camera dataset_camera(std::string_view view, int resolution);

struct SynthesizedScene {
  SceneBundle bundle;
  /// views[v][t] renders dataset_views()[v] at stored frame t.
  std::vector<std::vector<Image>> views;
  /// Causes of rejected attribute draws (seeded synthesis only).
  std::vector<std::string> rejections;
};

/// Rest geometry for an object: asset, anchors, springs and binding, with
/// the lowest anchor drop_height above the ground. Identical for every
/// sample of an object.
SceneBundle scene_scaffold(std::string_view object_id, Shape shape, const SceneOptions& options = {});

SynthesizedScene synthesize_scene(std::string_view object_id, Shape shape, const PhysicalAttributes& attrs,
                                  const SceneOptions& options = {});
/// Draws attributes from the seed; divergent draws are rejected and redrawn.
SynthesizedScene synthesize_scene(std::string_view object_id, Shape shape, std::uint64_t seed,
                                  const SceneOptions& options = {});

std::vector<Image> render_trajectory(const SceneBundle& bundle, const Trajectory& frames, const Camera& camera);

struct ManifestRow {
  std::string object_id;
  int sample = 0;
  std::string split;
  std::string path;  // bundle.json, relative to the manifest directory
  PhysicalAttributes attributes;
};

nlohmann::json to_json(const ManifestRow& row);
std::vector<ManifestRow> manifest_from_json(const nlohmann::json& j);
std::vector<ManifestRow> load_manifest(const std::filesystem::path& path);

struct DatasetOptions {
  int n_objects = 58;
  int samples_per_object = 10;
  /// Held-out object count; negative means round(n_objects * 8 / 58), at least one when n_objects >= 2.
  int test_objects = -1;
  std::uint64_t master_seed = 0;
  std::vector<Shape> shapes = all_shapes();
  int jobs = 1;
  bool write_views = true;
  SceneOptions scene;
};

/// Writes out_dir/{split}/{object_id}/{sample}/bundle.json plus
/// views/{view}/{frame:04}.png, then manifest.json. On failure every file
/// written so far is removed.
std::vector<ManifestRow> build_dataset(const std::filesystem::path& out_dir, const DatasetOptions& options);

/// Object ids and shapes of a dataset, in generation order.
std::vector<std::pair<std::string, Shape>> dataset_objects(const DatasetOptions& options);

}  // namespace elastica
