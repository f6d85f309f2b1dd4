#include "elastica/datagen.hpp"

#include "elastica/binding.hpp"
#include "elastica/io.hpp"
#include "elastica/parallel.hpp"
#include "elastica/rng.hpp"
#include "elastica/simulator.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace elastica {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const Vec3 kAssetCenter(0, 1, 0);

constexpr double kTorusMajor = 0.38;
constexpr double kTorusMinor = 0.16;
constexpr double kCapsuleRadius = 0.25;
constexpr double kCapsuleHalfLength = 0.3;

Vec3 half_extents(Shape s) {
  switch (s) {
    case Shape::Sphere: return Vec3::Constant(0.5);
    case Shape::Box: return {0.45, 0.3, 0.35};
    case Shape::Torus: return {kTorusMajor + kTorusMinor, kTorusMinor, kTorusMajor + kTorusMinor};
    case Shape::Ellipsoid: return {0.55, 0.35, 0.42};
    case Shape::Capsule: return {kCapsuleHalfLength + kCapsuleRadius, kCapsuleRadius, kCapsuleRadius};
  }
  return Vec3::Zero();
}

const std::array<Vec3, 8>& palette() {
  static const std::array<Vec3, 8> p{Vec3(0.90, 0.30, 0.25), Vec3(0.95, 0.75, 0.20), Vec3(0.30, 0.70, 0.35),
                                     Vec3(0.20, 0.45, 0.85), Vec3(0.60, 0.35, 0.80), Vec3(0.95, 0.55, 0.70),
                                     Vec3(0.35, 0.80, 0.85), Vec3(0.55, 0.40, 0.25)};
  return p;
}

}  // namespace

Shape parse_shape(std::string_view name) {
  for (Shape s : all_shapes())
    if (shape_name(s) == name) return s;
  throw Error(ErrorCode::Usage, "unknown shape '" + std::string(name) + "'");
}

std::string shape_name(Shape s) {
  switch (s) {
    case Shape::Sphere: return "sphere";
    case Shape::Box: return "box";
    case Shape::Torus: return "torus";
    case Shape::Ellipsoid: return "ellipsoid";
    case Shape::Capsule: return "capsule";
  }
  return "?";
}

const std::vector<Shape>& all_shapes() {
  static const std::vector<Shape> s{Shape::Sphere, Shape::Box, Shape::Torus, Shape::Ellipsoid, Shape::Capsule};
  return s;
}

bool shape_contains(Shape s, const Vec3& p) {
  switch (s) {
    case Shape::Sphere: return p.squaredNorm() <= 0.25;
    case Shape::Box: return (p.cwiseAbs().array() <= half_extents(s).array()).all();
    case Shape::Torus: {
      const double radial = std::hypot(p.x(), p.z()) - kTorusMajor;
      return radial * radial + p.y() * p.y() <= kTorusMinor * kTorusMinor;
    }
    case Shape::Ellipsoid: return (p.array() / half_extents(s).array()).matrix().squaredNorm() <= 1.0;
    case Shape::Capsule: {
      const double x = std::max(0.0, std::abs(p.x()) - kCapsuleHalfLength);
      return x * x + p.y() * p.y() + p.z() * p.z() <= kCapsuleRadius * kCapsuleRadius;
    }
  }
  return false;
}

GaussianSet make_asset(Shape shape, int n, std::string_view object_id) {
  if (n < 16) throw DataError("an asset needs at least 16 Gaussians");
  Rng rng(object_seed(object_id));
  const Vec3 h = half_extents(shape);
  GaussianSet g;
  g.resize(n);
  for (int i = 0; i < n; ++i) {
    Vec3 p;
    do p = Vec3(rng.uniform(-h.x(), h.x()), rng.uniform(-h.y(), h.y()), rng.uniform(-h.z(), h.z()));
    while (!shape_contains(shape, p));
    g.centers.col(i) = kAssetCenter + p;
  }

  double spacing = 0.0;
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j)
      if (j != i) best = std::min(best, (g.centers.col(i) - g.centers.col(j)).squaredNorm());
    spacing += std::sqrt(best);
  }
  g.scales.setConstant(0.5 * spacing / n);

  // Three palette colors laid out in bands along a seeded direction.
  std::array<int, 3> pick{};
  for (int c = 0; c < 3; ++c) {
    int candidate;
    do candidate = static_cast<int>(rng.below(palette().size()));
    while (std::find(pick.begin(), pick.begin() + c, candidate) != pick.begin() + c);
    pick[static_cast<std::size_t>(c)] = candidate;
  }
  const Vec3 dir = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized();
  const double band = 0.15 + 0.1 * rng.uniform();
  for (int i = 0; i < n; ++i) {
    const double s = (g.centers.col(i) - kAssetCenter).dot(dir) / band;
    const auto idx = static_cast<std::size_t>(((static_cast<long>(std::floor(s)) % 3) + 3) % 3);
    g.colors.col(i) = palette()[static_cast<std::size_t>(pick[idx])];
  }
  g.opacities.setConstant(0.8);
  g.rotations.setZero();
  g.rotations.row(0).setOnes();
  return g;
}

PhysicalAttributes sample_attributes(std::uint64_t seed, const ParameterRanges& r) {
  Rng rng(seed);
  Eigen::Vector4d p;
  for (int i = 0; i < 4; ++i) p[i] = rng.uniform(r.min[i], r.max[i]);
  return PhysicalAttributes::FromVector(p);
}

std::string frame_tag(int frame) { return frame < kReconFrames ? "recon" : "future"; }

Camera dataset_camera(std::string_view view, int resolution) {
  return Camera::from_view(view, resolution, resolution, 2.4 / resolution, Vec3(0, 0.9, 0));
}

SceneBundle scene_scaffold(std::string_view object_id, Shape shape, const SceneOptions& opt) {
  if (!(opt.drop_height > 0.0)) throw DataError("drop height must be positive");
  SceneBundle b;
  b.object_id = std::string(object_id);
  b.gaussians = make_asset(shape, opt.n_gaussians, object_id);

  // A seeded tilt so objects land off-axis.
  Rng rng(derive_seed(object_seed(object_id), 1));
  const Vec3 axis = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized();
  const double angle = rng.uniform(-0.5, 0.5);
  const Eigen::Matrix3d rot = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  b.gaussians.centers = (rot * (b.gaussians.centers.colwise() - kAssetCenter)).colwise() + kAssetCenter;

  Points anchors = sample_anchors(b.gaussians.centers, opt.n_anchors, object_seed(object_id), opt.grid_resolution);
  const double lift = opt.config.ground_height + opt.drop_height - anchors.row(1).minCoeff();
  anchors.row(1).array() += lift;
  b.gaussians.centers.row(1).array() += lift;

  b.anchors.positions = anchors;
  b.anchors.velocities = Points::Zero(3, anchors.cols());
  b.anchors.time_index = 0;
  b.topology = build_topology(anchors, opt.k_neighbors, opt.config.length_eps);
  b.binding = build_binding(b.gaussians.centers, anchors, opt.n_b, opt.p_b);
  b.config = opt.config;
  b.attributes = PhysicalAttributes::FromVector(ParameterRanges{}.midpoint());
  return b;
}

std::vector<Image> render_trajectory(const SceneBundle& b, const Trajectory& frames, const Camera& camera) {
  std::vector<Image> out;
  out.reserve(frames.size());
  GaussianSet g = b.gaussians;
  for (const Points& x : frames) {
    g.centers = interpolate_centers(b.binding, x);
    out.push_back(render(g, camera));
  }
  return out;
}

namespace {

SynthesizedScene synthesize_from(SceneBundle b, const PhysicalAttributes& attrs, const SceneOptions& opt) {
  SynthesizedScene s;
  b.attributes = attrs;
  b.trajectory = simulate_trajectory(b.anchors, b.topology, attrs, b.config, opt.frames);
  const auto violations = validate_bundle(b);
  if (!violations.empty()) throw DataError("synthesized bundle is invalid: " + violations.front(), b.object_id);
  if (opt.render_views)
    for (const auto& view : dataset_views())
      s.views.push_back(render_trajectory(b, *b.trajectory, dataset_camera(view, opt.resolution)));
  s.bundle = std::move(b);
  return s;
}

SynthesizedScene synthesize_seeded(const SceneBundle& scaffold, std::uint64_t seed, const SceneOptions& opt) {
  std::vector<std::string> rejections;
  for (int attempt = 0; attempt <= opt.max_resamples; ++attempt) {
    const auto attrs = sample_attributes(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    try {
      auto s = synthesize_from(scaffold, attrs, opt);
      s.rejections = std::move(rejections);
      return s;
    } catch (const DivergenceError& e) {
      std::ostringstream cause;
      cause << "attributes " << attrs.as_vector().transpose() << ": " << e.what();
      rejections.push_back(cause.str());
    }
  }
  throw Error(ErrorCode::Divergence, "every attribute draw diverged", rejections.back());
}

}  // namespace

SynthesizedScene synthesize_scene(std::string_view object_id, Shape shape, const PhysicalAttributes& attrs,
                                  const SceneOptions& opt) {
  return synthesize_from(scene_scaffold(object_id, shape, opt), attrs, opt);
}

SynthesizedScene synthesize_scene(std::string_view object_id, Shape shape, std::uint64_t seed,
                                  const SceneOptions& opt) {
  return synthesize_seeded(scene_scaffold(object_id, shape, opt), seed, opt);
}

json to_json(const ManifestRow& r) {
  return json{{"object_id", r.object_id},
              {"sample", r.sample},
              {"split", r.split},
              {"path", r.path},
              {"attributes", {{"m", r.attributes.m()}, {"k", r.attributes.k()}, {"d", r.attributes.d()},
                              {"f", r.attributes.f()}}}};
}

std::vector<ManifestRow> manifest_from_json(const json& j) {
  if (!j.is_array()) throw DataError("manifest must be an array");
  std::vector<ManifestRow> rows;
  try {
    for (const auto& e : j) {
      ManifestRow r;
      r.object_id = e.at("object_id").get<std::string>();
      r.sample = e.at("sample").get<int>();
      r.split = e.at("split").get<std::string>();
      r.path = e.at("path").get<std::string>();
      const auto& a = e.at("attributes");
      r.attributes = PhysicalAttributes::Shared(a.at("m").get<double>(), a.at("k").get<double>(),
                                                a.at("d").get<double>(), a.at("f").get<double>());
      rows.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  return rows;
}

std::vector<ManifestRow> load_manifest(const fs::path& path) {
  try {
    return manifest_from_json(json::parse(read_text_file(path)));
  } catch (const json::parse_error& e) {
    throw DataError(std::string("manifest: ") + e.what(), path.string());
  }
}

std::vector<std::pair<std::string, Shape>> dataset_objects(const DatasetOptions& opt) {
  if (opt.shapes.empty()) throw Error(ErrorCode::Usage, "no shapes selected");
  std::vector<std::pair<std::string, Shape>> objects;
  for (int i = 0; i < opt.n_objects; ++i) {
    const Shape shape = opt.shapes[static_cast<std::size_t>(i) % opt.shapes.size()];
    char hex[17];
    std::snprintf(hex, sizeof hex, "%08llx",
                  static_cast<unsigned long long>(derive_seed(opt.master_seed, static_cast<std::uint64_t>(i)) >> 32));
    objects.emplace_back(shape_name(shape) + "-" + hex, shape);
  }
  return objects;
}

std::vector<ManifestRow> build_dataset(const fs::path& out_dir, const DatasetOptions& opt) {
  if (opt.n_objects < 1 || opt.samples_per_object < 1) throw Error(ErrorCode::Usage, "need at least one object and sample");
  const auto objects = dataset_objects(opt);
  std::set<std::string> ids;
  for (const auto& [id, shape] : objects)
    if (!ids.insert(id).second) throw DataError("object id collision: " + id);

  int test_count = opt.test_objects;
  if (test_count < 0) {
    test_count = static_cast<int>(std::lround(opt.n_objects * 8.0 / 58.0));
    if (opt.n_objects >= 2) test_count = std::max(test_count, 1);
  }
  if (test_count > opt.n_objects) throw Error(ErrorCode::Usage, "more test objects than objects");
  std::vector<std::size_t> order(objects.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(opt.master_seed, 0x5b117ull));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
  std::vector<std::string> split(objects.size(), "train");
  for (int t = 0; t < test_count; ++t) split[order[static_cast<std::size_t>(t)]] = "test";

  std::vector<fs::path> created;
  auto cleanup = [&] {
    std::error_code ec;
    for (const auto& p : created) fs::remove_all(p, ec);
    for (const char* s : {"train", "test"}) fs::remove(out_dir / s, ec);  // only if now empty
    fs::remove(out_dir / "manifest.json", ec);
  };
  for (std::size_t o = 0; o < objects.size(); ++o) {
    const fs::path dir = out_dir / split[o] / objects[o].first;
    if (fs::exists(dir)) throw DataError("output already holds object " + objects[o].first, dir.string());
    created.push_back(dir);
  }

  const std::size_t samples = static_cast<std::size_t>(opt.samples_per_object);
  std::vector<ManifestRow> rows(objects.size() * samples);
  try {
    std::vector<SceneBundle> scaffolds(objects.size());
    parallel_for(objects.size(), opt.jobs, [&](std::size_t o) {
      scaffolds[o] = scene_scaffold(objects[o].first, objects[o].second, opt.scene);
    });
    SceneOptions scene = opt.scene;
    scene.render_views = opt.write_views;
    parallel_for(rows.size(), opt.jobs, [&](std::size_t i) {
      const std::size_t o = i / samples, k = i % samples;
      const std::uint64_t seed = derive_seed(derive_seed(opt.master_seed, 1000 + o), k);
      const auto s = synthesize_seeded(scaffolds[o], seed, scene);
      const fs::path rel = fs::path(split[o]) / objects[o].first / std::to_string(k);
      save_bundle(out_dir / rel / "bundle.json", s.bundle);
      for (std::size_t v = 0; v < s.views.size(); ++v)
        for (std::size_t t = 0; t < s.views[v].size(); ++t) {
          char name[16];
          std::snprintf(name, sizeof name, "%04zu.png", t);
          write_png(out_dir / rel / "views" / dataset_views()[v] / name, s.views[v][t]);
        }
      rows[i] = ManifestRow{objects[o].first, static_cast<int>(k), split[o], (rel / "bundle.json").generic_string(),
                            s.bundle.attributes};
    });
    std::sort(rows.begin(), rows.end(), [](const ManifestRow& a, const ManifestRow& b) { return a.path < b.path; });
    json manifest = json::array();
    for (const auto& r : rows) manifest.push_back(to_json(r));
    write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  } catch (...) {
    cleanup();
    throw;
  }
  return rows;
}

}  // namespace elastica
