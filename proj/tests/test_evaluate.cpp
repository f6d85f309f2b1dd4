#include "elastica/datagen.hpp"
#include "elastica/identify.hpp"
#include "elastica/io.hpp"
#include "elastica/metrics.hpp"

#include <doctest.h>

#include <filesystem>
#include <sstream>

using namespace elastica;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path& dataset() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "elastica-eval-dataset";
    fs::remove_all(d);
    DatasetOptions o;
    o.n_objects = 5;
    o.samples_per_object = 2;
    o.master_seed = 21;
    o.write_views = false;
    o.scene.n_gaussians = 96;
    o.scene.n_anchors = 24;
    o.scene.grid_resolution = 16;
    build_dataset(d, o);
    return d;
  }();
  return dir;
}

fs::path manifest() { return dataset() / "manifest.json"; }

EvaluateOptions with(ParameterSource source) {
  EvaluateOptions o;
  o.source = source;
  o.resolution = 24;
  return o;
}

int line_count(const std::string& s) {
  std::istringstream in(s);
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("ground truth reproduces the stored trajectories") {
  const auto r = evaluate(manifest(), with(ParameterSource::GroundTruth));
  const auto rows = load_manifest(manifest());
  const auto tests = std::count_if(rows.begin(), rows.end(), [](const ManifestRow& m) { return m.split == "test"; });
  REQUIRE(static_cast<long>(r.scenes.size()) == tests);
  CHECK(r.missing.empty());
  for (const auto& s : r.scenes) {
    CHECK(s.recon.cd < 1e-9);
    CHECK(s.future.cd < 1e-9);
    CHECK(s.future.emd < 1e-9);
    CHECK(s.future.psnr == kPsnrCap);
    CHECK(s.future.ssim == doctest::Approx(1.0));
    CHECK_FALSE(s.time_ms);
  }
  CHECK(line_count(report_csv(r)) == 2 + 2 * static_cast<int>(r.scenes.size()));
  CHECK(report_csv(r).rfind("# cd:", 0) == 0);
}

TEST_CASE("mean baseline") {
  const auto r = evaluate(manifest(), with(ParameterSource::MeanBaseline));
  const auto rows = load_manifest(manifest());
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();
  int n = 0;
  for (const auto& m : rows)
    if (m.split == "train") mean += m.attributes.as_vector(), ++n;
  mean /= n;
  double worst = 0.0;
  for (const auto& s : r.scenes) {
    CHECK((s.estimate.as_vector() - mean).cwiseAbs().maxCoeff() < 1e-12);
    worst = std::max(worst, s.future.cd);
  }
  CHECK(worst > 1e-6);
  CHECK(median_metric(r, true, &WindowMetrics::cd) > 0.0);

  const auto j = to_json(r);
  for (const char* key : {"conventions", "aggregate", "scenes"}) CHECK(j.contains(key));
}

TEST_CASE("parameter files") {
  const fs::path params = fs::temp_directory_path() / "elastica-eval-params";
  fs::remove_all(params);
  const auto rows = load_manifest(manifest());
  bool skipped = false;
  for (const auto& m : rows) {
    if (m.split != "test") continue;
    if (!skipped) {
      skipped = true;
      continue;
    }
    save_attributes(params / (m.object_id + "-" + std::to_string(m.sample) + ".json"), m.attributes);
  }
  auto o = with(ParameterSource::ParamsDir);
  o.params_dir = params;
  const auto r = evaluate(manifest(), o);
  CHECK(r.missing.size() == 1u);
  for (const auto& s : r.scenes) CHECK(s.future.cd < 1e-9);
  fs::remove_all(params);
}

TEST_CASE("model reports are reproducible without timing") {
  const fs::path out = fs::temp_directory_path() / "elastica-eval-model";
  fs::remove_all(out);
  MlpModel m({160, 8, 4}, 5);
  save_model(out / "model.json", m);
  auto o = with(ParameterSource::Model);
  o.model_path = out / "model.json";

  o.timing = true;
  const auto timed = evaluate(manifest(), o);
  for (const auto& s : timed.scenes) CHECK(s.time_ms);

  o.timing = false;
  write_report(out / "a", evaluate(manifest(), o));
  o.jobs = 2;
  write_report(out / "b.json", evaluate(manifest(), o));
  CHECK(read_text_file(out / "a" / "report.json") == read_text_file(out / "b.json"));
  CHECK(read_text_file(out / "a" / "report.csv") == read_text_file(out / "b.csv"));
  const auto j = json::parse(read_text_file(out / "b.json"));
  CHECK(j["aggregate"]["time_ms"].is_null());
  fs::remove_all(out);
}

TEST_CASE("missing model is an error") {
  auto o = with(ParameterSource::Model);
  o.model_path = "/nonexistent/model.json";
  CHECK_THROWS_AS(evaluate(manifest(), o), Error);
}
