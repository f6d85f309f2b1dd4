#include "elastica/metrics.hpp"

#include "elastica/binding.hpp"
#include "elastica/io.hpp"
#include "elastica/parallel.hpp"
#include "elastica/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace elastica {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void require_same_size(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height)
    throw DataError(std::string(what) + ": image sizes differ (" + std::to_string(a.width) + "x" +
                    std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
}

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;

// Valid-region separable Gaussian filter.
Eigen::ArrayXXd filter_valid(const Eigen::ArrayXXd& img, const Eigen::ArrayXd& w) {
  const Eigen::Index r = kSsimRadius;
  const Eigen::Index rows = img.rows() - 2 * r, cols = img.cols() - 2 * r;
  Eigen::ArrayXXd tmp = Eigen::ArrayXXd::Zero(img.rows(), cols);
  for (Eigen::Index k = 0; k <= 2 * r; ++k) tmp += w[k] * img.middleCols(k, cols);
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(rows, cols);
  for (Eigen::Index k = 0; k <= 2 * r; ++k) out += w[k] * tmp.middleRows(k, rows);
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same_size(a, b, "psnr");
  double sum = 0.0;
  for (std::size_t c = 0; c < 3; ++c) sum += (a.channels[c] - b.channels[c]).square().sum();
  const double mse = sum / (3.0 * a.width * a.height);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Eigen::ArrayXXd& x, const Eigen::ArrayXXd& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw DataError("ssim: image sizes differ");
  if (x.rows() < 2 * kSsimRadius + 1 || x.cols() < 2 * kSsimRadius + 1)
    throw DataError("ssim: images must be at least 11x11");
  Eigen::ArrayXd w(2 * kSsimRadius + 1);
  for (int i = -kSsimRadius; i <= kSsimRadius; ++i) w[i + kSsimRadius] = std::exp(-0.5 * i * i / (kSsimSigma * kSsimSigma));
  w /= w.sum();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const Eigen::ArrayXXd ux = filter_valid(x, w), uy = filter_valid(y, w);
  const Eigen::ArrayXXd vx = filter_valid(x * x, w) - ux * ux;
  const Eigen::ArrayXXd vy = filter_valid(y * y, w) - uy * uy;
  const Eigen::ArrayXXd vxy = filter_valid(x * y, w) - ux * uy;
  const Eigen::ArrayXXd s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
  return s.mean();
}

double ssim(const Image& a, const Image& b) {
  require_same_size(a, b, "ssim");
  return ssim(a.luma(), b.luma());
}

double chamfer(const Points& a, const Points& b) {
  if (a.cols() == 0 || b.cols() == 0) throw DataError("chamfer: empty point set");
  Eigen::VectorXd best_a = Eigen::VectorXd::Constant(a.cols(), std::numeric_limits<double>::infinity());
  Eigen::VectorXd best_b = Eigen::VectorXd::Constant(b.cols(), std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < a.cols(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      const double d = (a.col(i) - b.col(j)).squaredNorm();
      best_a[i] = std::min(best_a[i], d);
      best_b[j] = std::min(best_b[j], d);
    }
  return best_a.mean() + best_b.mean();
}

std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw DataError("hungarian: cost matrix must be square");
  // Shortest augmenting paths with potentials; 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<int> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[sj];
        if (cur < minv[sj]) minv[sj] = cur, way[sj] = j0;
        if (minv[sj] < delta) delta = minv[sj], j1 = j;
      }
      for (int j = 0; j <= n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj])
          u[static_cast<std::size_t>(p[sj])] += delta, v[sj] -= delta;
        else
          minv[sj] -= delta;
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return assignment;
}

double sinkhorn_cost(const Eigen::MatrixXd& cost, double epsilon, int max_iterations) {
  const Eigen::Index n = cost.rows(), m = cost.cols();
  const double log_a = -std::log(static_cast<double>(n)), log_b = -std::log(static_cast<double>(m));
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n), g = Eigen::VectorXd::Zero(m);
  auto lse_rows = [&](double eps) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::ArrayXd z = (g.array() - cost.row(i).transpose().array()) / eps;
      const double zmax = z.maxCoeff();
      f[i] = eps * log_a - eps * (zmax + std::log((z - zmax).exp().sum()));
    }
  };
  auto lse_cols = [&](double eps) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::ArrayXd z = (f.array() - cost.col(j).array()) / eps;
      const double zmax = z.maxCoeff();
      g[j] = eps * log_b - eps * (zmax + std::log((z - zmax).exp().sum()));
    }
  };
  // Epsilon scaling: anneal from the cost scale down to the target.
  double eps = std::max(epsilon, cost.maxCoeff());
  int it = 0;
  while (true) {
    const bool final_stage = eps <= epsilon;
    for (int k = 0; k < (final_stage ? max_iterations : 20) && it < max_iterations * 4; ++k, ++it) {
      lse_rows(eps);
      lse_cols(eps);
      if (final_stage && k % 10 == 9) {
        double err = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
          err += std::abs(((f[i] + g.array() - cost.row(i).transpose().array()) / eps).exp().sum() - std::exp(log_a));
        if (err < 1e-9) break;
      }
    }
    if (final_stage) break;
    eps = std::max(epsilon, eps * 0.5);
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    total += (((f[i] + g.array() - cost.row(i).transpose().array()) / eps).exp() * cost.row(i).transpose().array()).sum();
  return total;
}

double emd(const Points& a, const Points& b) {
  if (a.cols() != b.cols())
    throw DataError("emd: point sets differ in size (" + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) + ")");
  if (a.cols() == 0) throw DataError("emd: empty point set");
  if (a.cols() > kEmdMaxPoints) throw DataError("emd: at most 1024 points");
  const Eigen::Index n = a.cols();
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = (a.col(i) - b.col(j)).norm();
  if (n <= kEmdExactLimit) {
    const auto match = hungarian(cost);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total += cost(i, match[static_cast<std::size_t>(i)]);
    return total / static_cast<double>(n);
  }
  return sinkhorn_cost(cost);
}

std::map<std::string, double> parameter_mae(const std::vector<PhysicalAttributes>& predicted,
                                            const std::vector<PhysicalAttributes>& truth,
                                            const std::vector<std::string>& which) {
  if (predicted.size() != truth.size()) throw DataError("parameter_mae: collections differ in size");
  auto quantity = [](const PhysicalAttributes& p, const std::string& name) {
    if (!p.shared) throw DataError("parameter_mae: shared-mode attributes required");
    if (name == "m") return p.m();
    if (name == "k") return p.k();
    if (name == "d") return p.d();
    if (name == "f") return p.f();
    if (name == "k/m") return p.k() / p.m();
    if (name == "d/m") return p.d() / p.m();
    throw Error(ErrorCode::Usage, "unknown parameter '" + name + "'");
  };
  std::map<std::string, double> out;
  for (const auto& name : which) {
    double sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) sum += std::abs(quantity(predicted[i], name) - quantity(truth[i], name));
    out[name] = truth.empty() ? 0.0 : sum / static_cast<double>(truth.size());
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

const char* source_name(ParameterSource s) {
  switch (s) {
    case ParameterSource::Model: return "model";
    case ParameterSource::ParamsDir: return "params";
    case ParameterSource::MeanBaseline: return "mean-baseline";
    case ParameterSource::GroundTruth: return "ground-truth";
  }
  return "?";
}

WindowMetrics window_metrics(const std::vector<Points>& pred_geo, const std::vector<Points>& true_geo,
                             const std::vector<Image>& pred_img, const std::vector<Image>& true_img, int first,
                             int last) {
  WindowMetrics w;
  const int count = last - first;
  for (int t = first; t < last; ++t) {
    const auto st = static_cast<std::size_t>(t);
    w.psnr += psnr(pred_img[st], true_img[st]);
    w.ssim += ssim(pred_img[st], true_img[st]);
    w.cd += chamfer(pred_geo[st], true_geo[st]);
    w.emd += emd(pred_geo[st], true_geo[st]);
  }
  w.psnr /= count;
  w.ssim /= count;
  w.cd /= count;
  w.emd /= count;
  return w;
}

WindowMetrics failed_window() {
  const double inf = std::numeric_limits<double>::infinity();
  return WindowMetrics{0.0, 0.0, inf, inf};
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json window_json(const WindowMetrics& w) {
  return json{{"psnr", number_or_null(w.psnr)},
              {"ssim", number_or_null(w.ssim)},
              {"lpips", nullptr},
              {"cd", number_or_null(w.cd)},
              {"emd", number_or_null(w.emd)}};
}

std::string csv_number(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

EvaluationReport evaluate(const fs::path& manifest_path, const EvaluateOptions& opt) {
  const auto rows = load_manifest(manifest_path);
  const fs::path root = manifest_path.parent_path();
  EvaluationReport report;
  report.source = source_name(opt.source);
  report.split = opt.split;

  PhysicalAttributes mean_attrs;
  if (opt.source == ParameterSource::MeanBaseline) {
    Eigen::Vector4d sum = Eigen::Vector4d::Zero();
    int count = 0;
    for (const auto& r : rows)
      if (r.split == "train") sum += r.attributes.as_vector(), ++count;
    if (count == 0) throw DataError("mean baseline needs training rows in the manifest", manifest_path.string());
    mean_attrs = PhysicalAttributes::FromVector(sum / count);
  }
  MlpModel model;
  if (opt.source == ParameterSource::Model) model = load_model(opt.model_path);

  std::vector<const ManifestRow*> selected;
  for (const auto& r : rows)
    if (r.split == opt.split) selected.push_back(&r);

  std::vector<std::optional<SceneReport>> results(selected.size());
  std::vector<std::string> missing(selected.size());
  const Camera camera = dataset_camera(opt.view, opt.resolution);

  parallel_for(selected.size(), opt.jobs, [&](std::size_t i) {
    const ManifestRow& row = *selected[i];
    SceneBundle bundle;
    try {
      bundle = load_bundle(root / row.path);
      if (!bundle.trajectory || bundle.trajectory->size() < static_cast<std::size_t>(kReconFrames + 1))
        throw DataError("bundle has no observed trajectory");
    } catch (const Error& e) {
      missing[i] = row.path + ": " + e.what();
      return;
    }
    SceneReport s;
    s.object_id = row.object_id;
    s.sample = row.sample;
    s.path = row.path;
    s.truth = row.attributes;
    const Trajectory& observed = *bundle.trajectory;
    switch (opt.source) {
      case ParameterSource::Model: {
        const auto t0 = std::chrono::steady_clock::now();
        s.estimate = predict(model, observed, bundle.config.frame_rate);
        const auto t1 = std::chrono::steady_clock::now();
        if (opt.timing) s.time_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        break;
      }
      case ParameterSource::ParamsDir:
        try {
          s.estimate = load_attributes(opt.params_dir / (row.object_id + "-" + std::to_string(row.sample) + ".json"));
        } catch (const Error& e) {
          missing[i] = row.path + ": " + e.what();
          return;
        }
        break;
      case ParameterSource::MeanBaseline: s.estimate = mean_attrs; break;
      case ParameterSource::GroundTruth: s.estimate = row.attributes; break;
    }

    const int total = static_cast<int>(observed.size());
    try {
      const Trajectory predicted = simulate_trajectory(bundle.anchors, bundle.topology, s.estimate, bundle.config, total);
      auto geometry = [&](const Trajectory& traj) {
        if (!opt.use_centers) return traj;
        Trajectory out;
        for (const auto& x : traj) out.push_back(interpolate_centers(bundle.binding, x));
        return out;
      };
      const auto pred_geo = geometry(predicted), true_geo = geometry(observed);
      const auto pred_img = render_trajectory(bundle, predicted, camera);
      const auto true_img = render_trajectory(bundle, observed, camera);
      s.recon = window_metrics(pred_geo, true_geo, pred_img, true_img, 0, kReconFrames);
      s.future = window_metrics(pred_geo, true_geo, pred_img, true_img, kReconFrames, total);
    } catch (const DivergenceError& e) {
      s.error = e.what();
      s.recon = s.future = failed_window();
    }
    results[i] = std::move(s);
  });

  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (results[i]) report.scenes.push_back(std::move(*results[i]));
    if (!missing[i].empty()) report.missing.push_back(missing[i]);
  }
  return report;
}

double median_metric(const EvaluationReport& report, bool future, double WindowMetrics::*metric) {
  std::vector<double> v;
  for (const auto& s : report.scenes) v.push_back((future ? s.future : s.recon).*metric);
  return median_of(std::move(v));
}

json to_json(const EvaluationReport& report) {
  json scenes = json::array();
  std::vector<PhysicalAttributes> est, truth;
  std::vector<double> times;
  for (const auto& s : report.scenes) {
    json j{{"object_id", s.object_id},
           {"sample", s.sample},
           {"path", s.path},
           {"truth", to_json(s.truth)},
           {"estimate", to_json(s.estimate)},
           {"recon", window_json(s.recon)},
           {"future", window_json(s.future)},
           {"mae_k_over_m", std::abs(s.estimate.k() / s.estimate.m() - s.truth.k() / s.truth.m())},
           {"mae_d_over_m", std::abs(s.estimate.d() / s.estimate.m() - s.truth.d() / s.truth.m())},
           {"mae_f", std::abs(s.estimate.f() - s.truth.f())},
           {"time_ms", s.time_ms ? json(*s.time_ms) : json(nullptr)},
           {"error", s.error ? json(*s.error) : json(nullptr)}};
    scenes.push_back(std::move(j));
    est.push_back(s.estimate);
    truth.push_back(s.truth);
    if (s.time_ms) times.push_back(*s.time_ms);
  }
  json aggregate = json::object();
  for (const bool future : {false, true}) {
    json w = json::object();
    for (const auto& [name, member] : std::vector<std::pair<const char*, double WindowMetrics::*>>{
             {"psnr", &WindowMetrics::psnr}, {"ssim", &WindowMetrics::ssim}, {"cd", &WindowMetrics::cd},
             {"emd", &WindowMetrics::emd}}) {
      std::vector<double> v;
      for (const auto& s : report.scenes) v.push_back((future ? s.future : s.recon).*member);
      double mean = 0.0;
      for (double x : v) mean += x;
      mean = v.empty() ? std::numeric_limits<double>::quiet_NaN() : mean / static_cast<double>(v.size());
      w[name] = {{"mean", number_or_null(mean)}, {"median", number_or_null(median_of(v))}};
    }
    w["lpips"] = nullptr;
    aggregate[future ? "future" : "recon"] = std::move(w);
  }
  json mae = json::object();
  for (const auto& [k, v] : parameter_mae(est, truth)) mae[k] = v;
  aggregate["parameter_mae"] = std::move(mae);
  aggregate["time_ms"] = times.empty() ? json(nullptr)
                                       : json{{"median", median_of(times)},
                                              {"max", *std::max_element(times.begin(), times.end())}};
  return json{{"source", report.source},
              {"split", report.split},
              {"conventions",
               {{"cd", "mean squared nearest-neighbour distance a->b plus b->a, averaged over frames"},
                {"emd", "mean euclidean distance under optimal one-to-one matching, averaged over frames"},
                {"recon_frames", {0, kReconFrames - 1}},
                {"future_frames", {kReconFrames, kReconFrames + kFutureFrames - 1}},
                {"mass", "mass is not identifiable from trajectories; its MAE is descriptive only"}}},
              {"scene_count", report.scenes.size()},
              {"aggregate", aggregate},
              {"scenes", scenes},
              {"missing", report.missing}};
}

std::string report_csv(const EvaluationReport& report) {
  std::ostringstream s;
  s << "# cd: mean squared nearest distance a->b plus b->a; emd: mean matched euclidean distance\n";
  s << "object_id,sample,split,psnr,ssim,lpips,cd,emd,mae_k_over_m,mae_d_over_m,mae_f,time_ms\n";
  for (const auto& sc : report.scenes)
    for (const bool future : {false, true}) {
      const WindowMetrics& w = future ? sc.future : sc.recon;
      s << sc.object_id << ',' << sc.sample << ',' << (future ? "future" : "recon") << ',' << csv_number(w.psnr) << ','
        << csv_number(w.ssim) << ",," << csv_number(w.cd) << ',' << csv_number(w.emd) << ','
        << csv_number(std::abs(sc.estimate.k() / sc.estimate.m() - sc.truth.k() / sc.truth.m())) << ','
        << csv_number(std::abs(sc.estimate.d() / sc.estimate.m() - sc.truth.d() / sc.truth.m())) << ','
        << csv_number(std::abs(sc.estimate.f() - sc.truth.f())) << ',' << (sc.time_ms ? csv_number(*sc.time_ms) : "")
        << '\n';
    }
  return s.str();
}

void write_report(const fs::path& out, const EvaluationReport& report) {
  fs::path json_path = out, csv_path = out;
  if (out.extension() == ".json") {
    csv_path.replace_extension(".csv");
  } else {
    json_path = out / "report.json";
    csv_path = out / "report.csv";
  }
  write_text_file(json_path, to_json(report).dump(2) + "\n");
  write_text_file(csv_path, report_csv(report));
}

}  // namespace elastica
