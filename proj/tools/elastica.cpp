// Command-line entry point: dataset generation, simulation, rendering,
// identification, training, prediction, evaluation and the manipulation server.

#include "elastica/autodiff.hpp"
#include "elastica/datagen.hpp"
#include "elastica/identify.hpp"
#include "elastica/io.hpp"
#include "elastica/manip.hpp"
#include "elastica/metrics.hpp"
#include "elastica/parallel.hpp"
#include "elastica/simulator.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace elastica;

namespace {

enum class Level { Error = 0, Info = 1, Debug = 2 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("ELASTICA_LOG");
    const std::string v = env ? env : "error";
    if (v == "debug") return Level::Debug;
    if (v == "info") return Level::Info;
    return Level::Error;
  }();
  return level;
}

void log(Level level, const std::string& message) {
  static const char* names[] = {"error", "info", "debug"};
  if (level <= log_level()) std::cerr << "[" << names[static_cast<int>(level)] << "] " << message << "\n";
}

const char* code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::Usage: return "usage";
    case ErrorCode::Data: return "data";
    case ErrorCode::Divergence: return "divergence";
  }
  return "data";
}

int report_error(ErrorCode code, const std::string& message, const std::string& context = {}) {
  std::cerr << json{{"code", code_name(code)}, {"message", message}, {"context", context}}.dump() << "\n";
  return static_cast<int>(code);
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
  return out.parent_path() / (out.stem().string() + suffix);
}

void write_trajectory(const fs::path& path, const Trajectory& frames, double frame_rate) {
  if (path.extension() == ".bin")
    write_trajectory_binary(path, frames);
  else
    write_trajectory_json(path, frames, frame_rate);
}

std::vector<Image> read_frames(const fs::path& dir, int limit) {
  std::vector<Image> frames;
  for (int t = 0; t < limit; ++t) {
    char name[16];
    std::snprintf(name, sizeof name, "%04d.png", t);
    if (!fs::exists(dir / name)) break;
    frames.push_back(read_png(dir / name));
  }
  if (frames.empty()) throw DataError("no frames found", dir.string());
  return frames;
}

std::vector<Shape> parse_shapes(const std::string& list) {
  std::vector<Shape> shapes;
  std::stringstream in(list);
  for (std::string name; std::getline(in, name, ',');)
    if (!name.empty()) shapes.push_back(parse_shape(name));
  if (shapes.empty()) throw Error(ErrorCode::Usage, "--shapes names no shape");
  return shapes;
}

// ---- subcommands ----

struct GenArgs {
  int objects = 58, samples = 10, test_objects = -1, anchors = 128, gaussians = 512, resolution = 64;
  int jobs = default_jobs();
  std::uint64_t seed = 0;
  std::string out, shapes;
  double drop_height = 1.0;
  bool no_views = false;
};

int run_gen(const GenArgs& a) {
  DatasetOptions o;
  o.n_objects = a.objects;
  o.samples_per_object = a.samples;
  o.test_objects = a.test_objects;
  o.master_seed = a.seed;
  o.jobs = a.jobs;
  o.write_views = !a.no_views;
  if (!a.shapes.empty()) o.shapes = parse_shapes(a.shapes);
  o.scene.drop_height = a.drop_height;
  o.scene.n_anchors = a.anchors;
  o.scene.n_gaussians = a.gaussians;
  o.scene.resolution = a.resolution;
  const auto rows = build_dataset(a.out, o);
  std::cout << json{{"manifest", (fs::path(a.out) / "manifest.json").string()}, {"rows", rows.size()}}.dump() << "\n";
  return 0;
}

struct SimulateArgs {
  std::string bundle, params, out;
  int frames = 30;
};

int run_simulate(const SimulateArgs& a) {
  const SceneBundle b = load_bundle(a.bundle);
  const PhysicalAttributes attrs = a.params.empty() ? b.attributes : load_attributes(a.params);
  const auto traj = simulate_trajectory(b.anchors, b.topology, attrs, b.config, a.frames);
  write_trajectory(a.out, traj, b.config.frame_rate);
  log(Level::Info, "wrote " + std::to_string(traj.size()) + " frames to " + a.out);
  return 0;
}

struct RenderArgs {
  std::string bundle, traj, view = "+x", out;
  int resolution = 64;
};

int run_render(const RenderArgs& a) {
  const SceneBundle b = load_bundle(a.bundle);
  const Trajectory frames = load_trajectory(a.traj);
  if (!frames.empty() && frames.front().cols() != b.anchors.size())
    throw DataError("trajectory anchor count does not match the bundle", a.traj);
  const auto images = render_trajectory(b, frames, dataset_camera(a.view, a.resolution));
  for (std::size_t t = 0; t < images.size(); ++t) {
    char name[16];
    std::snprintf(name, sizeof name, "%04zu.png", t);
    write_png(fs::path(a.out) / name, images[t]);
  }
  log(Level::Info, "rendered " + std::to_string(images.size()) + " frames");
  return 0;
}

struct IdentifyArgs {
  std::string bundle, observed, out, loss = "traj", dump_grads, view = "+x";
  int iters = 500, resolution = 64;
  std::uint64_t seed = 0;
};

int run_identify(const IdentifyArgs& a) {
  const SceneBundle b = load_bundle(a.bundle);
  IdentifyOptions o;
  o.iterations = a.iters;
  o.seed = a.seed;
  const LossKind kind = parse_loss_kind(a.loss);
  const int frames = o.observed_frames;
  FrameLoss loss;
  if (kind == LossKind::Trajectory) {
    loss = trajectory_loss(observation_targets(load_trajectory(a.observed), frames));
  } else {
    std::vector<Image> images;
    Camera camera;
    if (fs::is_directory(a.observed)) {
      images = read_frames(a.observed, frames + 1);
      camera = dataset_camera(a.view, images.front().width);
    } else {
      camera = dataset_camera(a.view, a.resolution);
      images = render_trajectory(b, load_trajectory(a.observed), camera);
    }
    if (static_cast<int>(images.size()) < frames + 1)
      throw DataError("need " + std::to_string(frames + 1) + " observed frames", a.observed);
    std::vector<Image> targets(images.begin() + 1, images.begin() + frames + 1);
    loss = photometric_frame_loss(b.gaussians, b.binding, camera, std::move(targets));
  }
  const auto r = identify_scene(b, loss, frames, o);
  save_attributes(a.out, r.attributes);
  write_text_file(sibling(a.out, "_loss.csv"), loss_curve_csv(r));
  if (!a.dump_grads.empty()) {
    json history = json::array();
    for (const auto& h : r.history)
      history.push_back({{"iteration", h.iteration},
                         {"loss", h.loss},
                         {"params", {h.params[0], h.params[1], h.params[2], h.params[3]}},
                         {"gradient", {h.gradient[0], h.gradient[1], h.gradient[2], h.gradient[3]}},
                         {"learning_rate", h.learning_rate},
                         {"rejected", h.rejected}});
    const auto final = rollout_with_gradients(b, r.attributes, loss, frames, false);
    write_text_file(a.dump_grads, json{{"final", to_json(final.report)}, {"history", history}}.dump(2) + "\n");
  }
  std::cout << json{{"params", to_json(r.attributes)}, {"loss", r.best_loss}, {"iteration", r.best_iteration}}.dump()
            << "\n";
  return 0;
}

struct TrainArgs {
  std::string manifest, out, loss = "traj", view = "+x";
  int epochs = 200, batch = 8, jobs = default_jobs();
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  const fs::path root = fs::path(a.manifest).parent_path();
  const auto rows = load_manifest(a.manifest);
  const LossKind kind = parse_loss_kind(a.loss);
  std::vector<const ManifestRow*> train;
  for (const auto& r : rows)
    if (r.split == "train") train.push_back(&r);
  if (train.empty()) throw DataError("manifest has no training rows", a.manifest);
  std::vector<TrainingSample> samples(train.size());
  parallel_for(train.size(), a.jobs, [&](std::size_t i) {
    const fs::path path = root / train[i]->path;
    samples[i].bundle = load_bundle(path);
    if (kind == LossKind::Photometric) {
      samples[i].views = read_frames(path.parent_path() / "views" / a.view, kDescriptorFrames);
      samples[i].camera = dataset_camera(a.view, samples[i].views.front().width);
    }
  });
  TrainOptions o;
  o.epochs = a.epochs;
  o.batch_size = a.batch;
  o.learning_rate = a.lr;
  o.seed = a.seed;
  o.jobs = a.jobs;
  o.loss = kind;
  o.on_epoch = [](int epoch, double loss) {
    std::ostringstream s;
    s << "epoch " << epoch << " loss " << loss;
    log(Level::Info, s.str());
  };
  const auto r = train_predictor(samples, o);
  save_model(a.out, r.model);
  write_text_file(sibling(a.out, "_loss.csv"), epoch_loss_csv(r.epoch_losses));
  for (const auto& [epoch, index] : r.divergent)
    log(Level::Info, "epoch " + std::to_string(epoch) + ": sample " + std::to_string(index) + " diverged");
  return 0;
}

struct PredictArgs {
  std::string model, observed, out;
  double frame_rate = 30.0;
};

int run_predict(const PredictArgs& a) {
  const MlpModel m = load_model(a.model);
  const Trajectory observed = load_trajectory(a.observed);
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = predict(m, observed, a.frame_rate);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  save_attributes(a.out, p);
  std::cout << json{{"params", to_json(p)}, {"time_ms", ms}}.dump() << "\n";
  return 0;
}

struct EvalArgs {
  std::string manifest, model, params_dir, out, split = "test", view = "+x";
  bool mean_baseline = false, ground_truth = false, no_timing = false, centers = false;
  int resolution = 64, jobs = default_jobs();
};

int run_eval(const EvalArgs& a) {
  EvaluateOptions o;
  const int sources = !a.model.empty() + !a.params_dir.empty() + a.mean_baseline + a.ground_truth;
  if (sources != 1)
    throw Error(ErrorCode::Usage, "choose exactly one of --model, --params-dir, --mean-baseline, --ground-truth");
  if (!a.model.empty()) o.source = ParameterSource::Model, o.model_path = a.model;
  if (!a.params_dir.empty()) o.source = ParameterSource::ParamsDir, o.params_dir = a.params_dir;
  if (a.mean_baseline) o.source = ParameterSource::MeanBaseline;
  if (a.ground_truth) o.source = ParameterSource::GroundTruth;
  o.split = a.split;
  o.view = a.view;
  o.resolution = a.resolution;
  o.use_centers = a.centers;
  o.timing = !a.no_timing;
  o.jobs = a.jobs;
  const auto report = evaluate(a.manifest, o);
  write_report(a.out, report);
  for (const auto& m : report.missing) log(Level::Info, "skipped " + m);
  const json summary{{"scenes", report.scenes.size()},
                     {"future_cd_median", median_metric(report, true, &WindowMetrics::cd)},
                     {"future_psnr_median", median_metric(report, true, &WindowMetrics::psnr)}};
  std::cout << summary.dump() << "\n";
  return 0;
}

struct ServeArgs {
  std::string bundle, params, ui_dir, coupling = "pin", address = "127.0.0.1";
  int port = 8080;
  double hz = 30.0;
};

int run_serve(const ServeArgs& a) {
  SceneBundle b = load_bundle(a.bundle);
  if (!a.params.empty()) b.attributes = load_attributes(a.params);
  ServeOptions o;
  o.address = a.address;
  o.port = static_cast<unsigned short>(a.port);
  o.ui_dir = a.ui_dir;
  o.session.hz = a.hz;
  o.session.coupling = parse_coupling(a.coupling);
  if (log_level() >= Level::Debug)
    o.on_tick = [](double ms) { log(Level::Debug, "tick " + std::to_string(ms) + " ms"); };

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ManipServer server(std::move(b), o);
  std::cout << json{{"listening", a.address + ":" + std::to_string(server.port())}}.dump() << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.run();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spring-mass physical parameter identification and prediction for Gaussian objects", "elastica"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset and manifest");
  g->add_option("--objects", gen.objects, "Number of objects")->required()->check(CLI::PositiveNumber);
  g->add_option("--samples", gen.samples, "Samples per object")->required()->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Master seed")->required();
  g->add_option("--shapes", gen.shapes, "Comma-separated shapes (sphere,box,torus,ellipsoid,capsule)");
  g->add_option("--drop-height", gen.drop_height, "Height of the lowest anchor above the ground")->capture_default_str();
  g->add_option("--test-objects", gen.test_objects, "Held-out objects (default round(N*8/58))");
  g->add_option("--anchors", gen.anchors, "Anchors per object")->capture_default_str();
  g->add_option("--gaussians", gen.gaussians, "Gaussians per object")->capture_default_str();
  g->add_option("--res", gen.resolution, "Rendered view resolution")->capture_default_str();
  g->add_flag("--no-views", gen.no_views, "Skip rendering PNG views");
  g->add_option("--jobs", gen.jobs, "Parallel scenes")->capture_default_str()->check(CLI::PositiveNumber);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Roll a bundle forward");
  s->add_option("--bundle", sim.bundle, "Scene bundle JSON")->required()->check(CLI::ExistingFile);
  s->add_option("--frames", sim.frames, "Stored frames including the initial state")->required()->check(CLI::PositiveNumber);
  s->add_option("--params", sim.params, "Attributes JSON (default: the bundle's)")->check(CLI::ExistingFile);
  s->add_option("--out", sim.out, "Trajectory file (.json, or .bin for binary)")->required();

  RenderArgs ren;
  auto* r = app.add_subcommand("render", "Render a trajectory to PNG frames");
  r->add_option("--bundle", ren.bundle, "Scene bundle JSON")->required()->check(CLI::ExistingFile);
  r->add_option("--traj", ren.traj, "Trajectory file")->required()->check(CLI::ExistingFile);
  r->add_option("--view", ren.view, "View")->required()->check(CLI::IsMember({"+x", "-x", "+y", "+z", "-z", "az45"}));
  r->add_option("--out", ren.out, "Output directory")->required();
  r->add_option("--res", ren.resolution, "Image size")->capture_default_str()->check(CLI::PositiveNumber);

  IdentifyArgs idn;
  auto* i = app.add_subcommand("identify", "Fit physical attributes to one observed scene");
  i->add_option("--bundle", idn.bundle, "Scene bundle JSON")->required()->check(CLI::ExistingFile);
  i->add_option("--observed", idn.observed, "Observed trajectory, or a directory of PNG frames for --loss photo")
      ->required()
      ->check(CLI::ExistingPath);
  i->add_option("--iters", idn.iters, "Evaluation budget")->required()->check(CLI::PositiveNumber);
  i->add_option("--seed", idn.seed, "Seed")->required();
  i->add_option("--out", idn.out, "Attributes JSON; the loss curve goes to <stem>_loss.csv")->required();
  i->add_option("--loss", idn.loss, "Loss")->capture_default_str()->check(CLI::IsMember({"traj", "photo"}));
  i->add_option("--view", idn.view, "View for the photometric loss")->capture_default_str();
  i->add_option("--res", idn.resolution, "Resolution when rendering a trajectory for --loss photo")->capture_default_str();
  i->add_option("--dump-grads", idn.dump_grads, "Write per-iteration gradients and the final gradient report");

  TrainArgs trn;
  auto* t = app.add_subcommand("train", "Train the feedforward predictor");
  t->add_option("--manifest", trn.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  t->add_option("--epochs", trn.epochs, "Epochs")->required()->check(CLI::NonNegativeNumber);
  t->add_option("--batch", trn.batch, "Batch size")->required()->check(CLI::PositiveNumber);
  t->add_option("--seed", trn.seed, "Seed")->required();
  t->add_option("--out", trn.out, "Model JSON; the loss curve goes to <stem>_loss.csv")->required();
  t->add_option("--loss", trn.loss, "Loss")->capture_default_str()->check(CLI::IsMember({"traj", "photo"}));
  t->add_option("--lr", trn.lr, "Adam learning rate")->capture_default_str();
  t->add_option("--view", trn.view, "View for the photometric loss")->capture_default_str();
  t->add_option("--jobs", trn.jobs, "Parallel samples")->capture_default_str()->check(CLI::PositiveNumber);

  PredictArgs prd;
  auto* p = app.add_subcommand("predict", "Predict attributes from an observed trajectory");
  p->add_option("--model", prd.model, "Model JSON")->required()->check(CLI::ExistingFile);
  p->add_option("--observed", prd.observed, "Observed trajectory (at least 20 frames)")->required()->check(CLI::ExistingFile);
  p->add_option("--out", prd.out, "Attributes JSON")->required();
  p->add_option("--frame-rate", prd.frame_rate, "Frame rate of the observation")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a parameter source on a dataset split");
  e->add_option("--manifest", ev.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  e->add_option("--model", ev.model, "Predictor model JSON")->check(CLI::ExistingFile);
  e->add_option("--params-dir", ev.params_dir, "Directory of {object_id}-{sample}.json")->check(CLI::ExistingDirectory);
  e->add_flag("--mean-baseline", ev.mean_baseline, "Mean training attributes for every scene");
  e->add_flag("--ground-truth", ev.ground_truth, "True attributes (sanity check)");
  e->add_option("--out", ev.out, "report.json path, or a directory for report.json + report.csv")->required();
  e->add_option("--split", ev.split, "Split")->capture_default_str()->check(CLI::IsMember({"train", "test"}));
  e->add_option("--view", ev.view, "Rendered view")->capture_default_str();
  e->add_option("--res", ev.resolution, "Render size")->capture_default_str();
  e->add_flag("--centers", ev.centers, "Measure geometry on Gaussian centers instead of anchors");
  e->add_flag("--no-timing", ev.no_timing, "Omit wall times so reports are byte-reproducible");
  e->add_option("--jobs", ev.jobs, "Parallel scenes")->capture_default_str()->check(CLI::PositiveNumber);

  ServeArgs srv;
  auto* v = app.add_subcommand("serve", "Run the interactive manipulation server");
  v->add_option("--bundle", srv.bundle, "Scene bundle JSON")->required()->check(CLI::ExistingFile);
  v->add_option("--params", srv.params, "Attributes JSON")->check(CLI::ExistingFile);
  v->add_option("--port", srv.port, "TCP port (0 picks a free one)")->required()->check(CLI::Range(0, 65535));
  v->add_option("--hz", srv.hz, "Tick rate")->capture_default_str()->check(CLI::PositiveNumber);
  v->add_option("--address", srv.address, "Bind address")->capture_default_str();
  v->add_option("--coupling", srv.coupling, "Controller coupling")->capture_default_str()->check(CLI::IsMember({"pin", "spring"}));
  v->add_option("--ui-dir", srv.ui_dir, "Static files served at /")->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    return report_error(ErrorCode::Usage, err.what());
  }

  try {
    if (*g) return run_gen(gen);
    if (*s) return run_simulate(sim);
    if (*r) return run_render(ren);
    if (*i) return run_identify(idn);
    if (*t) return run_train(trn);
    if (*p) return run_predict(prd);
    if (*e) return run_eval(ev);
    if (*v) return run_serve(srv);
  } catch (const Error& err) {
    return report_error(err.code(), err.what(), err.context());
  } catch (const json::exception& err) {
    return report_error(ErrorCode::Data, err.what());
  } catch (const fs::filesystem_error& err) {
    return report_error(ErrorCode::Data, err.what(), err.path1().string());
  } catch (const std::exception& err) {
    return report_error(ErrorCode::Data, err.what());
  }
  return report_error(ErrorCode::Usage, "no subcommand");
}
