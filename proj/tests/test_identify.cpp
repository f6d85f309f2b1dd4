#include "elastica/identify.hpp"

#include "elastica/datagen.hpp"
#include "elastica/simulator.hpp"
#include "support.hpp"

#include <doctest.h>

#include <chrono>

using namespace elastica;
using elastica::testing::rel_err;

namespace {

SceneOptions small_scene() {
  SceneOptions o;
  o.n_gaussians = 128;
  o.n_anchors = 32;
  o.grid_resolution = 16;
  o.render_views = false;
  return o;
}

SceneBundle observed_scene(const PhysicalAttributes& truth, std::string_view id = "identify-box") {
  return synthesize_scene(id, Shape::Box, truth, small_scene()).bundle;
}

Trajectory static_frames(int n) { return Trajectory(static_cast<std::size_t>(n), Points::Random(3, 10)); }

}  // namespace

TEST_CASE("squash") {
  const ParameterRanges r;
  CHECK(squash(Eigen::Vector4d::Zero()).m() == doctest::Approx(3.1).epsilon(1e-15));
  const auto high = squash(Eigen::Vector4d::Constant(50.0));
  for (int i = 0; i < 4; ++i) CHECK(std::abs(high.as_vector()[i] - r.max[i]) < 1e-10);
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::Vector4d raw;
    for (int i = 0; i < 4; ++i) raw[i] = rng.uniform(-40, 40);
    CHECK(r.contains(squash(raw)));
  }
  const Eigen::Vector4d raw(0.3, -1.2, 2.0, -0.4);
  CHECK((unsquash(squash(raw)) - raw).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::Vector4d d = squash_derivative(raw);
  for (int i = 0; i < 4; ++i) {
    Eigen::Vector4d up = raw, dn = raw;
    up[i] += 1e-6;
    dn[i] -= 1e-6;
    CHECK(rel_err(d[i], (squash(up).as_vector()[i] - squash(dn).as_vector()[i]) / 2e-6) < 1e-7);
  }
  CHECK_FALSE(r.violation(Eigen::Vector4d(1, 5000, 1, 0.5)).empty());
  CHECK(r.violation(Eigen::Vector4d(1, 5000, 1, 0.5)).find("stiffness") != std::string::npos);
}

TEST_CASE("adam minimises a quadratic") {
  Adam adam(2);
  Eigen::VectorXd x(2);
  x << 3, -2;
  for (int i = 0; i < 2000; ++i) x += adam.update(2.0 * x, 0.05 * (1.0 - i / 2000.0));
  CHECK(x.norm() < 1e-3);
  CHECK(cosine_lr(1.0, 0, 10) == 1.0);
  CHECK(cosine_lr(1.0, 5, 10) == doctest::Approx(0.5));
}

TEST_CASE("identify_scene recovers the ratios from a contact scene") {
  const auto truth = PhysicalAttributes::Shared(1.7, 420.0, 2.1, 0.45);
  const auto b = observed_scene(truth);
  const auto r = identify_scene(b, *b.trajectory);
  const auto& p = r.attributes;
  MESSAGE("identified " << p.as_vector().transpose() << " loss " << r.best_loss);
  CHECK(r.best_loss < 1e-6);
  CHECK(rel_err(p.k() / p.m(), truth.k() / truth.m()) < 0.05);
  CHECK(rel_err(p.d() / p.m(), truth.d() / truth.m()) < 0.05);
  CHECK(ParameterRanges{}.contains(p));
  CHECK(static_cast<int>(r.history.size()) <= 500);

  const auto again = identify_scene(b, *b.trajectory);
  CHECK((again.attributes.as_vector().array() == p.as_vector().array()).all());
  CHECK(loss_curve_csv(again) == loss_curve_csv(r));
}

TEST_CASE("observation generated at the initial point is a fixed point") {
  const auto mid = PhysicalAttributes::FromVector(ParameterRanges{}.midpoint());
  const auto b = observed_scene(mid);
  IdentifyOptions o;
  o.iterations = 20;
  const auto r = identify_scene(b, *b.trajectory, o);
  CHECK(r.history.front().loss < 1e-20);
  CHECK((r.attributes.as_vector() - mid.as_vector()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("friction is untouched without contact") {
  SceneOptions o = small_scene();
  o.drop_height = 50.0;  // 19 frames of fall never reach the ground
  const auto b = synthesize_scene("airborne", Shape::Sphere, PhysicalAttributes::Shared(2, 300, 1, 0.9), o).bundle;
  IdentifyOptions io;
  io.iterations = 40;
  const auto r = identify_scene(b, *b.trajectory, io);
  for (const auto& h : r.history) CHECK(h.gradient[3] == 0.0);
  CHECK(r.attributes.f() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("divergent trial steps are rejected") {
  const auto b = observed_scene(PhysicalAttributes::Shared(1.7, 420.0, 2.1, 0.45));
  const FrameLoss base = trajectory_loss(observation_targets(*b.trajectory, 5));
  SUBCASE("transient") {
    auto calls = std::make_shared<int>(0);
    const FrameLoss flaky = [base, calls](int f, const Points& x, Points* g) {
      if (f == 0 && ++*calls == 3) throw DivergenceError(0);
      return base(f, x, g);
    };
    IdentifyOptions o;
    o.iterations = 10;
    const auto r = identify_scene(b, flaky, 5, o);
    CHECK(r.history[2].rejected);
    CHECK(r.history.size() <= 10u);
    CHECK(r.history.size() > 3u);
    CHECK(r.history[3].learning_rate < r.history[1].learning_rate);
  }
  SUBCASE("persistent") {
    auto calls = std::make_shared<int>(0);
    const FrameLoss broken = [base, calls](int f, const Points& x, Points* g) {
      if (f == 0 && ++*calls > 1) throw DivergenceError(0);
      return base(f, x, g);
    };
    IdentifyOptions o;
    o.max_rejections = 4;
    try {
      identify_scene(b, broken, 5, o);
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Divergence);
      CHECK(e.context().find("rejections") != std::string::npos);
    }
  }
}

TEST_CASE("extract_descriptor") {
  SUBCASE("static trajectory has zero speed features") {
    const auto d = extract_descriptor(static_frames(20), 30.0);
    REQUIRE(d.size() == 160);
    for (int t = 0; t < 20; ++t) {
      CHECK(d[t * 8 + 6] == 0.0);
      CHECK(d[t * 8 + 7] == 0.0);
    }
  }
  SUBCASE("rigid x translation changes only the centroid") {
    Rng rng(4);
    Trajectory a;
    for (int t = 0; t < 20; ++t) a.push_back(elastica::testing::random_cloud(rng, 12, Vec3(0, 1, 0), 0.5));
    Trajectory b = a;
    for (auto& f : b) f.row(0).array() += 3.0;
    const auto da = extract_descriptor(a, 30.0), db = extract_descriptor(b, 30.0);
    for (int i = 0; i < 160; ++i) {
      if (i % 8 == 0)
        CHECK(db[i] == doctest::Approx(da[i] + 3.0));
      else
        CHECK(std::abs(db[i] - da[i]) < 1e-12);
    }
  }
  SUBCASE("free fall follows the integrator's closed form") {
    SpringMassState s{Points(Vec3(0, 100, 0)), Points::Zero(3, 1), 0};
    SpringTopology none;
    none.rest_lengths.resize(0);
    const SimConfig c;
    const auto traj = simulate_trajectory(s, none, PhysicalAttributes::Shared(1, 0, 0, 0), c, 20);
    const auto d = extract_descriptor(traj, c.frame_rate);
    const double g = 9.8, dt = c.dt;
    for (int t = 1; t < 20; ++t) {
      CHECK(d[t * 8 + 1] < d[(t - 1) * 8 + 1]);
      const double n = 10.0 * t;
      // Semi-implicit Euler: y_n = y_0 - g dt^2 n (n + 1) / 2, within g dt t_n of 1/2 g t^2.
      CHECK(d[t * 8 + 1] == doctest::Approx(100.0 - g * dt * dt * n * (n + 1) / 2).epsilon(1e-12));
      CHECK(std::abs(d[t * 8 + 1] - (100.0 - 0.5 * g * (n * dt) * (n * dt))) <= g * dt * n * dt);
    }
  }
  CHECK_THROWS_AS(extract_descriptor(static_frames(19), 30.0), DataError);
}

TEST_CASE("MLP") {
  MlpModel m({160, 16, 8, 4}, 9);
  Rng rng(10);
  Eigen::VectorXd x(160);
  for (int i = 0; i < 160; ++i) x[i] = rng.uniform(-2, 2);

  SUBCASE("predictions stay inside the ranges and repeat") {
    CHECK(ParameterRanges{}.contains(m.predict(x)));
    CHECK(m.predict(x).as_vector() == m.predict(x).as_vector());
    CHECK_THROWS_AS(m.predict(Eigen::VectorXd::Zero(12)), DataError);
  }
  SUBCASE("seeded initialization") {
    const MlpModel same({160, 16, 8, 4}, 9), other({160, 16, 8, 4}, 10);
    CHECK(same.flat_parameters() == m.flat_parameters());
    CHECK(other.flat_parameters() != m.flat_parameters());
    const double bound = 1.0 / std::sqrt(160.0);
    CHECK(m.weights[0].cwiseAbs().maxCoeff() <= bound);
  }
  SUBCASE("backward matches finite differences") {
    const Eigen::Vector4d up(0.3, -1.0, 0.5, 2.0);
    const Eigen::VectorXd g = m.backward(x, up);
    Eigen::VectorXd theta = m.flat_parameters();
    for (Eigen::Index i : {0, 7, 2000, 2567, 2600, static_cast<int>(theta.size()) - 1}) {
      MlpModel p = m, q = m;
      Eigen::VectorXd tp = theta, tq = theta;
      tp[i] += 1e-6;
      tq[i] -= 1e-6;
      p.set_flat_parameters(tp);
      q.set_flat_parameters(tq);
      const double fd = (up.dot(p.raw_output(x)) - up.dot(q.raw_output(x))) / 2e-6;
      CHECK(rel_err(g[i], fd, 1e-8) < 1e-6);
    }
  }
  SUBCASE("JSON round trip") {
    Eigen::VectorXd mean = Eigen::VectorXd::Constant(160, 0.1), std = Eigen::VectorXd::Constant(160, 2.0);
    m.set_feature_statistics(mean, std);
    const auto j = to_json(m);
    for (const char* key : {"layers", "weights", "biases", "feature_mean", "feature_std", "ranges"}) CHECK(j.contains(key));
    const MlpModel back = model_from_json(j);
    CHECK(back.flat_parameters() == m.flat_parameters());
    CHECK(back.predict(x).as_vector() == m.predict(x).as_vector());
    CHECK(to_json(back).dump() == j.dump());
    CHECK_THROWS_AS(model_from_json(nlohmann::json{{"layers", {160, 4}}}), DataError);
  }
}

TEST_CASE("train_predictor") {
  const auto truth = PhysicalAttributes::Shared(2.0, 600.0, 1.5, 0.4);
  TrainingSample s{observed_scene(truth), {}, {}};

  SUBCASE("zero epochs returns the seeded initialization") {
    TrainOptions o;
    o.epochs = 0;
    o.seed = 3;
    const auto r = train_predictor({s}, o);
    CHECK(r.epoch_losses.empty());
    CHECK(r.model.flat_parameters() == MlpModel(o.layers, 3).flat_parameters());
  }
  SUBCASE("a single sample is memorised") {
    TrainOptions o;
    o.epochs = 150;
    o.learning_rate = 1e-2;
    o.layers = {160, 16, 4};
    const auto r = train_predictor({s}, o);
    REQUIRE(r.epoch_losses.size() == 150u);
    for (double l : r.epoch_losses) CHECK(std::isfinite(l));
    MESSAGE("first " << r.epoch_losses.front() << " last " << r.epoch_losses.back());
    CHECK(r.epoch_losses.back() < 1e-4);
    CHECK(r.epoch_losses.back() < r.epoch_losses.front());
    CHECK(epoch_loss_csv(r.epoch_losses).rfind("epoch,loss\n0,", 0) == 0);
  }
  SUBCASE("ground-truth attributes are never read and runs repeat bitwise") {
    std::vector<TrainingSample> data{s, {observed_scene(PhysicalAttributes::Shared(4, 200, 3, 0.8)), {}, {}}};
    TrainOptions o;
    o.epochs = 3;
    o.batch_size = 1;
    o.layers = {160, 8, 4};
    const auto a = train_predictor(data, o);
    for (auto& d : data) d.bundle.attributes = PhysicalAttributes::Shared(-1, -1, -1, -1);
    o.jobs = 2;
    const auto b = train_predictor(data, o);
    CHECK(a.model.flat_parameters() == b.model.flat_parameters());
    CHECK(a.epoch_losses == b.epoch_losses);
  }
}

TEST_CASE("predict") {
  SceneOptions o;
  o.n_anchors = 512;
  o.n_gaussians = 1024;
  o.render_views = false;
  const auto b = synthesize_scene("latency", Shape::Ellipsoid, PhysicalAttributes::Shared(1, 500, 1, 0.5), o).bundle;
  const MlpModel m({160, 128, 64, 4}, 1);
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = predict(m, *b.trajectory, b.config.frame_rate);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("predict with 512 anchors: " << ms << " ms");
  CHECK(ms < 1000.0);
  CHECK(ParameterRanges{}.contains(p));
  CHECK(predict(m, *b.trajectory, 30.0).as_vector() == p.as_vector());
  CHECK_THROWS_AS(predict(m, Trajectory(b.trajectory->begin(), b.trajectory->begin() + 10), 30.0), DataError);
}
