#include "elastica/identify.hpp"

#include "elastica/io.hpp"
#include "elastica/parallel.hpp"
#include "elastica/rng.hpp"
#include "elastica/simulator.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace elastica {

using json = nlohmann::json;

const std::array<const char*, 4>& ParameterRanges::names() {
  static const std::array<const char*, 4> n{"mass", "stiffness", "damping", "friction"};
  return n;
}

std::string ParameterRanges::violation(const Eigen::Vector4d& p) const {
  for (int i = 0; i < 4; ++i)
    if (!(p[i] >= min[i] && p[i] <= max[i])) {
      std::ostringstream s;
      s << names()[i] << " " << p[i] << " outside [" << min[i] << ", " << max[i] << "]";
      return s.str();
    }
  return {};
}

bool ParameterRanges::contains(const PhysicalAttributes& attrs) const {
  if (!attrs.shared) return false;
  return violation(attrs.as_vector()).empty();
}

Eigen::Vector4d ParameterRanges::midpoint() const {
  Eigen::Vector4d m;
  for (int i = 0; i < 4; ++i) m[i] = 0.5 * (min[i] + max[i]);
  return m;
}

Eigen::Vector4d ParameterRanges::width() const {
  Eigen::Vector4d w;
  for (int i = 0; i < 4; ++i) w[i] = max[i] - min[i];
  return w;
}

json to_json(const ParameterRanges& r) {
  json j = json::object();
  for (int i = 0; i < 4; ++i) j[ParameterRanges::names()[i]] = {r.min[i], r.max[i]};
  return j;
}

ParameterRanges ranges_from_json(const json& j) {
  ParameterRanges r;
  try {
    for (int i = 0; i < 4; ++i) {
      const auto& pair = j.at(ParameterRanges::names()[i]);
      r.min[i] = pair.at(0).get<double>();
      r.max[i] = pair.at(1).get<double>();
      if (!(r.min[i] < r.max[i]) || r.min[i] < 0)
        throw DataError(std::string("invalid range for ") + ParameterRanges::names()[i]);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("ranges: ") + e.what());
  }
  return r;
}

PhysicalAttributes squash(const Eigen::Vector4d& raw, const ParameterRanges& r) {
  Eigen::Vector4d p;
  for (int i = 0; i < 4; ++i) p[i] = r.min[i] + (r.max[i] - r.min[i]) * sigmoid(raw[i]);
  return PhysicalAttributes::FromVector(p);
}

Eigen::Vector4d squash_derivative(const Eigen::Vector4d& raw, const ParameterRanges& r) {
  Eigen::Vector4d d;
  for (int i = 0; i < 4; ++i) {
    const double s = sigmoid(raw[i]);
    d[i] = (r.max[i] - r.min[i]) * s * (1.0 - s);
  }
  return d;
}

Eigen::Vector4d unsquash(const PhysicalAttributes& attrs, const ParameterRanges& r) {
  const Eigen::Vector4d p = attrs.as_vector();
  Eigen::Vector4d raw;
  for (int i = 0; i < 4; ++i) {
    const double u = (p[i] - r.min[i]) / (r.max[i] - r.min[i]);
    if (!(u > 0.0 && u < 1.0)) throw DataError(std::string(ParameterRanges::names()[i]) + " not strictly inside range");
    raw[i] = std::log(u / (1.0 - u));
  }
  return raw;
}

Adam::Adam(Eigen::Index size, double beta1, double beta2, double eps)
    : m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

Eigen::VectorXd Adam::update(const Eigen::VectorXd& g, double lr) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * g;
  v_ = beta2_ * v_ + (1.0 - beta2_) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  return (-lr * (m_ / c1).array() / ((v_ / c2).array().sqrt() + eps_)).matrix();
}

double cosine_lr(double lr0, int step, int total) {
  if (total <= 1) return lr0;
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * step / total));
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "traj") return LossKind::Trajectory;
  if (name == "photo") return LossKind::Photometric;
  throw Error(ErrorCode::Usage, "unknown loss '" + name + "' (expected traj or photo)");
}

// ---------------------------------------------------------------------------
// Per-scene identification

namespace {

// One loss/gradient evaluation in raw space; counts against the iteration budget.
class RawObjective {
 public:
  RawObjective(const SceneBundle& bundle, const FrameLoss& loss, int frames, const IdentifyOptions& opt,
               IdentifyResult& result)
      : bundle_(bundle), loss_(loss), frames_(frames), opt_(opt), result_(result) {}

  struct Value {
    bool ok = false;
    double loss = 0.0;
    Eigen::Vector4d gradient = Eigen::Vector4d::Zero();  // d loss / d raw
    std::string cause;
  };

  int used() const { return static_cast<int>(result_.history.size()); }
  bool exhausted() const { return used() >= opt_.iterations; }

  Value operator()(const Eigen::Vector4d& raw, double step_size) {
    IdentifyIteration rec;
    rec.iteration = used();
    rec.learning_rate = step_size;
    const PhysicalAttributes attrs = squash(raw, opt_.ranges);
    rec.params = attrs.as_vector();
    Value v;
    try {
      const auto r = rollout_with_gradients(bundle_, attrs, loss_, frames_, false);
      if (r.report.nonfinite_frame || !std::isfinite(r.total_loss))
        v.cause = "non-finite gradient";
      else {
        v.ok = true;
        v.loss = r.total_loss / frames_;
        rec.gradient = r.report.as_vector() / frames_;
        v.gradient = rec.gradient.cwiseProduct(squash_derivative(raw, opt_.ranges));
      }
    } catch (const DivergenceError& e) {
      v.cause = e.what();
    }
    rec.rejected = !v.ok;
    rec.loss = v.ok ? v.loss : std::numeric_limits<double>::quiet_NaN();
    result_.history.push_back(rec);
    if (v.ok && v.loss < result_.best_loss) {
      result_.best_loss = v.loss;
      result_.best_iteration = rec.iteration;
      result_.attributes = attrs;
      best_raw = raw;
    }
    return v;
  }

  Eigen::Vector4d best_raw = Eigen::Vector4d::Zero();

 private:
  const SceneBundle& bundle_;
  const FrameLoss& loss_;
  int frames_;
  const IdentifyOptions& opt_;
  IdentifyResult& result_;
};

[[noreturn]] void fail_divergent(const std::string& cause, const IdentifyResult& result, int rejections) {
  std::ostringstream ctx;
  const auto& last = result.history.back();
  ctx << "iteration " << last.iteration << ", rejections " << rejections << ", params " << last.params.transpose();
  throw Error(ErrorCode::Divergence, "identification diverged: " + cause, ctx.str());
}

}  // namespace

IdentifyResult identify_scene(const SceneBundle& bundle, const FrameLoss& loss, int frames,
                              const IdentifyOptions& opt) {
  if (frames < 1) throw DataError("identification needs at least two observed frames");
  IdentifyResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  result.attributes = PhysicalAttributes::FromVector(opt.ranges.midpoint());
  RawObjective objective(bundle, loss, frames, opt, result);
  Eigen::Vector4d raw = unsquash(result.attributes, opt.ranges);
  objective.best_raw = raw;
  int rejections = 0;

  // Adam phase.
  const int adam_steps = opt.refine ? static_cast<int>(std::lround(opt.iterations * opt.adam_fraction)) : opt.iterations;
  Adam adam(4);
  Eigen::Vector4d previous = raw;
  double lr_scale = 1.0;
  for (int it = 0; it < adam_steps && !objective.exhausted(); ++it) {
    const double lr = lr_scale * cosine_lr(opt.learning_rate, it, adam_steps);
    const auto v = objective(raw, lr);
    if (!v.ok) {
      if (it == 0 || ++rejections > opt.max_rejections) fail_divergent(v.cause, result, rejections);
      raw = previous;
      lr_scale *= 0.5;
      continue;
    }
    if (v.loss == 0.0) return result;
    previous = raw;
    raw += adam.update(v.gradient, lr);
  }
  if (!opt.refine) return result;

  // Quasi-Newton refinement from the best iterate with backtracking line search.
  raw = objective.best_raw;
  auto current = objective(raw, 0.0);
  if (!current.ok) return result;
  Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
  bool scaled = false;
  while (!objective.exhausted() && current.loss > 0.0) {
    Eigen::Vector4d dir = -h * current.gradient;
    if (!scaled) {
      const double norm = dir.cwiseAbs().maxCoeff();
      if (norm > 0.1) dir *= 0.1 / norm;
    }
    double slope = current.gradient.dot(dir);
    if (!(slope < 0.0)) {
      h.setIdentity();
      scaled = false;
      dir = -current.gradient;
      slope = -current.gradient.squaredNorm();
      if (!(slope < 0.0)) break;
    }
    double t = 1.0;
    bool accepted = false;
    RawObjective::Value next;
    while (!objective.exhausted()) {
      next = objective(raw + t * dir, t);
      if (next.ok && next.loss <= current.loss + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
      if (t < 1e-12) break;
    }
    if (!accepted) break;
    const Eigen::Vector4d s = t * dir;
    const Eigen::Vector4d y = next.gradient - current.gradient;
    const double sy = s.dot(y);
    if (sy > 1e-300) {
      if (!scaled) {
        h = Eigen::Matrix4d::Identity() * (sy / y.squaredNorm());
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::Matrix4d i = Eigen::Matrix4d::Identity();
      h = (i - rho * s * y.transpose()) * h * (i - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    raw += s;
    current = next;
    if (s.cwiseAbs().maxCoeff() < 1e-13) break;
  }
  return result;
}

namespace {

int recon_rollout_frames(std::size_t stored, int observed_frames) {
  const int usable = static_cast<int>(std::min<std::size_t>(stored, static_cast<std::size_t>(observed_frames)));
  if (usable < 2) throw DataError("observation needs at least 2 frames");
  return usable - 1;
}

}  // namespace

IdentifyResult identify_scene(const SceneBundle& bundle, const Trajectory& observed, const IdentifyOptions& opt) {
  const int frames = recon_rollout_frames(observed.size(), opt.observed_frames);
  return identify_scene(bundle, trajectory_loss(observation_targets(observed, frames)), frames, opt);
}

IdentifyResult identify_scene(const SceneBundle& bundle, const std::vector<Image>& observed, const Camera& camera,
                              const IdentifyOptions& opt) {
  const int frames = recon_rollout_frames(observed.size(), opt.observed_frames);
  std::vector<Image> targets(observed.begin() + 1, observed.begin() + 1 + frames);
  return identify_scene(bundle, photometric_frame_loss(bundle.gaussians, bundle.binding, camera, std::move(targets)),
                        frames, opt);
}

std::string loss_curve_csv(const IdentifyResult& result) {
  std::ostringstream s;
  s.precision(17);
  s << "iteration,loss,mass,stiffness,damping,friction\n";
  for (const auto& h : result.history) {
    s << h.iteration << ',';
    if (h.rejected)
      s << "nan";
    else
      s << h.loss;
    for (int i = 0; i < 4; ++i) s << ',' << h.params[i];
    s << '\n';
  }
  return s.str();
}

// ---------------------------------------------------------------------------
// Descriptor

Eigen::VectorXd extract_descriptor(const Trajectory& frames, double frame_rate, int expected) {
  if (static_cast<int>(frames.size()) != expected)
    throw DataError("descriptor expects " + std::to_string(expected) + " frames, got " +
                    std::to_string(frames.size()));
  Eigen::VectorXd out(expected * kFeaturesPerFrame);
  for (int t = 0; t < expected; ++t) {
    const Points& x = frames[static_cast<std::size_t>(t)];
    if (x.cols() == 0) throw DataError("descriptor: empty frame");
    if (t > 0 && x.cols() != frames[0].cols()) throw DataError("descriptor: anchor count changes between frames");
    auto f = out.segment(t * kFeaturesPerFrame, kFeaturesPerFrame);
    f.head<3>() = x.rowwise().mean();
    f.segment<3>(3) = x.rowwise().maxCoeff() - x.rowwise().minCoeff();
    if (t == 0) {
      f[6] = f[7] = 0.0;
    } else {
      const Points v = (x - frames[static_cast<std::size_t>(t - 1)]) * frame_rate;
      f[6] = v.colwise().norm().mean();
      f[7] = 0.5 * v.row(1).squaredNorm() / static_cast<double>(v.cols());
    }
  }
  if (!out.allFinite()) throw DataError("descriptor is not finite");
  return out;
}

// ---------------------------------------------------------------------------
// MLP

MlpModel::MlpModel(std::vector<int> layers, std::uint64_t seed, ParameterRanges ranges)
    : layers_(std::move(layers)), ranges_(ranges) {
  if (layers_.size() < 2 || layers_.back() != 4) throw Error(ErrorCode::Usage, "MLP needs >= 2 layers ending in 4");
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    const int in = layers_[l], out = layers_[l + 1];
    if (in < 1 || out < 1) throw Error(ErrorCode::Usage, "MLP layer sizes must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Eigen::MatrixXd w(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) w(r, c) = rng.uniform(-bound, bound);
    weights.push_back(std::move(w));
    biases.push_back(Eigen::VectorXd::Zero(out));
  }
  feature_mean_ = Eigen::VectorXd::Zero(layers_.front());
  feature_std_ = Eigen::VectorXd::Ones(layers_.front());
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

Eigen::VectorXd MlpModel::flat_parameters() const {
  Eigen::VectorXd theta(parameter_count());
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) theta[o++] = weights[l](r, c);
    theta.segment(o, biases[l].size()) = biases[l];
    o += biases[l].size();
  }
  return theta;
}

void MlpModel::set_flat_parameters(const Eigen::VectorXd& theta) {
  if (static_cast<std::size_t>(theta.size()) != parameter_count()) throw DataError("MLP parameter size mismatch");
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = theta[o++];
    biases[l] = theta.segment(o, biases[l].size());
    o += biases[l].size();
  }
}

void MlpModel::set_feature_statistics(Eigen::VectorXd mean, Eigen::VectorXd std) {
  if (mean.size() != input_size() || std.size() != input_size()) throw DataError("feature statistics size mismatch");
  if ((std.array() <= 0.0).any()) throw DataError("feature std must be positive");
  feature_mean_ = std::move(mean);
  feature_std_ = std::move(std);
}

Eigen::VectorXd MlpModel::standardize(const Eigen::VectorXd& x) const {
  if (x.size() != input_size())
    throw DataError("descriptor has " + std::to_string(x.size()) + " features, model expects " +
                    std::to_string(input_size()));
  return ((x - feature_mean_).array() / feature_std_.array()).matrix();
}

Eigen::Vector4d MlpModel::raw_output(const Eigen::VectorXd& descriptor) const {
  Eigen::VectorXd a = standardize(descriptor);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    a = weights[l] * a + biases[l];
    if (l + 1 < weights.size()) a = a.array().tanh().matrix();
  }
  return a;
}

PhysicalAttributes MlpModel::predict(const Eigen::VectorXd& descriptor) const {
  return squash(raw_output(descriptor), ranges_);
}

Eigen::VectorXd MlpModel::backward(const Eigen::VectorXd& descriptor, const Eigen::Vector4d& d_raw) const {
  std::vector<Eigen::VectorXd> acts{standardize(descriptor)};
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Eigen::VectorXd z = weights[l] * acts.back() + biases[l];
    acts.push_back(l + 1 < weights.size() ? Eigen::VectorXd(z.array().tanh()) : z);
  }
  std::vector<Eigen::MatrixXd> dw(weights.size());
  std::vector<Eigen::VectorXd> db(weights.size());
  Eigen::VectorXd delta = d_raw;
  for (std::size_t l = weights.size(); l-- > 0;) {
    if (l + 1 < weights.size()) delta = delta.cwiseProduct((1.0 - acts[l + 1].array().square()).matrix());
    dw[l] = delta * acts[l].transpose();
    db[l] = delta;
    if (l > 0) delta = weights[l].transpose() * delta;
  }
  Eigen::VectorXd g(parameter_count());
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Eigen::Index r = 0; r < dw[l].rows(); ++r)
      for (Eigen::Index c = 0; c < dw[l].cols(); ++c) g[o++] = dw[l](r, c);
    g.segment(o, db[l].size()) = db[l];
    o += db[l].size();
  }
  return g;
}

json to_json(const MlpModel& model) {
  json w = json::array(), b = json::array();
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(model.weights[l].size()));
    for (Eigen::Index r = 0; r < model.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < model.weights[l].cols(); ++c) flat.push_back(model.weights[l](r, c));
    w.push_back(flat);
    b.push_back(std::vector<double>(model.biases[l].data(), model.biases[l].data() + model.biases[l].size()));
  }
  const auto& mean = model.feature_mean();
  const auto& std = model.feature_std();
  return json{{"layers", model.layers()},
              {"activation", "tanh"},
              {"weights", w},
              {"biases", b},
              {"feature_mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
              {"feature_std", std::vector<double>(std.data(), std.data() + std.size())},
              {"ranges", to_json(model.ranges())}};
}

MlpModel model_from_json(const json& j) {
  try {
    MlpModel m(j.at("layers").get<std::vector<int>>(), 0, ranges_from_json(j.at("ranges")));
    const auto& w = j.at("weights");
    const auto& b = j.at("biases");
    if (w.size() != m.weights.size() || b.size() != m.biases.size()) throw DataError("model: layer count mismatch");
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      const auto flat = w[l].get<std::vector<double>>();
      const auto bias = b[l].get<std::vector<double>>();
      if (flat.size() != static_cast<std::size_t>(m.weights[l].size()) ||
          bias.size() != static_cast<std::size_t>(m.biases[l].size()))
        throw DataError("model: layer " + std::to_string(l) + " has the wrong size");
      for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r)
        for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c)
          m.weights[l](r, c) = flat[static_cast<std::size_t>(r * m.weights[l].cols() + c)];
      m.biases[l] = Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    }
    const auto mean = j.at("feature_mean").get<std::vector<double>>();
    const auto std = j.at("feature_std").get<std::vector<double>>();
    m.set_feature_statistics(Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                             Eigen::Map<const Eigen::VectorXd>(std.data(), static_cast<Eigen::Index>(std.size())));
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("model: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const MlpModel& model) {
  write_text_file(path, to_json(model).dump());
}

MlpModel load_model(const std::filesystem::path& path) {
  try {
    return model_from_json(json::parse(read_text_file(path)));
  } catch (const json::parse_error& e) {
    throw DataError(std::string("model: ") + e.what(), path.string());
  }
}

// ---------------------------------------------------------------------------
// Self-supervised training

namespace {

struct SampleOutcome {
  double loss = 0.0;
  Eigen::VectorXd gradient;
  bool divergent = false;
};

FrameLoss sample_loss(const TrainingSample& s, LossKind kind, int frames) {
  if (kind == LossKind::Trajectory) return trajectory_loss(observation_targets(*s.bundle.trajectory, frames));
  if (static_cast<int>(s.views.size()) < frames + 1) throw DataError("sample lacks observed views", s.bundle.object_id);
  return photometric_frame_loss(s.bundle.gaussians, s.bundle.binding, s.camera,
                                std::vector<Image>(s.views.begin() + 1, s.views.begin() + 1 + frames));
}

SampleOutcome evaluate_sample(const MlpModel& model, const TrainingSample& s, const Eigen::VectorXd& descriptor,
                              const TrainOptions& opt, int frames) {
  SampleOutcome out;
  const Eigen::Vector4d raw = model.raw_output(descriptor);
  const PhysicalAttributes p = squash(raw, model.ranges());
  try {
    const auto r = rollout_with_gradients(s.bundle, p, sample_loss(s, opt.loss, frames), frames, true);
    const Eigen::Vector4d g = r.report.as_vector() / frames;
    if (!std::isfinite(r.total_loss) || !g.allFinite()) throw DivergenceError(-1);
    out.loss = r.total_loss / frames;
    out.gradient = model.backward(descriptor, g.cwiseProduct(squash_derivative(raw, model.ranges())));
  } catch (const DivergenceError&) {
    out.loss = opt.divergence_loss;
    out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.parameter_count()));
    out.divergent = true;
  }
  return out;
}

}  // namespace

TrainResult train_predictor(const std::vector<TrainingSample>& dataset, const TrainOptions& opt) {
  if (dataset.empty()) throw DataError("training dataset is empty");
  if (opt.batch_size < 1) throw Error(ErrorCode::Usage, "batch size must be positive");
  const int frames = kDescriptorFrames - 1;

  std::vector<Eigen::VectorXd> descriptors(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& b = dataset[i].bundle;
    if (!b.trajectory || static_cast<int>(b.trajectory->size()) < kDescriptorFrames)
      throw DataError("sample has fewer than " + std::to_string(kDescriptorFrames) + " observed frames", b.object_id);
    const Trajectory window(b.trajectory->begin(), b.trajectory->begin() + kDescriptorFrames);
    descriptors[i] = extract_descriptor(window, b.config.frame_rate);
  }

  const Eigen::Index nf = descriptors.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(nf), var = Eigen::VectorXd::Zero(nf);
  for (const auto& d : descriptors) mean += d;
  mean /= static_cast<double>(descriptors.size());
  for (const auto& d : descriptors) var += (d - mean).cwiseAbs2();
  var /= static_cast<double>(descriptors.size());
  Eigen::VectorXd std = var.cwiseSqrt();
  for (Eigen::Index i = 0; i < nf; ++i)
    if (!(std[i] > 1e-9)) std[i] = 1.0;

  TrainResult result;
  result.model = MlpModel(opt.layers, opt.seed, opt.ranges);
  result.model.set_feature_statistics(mean, std);
  Adam adam(static_cast<Eigen::Index>(result.model.parameter_count()));
  Eigen::VectorXd theta = result.model.flat_parameters();

  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss = 0.0;
    int divergent = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(opt.batch_size), n - start);
      std::vector<SampleOutcome> outcomes(count);
      parallel_for(count, opt.jobs, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        outcomes[b] = evaluate_sample(result.model, dataset[idx], descriptors[idx], opt, frames);
      });
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
      for (std::size_t b = 0; b < count; ++b) {
        grad += outcomes[b].gradient;
        epoch_loss += outcomes[b].loss;
        if (outcomes[b].divergent) {
          ++divergent;
          result.divergent.emplace_back(epoch, static_cast<int>(order[start + b]));
        }
      }
      grad /= static_cast<double>(count);
      theta += adam.update(grad, opt.learning_rate);
      result.model.set_flat_parameters(theta);
    }
    epoch_loss /= static_cast<double>(n);
    result.epoch_losses.push_back(epoch_loss);
    if (opt.on_epoch) opt.on_epoch(epoch, epoch_loss);
    if (2 * divergent > static_cast<int>(n)) {
      std::ostringstream ctx;
      ctx << "epoch " << epoch << ": " << divergent << " of " << n << " rollouts diverged";
      throw Error(ErrorCode::Divergence, "training aborted: more than half the samples diverged", ctx.str());
    }
  }
  return result;
}

std::string epoch_loss_csv(const std::vector<double>& losses) {
  std::ostringstream s;
  s.precision(17);
  s << "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) s << e << ',' << losses[e] << '\n';
  return s.str();
}

PhysicalAttributes predict(const MlpModel& model, const Trajectory& observed, double frame_rate) {
  if (static_cast<int>(observed.size()) < kDescriptorFrames)
    throw DataError("observation has " + std::to_string(observed.size()) + " frames, predictor needs " +
                    std::to_string(kDescriptorFrames));
  const Trajectory window(observed.begin(), observed.begin() + kDescriptorFrames);
  return model.predict(extract_descriptor(window, frame_rate));
}

}  // namespace elastica
