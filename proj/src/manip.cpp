#include "elastica/manip.hpp"

#include "elastica/binding.hpp"
#include "elastica/simulator.hpp"

#include <cmath>

namespace elastica {

using json = nlohmann::json;

namespace {

json rows_json(const Points& p) {
  json out = json::array();
  for (Eigen::Index i = 0; i < p.cols(); ++i) out.push_back({p(0, i), p(1, i), p(2, i)});
  return out;
}

// Accepted spellings for each of the four shared parameters.
const std::vector<std::pair<int, std::vector<std::string>>>& parameter_keys() {
  static const std::vector<std::pair<int, std::vector<std::string>>> keys{
      {0, {"m", "mass"}}, {1, {"k", "stiffness"}}, {2, {"d", "damping"}}, {3, {"f", "friction"}}};
  return keys;
}

PhysicalAttributes shared_of(const PhysicalAttributes& a) {
  if (a.shared) return a;
  return PhysicalAttributes::Shared(a.mass.mean(), a.stiffness.mean(), a.damping.mean(), a.friction);
}

}  // namespace

Coupling parse_coupling(std::string_view name) {
  if (name == "pin") return Coupling::Pin;
  if (name == "spring") return Coupling::Spring;
  throw Error(ErrorCode::Usage, "unknown coupling '" + std::string(name) + "' (expected pin or spring)");
}

json error_event(std::string_view code, std::string_view message) {
  return json{{"type", "error"}, {"code", code}, {"message", message}};
}

Session::Session(SceneBundle bundle, SessionOptions options)
    : bundle_(std::move(bundle)), opt_(std::move(options)) {
  if (!(opt_.hz > 0.0)) throw Error(ErrorCode::Usage, "tick rate must be positive");
  const auto problems = validate_bundle(bundle_);
  if (!problems.empty()) throw DataError("invalid bundle: " + problems.front(), bundle_.object_id);
  bundle_.trajectory.reset();
  attrs_ = shared_of(bundle_.attributes);
  state_ = bundle_.anchors;
  const Eigen::Index n = bundle_.gaussians.size();
  const Eigen::Index stride = std::max<Eigen::Index>(1, (n + opt_.max_gaussians - 1) / std::max(1, opt_.max_gaussians));
  for (Eigen::Index i = 0; i < n; i += stride) gaussian_subset_.push_back(i);
}

int Session::anchor_index(const json& message) const {
  if (!message.contains("anchor") || !message["anchor"].is_number_integer())
    throw DataError("message needs an integer 'anchor'");
  const long a = message["anchor"].get<long>();
  if (a < 0 || a >= state_.size())
    throw Error(ErrorCode::Usage, "anchor " + std::to_string(a) + " out of range [0, " + std::to_string(state_.size()) + ")");
  return static_cast<int>(a);
}

MessageResult Session::handle_message(std::string_view text) {
  json message;
  try {
    message = json::parse(text);
  } catch (const json::parse_error& e) {
    return MessageResult{{error_event("malformed", std::string("malformed JSON: ") + e.what())}, std::nullopt};
  }
  return handle_parsed(message);
}

MessageResult Session::handle_parsed(const json& message) {
  MessageResult result;
  try {
    if (!message.is_object() || !message.contains("type") || !message["type"].is_string())
      throw DataError("message must be an object with a string 'type'");
    json reply = apply(message, result);
    if (!reply.is_null()) result.replies.push_back(std::move(reply));
  } catch (const Error& e) {
    const char* code = e.code() == ErrorCode::Usage ? "invalid" : "malformed";
    if (std::string_view(e.what()).find("out of range") != std::string_view::npos) code = "invalid_anchor";
    result.replies.push_back(error_event(code, e.what()));
  } catch (const json::exception& e) {
    result.replies.push_back(error_event("malformed", e.what()));
  }
  return result;
}

json Session::apply(const json& msg, MessageResult& result) {
  const std::string type = msg["type"];
  if (type == "grab") {
    const int a = anchor_index(msg);
    controllers_[a] = state_.positions.col(a);
    previous_targets_[a] = controllers_[a];
  } else if (type == "release") {
    const int a = anchor_index(msg);
    controllers_.erase(a);
    previous_targets_.erase(a);
  } else if (type == "drag") {
    const int a = anchor_index(msg);
    if (!controllers_.count(a)) throw Error(ErrorCode::Usage, "anchor " + std::to_string(a) + " is not grabbed");
    const auto& pos = msg.at("pos");
    if (!pos.is_array() || pos.size() != 3) throw DataError("'pos' must be [x, y, z]");
    Vec3 target(pos[0].get<double>(), pos[1].get<double>(), pos[2].get<double>());
    if (!target.allFinite()) throw DataError("'pos' must be finite");
    target.y() = std::max(target.y(), bundle_.config.ground_height);
    controllers_[a] = target;
  } else if (type == "pause") {
    paused_ = true;
  } else if (type == "resume") {
    paused_ = false;
  } else if (type == "reset") {
    state_ = bundle_.anchors;
    state_.time_index = 0;
    controllers_.clear();
    previous_targets_.clear();
  } else if (type == "set_params") {
    Eigen::Vector4d p = attrs_.as_vector();
    bool any = false;
    for (const auto& [i, names] : parameter_keys())
      for (const auto& name : names)
        if (msg.contains(name)) {
          if (!msg[name].is_number()) throw DataError("'" + name + "' must be a number");
          p[i] = msg[name].get<double>();
          any = true;
        }
    if (!any) throw DataError("set_params names none of m, k, d, f");
    const std::string violation = opt_.ranges.violation(p);
    if (!violation.empty()) return error_event("range", violation);
    attrs_ = PhysicalAttributes::FromVector(p);
    return params_message();
  } else if (type == "subscribe") {
    const std::string detail = msg.value("detail", "anchors");
    if (detail != "anchors" && detail != "gaussians") throw DataError("unknown detail '" + detail + "'");
    result.gaussians = detail == "gaussians";
  } else if (type == "get_params") {
    return params_message();
  } else {
    throw DataError("unknown message type '" + type + "'");
  }
  return nullptr;
}

std::optional<json> Session::tick() {
  if (paused_) return std::nullopt;
  const SimConfig& c = bundle_.config;
  const int n = c.substeps_per_frame;
  SpringMassState s = state_;
  try {
    for (int sub = 1; sub <= n; ++sub) {
      const double alpha = static_cast<double>(sub) / n;
      if (opt_.coupling == Coupling::Spring)
        for (const auto& [a, target] : controllers_) {
          const Vec3 goal = previous_targets_[a] + alpha * (target - previous_targets_[a]);
          const double m = attrs_.mass_at(a);
          const double c_h = 2.0 * std::sqrt(opt_.handle_stiffness * m);
          s.velocities.col(a) += c.dt / m * (opt_.handle_stiffness * (goal - s.positions.col(a)) - c_h * s.velocities.col(a));
        }
      s = step(s, bundle_.topology, attrs_, c);
      if (opt_.coupling == Coupling::Pin)
        for (const auto& [a, target] : controllers_) {
          const Vec3& from = previous_targets_[a];
          const Vec3 goal = from + alpha * (target - from);
          const Vec3 before = from + (static_cast<double>(sub - 1) / n) * (target - from);
          s.positions.col(a) = goal;
          s.velocities.col(a) = (goal - before) / c.dt;
        }
    }
    if (!s.positions.allFinite() || !s.velocities.allFinite()) throw DivergenceError(s.time_index, frame_ + 1);
  } catch (const DivergenceError& e) {
    paused_ = true;
    return error_event("divergence", std::string(e.what()) + "; session paused");
  }
  state_ = std::move(s);
  for (const auto& [a, target] : controllers_) previous_targets_[a] = target;
  ++frame_;
  return std::nullopt;
}

json Session::state_message(bool gaussians) const {
  json out{{"type", "state"}, {"frame", frame_}, {"paused", paused_}, {"anchors", rows_json(state_.positions)}};
  if (gaussians) {
    const Points centers = interpolate_centers(bundle_.binding, state_.positions);
    json c = json::array(), col = json::array();
    for (const Eigen::Index i : gaussian_subset_) {
      c.push_back({centers(0, i), centers(1, i), centers(2, i)});
      const auto& rgb = bundle_.gaussians.colors;
      col.push_back({rgb(0, i), rgb(1, i), rgb(2, i)});
    }
    out["gaussians"] = json{{"centers", std::move(c)}, {"colors", std::move(col)}};
  }
  return out;
}

json Session::params_message() const {
  const auto p = attrs_.as_vector();
  return json{{"type", "params"},
              {"values", {{"mass", p[0]}, {"stiffness", p[1]}, {"damping", p[2]}, {"friction", p[3]}}},
              {"ranges", to_json(opt_.ranges)}};
}

}  // namespace elastica
