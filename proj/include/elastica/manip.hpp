#pragma once

#include "elastica/core.hpp"
#include "elastica/identify.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace elastica {

/// How a grabbed anchor follows its target. Pin sets position and velocity
/// directly; Spring pulls the anchor with a stiff virtual spring.
enum class Coupling { Pin, Spring };

Coupling parse_coupling(std::string_view name);

struct SessionOptions {
  double hz = 30.0;
  Coupling coupling = Coupling::Pin;
  double handle_stiffness = 2000.0;
  /// Upper bound on Gaussian centers included in detailed state messages.
  int max_gaussians = 2048;
  ParameterRanges ranges;
};

/// Outcome of one client message: events for the sender, plus a detail
/// change when the message was a subscription.
struct MessageResult {
  std::vector<nlohmann::json> replies;
  std::optional<bool> gaussians;
};

/// Interactive simulation state. Not thread-safe: one owner applies
/// messages between ticks.
class Session {
 public:
  explicit Session(SceneBundle bundle, SessionOptions options = {});

  MessageResult handle_message(std::string_view text);
  MessageResult handle_parsed(const nlohmann::json& message);

  /// Advances one frame unless paused. Returns an error event if the step
  /// diverged; the session then keeps its last finite state and pauses.
  std::optional<nlohmann::json> tick();

  nlohmann::json state_message(bool gaussians) const;
  nlohmann::json params_message() const;

  long frame() const { return frame_; }
  bool paused() const { return paused_; }
  const SpringMassState& state() const { return state_; }
  const std::map<int, Vec3>& controllers() const { return controllers_; }
  const PhysicalAttributes& attributes() const { return attrs_; }
  const SceneBundle& bundle() const { return bundle_; }
  const SessionOptions& options() const { return opt_; }

 private:
  nlohmann::json apply(const nlohmann::json& message, MessageResult& result);
  int anchor_index(const nlohmann::json& message) const;

  SceneBundle bundle_;
  SessionOptions opt_;
  PhysicalAttributes attrs_;
  SpringMassState state_;
  std::map<int, Vec3> controllers_;
  std::map<int, Vec3> previous_targets_;
  bool paused_ = false;
  long frame_ = 0;
  std::vector<Eigen::Index> gaussian_subset_;
};

nlohmann::json error_event(std::string_view code, std::string_view message);

struct ServeOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8080;
  SessionOptions session;
  /// Static files served under / when set.
  std::filesystem::path ui_dir;
  /// Tick wall times are reported here when set.
  std::function<void(double)> on_tick;
};

/// WebSocket + HTTP front end for one Session. GET /scene returns the bundle
/// without its trajectory, GET /healthz returns 200, and any other path with
/// a WebSocket upgrade joins the session. The simulation loop runs on its own
/// thread; clients reach it only through an ordered command queue and
/// receive immutable serialized snapshots.
class ManipServer {
 public:
  ManipServer(SceneBundle bundle, ServeOptions options);
  ~ManipServer();
  ManipServer(const ManipServer&) = delete;
  ManipServer& operator=(const ManipServer&) = delete;

  /// Bound port (useful when options.port is 0).
  unsigned short port() const;
  /// Blocks until stop() is called.
  void run();
  void stop();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace elastica
