#include "elastica/autodiff.hpp"

#include "elastica/binding.hpp"

#include <cmath>
#include <numeric>

namespace elastica {

FrameLoss trajectory_loss(Trajectory targets) {
  return [targets = std::move(targets)](int frame, const Points& x, Points* grad) {
    if (frame < 0 || static_cast<std::size_t>(frame) >= targets.size())
      throw DataError("trajectory loss: no target for frame " + std::to_string(frame));
    const Points& target = targets[static_cast<std::size_t>(frame)];
    if (target.cols() != x.cols()) throw DataError("trajectory loss: target point count differs from state");
    const double inv_n = 1.0 / static_cast<double>(x.cols());
    const Points diff = x - target;
    if (grad) *grad = 2.0 * inv_n * diff;
    return diff.squaredNorm() * inv_n;
  };
}

FrameLoss photometric_frame_loss(GaussianSet gaussians, BindingTable binding, Camera camera,
                                 std::vector<Image> observed) {
  return [g = std::move(gaussians), b = std::move(binding), cam = std::move(camera),
          obs = std::move(observed)](int frame, const Points& x, Points* grad) mutable {
    if (frame < 0 || static_cast<std::size_t>(frame) >= obs.size())
      throw DataError("photometric loss: no observed image for frame " + std::to_string(frame));
    const Image& target = obs[static_cast<std::size_t>(frame)];
    g.centers = interpolate_centers(b, x);
    const Image rendered = render(g, cam);
    if (grad) {
      const Points d_centers = render_gradient(g, cam, photometric_loss_gradient(rendered, target));
      *grad = interpolate_centers_adjoint(b, d_centers, x.cols());
    }
    return photometric_loss(rendered, target);
  };
}

double GradientReport::total_loss() const {
  return std::accumulate(frame_losses.begin(), frame_losses.end(), 0.0);
}

nlohmann::json to_json(const GradientReport& r) {
  nlohmann::json j{{"d_mass", r.d_mass},
                   {"d_stiffness", r.d_stiffness},
                   {"d_damping", r.d_damping},
                   {"d_friction", r.d_friction},
                   {"frame_losses", r.frame_losses},
                   {"total_loss", r.total_loss()}};
  j["nonfinite_frame"] = r.nonfinite_frame ? nlohmann::json(*r.nonfinite_frame) : nlohmann::json(nullptr);
  return j;
}

void step_adjoint(const StepRecord& rec, const SpringTopology& topology, const PhysicalAttributes& attrs,
                  const SimConfig& config, Points& grad_x, Points& grad_v, Eigen::Vector4d& grad_params) {
  const Eigen::Index n = rec.positions.cols();
  const double dt = config.dt;
  const double m = attrs.m(), k = attrs.k(), d = attrs.d(), f = attrs.friction;

  // Contact: (x_hat, v_hat) -> (x', v').
  Points gx_hat(3, n), gv_hat(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto branch = rec.contact[static_cast<std::size_t>(i)];
    if (branch == ContactBranch::Free) {
      gx_hat.col(i) = grad_x.col(i);
      gv_hat.col(i) = grad_v.col(i);
      continue;
    }
    gx_hat.col(i) << grad_x(0, i), 0.0, grad_x(2, i);
    gv_hat.col(i).setZero();
    if (branch == ContactBranch::Slip) {
      const Vec3 vh = rec.v_hat.col(i);
      const Eigen::Vector2d vt(vh.x(), vh.z());
      const double speed = vt.norm();
      const Eigen::Vector2d u = vt / speed;
      const double sn = std::max(0.0, -vh.y());
      const Eigen::Vector2d a(grad_v(0, i), grad_v(2, i));
      const double au = a.dot(u);
      const Eigen::Vector2d gvt = a - f * sn / speed * (a - au * u);
      gv_hat(0, i) = gvt.x();
      gv_hat(2, i) = gvt.y();
      grad_params[3] += -sn * au;
      if (-vh.y() > 0.0) gv_hat(1, i) = f * au;  // d sn / d v_hat.y = -1, d v't / d sn = -f u
    }
  }

  // Semi-implicit Euler: v_hat = v + F/m dt, x_hat = x + v_hat dt.
  const Points gv_total = gv_hat + gx_hat * dt;
  grad_x = gx_hat;
  grad_v = gv_total;
  const Points grad_f = gv_total * (dt / m);
  grad_params[0] += -(gv_total.cwiseProduct(rec.forces)).sum() * dt / (m * m);
  grad_params[0] += (config.gravity.transpose() * grad_f).sum();

  // Springs and dampers.
  for (Eigen::Index e = 0; e < topology.size(); ++e) {
    const Edge& edge = topology.edges[static_cast<std::size_t>(e)];
    const Vec3 r = rec.positions.col(edge.i) - rec.positions.col(edge.j);
    const double len = r.norm();
    if (len < config.length_eps) continue;
    const Vec3 w = grad_f.col(edge.i) - grad_f.col(edge.j);
    const Vec3 nrm = r / len;
    const Vec3 dv = rec.velocities.col(edge.i) - rec.velocities.col(edge.j);
    const double ext = len - topology.rest_lengths[e];
    const double s = signed_power(ext, config.p_k);
    const double s_prime = signed_power_derivative(ext, config.p_k);
    const double wn = w.dot(nrm);
    const double dvn = dv.dot(nrm);

    grad_params[1] += -s * wn;
    grad_params[2] += -dvn * wn;

    const Vec3 w_perp = (w - nrm * wn) / len;
    const Vec3 dv_perp = (dv - nrm * dvn) / len;
    const Vec3 gr = -k * (s_prime * wn * nrm + s * w_perp) - d * (wn * dv_perp + dvn * w_perp);
    grad_x.col(edge.i) += gr;
    grad_x.col(edge.j) -= gr;
    const Vec3 gdv = -d * wn * nrm;
    grad_v.col(edge.i) += gdv;
    grad_v.col(edge.j) -= gdv;
  }
}

void Tape::backward(const SpringTopology& topology, const PhysicalAttributes& attrs, const SimConfig& config,
                    Points& grad_x, Points& grad_v, Eigen::Vector4d& grad_params) const {
  for (auto it = records_.rbegin(); it != records_.rend(); ++it)
    step_adjoint(*it, topology, attrs, config, grad_x, grad_v, grad_params);
}

bool Tape::replay_matches(const SpringTopology& topology, const PhysicalAttributes& attrs, const SimConfig& config,
                          const SpringMassState& final_state) const {
  if (records_.empty()) return true;
  SpringMassState s{records_.front().positions, records_.front().velocities, 0};
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const bool same = (s.positions.array() == records_[i].positions.array()).all() &&
                      (s.velocities.array() == records_[i].velocities.array()).all();
    if (!same) return false;
    s = step(s, topology, attrs, config);
  }
  return (s.positions.array() == final_state.positions.array()).all() &&
         (s.velocities.array() == final_state.velocities.array()).all();
}

namespace {

void require_shared(const PhysicalAttributes& attrs) {
  if (!attrs.shared) throw Error(ErrorCode::Usage, "gradients are only available for shared-mode attributes");
}

}  // namespace

RolloutGradients rollout_with_gradients(const SceneBundle& bundle, const PhysicalAttributes& attrs,
                                        const FrameLoss& loss, int frames, bool detach_states) {
  require_shared(attrs);
  if (frames < 1) throw Error(ErrorCode::Usage, "rollout needs at least one frame");
  const auto& topo = bundle.topology;
  const auto& cfg = bundle.config;
  const Eigen::Index n = bundle.anchors.size();

  RolloutGradients out;
  out.states.reserve(static_cast<std::size_t>(frames));
  Eigen::Vector4d grad = Eigen::Vector4d::Zero();
  std::vector<Tape> tapes(detach_states ? 1 : static_cast<std::size_t>(frames));
  std::vector<Points> loss_grads(detach_states ? 0 : static_cast<std::size_t>(frames));

  SpringMassState s = bundle.anchors;
  for (int frame = 0; frame < frames; ++frame) {
    Tape& tape = tapes[detach_states ? 0 : static_cast<std::size_t>(frame)];
    tape.clear();
    try {
      for (int k = 0; k < cfg.substeps_per_frame; ++k) {
        StepRecord rec;
        s = step(s, topo, attrs, cfg, &rec);
        tape.push(std::move(rec));
      }
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.step(), frame);
    }
    Points gx;
    const double value = loss(frame, s.positions, &gx);
    out.report.frame_losses.push_back(value);
    out.states.push_back(s);

    if (detach_states) {
      Points gv = Points::Zero(3, n);
      tape.backward(topo, attrs, cfg, gx, gv, grad);
      if (!grad.allFinite() && !out.report.nonfinite_frame) out.report.nonfinite_frame = frame;
    } else {
      loss_grads[static_cast<std::size_t>(frame)] = std::move(gx);
    }
  }

  if (!detach_states) {
    Points gx = Points::Zero(3, n), gv = Points::Zero(3, n);
    for (int frame = frames - 1; frame >= 0; --frame) {
      gx += loss_grads[static_cast<std::size_t>(frame)];
      tapes[static_cast<std::size_t>(frame)].backward(topo, attrs, cfg, gx, gv, grad);
      if (!grad.allFinite() && !out.report.nonfinite_frame) out.report.nonfinite_frame = frame;
    }
  }

  out.report.d_mass = grad[0];
  out.report.d_stiffness = grad[1];
  out.report.d_damping = grad[2];
  out.report.d_friction = grad[3];
  out.total_loss = out.report.total_loss();
  return out;
}

double rollout_loss(const SceneBundle& bundle, const PhysicalAttributes& attrs, const FrameLoss& loss, int frames) {
  const auto states = rollout(bundle.anchors, bundle.topology, attrs, bundle.config, frames);
  double total = 0.0;
  for (int t = 0; t < frames; ++t) total += loss(t, states[static_cast<std::size_t>(t)].positions, nullptr);
  return total;
}

namespace {

std::pair<PhysicalAttributes, PhysicalAttributes> perturbed(const PhysicalAttributes& attrs, int which, double h,
                                                            double& step) {
  Eigen::Vector4d p = attrs.as_vector();
  const double ref = p[which] != 0.0 ? std::abs(p[which]) : 1.0;
  step = h * ref;
  Eigen::Vector4d plus = p, minus = p;
  plus[which] += step;
  minus[which] -= step;
  return {PhysicalAttributes::FromVector(plus), PhysicalAttributes::FromVector(minus)};
}

GradientReport pack(const Eigen::Vector4d& g, std::vector<double> frame_losses) {
  GradientReport r;
  r.d_mass = g[0];
  r.d_stiffness = g[1];
  r.d_damping = g[2];
  r.d_friction = g[3];
  r.frame_losses = std::move(frame_losses);
  return r;
}

}  // namespace

GradientReport finite_difference_gradients(const SceneBundle& bundle, const PhysicalAttributes& attrs,
                                           const FrameLoss& loss, int frames, double h) {
  require_shared(attrs);
  if (!(h > 0.0)) throw Error(ErrorCode::Usage, "finite-difference step must be positive");
  Eigen::Vector4d g;
  for (int which = 0; which < 4; ++which) {
    double step = 0.0;
    const auto [plus, minus] = perturbed(attrs, which, h, step);
    g[which] = (rollout_loss(bundle, plus, loss, frames) - rollout_loss(bundle, minus, loss, frames)) / (2.0 * step);
  }
  const auto states = rollout(bundle.anchors, bundle.topology, attrs, bundle.config, frames);
  std::vector<double> losses;
  for (int t = 0; t < frames; ++t) losses.push_back(loss(t, states[static_cast<std::size_t>(t)].positions, nullptr));
  return pack(g, std::move(losses));
}

GradientReport finite_difference_gradients_detached(const SceneBundle& bundle, const PhysicalAttributes& attrs,
                                                    const FrameLoss& loss, int frames, double h) {
  require_shared(attrs);
  if (!(h > 0.0)) throw Error(ErrorCode::Usage, "finite-difference step must be positive");
  const auto& cfg = bundle.config;
  const auto states = rollout(bundle.anchors, bundle.topology, attrs, cfg, frames);
  auto frame_end = [&](const SpringMassState& entry, const PhysicalAttributes& a) {
    SpringMassState s = entry;
    for (int k = 0; k < cfg.substeps_per_frame; ++k) s = step(s, bundle.topology, a, cfg);
    return s.positions;
  };

  Eigen::Vector4d g = Eigen::Vector4d::Zero();
  std::vector<double> losses;
  for (int t = 0; t < frames; ++t) {
    const SpringMassState& entry = t == 0 ? bundle.anchors : states[static_cast<std::size_t>(t - 1)];
    losses.push_back(loss(t, states[static_cast<std::size_t>(t)].positions, nullptr));
    for (int which = 0; which < 4; ++which) {
      double step_size = 0.0;
      const auto [plus, minus] = perturbed(attrs, which, h, step_size);
      g[which] += (loss(t, frame_end(entry, plus), nullptr) - loss(t, frame_end(entry, minus), nullptr)) /
                  (2.0 * step_size);
    }
  }
  return pack(g, std::move(losses));
}

}  // namespace elastica
