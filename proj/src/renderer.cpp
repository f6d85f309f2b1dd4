#include "elastica/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace elastica {
namespace {

constexpr double kCutoff = 9.0;  // (3 sigma)^2 in normalised units
const double kTail = std::exp(-0.5 * kCutoff);

struct Splat {
  double u = 0, v = 0;  // pixel coordinates of the center
  double sigma = 1;     // pixels
  double depth = 0;
};

std::vector<Splat> project_all(const GaussianSet& g, const Camera& cam) {
  std::vector<Splat> out(static_cast<std::size_t>(g.size()));
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const Eigen::Vector2d uv = cam.project(g.centers.col(i));
    out[static_cast<std::size_t>(i)] = {uv.x(), uv.y(), g.scales[i] / cam.scale, cam.depth(g.centers.col(i))};
  }
  return out;
}

/// Front (largest depth toward the camera) first; ties by index.
std::vector<Eigen::Index> depth_order(const std::vector<Splat>& splats) {
  std::vector<Eigen::Index> order(splats.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return splats[static_cast<std::size_t>(a)].depth > splats[static_cast<std::size_t>(b)].depth;
  });
  return order;
}

/// Calls fn(row, col, q, dx, dy) for every pixel inside the truncated footprint.
template <typename Fn>
void for_each_covered(const Splat& s, int width, int height, Fn&& fn) {
  const double radius = 3.0 * s.sigma;
  const int c0 = std::max(0, static_cast<int>(std::floor(s.u - radius - 0.5)));
  const int c1 = std::min(width - 1, static_cast<int>(std::ceil(s.u + radius - 0.5)));
  const int r0 = std::max(0, static_cast<int>(std::floor(s.v - radius - 0.5)));
  const int r1 = std::min(height - 1, static_cast<int>(std::ceil(s.v + radius - 0.5)));
  const double inv_var = 1.0 / (s.sigma * s.sigma);
  for (int r = r0; r <= r1; ++r) {
    const double dy = (r + 0.5) - s.v;
    for (int c = c0; c <= c1; ++c) {
      const double dx = (c + 0.5) - s.u;
      const double q = (dx * dx + dy * dy) * inv_var;
      if (q < kCutoff) fn(r, c, q, dx, dy);
    }
  }
}

}  // namespace

double footprint(double opacity, double q) {
  if (q >= kCutoff) return 0.0;
  return opacity * (std::exp(-0.5 * q) - kTail) / (1.0 - kTail);
}

Camera Camera::from_view(std::string_view view, int width, int height, double scale, const Vec3& target) {
  Vec3 back, up = Vec3::UnitY();
  if (view == "+x") back = Vec3::UnitX();
  else if (view == "-x") back = -Vec3::UnitX();
  else if (view == "+z") back = Vec3::UnitZ();
  else if (view == "-z") back = -Vec3::UnitZ();
  else if (view == "+y") back = Vec3::UnitY(), up = -Vec3::UnitZ();
  else if (view == "-y") back = -Vec3::UnitY(), up = Vec3::UnitZ();
  else if (view == "az45") back = Vec3(1.0, 0.0, 1.0).normalized();
  else throw Error(ErrorCode::Usage, "unknown view '" + std::string(view) + "'", "view");
  Camera cam;
  cam.basis.col(0) = up.cross(back);
  cam.basis.col(1) = up;
  cam.basis.col(2) = back;
  cam.width = width;
  cam.height = height;
  cam.scale = scale;
  cam.target = target;
  if (width < 1 || height < 1 || !(scale > 0.0)) throw Error(ErrorCode::Usage, "camera needs positive size and scale");
  return cam;
}

Camera Camera::from_quaternion(const Eigen::Quaterniond& q, int width, int height, double scale, const Vec3& target) {
  Camera cam;
  cam.basis = q.normalized().toRotationMatrix();
  cam.width = width;
  cam.height = height;
  cam.scale = scale;
  cam.target = target;
  if (width < 1 || height < 1 || !(scale > 0.0)) throw Error(ErrorCode::Usage, "camera needs positive size and scale");
  return cam;
}

Eigen::Vector2d Camera::project(const Vec3& p) const {
  const Vec3 rel = p - target;
  return {rel.dot(right()) / scale + 0.5 * width, -rel.dot(up()) / scale + 0.5 * height};
}

const std::vector<std::string>& dataset_views() {
  static const std::vector<std::string> views{"+x", "+z", "+y", "az45"};
  return views;
}

Image render(const GaussianSet& g, const Camera& cam) {
  const auto splats = project_all(g, cam);
  const auto order = depth_order(splats);
  Image out(cam.width, cam.height);
  Eigen::ArrayXXd trans = Eigen::ArrayXXd::Ones(cam.height, cam.width);
  for (Eigen::Index i : order) {
    const Splat& s = splats[static_cast<std::size_t>(i)];
    const double alpha = g.opacities[i];
    const Vec3 color = g.colors.col(i);
    for_each_covered(s, cam.width, cam.height, [&](int r, int c, double q, double, double) {
      const double a = footprint(alpha, q);
      const double t = trans(r, c);
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) += t * a * color[ch];
      trans(r, c) = t * (1.0 - a);
    });
  }
  for (int ch = 0; ch < 3; ++ch)
    out.channels[static_cast<std::size_t>(ch)] += trans * cam.background[ch];
  return out;
}

double photometric_loss(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw DataError("photometric loss: image dimensions differ", "image");
  double sum = 0.0;
  for (std::size_t c = 0; c < 3; ++c) sum += (a.channels[c] - b.channels[c]).square().sum();
  return sum / (static_cast<double>(a.width) * a.height);
}

Image photometric_loss_gradient(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw DataError("photometric loss: image dimensions differ", "image");
  Image g(a.width, a.height);
  const double norm = 2.0 / (static_cast<double>(a.width) * a.height);
  for (std::size_t c = 0; c < 3; ++c) g.channels[c] = norm * (a.channels[c] - b.channels[c]);
  return g;
}

Points render_gradient(const GaussianSet& g, const Camera& cam, const Image& upstream) {
  const auto splats = project_all(g, cam);
  const auto order = depth_order(splats);

  struct Fragment {
    Eigen::Index gaussian;
    double a;
    double dx, dy, q;
  };
  std::vector<std::vector<Fragment>> frags(static_cast<std::size_t>(cam.width) * cam.height);
  for (Eigen::Index i : order) {
    const double alpha = g.opacities[i];
    for_each_covered(splats[static_cast<std::size_t>(i)], cam.width, cam.height,
                     [&](int r, int c, double q, double dx, double dy) {
                       frags[static_cast<std::size_t>(r) * cam.width + c].push_back(
                           {i, footprint(alpha, q), dx, dy, q});
                     });
  }

  // d loss / d (u, v) per Gaussian.
  Eigen::Matrix2Xd grad_uv = Eigen::Matrix2Xd::Zero(2, g.size());
  std::vector<double> trans;
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      const auto& list = frags[static_cast<std::size_t>(r) * cam.width + c];
      if (list.empty()) continue;
      const Vec3 up_px = upstream.pixel(r, c);
      trans.resize(list.size());
      double t = 1.0;
      for (std::size_t k = 0; k < list.size(); ++k) {
        trans[k] = t;
        t *= 1.0 - list[k].a;
      }
      Vec3 behind = cam.background;  // color composited behind fragment k
      for (std::size_t k = list.size(); k-- > 0;) {
        const Fragment& f = list[k];
        const Vec3 color = g.colors.col(f.gaussian);
        const double d_a = trans[k] * up_px.dot(color - behind);
        // a = alpha (exp(-q/2) - tail) / (1 - tail); dq/du = -2 dx / sigma^2.
        const double sigma = splats[static_cast<std::size_t>(f.gaussian)].sigma;
        const double da_dq = -0.5 * g.opacities[f.gaussian] * std::exp(-0.5 * f.q) / (1.0 - kTail);
        const double scale = d_a * da_dq * (-2.0) / (sigma * sigma);
        grad_uv(0, f.gaussian) += scale * f.dx;
        grad_uv(1, f.gaussian) += scale * f.dy;
        behind = f.a * color + (1.0 - f.a) * behind;
      }
    }

  // u = rel.right / s + W/2, v = -rel.up / s + H/2
  Points out(3, g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i)
    out.col(i) = (grad_uv(0, i) * cam.right() - grad_uv(1, i) * cam.up()) / cam.scale;
  return out;
}

}  // namespace elastica
