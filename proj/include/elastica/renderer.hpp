#pragma once

#include "elastica/core.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace elastica {

/// height x width x 3 image; channel c is `channels[c](row, col)`.
struct Image {
  int width = 0;
  int height = 0;
  std::array<Eigen::ArrayXXd, 3> channels;

  Image() = default;
  Image(int w, int h, const Vec3& fill = Vec3::Zero()) : width(w), height(h) {
    for (int c = 0; c < 3; ++c) channels[static_cast<std::size_t>(c)] = Eigen::ArrayXXd::Constant(h, w, fill[c]);
  }

  double& at(int row, int col, int c) { return channels[static_cast<std::size_t>(c)](row, col); }
  double at(int row, int col, int c) const { return channels[static_cast<std::size_t>(c)](row, col); }
  Vec3 pixel(int row, int col) const { return {at(row, col, 0), at(row, col, 1), at(row, col, 2)}; }
  /// Rec. 601 luma.
  Eigen::ArrayXXd luma() const { return 0.299 * channels[0] + 0.587 * channels[1] + 0.114 * channels[2]; }
};

/// Orthographic camera. `basis` columns are the world-space right, up and
/// back (pointing from the scene toward the camera) directions.
struct Camera {
  Eigen::Matrix3d basis = Eigen::Matrix3d::Identity();
  int width = 64;
  int height = 64;
  double scale = 2.4 / 64.0;  // world units per pixel
  Vec3 target{0.0, 1.0, 0.0};  // world point at the image center
  Vec3 background = Vec3::Zero();

  /// Named axis-aligned views: "+x", "-x", "+y", "-y", "+z", "-z" (camera on
  /// that side looking back at the target) and "az45" (between +x and +z).
  static Camera from_view(std::string_view view, int width, int height, double scale, const Vec3& target);
  /// Camera orientation as a rotation taking camera axes to world axes.
  static Camera from_quaternion(const Eigen::Quaterniond& q, int width, int height, double scale, const Vec3& target);

  Vec3 right() const { return basis.col(0); }
  Vec3 up() const { return basis.col(1); }
  Vec3 back() const { return basis.col(2); }

  /// Image-plane coordinates (column, row) in pixels, and depth toward the camera.
  Eigen::Vector2d project(const Vec3& p) const;
  double depth(const Vec3& p) const { return (p - target).dot(back()); }
};

/// The four dataset views.
const std::vector<std::string>& dataset_views();

/// Opacity of a footprint at squared normalised distance q = d^2 / sigma^2:
/// a Gaussian with peak `opacity`, shifted and rescaled so it reaches zero at
/// the 3-sigma truncation radius.
double footprint(double opacity, double q);

Image render(const GaussianSet& gaussians, const Camera& camera);

/// Per-pixel mean of the channel-summed squared difference (identical
/// images give 0, black vs white gives 3).
double photometric_loss(const Image& rendered, const Image& observed);

/// d photometric_loss / d rendered pixel values.
Image photometric_loss_gradient(const Image& rendered, const Image& observed);

/// Adjoint of render with respect to Gaussian centers.
Points render_gradient(const GaussianSet& gaussians, const Camera& camera, const Image& upstream);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// 8-bit quantisation used for PNG output: round half up from [0, 1].
inline unsigned char to_byte(double v) {
  const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<unsigned char>(static_cast<int>(clamped * 255.0 + 0.5));
}

}  // namespace elastica
