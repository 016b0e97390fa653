#pragma once

#include "bodysim/bodymodel.hpp"
#include "bodysim/types.hpp"

#include <Eigen/Core>

#include <vector>

namespace bodysim {

enum class View { kFrontal, kLateral };

/// Pinhole camera orbiting a target about the vertical axis. Azimuth 0 places the
/// camera on +z looking toward -z.
struct Camera {
  Vec3 position = Vec3::Zero();
  double azimuth = 0.0;
  Vec3 target = Vec3::Zero();
  double vertical_fov = 1.2217304763960306;  // 70 degrees
  int width = 48;
  int height = 64;
  double near_plane = 0.05;
  double far_plane = 20.0;

  Vec3 back() const;     // unit vector from target toward the camera
  Vec3 right() const;
  Vec3 up() const { return Vec3::UnitY(); }
  double focal() const;  // 1 / tan(fov / 2), maps camera-space slope to normalized units
  void validate() const;
};

inline constexpr double kDefaultCameraDistance = 1.8;
inline constexpr double kDefaultTargetHeight = 0.9;

Camera make_camera(View view, double distance = kDefaultCameraDistance, int width = 48,
                   int height = 64, double vertical_fov = 1.2217304763960306,
                   double target_height = kDefaultTargetHeight);

/// Accepted for interface parity with shaded renderers; silhouettes ignore it.
struct Lighting {
  Vec3 direction = -Vec3::UnitZ();
  double intensity = 1.0;
};

struct RenderConfig {
  // Softness, in squared normalized image units (image height spans 2 units).
  double sigma = 1e-4;
  // Pixels farther than cull_radius * sqrt(sigma) from a triangle's bounding box
  // skip that triangle.
  double cull_radius = 4.0;
  Lighting lighting;
  int workers = 1;

  void validate() const;
};

/// Row-major H x W occupancy in [0, 1].
struct SilhouetteImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  SilhouetteImage() = default;
  SilhouetteImage(int w, int h, double fill = 0.0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
  double at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * width + col];
  }
  std::size_t size() const { return values.size(); }

  friend bool operator==(const SilhouetteImage&, const SilhouetteImage&) = default;
};

struct ProjectedMesh {
  std::vector<Eigen::Vector2d> points;  // normalized image coords, y up
  std::vector<double> depth;            // distance along the view axis
};

ProjectedMesh project(const Camera& camera, const Mesh& mesh);

/// Normalized coordinates of a pixel center.
Eigen::Vector2d pixel_center(const Camera& camera, int row, int col);

/// Pixel value = 1 - prod_i (1 - sigmoid(s_i d_i^2 / sigma)), with d_i the distance
/// to triangle i's boundary and s_i = +1 inside, -1 outside.
SilhouetteImage rasterize_soft(const Camera& camera, const Mesh& mesh, const RenderConfig& config);

/// Exact reverse-mode derivative of rasterize_soft with respect to vertex positions.
VertexArray rasterize_soft_vjp(const Camera& camera, const Mesh& mesh, const RenderConfig& config,
                               const SilhouetteImage& image_cotangent);

/// Binary silhouette: pixel centers inside any triangle, top-left fill rule.
SilhouetteImage rasterize_hard(const Camera& camera, const Mesh& mesh);

SilhouetteImage threshold(const SilhouetteImage& image, double level = 0.5);

struct SilhouetteComparison {
  std::size_t disagreements = 0;
  std::size_t outside_band = 0;  // disagreements farther than band_px from a hard edge
  std::size_t pixels = 0;
  double rate() const { return pixels ? static_cast<double>(disagreements) / pixels : 0.0; }
};

/// Compares a binary image against a hard reference; the band is measured in
/// Chebyshev pixel distance from reference boundary pixels.
SilhouetteComparison compare_silhouettes(const SilhouetteImage& candidate,
                                         const SilhouetteImage& reference, int band_px);

}  // namespace bodysim
