#pragma once

#include "bodysim/types.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bodysim {

/// Latent body shape: 10 coefficients weighting the model's shape modes.
struct ShapeParams {
  std::array<double, kShapeDim> values{};

  static ShapeParams zeros() { return {}; }
  static ShapeParams unit(std::size_t mode, double scale = 1.0);

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  std::span<const double, kShapeDim> span() const { return values; }

  double norm() const;
  bool all_finite() const;
  bool within(double lo, double hi) const;

  friend bool operator==(const ShapeParams&, const ShapeParams&) = default;
};

/// Per-joint local rotations in axis-angle form (radians).
struct PoseParams {
  std::vector<Vec3> rotations;

  static PoseParams identity(std::size_t joint_count);
  std::size_t size() const { return rotations.size(); }
  bool is_identity() const;
};

enum class ShapeMode : std::size_t {
  kHeight = 0,
  kGirth,
  kTorsoWidth,
  kLimbLength,
  kBelly,
  kShoulderWidth,
  kHipWidth,
  kLegGirth,
  kArmGirth,
  kHeadScale,
};

std::string_view shape_mode_name(std::size_t mode);

/// Canonical measurement order; the index of each entry in MeasurementVector.
enum class Measurement : std::size_t {
  kAnkleGirth = 0,
  kArmLength,
  kBicepGirth,
  kCalfGirth,
  kChestGirth,
  kForearmGirth,
  kHeadToHeel,
  kHipGirth,
  kLegLength,
  kShoulderBreadth,
  kShoulderToCrotch,
  kThighGirth,
  kWaistGirth,
  kWristGirth,
};

/// snake_case column names, canonical order.
const std::array<std::string_view, kNumMeasurements>& measurement_names();

struct MeasurementVector {
  std::array<double, kNumMeasurements> values{};

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](Measurement m) { return values[static_cast<std::size_t>(m)]; }
  double operator[](Measurement m) const { return values[static_cast<std::size_t>(m)]; }

  bool valid() const;  // all values finite and > 0

  friend bool operator==(const MeasurementVector&, const MeasurementVector&) = default;
};

struct Joint {
  std::string name;
  int parent = -1;
  Vec3 rest = Vec3::Zero();
  // Displacement of the rest position per unit of each shape coefficient.
  std::array<Vec3, kShapeDim> shape_offsets;
};

struct MeasurementPath {
  std::string name;
  std::vector<int> vertices;
  bool closed = false;
};

/// Resolution and proportions of the procedural humanoid.
struct TemplateSpec {
  static constexpr int kVersion = 1;

  int ring_resolution = 16;  // vertices per cross-section ring
  int torso_rings = 24;
  int neck_rings = 4;
  int head_rings = 10;
  int arm_rings = 20;
  int leg_rings = 24;
  int foot_rings = 5;
  double stature = 1.75;          // template height in meters
  double arm_abduction_deg = 35;  // A-pose arm angle from vertical
  double surface_noise = 0.0;     // radial jitter amplitude (m), seeded
  std::uint64_t seed = 0;

  /// Parses key=value lines; '#' starts a comment; a version line is required.
  static TemplateSpec parse(std::string_view text);
  static TemplateSpec load(const std::filesystem::path& path);
  std::string to_string() const;
};

struct Mesh {
  VertexArray vertices;
  std::shared_ptr<const std::vector<Face>> faces;

  std::size_t vertex_count() const { return static_cast<std::size_t>(vertices.rows()); }
};

/// Template mesh, linear shape basis, skeleton and skin weights. Immutable after
/// construction; safe to share across threads.
class BodyModel {
 public:
  const VertexArray& template_vertices() const { return template_vertices_; }
  const std::vector<Face>& faces() const { return *faces_; }
  const std::shared_ptr<const std::vector<Face>>& shared_faces() const { return faces_; }
  const VertexArray& shape_basis(std::size_t mode) const { return shape_basis_[mode]; }
  const std::vector<Joint>& joints() const { return joints_; }
  // Row-major N x J.
  const Eigen::MatrixXd& skin_weights() const { return skin_weights_; }
  const std::array<MeasurementPath, kNumMeasurements>& measurement_paths() const {
    return paths_;
  }
  const MeasurementVector& template_measurements() const { return template_measurements_; }
  const TemplateSpec& spec() const { return spec_; }

  std::size_t vertex_count() const { return static_cast<std::size_t>(template_vertices_.rows()); }
  std::size_t joint_count() const { return joints_.size(); }
  // Indices of joints driven by pose jitter (shoulders and elbows).
  const std::vector<int>& jitter_joints() const { return jitter_joints_; }

  /// Template mesh at beta = 0, identity pose.
  Mesh template_mesh() const;

 private:
  friend BodyModel build_template(const TemplateSpec& spec);

  TemplateSpec spec_;
  VertexArray template_vertices_;
  std::shared_ptr<const std::vector<Face>> faces_;
  std::array<VertexArray, kShapeDim> shape_basis_;
  std::vector<Joint> joints_;
  Eigen::MatrixXd skin_weights_;
  std::vector<std::vector<std::pair<int, double>>> sparse_weights_;
  std::array<MeasurementPath, kNumMeasurements> paths_;
  MeasurementVector template_measurements_;
  std::vector<int> jitter_joints_;

  friend Mesh pose_shape(const BodyModel&, const ShapeParams&, const PoseParams&);
  friend std::array<double, kShapeDim> pose_shape_vjp(const BodyModel&, const ShapeParams&,
                                                       const PoseParams&, const VertexArray&);
};

BodyModel build_template(const TemplateSpec& spec = {});

/// Shaped and skinned mesh. Linear in beta for a fixed pose.
Mesh pose_shape(const BodyModel& model, const ShapeParams& beta, const PoseParams& pose);

/// (dV/dbeta)^T * cotangent.
std::array<double, kShapeDim> pose_shape_vjp(const BodyModel& model, const ShapeParams& beta,
                                             const PoseParams& pose,
                                             const VertexArray& mesh_cotangent);

ShapeParams clamp_shape(const ShapeParams& beta, double lo, double hi);

ShapeParams sample_shape_uniform(Rng& rng, double lo, double hi);
ShapeParams sample_shape_ball(Rng& rng, const ShapeParams& center, double radius);
ShapeParams sample_shape_hypercube(Rng& rng, const ShapeParams& center, double side);

/// A-pose with i.i.d. Gaussian jitter (per axis-angle component) on shoulders and elbows.
PoseParams sample_pose_jitter(const BodyModel& model, Rng& rng, double sigma_rad);

void export_mesh_obj(const Mesh& mesh, const std::filesystem::path& path);

}  // namespace bodysim
