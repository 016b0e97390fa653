#include "bodysim/measure.hpp"

#include <Eigen/Geometry>

#include <cmath>

namespace bodysim {

bool Metadata::plausible() const {
  return std::isfinite(height) && std::isfinite(weight) && height > 0.5 && height < 2.6 &&
         weight > 20.0 && weight < 300.0;
}

namespace {

void check_path(Eigen::Index n, std::span<const int> path) {
  if (path.size() < 2) throw InvalidArgument("path_length: path needs at least 2 vertices");
  for (int v : path) {
    if (v < 0 || v >= n) {
      throw InvalidArgument("path_length: vertex index " + std::to_string(v) + " out of range");
    }
  }
}

void check_topology(const BodyModel& model, const Mesh& mesh) {
  if (mesh.vertex_count() != model.vertex_count()) {
    throw InvalidArgument("measure: mesh has " + std::to_string(mesh.vertex_count()) +
                          " vertices, model has " + std::to_string(model.vertex_count()));
  }
}

}  // namespace

double path_length(const VertexArray& vertices, std::span<const int> path, bool closed) {
  check_path(vertices.rows(), path);
  double total = 0.0;
  const std::size_t segments = closed ? path.size() : path.size() - 1;
  for (std::size_t i = 0; i < segments; ++i) {
    const int a = path[i];
    const int b = path[(i + 1) % path.size()];
    total += (vertices.row(b) - vertices.row(a)).norm();
  }
  return total;
}

MeasurementVector measure_all(const BodyModel& model, const Mesh& mesh) {
  check_topology(model, mesh);
  MeasurementVector out;
  const auto& paths = model.measurement_paths();
  for (std::size_t m = 0; m < kNumMeasurements; ++m) {
    out[m] = path_length(mesh.vertices, paths[m].vertices, paths[m].closed);
  }
  return out;
}

VertexArray measure_vjp(const BodyModel& model, const Mesh& mesh,
                        const MeasurementVector& cotangent) {
  check_topology(model, mesh);
  VertexArray grad = VertexArray::Zero(mesh.vertices.rows(), 3);
  const auto& paths = model.measurement_paths();
  for (std::size_t m = 0; m < kNumMeasurements; ++m) {
    const double c = cotangent[m];
    if (c == 0.0) continue;
    const auto& p = paths[m].vertices;
    const std::size_t segments = paths[m].closed ? p.size() : p.size() - 1;
    for (std::size_t i = 0; i < segments; ++i) {
      const int a = p[i];
      const int b = p[(i + 1) % p.size()];
      const Eigen::RowVector3d d = mesh.vertices.row(b) - mesh.vertices.row(a);
      const double len = d.norm();
      if (len == 0.0) continue;
      grad.row(b) += (c / len) * d;
      grad.row(a) -= (c / len) * d;
    }
  }
  return grad;
}

double mesh_volume(const Mesh& mesh) {
  if (!mesh.faces) throw InvalidArgument("mesh_volume: mesh has no face list");
  double six_v = 0.0;
  for (const auto& f : *mesh.faces) {
    const Vec3 a = mesh.vertices.row(f[0]).transpose();
    const Vec3 b = mesh.vertices.row(f[1]).transpose();
    const Vec3 c = mesh.vertices.row(f[2]).transpose();
    six_v += a.dot(b.cross(c));
  }
  return std::abs(six_v) / 6.0;
}

Metadata oracle_metadata(const Mesh& mesh) {
  if (mesh.vertex_count() == 0) throw InvalidArgument("oracle_metadata: empty mesh");
  const double extent = mesh.vertices.col(1).maxCoeff() - mesh.vertices.col(1).minCoeff();
  if (!(extent > 0.0)) throw InvalidArgument("oracle_metadata: mesh has zero vertical extent");
  return {extent, kBodyDensity * mesh_volume(mesh)};
}

double bmi(const Metadata& meta) {
  if (!(meta.height > 0.0)) throw InvalidArgument("bmi: height must be > 0");
  return meta.weight / (meta.height * meta.height);
}

}  // namespace bodysim
