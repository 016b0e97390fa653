#pragma once

#include "bodysim/bodymodel.hpp"
#include "bodysim/types.hpp"

#include <span>

namespace bodysim {

inline constexpr double kBodyDensity = 1000.0;  // kg / m^3

struct Metadata {
  double height = 0.0;  // meters
  double weight = 0.0;  // kilograms

  bool plausible() const;
  friend bool operator==(const Metadata&, const Metadata&) = default;
};

/// Polyline length over vertex indices; closed adds the last-to-first segment.
double path_length(const VertexArray& vertices, std::span<const int> path, bool closed);

MeasurementVector measure_all(const BodyModel& model, const Mesh& mesh);

/// d(cotangent . measure_all) / d vertices.
VertexArray measure_vjp(const BodyModel& model, const Mesh& mesh,
                        const MeasurementVector& cotangent);

/// Enclosed volume of a closed, consistently oriented triangle surface.
double mesh_volume(const Mesh& mesh);

/// Height from vertical extent, weight from volume at body density.
Metadata oracle_metadata(const Mesh& mesh);

double bmi(const Metadata& meta);

}  // namespace bodysim
