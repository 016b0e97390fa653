#include "bodysim/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

namespace bodysim {

Vec3 Camera::back() const { return Vec3(std::sin(azimuth), 0.0, std::cos(azimuth)); }

Vec3 Camera::right() const { return Vec3(std::cos(azimuth), 0.0, -std::sin(azimuth)); }

double Camera::focal() const { return 1.0 / std::tan(0.5 * vertical_fov); }

void Camera::validate() const {
  if (!(vertical_fov > 0.0 && vertical_fov < std::numbers::pi)) {
    throw InvalidArgument("camera: vertical_fov must be in (0, pi)");
  }
  if (width < 8 || height < 8) throw InvalidArgument("camera: width and height must be >= 8");
  if (!(near_plane > 0.0 && near_plane < far_plane)) {
    throw InvalidArgument("camera: requires 0 < near < far");
  }
}

Camera make_camera(View view, double distance, int width, int height, double vertical_fov,
                   double target_height) {
  if (!(distance > 0.0)) throw InvalidArgument("make_camera: distance must be > 0");
  Camera cam;
  cam.azimuth = view == View::kFrontal ? 0.0 : -0.5 * std::numbers::pi;
  cam.target = Vec3(0.0, target_height, 0.0);
  cam.position = cam.target + distance * cam.back();
  cam.vertical_fov = vertical_fov;
  cam.width = width;
  cam.height = height;
  cam.validate();
  return cam;
}

void RenderConfig::validate() const {
  if (!(sigma > 0.0)) throw InvalidArgument("render config: sigma must be > 0");
  if (!(cull_radius > 0.0)) throw InvalidArgument("render config: cull_radius must be > 0");
  if (workers < 1) throw InvalidArgument("render config: workers must be >= 1");
}

Eigen::Vector2d pixel_center(const Camera& camera, int row, int col) {
  const double half_h = 0.5 * camera.height;
  return Eigen::Vector2d(((col + 0.5) - 0.5 * camera.width) / half_h,
                         (half_h - (row + 0.5)) / half_h);
}

ProjectedMesh project(const Camera& camera, const Mesh& mesh) {
  camera.validate();
  const auto n = mesh.vertex_count();
  if (n == 0) throw InvalidArgument("project: empty mesh");
  const Vec3 fwd = -camera.back();
  const Vec3 right = camera.right();
  const Vec3 up = camera.up();
  const double f = camera.focal();
  ProjectedMesh out;
  out.points.resize(n);
  out.depth.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 rel = mesh.vertices.row(static_cast<Eigen::Index>(i)).transpose() - camera.position;
    const double z = rel.dot(fwd);
    if (!(z > camera.near_plane)) {
      throw InvalidArgument("project: vertex " + std::to_string(i) +
                            " is at or behind the near plane (depth " + std::to_string(z) + ")");
    }
    out.points[i] = Eigen::Vector2d(f * rel.dot(right) / z, f * rel.dot(up) / z);
    out.depth[i] = z;
  }
  return out;
}

namespace {

using Vec2 = Eigen::Vector2d;

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z)
double softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

struct Triangle {
  std::array<int, 3> v;
  std::array<Vec2, 3> p;  // counter-clockwise in y-up coordinates
  double lo_x, hi_x, lo_y, hi_y;
};

// Projected, CCW-oriented, non-degenerate triangles.
std::vector<Triangle> collect_triangles(const ProjectedMesh& proj, const std::vector<Face>& faces) {
  std::vector<Triangle> tris;
  tris.reserve(faces.size());
  for (const auto& f : faces) {
    Triangle t{{f[0], f[1], f[2]}, {proj.points[f[0]], proj.points[f[1]], proj.points[f[2]]}, 0, 0, 0, 0};
    const double area2 = cross2(t.p[1] - t.p[0], t.p[2] - t.p[0]);
    if (area2 == 0.0) continue;
    if (area2 < 0.0) {
      std::swap(t.p[1], t.p[2]);
      std::swap(t.v[1], t.v[2]);
    }
    t.lo_x = std::min({t.p[0].x(), t.p[1].x(), t.p[2].x()});
    t.hi_x = std::max({t.p[0].x(), t.p[1].x(), t.p[2].x()});
    t.lo_y = std::min({t.p[0].y(), t.p[1].y(), t.p[2].y()});
    t.hi_y = std::max({t.p[0].y(), t.p[1].y(), t.p[2].y()});
    tris.push_back(t);
  }
  return tris;
}

struct PixelRange {
  int row0, row1, col0, col1;  // inclusive; empty if row0 > row1 or col0 > col1
};

PixelRange covered_pixels(const Camera& cam, double lo_x, double hi_x, double lo_y, double hi_y) {
  const double half_h = 0.5 * cam.height;
  const double half_w = 0.5 * cam.width;
  // One pixel of slack; callers re-test exact membership.
  PixelRange r;
  r.col0 = std::max(0, static_cast<int>(std::floor(lo_x * half_h + half_w - 0.5)) - 1);
  r.col1 = std::min(cam.width - 1, static_cast<int>(std::ceil(hi_x * half_h + half_w - 0.5)) + 1);
  r.row0 = std::max(0, static_cast<int>(std::floor(half_h - 0.5 - hi_y * half_h)) - 1);
  r.row1 = std::min(cam.height - 1, static_cast<int>(std::ceil(half_h - 0.5 - lo_y * half_h)) + 1);
  return r;
}

struct BoundaryHit {
  double d2;
  int edge;  // segment (p[edge], p[(edge + 1) % 3])
  double t;  // clamped position of the closest point along the segment
};

BoundaryHit boundary_distance(const Vec2& q, const Triangle& tri) {
  BoundaryHit best{std::numeric_limits<double>::infinity(), 0, 0.0};
  for (int e = 0; e < 3; ++e) {
    const Vec2& a = tri.p[e];
    const Vec2& b = tri.p[(e + 1) % 3];
    const Vec2 ab = b - a;
    const double len2 = ab.squaredNorm();
    double t = len2 > 0.0 ? (q - a).dot(ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double d2 = (q - (a + t * ab)).squaredNorm();
    if (d2 < best.d2) best = {d2, e, t};
  }
  return best;
}

bool inside_closed(const Vec2& q, const Triangle& tri) {
  for (int e = 0; e < 3; ++e) {
    if (cross2(tri.p[(e + 1) % 3] - tri.p[e], q - tri.p[e]) < 0.0) return false;
  }
  return true;
}

bool in_cull_box(const Vec2& q, const Triangle& t, double margin) {
  return q.x() >= t.lo_x - margin && q.x() <= t.hi_x + margin && q.y() >= t.lo_y - margin &&
         q.y() <= t.hi_y + margin;
}

// Signed logit of a triangle's coverage at q.
double coverage_logit(const Vec2& q, const Triangle& tri, double sigma, BoundaryHit* hit_out,
                      double* sign_out) {
  const BoundaryHit hit = boundary_distance(q, tri);
  const double s = inside_closed(q, tri) ? 1.0 : -1.0;
  if (hit_out) *hit_out = hit;
  if (sign_out) *sign_out = s;
  return s * hit.d2 / sigma;
}

template <typename Fn>
void parallel_for(int workers, int count, Fn&& fn) {
  if (workers <= 1 || count <= 1) {
    fn(0, count);
    return;
  }
  const int n = std::min(workers, count);
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (int w = 0; w < n; ++w) {
    const int begin = count * w / n;
    const int end = count * (w + 1) / n;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

// Per-pixel sum of log(1 - D_i); triangles visited in index order for every pixel.
std::vector<double> log_background(const Camera& cam, const std::vector<Triangle>& tris,
                                   const RenderConfig& config) {
  const double margin = config.cull_radius * std::sqrt(config.sigma);
  std::vector<double> acc(static_cast<std::size_t>(cam.width) * cam.height, 0.0);
  parallel_for(config.workers, cam.height, [&](int row_begin, int row_end) {
    for (const auto& tri : tris) {
      PixelRange r = covered_pixels(cam, tri.lo_x - margin, tri.hi_x + margin, tri.lo_y - margin,
                                    tri.hi_y + margin);
      r.row0 = std::max(r.row0, row_begin);
      r.row1 = std::min(r.row1, row_end - 1);
      for (int row = r.row0; row <= r.row1; ++row) {
        for (int col = r.col0; col <= r.col1; ++col) {
          const Vec2 q = pixel_center(cam, row, col);
          if (!in_cull_box(q, tri, margin)) continue;
          const double z = coverage_logit(q, tri, config.sigma, nullptr, nullptr);
          acc[static_cast<std::size_t>(row) * cam.width + col] -= softplus(z);
        }
      }
    }
  });
  return acc;
}

void check_mesh(const Mesh& mesh) {
  if (!mesh.faces) throw InvalidArgument("mesh has no face list");
}

}  // namespace

SilhouetteImage rasterize_soft(const Camera& camera, const Mesh& mesh, const RenderConfig& config) {
  config.validate();
  check_mesh(mesh);
  const ProjectedMesh proj = project(camera, mesh);
  const auto tris = collect_triangles(proj, *mesh.faces);
  const auto logb = log_background(camera, tris, config);
  SilhouetteImage img(camera.width, camera.height);
  for (std::size_t i = 0; i < logb.size(); ++i) img.values[i] = -std::expm1(logb[i]);
  return img;
}

VertexArray rasterize_soft_vjp(const Camera& camera, const Mesh& mesh, const RenderConfig& config,
                               const SilhouetteImage& image_cotangent) {
  config.validate();
  check_mesh(mesh);
  if (image_cotangent.width != camera.width || image_cotangent.height != camera.height ||
      image_cotangent.values.size() != static_cast<std::size_t>(camera.width) * camera.height) {
    throw InvalidArgument("rasterize_soft_vjp: cotangent dimensions do not match the camera");
  }
  const ProjectedMesh proj = project(camera, mesh);
  const auto tris = collect_triangles(proj, *mesh.faces);
  const auto logb = log_background(camera, tris, config);
  const double margin = config.cull_radius * std::sqrt(config.sigma);
  const double inv_sigma = 1.0 / config.sigma;

  // d value / d z_i = exp(sum_k log(1 - D_k)) * D_i.
  std::vector<double> pixel_weight(logb.size());
  for (std::size_t i = 0; i < logb.size(); ++i) {
    pixel_weight[i] = image_cotangent.values[i] * std::exp(logb[i]);
  }

  // Per-triangle 2D gradients, each summed in row-major pixel order.
  std::vector<std::array<Vec2, 3>> tri_grad(tris.size());
  parallel_for(config.workers, static_cast<int>(tris.size()), [&](int begin, int end) {
    for (int ti = begin; ti < end; ++ti) {
      const auto& tri = tris[ti];
      std::array<Vec2, 3> g = {Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
      const PixelRange r = covered_pixels(camera, tri.lo_x - margin, tri.hi_x + margin,
                                          tri.lo_y - margin, tri.hi_y + margin);
      for (int row = r.row0; row <= r.row1; ++row) {
        for (int col = r.col0; col <= r.col1; ++col) {
          const double w = pixel_weight[static_cast<std::size_t>(row) * camera.width + col];
          if (w == 0.0) continue;
          const Vec2 q = pixel_center(camera, row, col);
          if (!in_cull_box(q, tri, margin)) continue;
          BoundaryHit hit;
          double s;
          const double z = coverage_logit(q, tri, config.sigma, &hit, &s);
          const double dz = w * sigmoid(z) * s * inv_sigma;  // times d(d^2)
          if (dz == 0.0) continue;
          const int e0 = hit.edge;
          const int e1 = (hit.edge + 1) % 3;
          const Vec2 closest = tri.p[e0] + hit.t * (tri.p[e1] - tri.p[e0]);
          const Vec2 diff = q - closest;
          g[e0] += dz * (-2.0 * (1.0 - hit.t)) * diff;
          g[e1] += dz * (-2.0 * hit.t) * diff;
        }
      }
      tri_grad[ti] = g;
    }
  });

  std::vector<Vec2> vert_grad(mesh.vertex_count(), Vec2::Zero());
  for (std::size_t ti = 0; ti < tris.size(); ++ti) {
    for (int k = 0; k < 3; ++k) vert_grad[tris[ti].v[k]] += tri_grad[ti][k];
  }

  const Vec3 fwd = -camera.back();
  const Vec3 right = camera.right();
  const Vec3 up = camera.up();
  const double f = camera.focal();
  VertexArray out = VertexArray::Zero(static_cast<Eigen::Index>(mesh.vertex_count()), 3);
  for (std::size_t i = 0; i < vert_grad.size(); ++i) {
    const Vec2& g = vert_grad[i];
    if (g.x() == 0.0 && g.y() == 0.0) continue;
    const auto row = static_cast<Eigen::Index>(i);
    const Vec3 rel = mesh.vertices.row(row).transpose() - camera.position;
    const double z = rel.dot(fwd);
    const double xc = rel.dot(right);
    const double yc = rel.dot(up);
    const Vec3 dnx = f * (right / z - xc * fwd / (z * z));
    const Vec3 dny = f * (up / z - yc * fwd / (z * z));
    out.row(row) = (g.x() * dnx + g.y() * dny).transpose();
  }
  return out;
}

SilhouetteImage rasterize_hard(const Camera& camera, const Mesh& mesh) {
  check_mesh(mesh);
  const ProjectedMesh proj = project(camera, mesh);
  const auto tris = collect_triangles(proj, *mesh.faces);
  SilhouetteImage img(camera.width, camera.height);
  for (const auto& tri : tris) {
    const PixelRange r = covered_pixels(camera, tri.lo_x, tri.hi_x, tri.lo_y, tri.hi_y);
    // Top edge: horizontal, running right to left (CCW, y up). Left edge: running down.
    std::array<bool, 3> top_left{};
    for (int e = 0; e < 3; ++e) {
      const Vec2 d = tri.p[(e + 1) % 3] - tri.p[e];
      top_left[e] = (d.y() == 0.0 && d.x() < 0.0) || d.y() < 0.0;
    }
    for (int row = r.row0; row <= r.row1; ++row) {
      for (int col = r.col0; col <= r.col1; ++col) {
        const Vec2 q = pixel_center(camera, row, col);
        bool in = true;
        for (int e = 0; e < 3 && in; ++e) {
          const double w = cross2(tri.p[(e + 1) % 3] - tri.p[e], q - tri.p[e]);
          in = w > 0.0 || (w == 0.0 && top_left[e]);
        }
        if (in) img.at(row, col) = 1.0;
      }
    }
  }
  return img;
}

SilhouetteImage threshold(const SilhouetteImage& image, double level) {
  SilhouetteImage out(image.width, image.height);
  for (std::size_t i = 0; i < image.values.size(); ++i) {
    out.values[i] = image.values[i] >= level ? 1.0 : 0.0;
  }
  return out;
}

SilhouetteComparison compare_silhouettes(const SilhouetteImage& candidate,
                                         const SilhouetteImage& reference, int band_px) {
  if (candidate.width != reference.width || candidate.height != reference.height) {
    throw InvalidArgument("compare_silhouettes: dimension mismatch");
  }
  const int W = reference.width;
  const int H = reference.height;
  auto occupied = [&](int r, int c) { return reference.at(r, c) >= 0.5; };
  std::vector<char> edge(static_cast<std::size_t>(W) * H, 0);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const bool v = occupied(r, c);
      const int dr[4] = {-1, 1, 0, 0};
      const int dc[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int rr = r + dr[k];
        const int cc = c + dc[k];
        if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
        if (occupied(rr, cc) != v) edge[static_cast<std::size_t>(r) * W + c] = 1;
      }
    }
  }
  SilhouetteComparison cmp;
  cmp.pixels = static_cast<std::size_t>(W) * H;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      if ((candidate.at(r, c) >= 0.5) == occupied(r, c)) continue;
      ++cmp.disagreements;
      bool near_edge = false;
      for (int rr = std::max(0, r - band_px); rr <= std::min(H - 1, r + band_px) && !near_edge;
           ++rr) {
        for (int cc = std::max(0, c - band_px); cc <= std::min(W - 1, c + band_px); ++cc) {
          if (edge[static_cast<std::size_t>(rr) * W + cc]) {
            near_edge = true;
            break;
          }
        }
      }
      if (!near_edge) ++cmp.outside_band;
    }
  }
  return cmp;
}

}  // namespace bodysim
