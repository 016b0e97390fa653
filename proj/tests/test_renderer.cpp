#include "bodysim/renderer.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <numbers>
#include <random>

namespace bodysim {
namespace {

using testing::default_model;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Places normalized image points (u, v) of the frontal camera on the z = 0 plane.
Mesh flat_mesh(const Camera& cam, const std::vector<Eigen::Vector2d>& uv, std::vector<Face> faces) {
  const double d = cam.position.z();
  const double f = cam.focal();
  VertexArray v(static_cast<Eigen::Index>(uv.size()), 3);
  for (std::size_t i = 0; i < uv.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    v(r, 0) = uv[i].x() * d / f;
    v(r, 1) = cam.target.y() + uv[i].y() * d / f;
    v(r, 2) = 0.0;
  }
  return Mesh{v, std::make_shared<const std::vector<Face>>(std::move(faces))};
}

Mesh body(std::uint64_t seed) {
  const BodyModel& m = default_model();
  Rng rng(seed);
  return pose_shape(m, sample_shape_uniform(rng, -3, 3), sample_pose_jitter(m, rng, 0.087));
}

TEST(MakeCamera, Azimuths) {
  const Camera f = make_camera(View::kFrontal, 1.8);
  const Camera l = make_camera(View::kLateral, 1.8);
  EXPECT_EQ(f.azimuth, 0.0);
  EXPECT_DOUBLE_EQ(l.azimuth, -std::numbers::pi / 2);
  EXPECT_NEAR((f.position - f.target).norm(), 1.8, 1e-12);
  EXPECT_NEAR((l.position - l.target).norm(), 1.8, 1e-12);
  EXPECT_GT(f.position.z(), 0.0);
  EXPECT_NEAR(f.back().dot(l.back()), 0.0, 1e-12);
  EXPECT_EQ(kDefaultCameraDistance, 1.8);
  EXPECT_THROW(make_camera(View::kFrontal, 0.0), InvalidArgument);
  EXPECT_THROW(make_camera(View::kFrontal, -1.0), InvalidArgument);
}

TEST(Camera, Validation) {
  Camera c = make_camera(View::kFrontal);
  c.width = 4;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = make_camera(View::kFrontal);
  c.vertical_fov = std::numbers::pi;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = make_camera(View::kFrontal);
  c.near_plane = 30.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

Mesh point_mesh(const Vec3& p) {
  VertexArray v(1, 3);
  v.row(0) = p.transpose();
  return Mesh{v, std::make_shared<const std::vector<Face>>()};
}

TEST(Project, OpticalAxisHitsImageCenter) {
  const Camera cam = make_camera(View::kFrontal, 1.8);
  const ProjectedMesh pm = project(cam, point_mesh(cam.target));
  EXPECT_NEAR(pm.points[0].x(), 0.0, 1e-15);
  EXPECT_NEAR(pm.points[0].y(), 0.0, 1e-15);
  EXPECT_NEAR(pm.depth[0], 1.8, 1e-12);
}

TEST(Project, PinholeOffset) {
  const Camera cam = make_camera(View::kFrontal, 2.0);
  const double x = 0.3, z = 1.5;
  const Vec3 p = cam.position + Vec3(x, 0.0, -z);
  const ProjectedMesh pm = project(cam, point_mesh(p));
  const double f = 1.0 / std::tan(cam.vertical_fov / 2);
  EXPECT_NEAR(pm.points[0].x(), x * f / z, 1e-12);
  EXPECT_NEAR(pm.points[0].y(), 0.0, 1e-12);
  // In pixels: half the image height per normalized unit.
  EXPECT_NEAR(pm.points[0].x() * cam.height / 2, x * f / z * 32.0, 1e-10);
}

TEST(Project, LateralCameraSeesTheSide) {
  const Camera cam = make_camera(View::kLateral, 1.8);
  const ProjectedMesh pm = project(cam, point_mesh(cam.target + 0.2 * cam.right()));
  EXPECT_NEAR(pm.points[0].x(), 0.2 * cam.focal() / 1.8, 1e-12);
}

TEST(Project, BehindCameraThrowsNamingVertex) {
  const Camera cam = make_camera(View::kFrontal, 1.8);
  VertexArray v(2, 3);
  v << 0, 0.9, 0, 0, 0.9, 2.5;
  try {
    project(cam, Mesh{v, std::make_shared<const std::vector<Face>>()});
    FAIL() << "expected an error";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("vertex 1"), std::string::npos) << e.what();
  }
}

TEST(PixelCenter, NormalizedCoordinates) {
  const Camera cam = make_camera(View::kFrontal);
  const auto c = pixel_center(cam, 0, 0);
  EXPECT_DOUBLE_EQ(c.x(), (0.5 - 24.0) / 32.0);
  EXPECT_DOUBLE_EQ(c.y(), (32.0 - 0.5) / 32.0);
  const auto m = pixel_center(cam, 32, 24);
  EXPECT_DOUBLE_EQ(m.x(), 0.5 / 32.0);
  EXPECT_DOUBLE_EQ(m.y(), -0.5 / 32.0);
}

TEST(RasterizeSoft, PixelOnEdgeIsHalf) {
  const Camera cam = make_camera(View::kFrontal);
  const auto p = pixel_center(cam, 20, 20);
  const Mesh m = flat_mesh(cam, {p + Eigen::Vector2d(-0.5, 0), p + Eigen::Vector2d(0.5, 0),
                                 p + Eigen::Vector2d(0, 0.5)},
                           {{0, 1, 2}});
  RenderConfig rc;
  const auto img = rasterize_soft(cam, m, rc);
  EXPECT_NEAR(img.at(20, 20), 0.5, 1e-9);
}

TEST(RasterizeSoft, InteriorAtUnitRatio) {
  const Camera cam = make_camera(View::kFrontal);
  RenderConfig rc;
  const double r = std::sqrt(rc.sigma);
  const auto p = pixel_center(cam, 30, 10);
  const Mesh m = flat_mesh(cam, {p + Eigen::Vector2d(-0.5, -r), p + Eigen::Vector2d(0.5, -r),
                                 p + Eigen::Vector2d(0, 0.5)},
                           {{0, 1, 2}});
  const auto img = rasterize_soft(cam, m, rc);
  EXPECT_NEAR(img.at(30, 10), sigmoid(1.0), 1e-6);
  EXPECT_NEAR(img.at(30, 10), 0.731059, 1e-6);
}

TEST(RasterizeSoft, TwoHalfContributionsAggregate) {
  const Camera cam = make_camera(View::kFrontal);
  const auto p = pixel_center(cam, 12, 30);
  const Mesh m = flat_mesh(cam,
                           {p + Eigen::Vector2d(-0.5, 0), p + Eigen::Vector2d(0.5, 0),
                            p + Eigen::Vector2d(0, 0.5), p + Eigen::Vector2d(0, -0.5)},
                           {{0, 1, 2}, {1, 0, 3}});
  const auto img = rasterize_soft(cam, m, RenderConfig{});
  EXPECT_NEAR(img.at(12, 30), 0.75, 1e-9);
}

TEST(RasterizeSoft, RejectsNonpositiveSigma) {
  const Camera cam = make_camera(View::kFrontal);
  RenderConfig rc;
  rc.sigma = 0.0;
  EXPECT_THROW(rasterize_soft(cam, default_model().template_mesh(), rc), InvalidArgument);
}

TEST(RasterizeSoft, ValuesInUnitIntervalAndOpenNearEdges) {
  const Camera cam = make_camera(View::kFrontal);
  RenderConfig rc;
  rc.sigma = 3e-3;
  const Mesh m = flat_mesh(cam, {{-0.3, -0.3}, {0.3, -0.3}, {0.0, 0.4}}, {{0, 1, 2}});
  const auto img = rasterize_soft(cam, m, rc);
  std::size_t open = 0;
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const double v = img.at(r, c);
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
      if (v > 0.0 && v < 1.0) ++open;
    }
  }
  // With this softness most of the triangle is inside the unsaturated band.
  EXPECT_GT(open, 200u);
  const auto centre = img.at(img.height / 2, img.width / 2);
  EXPECT_GT(centre, 0.0);
  EXPECT_LT(centre, 1.0);
}

TEST(RasterizeSoft, AddingTrianglesNeverLowersPixels) {
  const Camera cam = make_camera(View::kFrontal);
  RenderConfig rc;
  rc.sigma = 1e-3;
  const std::vector<Eigen::Vector2d> uv = {{-0.3, -0.3}, {0.3, -0.3}, {0.0, 0.4}, {0.1, 0.5}};
  const auto one = rasterize_soft(cam, flat_mesh(cam, uv, {{0, 1, 2}}), rc);
  const auto two = rasterize_soft(cam, flat_mesh(cam, uv, {{0, 1, 2}, {1, 3, 2}}), rc);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_GE(two.values[i], one.values[i]);
}

TEST(RasterizeSoft, IndependentOfTriangleOrder) {
  const Camera cam = make_camera(View::kFrontal);
  const Mesh m = body(3);
  std::vector<Face> rev(m.faces->rbegin(), m.faces->rend());
  const Mesh r{m.vertices, std::make_shared<const std::vector<Face>>(std::move(rev))};
  RenderConfig rc;
  const auto a = rasterize_soft(cam, m, rc);
  const auto b = rasterize_soft(cam, r, rc);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a.values[i], b.values[i], 1e-12);
}

TEST(RasterizeSoft, BitwiseIndependentOfWorkers) {
  const Camera cam = make_camera(View::kLateral);
  const Mesh m = body(4);
  RenderConfig one, many;
  many.workers = 3;
  EXPECT_EQ(rasterize_soft(cam, m, one), rasterize_soft(cam, m, many));
  SilhouetteImage cot(cam.width, cam.height);
  Rng rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& v : cot.values) v = u(rng);
  EXPECT_EQ(rasterize_soft_vjp(cam, m, one, cot), rasterize_soft_vjp(cam, m, many, cot));
}

TEST(RasterizeSoftVjp, ZeroCotangent) {
  const Camera cam = make_camera(View::kFrontal);
  const Mesh m = body(1);
  const VertexArray g = rasterize_soft_vjp(cam, m, {}, SilhouetteImage(cam.width, cam.height));
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(RasterizeSoftVjp, DimensionMismatch) {
  const Camera cam = make_camera(View::kFrontal);
  EXPECT_THROW(rasterize_soft_vjp(cam, default_model().template_mesh(), {}, SilhouetteImage(4, 4)),
               InvalidArgument);
}

double dot(const SilhouetteImage& a, const SilhouetteImage& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

TEST(RasterizeSoftVjp, SingleTriangleMatchesFiniteDifferences) {
  const Camera cam = make_camera(View::kFrontal);
  RenderConfig rc;
  rc.sigma = 1e-3;
  Rng rng(21);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 5; ++trial) {
    Mesh m = flat_mesh(cam, {{-0.3 + 0.05 * u(rng), -0.3}, {0.3, -0.25 + 0.05 * u(rng)}, {0.05 * u(rng), 0.4}},
                       {{0, 1, 2}});
    m.vertices(1, 2) = 0.1 * u(rng);
    SilhouetteImage cot(cam.width, cam.height);
    for (double& v : cot.values) v = u(rng);
    const VertexArray g = rasterize_soft_vjp(cam, m, rc, cot);
    const double eps = 1e-5;
    for (Eigen::Index i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) {
        Mesh p = m, q = m;
        p.vertices(i, k) += eps;
        q.vertices(i, k) -= eps;
        const double fd =
            (dot(rasterize_soft(cam, p, rc), cot) - dot(rasterize_soft(cam, q, rc), cot)) / (2 * eps);
        const double a = g(i, k);
        EXPECT_LT(std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8}), 1e-3)
            << "trial " << trial << " v" << i << " axis " << k << " a=" << a << " fd=" << fd;
      }
    }
  }
}

TEST(RasterizeSoftVjp, LinearInCotangent) {
  const Camera cam = make_camera(View::kFrontal);
  const Mesh m = body(2);
  SilhouetteImage cot(cam.width, cam.height);
  Rng rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& v : cot.values) v = u(rng);
  SilhouetteImage scaled = cot;
  for (double& v : scaled.values) v *= 3.0;
  const VertexArray a = rasterize_soft_vjp(cam, m, {}, cot);
  const VertexArray b = rasterize_soft_vjp(cam, m, {}, scaled);
  EXPECT_LT((b - 3.0 * a).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + a.cwiseAbs().maxCoeff()));
}

TEST(RasterizeHard, CoveringTriangleFillsImage) {
  const Camera cam = make_camera(View::kFrontal);
  const Mesh m = flat_mesh(cam, {{-10, -10}, {10, -10}, {0, 10}}, {{0, 1, 2}});
  const auto img = rasterize_hard(cam, m);
  for (double v : img.values) ASSERT_EQ(v, 1.0);
}

TEST(RasterizeHard, ZeroAreaTriangleIsInvisible) {
  const Camera cam = make_camera(View::kFrontal);
  const Mesh m = flat_mesh(cam, {{-0.5, -0.5}, {0.0, 0.0}, {0.5, 0.5}}, {{0, 1, 2}});
  for (double v : rasterize_hard(cam, m).values) ASSERT_EQ(v, 0.0);
  const Mesh soft_probe = flat_mesh(cam, {{-0.5, -0.5}, {0.0, 0.0}, {0.5, 0.5}}, {{0, 1, 2}});
  for (double v : rasterize_soft(cam, soft_probe, {}).values) ASSERT_EQ(v, 0.0);
}

TEST(RasterizeHard, SharedEdgeCoveredOnce) {
  // Two triangles sharing a diagonal that runs through pixel centers.
  const Camera cam = make_camera(View::kFrontal);
  const auto a = pixel_center(cam, 10, 10);
  const auto b = pixel_center(cam, 40, 40);
  const Eigen::Vector2d c(a.x(), b.y()), d(b.x(), a.y());
  const Mesh m = flat_mesh(cam, {a, b, c, d}, {{0, 2, 1}, {0, 1, 3}});
  const auto img = rasterize_hard(cam, m);
  for (double v : img.values) ASSERT_TRUE(v == 0.0 || v == 1.0);
  EXPECT_EQ(img.at(25, 25), 1.0);
}

TEST(RasterizeHard, BinaryOnBody) {
  const Camera cam = make_camera(View::kFrontal);
  const auto img = rasterize_hard(cam, body(5));
  double sum = 0;
  for (double v : img.values) {
    ASSERT_TRUE(v == 0.0 || v == 1.0);
    sum += v;
  }
  EXPECT_GT(sum, 100.0);
}

TEST(RasterizeHard, NearlyHardSoftAgreesOutsideBand) {
  const Camera cam = make_camera(View::kFrontal);
  RenderConfig rc;
  rc.sigma = 1e-9;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Mesh m = body(s);
    const auto cmp = compare_silhouettes(threshold(rasterize_soft(cam, m, rc)), rasterize_hard(cam, m), 2);
    EXPECT_EQ(cmp.outside_band, 0u);
  }
}

TEST(RasterizeSoft, ConvergesToHardAsSigmaShrinks) {
  const Camera cam = make_camera(View::kFrontal);
  const Mesh m = body(8);
  const auto hard = rasterize_hard(cam, m);
  std::size_t prev = std::numeric_limits<std::size_t>::max();
  double last_rate = 1.0;
  for (double sigma : {1e-4, 1e-5, 1e-6, 1e-7}) {
    RenderConfig rc;
    rc.sigma = sigma;
    const auto cmp = compare_silhouettes(threshold(rasterize_soft(cam, m, rc)), hard, 2);
    EXPECT_LE(cmp.disagreements, prev) << sigma;
    prev = cmp.disagreements;
    last_rate = cmp.rate();
  }
  EXPECT_LT(last_rate, 0.01);
}

TEST(Threshold, Level) {
  SilhouetteImage img(2, 1);
  img.values = {0.49, 0.5};
  const auto t = threshold(img);
  EXPECT_EQ(t.values[0], 0.0);
  EXPECT_EQ(t.values[1], 1.0);
}

TEST(CompareSilhouettes, CountsBandDistance) {
  SilhouetteImage ref(10, 10), cand(10, 10);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 5; ++c) ref.at(r, c) = 1.0;
  cand = ref;
  cand.at(5, 5) = 1.0;  // next to the edge
  cand.at(5, 9) = 1.0;  // far from it
  const auto cmp = compare_silhouettes(cand, ref, 2);
  EXPECT_EQ(cmp.disagreements, 2u);
  EXPECT_EQ(cmp.outside_band, 1u);
  EXPECT_EQ(cmp.pixels, 100u);
  EXPECT_THROW(compare_silhouettes(cand, SilhouetteImage(3, 3), 2), InvalidArgument);
}

}  // namespace
}  // namespace bodysim
