#include "bodysim/bodymodel.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

namespace bodysim {
namespace {

using testing::default_model;

TEST(BuildTemplate, DefaultSpecContract) {
  const BodyModel& m = default_model();
  EXPECT_GE(m.vertex_count(), 500u);
  EXPECT_EQ(m.joint_count(), 12u);
  EXPECT_EQ(m.measurement_paths().size(), kNumMeasurements);
  for (const auto& p : m.measurement_paths()) EXPECT_GE(p.vertices.size(), 2u) << p.name;
}

TEST(BuildTemplate, FaceIndicesInRange) {
  const BodyModel& m = default_model();
  for (const auto& f : m.faces()) {
    for (int v : f) {
      ASSERT_GE(v, 0);
      ASSERT_LT(static_cast<std::size_t>(v), m.vertex_count());
    }
  }
}

TEST(BuildTemplate, SkinWeightsConvex) {
  const auto& w = default_model().skin_weights();
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    EXPECT_NEAR(w.row(i).sum(), 1.0, 1e-6);
    EXPECT_GE(w.row(i).minCoeff(), 0.0);
  }
}

TEST(BuildTemplate, GirthPathsClosedLengthPathsOpen) {
  const auto& paths = default_model().measurement_paths();
  const std::array<Measurement, 5> open = {Measurement::kArmLength, Measurement::kHeadToHeel,
                                           Measurement::kLegLength, Measurement::kShoulderBreadth,
                                           Measurement::kShoulderToCrotch};
  for (std::size_t i = 0; i < kNumMeasurements; ++i) {
    const bool is_open =
        std::find(open.begin(), open.end(), static_cast<Measurement>(i)) != open.end();
    EXPECT_EQ(paths[i].closed, !is_open) << paths[i].name;
    EXPECT_EQ(paths[i].name, measurement_names()[i]);
    if (paths[i].closed) {
      EXPECT_NE(paths[i].vertices.front(), paths[i].vertices.back());
    }
  }
}

TEST(BuildTemplate, DeterministicForSameSpec) {
  TemplateSpec spec;
  spec.surface_noise = 0.002;
  spec.seed = 7;
  const BodyModel a = build_template(spec);
  const BodyModel b = build_template(spec);
  EXPECT_EQ(a.template_vertices(), b.template_vertices());
  EXPECT_EQ(a.faces(), b.faces());
  for (std::size_t d = 0; d < kShapeDim; ++d) EXPECT_EQ(a.shape_basis(d), b.shape_basis(d));
  EXPECT_EQ(a.skin_weights(), b.skin_weights());
}

TEST(BuildTemplate, RejectsDegenerateRings) {
  TemplateSpec spec;
  spec.ring_resolution = 2;
  EXPECT_THROW(build_template(spec), InvalidArgument);
}

TEST(BuildTemplate, TemplateMeasurementsPositive) {
  EXPECT_TRUE(default_model().template_measurements().valid());
}

TEST(TemplateSpec, TextRoundTrip) {
  TemplateSpec spec;
  spec.ring_resolution = 12;
  spec.arm_abduction_deg = 30;
  spec.seed = 99;
  const TemplateSpec back = TemplateSpec::parse(spec.to_string());
  EXPECT_EQ(back.to_string(), spec.to_string());
}

TEST(TemplateSpec, RequiresVersionLine) {
  EXPECT_THROW(TemplateSpec::parse("ring_resolution=12\n"), InvalidArgument);
  EXPECT_THROW(TemplateSpec::parse("version=99\n"), InvalidArgument);
  EXPECT_THROW(TemplateSpec::parse("version=1\nbogus=3\n"), InvalidArgument);
  EXPECT_NO_THROW(TemplateSpec::parse("# comment\nversion=1\nring_resolution=10\n"));
}

TEST(PoseShape, ZeroShapeIdentityPoseIsTemplate) {
  const BodyModel& m = default_model();
  const Mesh mesh = pose_shape(m, ShapeParams::zeros(), PoseParams::identity(m.joint_count()));
  EXPECT_EQ(mesh.vertices, m.template_vertices());
  EXPECT_EQ(mesh.faces.get(), m.shared_faces().get());
}

TEST(PoseShape, HeightModeMatchesElementwiseSum) {
  const BodyModel& m = default_model();
  const Mesh mesh = pose_shape(m, ShapeParams::unit(0, 0.3), PoseParams::identity(m.joint_count()));
  const VertexArray& t = m.template_vertices();
  const VertexArray& b = m.shape_basis(0);
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    for (int k = 0; k < 3; ++k) ASSERT_NEAR(mesh.vertices(i, k), t(i, k) + 0.3 * b(i, k), 1e-12);
  }
}

TEST(PoseShape, LinearInShapeForIdentityPose) {
  const BodyModel& m = default_model();
  const PoseParams id = PoseParams::identity(m.joint_count());
  Rng rng(11);
  const ShapeParams b1 = sample_shape_uniform(rng, -3, 3);
  const ShapeParams b2 = sample_shape_uniform(rng, -3, 3);
  ShapeParams sum;
  for (std::size_t i = 0; i < kShapeDim; ++i) sum[i] = b1[i] + b2[i];
  const VertexArray& t = m.template_vertices();
  const VertexArray lhs = pose_shape(m, sum, id).vertices - t;
  const VertexArray rhs = (pose_shape(m, b1, id).vertices - t) + (pose_shape(m, b2, id).vertices - t);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(PoseShape, DimensionMismatch) {
  const BodyModel& m = default_model();
  EXPECT_THROW(pose_shape(m, {}, PoseParams::identity(m.joint_count() - 1)), InvalidArgument);
  ShapeParams bad;
  bad[3] = std::nan("");
  EXPECT_THROW(pose_shape(m, bad, PoseParams::identity(m.joint_count())), InvalidArgument);
}

TEST(PoseShape, JitterOnlyMovesDrivenJoints) {
  const BodyModel& m = default_model();
  Rng rng(5);
  const PoseParams p = sample_pose_jitter(m, rng, 0.1);
  ASSERT_EQ(p.size(), m.joint_count());
  const auto& driven = m.jitter_joints();
  EXPECT_EQ(driven.size(), 4u);
  for (std::size_t j = 0; j < p.size(); ++j) {
    const bool is_driven = std::find(driven.begin(), driven.end(), static_cast<int>(j)) != driven.end();
    if (!is_driven) {
      EXPECT_TRUE(p.rotations[j].isZero()) << j;
    }
  }
  Rng a(3), b(3);
  EXPECT_EQ(sample_pose_jitter(m, a, 0.1).rotations, sample_pose_jitter(m, b, 0.1).rotations);
}

TEST(PoseShapeVjp, ZeroCotangent) {
  const BodyModel& m = default_model();
  const VertexArray zero = VertexArray::Zero(static_cast<Eigen::Index>(m.vertex_count()), 3);
  const auto g = pose_shape_vjp(m, ShapeParams::zeros(), PoseParams::identity(m.joint_count()), zero);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(PoseShapeVjp, GramMatrixOracle) {
  const BodyModel& m = default_model();
  const auto g = pose_shape_vjp(m, ShapeParams::zeros(), PoseParams::identity(m.joint_count()),
                                m.shape_basis(0));
  for (std::size_t d = 0; d < kShapeDim; ++d) {
    const double gram = (m.shape_basis(d).array() * m.shape_basis(0).array()).sum();
    EXPECT_NEAR(g[d], gram, 1e-9 * std::max(1.0, std::abs(gram))) << d;
  }
  EXPECT_NEAR(g[0], m.shape_basis(0).squaredNorm(), 1e-9 * m.shape_basis(0).squaredNorm());
}

TEST(PoseShapeVjp, LinearInCotangent) {
  const BodyModel& m = default_model();
  Rng rng(2);
  const ShapeParams beta = sample_shape_uniform(rng, -2, 2);
  const PoseParams pose = sample_pose_jitter(m, rng, 0.1);
  const VertexArray c = VertexArray::Random(static_cast<Eigen::Index>(m.vertex_count()), 3);
  const auto g1 = pose_shape_vjp(m, beta, pose, c);
  const auto g2 = pose_shape_vjp(m, beta, pose, VertexArray(-2.5 * c));
  for (std::size_t d = 0; d < kShapeDim; ++d) EXPECT_NEAR(g2[d], -2.5 * g1[d], 1e-9 * (1 + std::abs(g1[d])));
}

TEST(PoseShapeVjp, MatchesFiniteDifferences) {
  const BodyModel& m = default_model();
  Rng rng(17);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const ShapeParams beta = sample_shape_uniform(rng, -3, 3);
    const PoseParams pose = sample_pose_jitter(m, rng, 0.2);
    VertexArray c(static_cast<Eigen::Index>(m.vertex_count()), 3);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = normal(rng);
    const auto g = pose_shape_vjp(m, beta, pose, c);
    const double eps = 1e-4;
    for (std::size_t d = 0; d < kShapeDim; ++d) {
      ShapeParams p = beta, q = beta;
      p[d] += eps;
      q[d] -= eps;
      const double fp = (pose_shape(m, p, pose).vertices.array() * c.array()).sum();
      const double fq = (pose_shape(m, q, pose).vertices.array() * c.array()).sum();
      const double fd = (fp - fq) / (2 * eps);
      if (std::max(std::abs(fd), std::abs(g[d])) <= 1e-8) continue;
      EXPECT_LT(std::abs(fd - g[d]) / std::max({std::abs(fd), std::abs(g[d]), 1e-8}), 1e-4)
          << "trial " << trial << " coord " << d;
    }
  }
}

TEST(PoseShapeVjp, ShapeMismatch) {
  const BodyModel& m = default_model();
  EXPECT_THROW(pose_shape_vjp(m, {}, PoseParams::identity(m.joint_count()), VertexArray::Zero(3, 3)),
               InvalidArgument);
}

TEST(ClampShape, Examples) {
  ShapeParams b;
  b[0] = 2.95 + 0.1;
  b[1] = -5.0;
  b[2] = 1.5;
  const ShapeParams c = clamp_shape(b, -3, 3);
  EXPECT_EQ(c[0], 3.0);
  EXPECT_EQ(c[1], -3.0);
  EXPECT_EQ(c[2], 1.5);
  ShapeParams inside = ShapeParams::unit(4, 0.7);
  EXPECT_EQ(clamp_shape(inside, -3, 3), inside);
  EXPECT_THROW(clamp_shape(b, 1, 1), InvalidArgument);
}

TEST(SampleShape, UniformMeanNearZero) {
  Rng rng(123);
  std::array<double, kShapeDim> mean{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const ShapeParams b = sample_shape_uniform(rng, -3, 3);
    ASSERT_TRUE(b.within(-3, 3));
    for (std::size_t d = 0; d < kShapeDim; ++d) mean[d] += b[d] / n;
  }
  for (double m : mean) EXPECT_LT(std::abs(m), 0.1);
}

TEST(SampleShape, UniformErrorsAndDeterminism) {
  Rng rng(1);
  EXPECT_THROW(sample_shape_uniform(rng, 1.0, 1.0 - 0.0), InvalidArgument);
  Rng a(9), b(9);
  EXPECT_EQ(sample_shape_uniform(a, -3, 3), sample_shape_uniform(b, -3, 3));
}

TEST(SampleShape, BallStaysWithinRadius) {
  Rng rng(4);
  const ShapeParams center = ShapeParams::zeros();
  for (int i = 0; i < 1000; ++i) EXPECT_LE(sample_shape_ball(rng, center, 0.01).norm(), 0.01);
  const ShapeParams c2 = ShapeParams::unit(2, 1.0);
  const ShapeParams tiny = sample_shape_ball(rng, c2, 1e-14);
  for (std::size_t d = 0; d < kShapeDim; ++d) EXPECT_NEAR(tiny[d], c2[d], 1e-13);
  EXPECT_THROW(sample_shape_ball(rng, center, 0.0), InvalidArgument);
}

TEST(SampleShape, HypercubeSides) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const ShapeParams b = sample_shape_hypercube(rng, ShapeParams::zeros(), 0.5);
    EXPECT_TRUE(b.within(-0.25, 0.25));
  }
  EXPECT_THROW(sample_shape_hypercube(rng, ShapeParams::zeros(), 0.0), InvalidArgument);
  Rng a(8), b(8);
  EXPECT_EQ(sample_shape_hypercube(a, ShapeParams::unit(1), 0.5),
            sample_shape_hypercube(b, ShapeParams::unit(1), 0.5));
}

TEST(ExportObj, WritesOneBasedFaces) {
  const auto dir = testing::scratch_dir();
  const BodyModel& m = default_model();
  export_mesh_obj(m.template_mesh(), dir / "t.obj");
  std::ifstream in(dir / "t.obj");
  std::string tag;
  std::size_t nv = 0, nf = 0;
  int min_index = 1 << 30;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    ls >> tag;
    if (tag == "v") ++nv;
    if (tag == "f") {
      ++nf;
      int a, b, c;
      ls >> a >> b >> c;
      min_index = std::min({min_index, a, b, c});
    }
  }
  EXPECT_EQ(nv, m.vertex_count());
  EXPECT_EQ(nf, m.faces().size());
  EXPECT_EQ(min_index, 1);
}

}  // namespace
}  // namespace bodysim
