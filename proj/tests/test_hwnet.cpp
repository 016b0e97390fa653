#include "bodysim/hwnet.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace bodysim {
namespace {

using testing::default_model;

// One trained regressor shared by the accuracy checks.
const HWTrainResult& trained() {
  static const HWTrainResult r = [] {
    Rng rng(2024);
    const auto pop = make_hw_population(default_model(), 5000, rng);
    HWTrainConfig cfg;
    cfg.holdout = 500;
    cfg.seed = 1;
    return train_hw(pop, cfg);
  }();
  return r;
}

TEST(HWnet, ZeroWeightsGiveConstant) {
  ParamSet p = HWnet::make_layout();
  p[5].values = {0.5f, -1.0f};
  const HWNormalizer norm;
  const HWnet net(norm, p);
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    const Metadata m = net.forward(sample_shape_uniform(rng, -3, 3));
    EXPECT_DOUBLE_EQ(m.height, norm.height_mean + 0.5 * norm.height_std);
    EXPECT_DOUBLE_EQ(m.weight, norm.weight_mean - norm.weight_std);
  }
}

TEST(HWnet, LayoutIsThreeDenseLayers) {
  const ParamSet p = HWnet::make_layout();
  ASSERT_EQ(p.count(), 6u);
  EXPECT_EQ(p[0].shape, (std::vector<int>{32, 10}));
  EXPECT_EQ(p[2].shape, (std::vector<int>{32, 32}));
  EXPECT_EQ(p[4].shape, (std::vector<int>{2, 32}));
  ParamSet wrong;
  wrong.add("fc1.weight", {4, 10});
  EXPECT_THROW(HWnet(HWNormalizer{}, wrong), InvalidArgument);
}

TEST(HWnet, VjpMatchesFiniteDifferences) {
  Rng rng(3);
  const HWnet net = HWnet::init(rng);
  std::normal_distribution<double> g(0, 1);
  std::size_t checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const ShapeParams beta = sample_shape_uniform(rng, -3, 3);
    const Metadata cot{g(rng), g(rng)};
    const auto an = net.vjp(beta, cot);
    const double eps = 1e-6;
    for (std::size_t d = 0; d < kShapeDim; ++d) {
      ShapeParams p = beta, q = beta;
      p[d] += eps;
      q[d] -= eps;
      if (net.activation_pattern(p) != net.activation_pattern(q)) continue;
      auto f = [&](const ShapeParams& b) {
        const Metadata m = net.forward(b);
        return cot.height * m.height + cot.weight * m.weight;
      };
      const double fd = (f(p) - f(q)) / (2 * eps);
      if (std::max(std::abs(fd), std::abs(an[d])) < 1e-8) continue;
      ++checked;
      EXPECT_LT(std::abs(fd - an[d]) / std::max(std::abs(fd), std::abs(an[d])), 1e-4)
          << "trial " << trial << " coord " << d;
    }
  }
  EXPECT_GT(checked, 150u);
}

TEST(HWnet, BatchMatchesSingleForward) {
  Rng rng(4);
  const HWnet net = HWnet::init(rng);
  MatrixXd betas(10, 3);
  std::vector<ShapeParams> bs;
  for (int j = 0; j < 3; ++j) {
    bs.push_back(sample_shape_uniform(rng, -3, 3));
    for (int d = 0; d < 10; ++d) betas(d, j) = bs.back()[static_cast<std::size_t>(d)];
  }
  const MatrixXd out = net.forward_batch(betas);
  const HWNormalizer& n = net.normalizer();
  for (int j = 0; j < 3; ++j) {
    const Metadata m = net.forward(bs[static_cast<std::size_t>(j)]);
    EXPECT_NEAR(m.height, n.height_mean + n.height_std * out(0, j), 1e-12);
    EXPECT_NEAR(m.weight, n.weight_mean + n.weight_std * out(1, j), 1e-12);
  }
  EXPECT_THROW(net.forward_batch(MatrixXd::Zero(9, 1)), InvalidArgument);
}

TEST(HWNormalizer, DescriptorRoundTrip) {
  HWNormalizer n;
  n.height_mean = 1.7123456789;
  n.weight_std = 13.25;
  EXPECT_EQ(HWNormalizer::from_descriptor(n.descriptor()), n);
  EXPECT_THROW(HWNormalizer::from_descriptor("kind=bmnet\n"), InvalidArgument);
}

TEST(HWPopulation, LabelsFromOracle) {
  Rng rng(5);
  const BodyModel& m = default_model();
  const auto pop = make_hw_population(m, 10, rng);
  ASSERT_EQ(pop.size(), 10u);
  for (const auto& s : pop) {
    EXPECT_TRUE(s.beta.within(-3, 3));
    const Metadata o = oracle_metadata(pose_shape(m, s.beta, PoseParams::identity(m.joint_count())));
    EXPECT_EQ(o, s.meta);
  }
}

TEST(TrainHw, AccuracyTargets) {
  const HWTrainReport& r = trained().report;
  EXPECT_LT(r.height_mae, 0.01);
  EXPECT_LT(r.weight_mae, 1.0);
}

TEST(TrainHw, TemplateShapeNearOracle) {
  const Metadata pred = trained().net.forward(ShapeParams::zeros());
  const Metadata truth = oracle_metadata(default_model().template_mesh());
  EXPECT_LT(std::abs(pred.height - truth.height), 0.01);
  EXPECT_LT(std::abs(pred.weight - truth.weight), 1.0);
}

TEST(TrainHw, HeightModeMonotone) {
  const HWnet& net = trained().net;
  double prev = -1.0;
  for (int i = 0; i < 50; ++i) {
    const double t = -3.0 + 6.0 * i / 49.0;
    const double h = net.forward(ShapeParams::unit(static_cast<std::size_t>(ShapeMode::kHeight), t)).height;
    EXPECT_GT(h, prev) << t;
    prev = h;
  }
}

TEST(TrainHw, MemorizesDuplicates) {
  Rng rng(6);
  const auto one = make_hw_population(default_model(), 1, rng);
  const std::vector<HWSample> pop(1000, one.front());
  HWTrainConfig cfg;
  cfg.holdout = 100;
  cfg.iterations = 500;
  const HWTrainResult r = train_hw(pop, cfg);
  EXPECT_LT(r.report.train_height_mae, 1e-3);
  EXPECT_LT(r.report.train_weight_mae, 0.1);
}

TEST(TrainHw, SeededReproducible) {
  Rng rng(7);
  const auto pop = make_hw_population(default_model(), 1200, rng);
  HWTrainConfig cfg;
  cfg.holdout = 200;
  cfg.iterations = 200;
  cfg.seed = 9;
  EXPECT_EQ(train_hw(pop, cfg).net.params(), train_hw(pop, cfg).net.params());
  cfg.seed = 10;
  EXPECT_NE(train_hw(pop, cfg).net.params().checksum(),
            train_hw(pop, HWTrainConfig{200, 200, 256, 3e-3, 9}).net.params().checksum());
}

TEST(TrainHw, Errors) {
  EXPECT_THROW(train_hw({}, HWTrainConfig{}), InvalidArgument);
  Rng rng(8);
  const auto pop = make_hw_population(default_model(), 10, rng);
  EXPECT_THROW(train_hw(pop, HWTrainConfig{}), InvalidArgument);
}

}  // namespace
}  // namespace bodysim
