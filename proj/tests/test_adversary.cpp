#include "bodysim/adversary.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

namespace bodysim {
namespace {

using testing::default_model;

// Returns g(M(beta, pose)) for whatever beta the test last set.
class OraclePredictor final : public MeasurementPredictor {
 public:
  OraclePredictor(const BodyModel& m, const PoseParams& pose) : model_(m), pose_(pose) {}
  ShapeParams beta;
  MeasurementVector predict(const SilhouetteImage&, const SilhouetteImage&, const Metadata&) const override {
    return measure_all(model_, pose_shape(model_, beta, pose_));
  }
  PredictorCotangent vjp(const SilhouetteImage& f, const SilhouetteImage& l, const Metadata&,
                         const MeasurementVector&) const override {
    return {SilhouetteImage(f.width, f.height), SilhouetteImage(l.width, l.height), {}};
  }

 private:
  const BodyModel& model_;
  PoseParams pose_;
};

struct Fixture {
  Rng rng{99};
  BMnet net = BMnet::init(BMnetArch{}, rng);
  HWnet hw = HWnet::init(rng);
  BMnetPredictor predictor{net};
  HWnetPredictor hwp{hw};
};

Fixture& fx() {
  static Fixture f;
  return f;
}

PoseParams a_pose() { return PoseParams::identity(default_model().joint_count()); }

TEST(AdvLoss, PerfectPredictorGivesZero) {
  const BodyModel& m = default_model();
  Rng rng(1);
  const PoseParams pose = sample_pose_jitter(m, rng, 0.087);
  OraclePredictor oracle(m, pose);
  oracle.beta = sample_shape_uniform(rng, -2, 2);
  const AdvChain chain = make_chain(m, oracle, fx().hwp, pose);
  const AdvEvaluation ev = adv_loss(chain, oracle.beta);
  EXPECT_EQ(ev.loss, 0.0);
  for (double g : ev.grad) EXPECT_EQ(g, 0.0);
}

TEST(AdvLoss, LossIsScaledSquaredResidual) {
  const AdvChain chain = make_chain(default_model(), fx().predictor, fx().hwp, a_pose());
  const AdvEvaluation ev = adv_loss(chain, ShapeParams::unit(1, 0.5), false);
  double expected = 0.0;
  for (std::size_t i = 0; i < kNumMeasurements; ++i) {
    expected += std::pow(kDefaultLossScale * (ev.predicted[i] - ev.truth[i]), 2);
  }
  EXPECT_NEAR(ev.loss, expected, 1e-9 * expected);
  EXPECT_EQ(ev.frontal.width, 48);
  EXPECT_EQ(ev.frontal.height, 64);
}

TEST(AdvLoss, GradientMatchesFiniteDifferences) {
  // Small stencil so the piecewise-linear networks stay on one piece.
  const BodyModel& m = default_model();
  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    const PoseParams pose = sample_pose_jitter(m, rng, 0.087);
    const AdvChain chain = make_chain(m, fx().predictor, fx().hwp, pose);
    const ShapeParams beta = sample_shape_uniform(rng, -3, 3);
    const AdvEvaluation ev = adv_loss(chain, beta);
    const auto report = grad_check(
        [&](std::span<const double> p) {
          ShapeParams b;
          std::copy(p.begin(), p.end(), b.values.begin());
          return adv_loss(chain, b, false).loss;
        },
        ev.grad, beta.values, 1e-5, 1e-2, 1e-6);
    EXPECT_TRUE(report.pass) << "trial " << trial << " max_rel_err " << report.max_rel_err;
    EXPECT_GT(report.checked, 5u);
  }
}

TEST(AdvLoss, EveryGradientPathContributes) {
  const BodyModel& m = default_model();
  Rng rng(7);
  const ShapeParams beta = sample_shape_uniform(rng, -2, 2);
  AdvChain chain = make_chain(m, fx().predictor, fx().hwp, a_pose());
  const auto full = adv_loss(chain, beta).grad;
  GradientPaths variants[3];
  variants[0].metadata = false;
  variants[1].silhouettes = false;
  variants[2].ground_truth = false;
  std::array<double, kShapeDim> sum{};
  for (const auto& v : variants) {
    chain.paths = v;
    const auto g = adv_loss(chain, beta).grad;
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < kShapeDim; ++i) {
      diff += std::abs(g[i] - full[i]);
      scale += std::abs(full[i]);
    }
    EXPECT_GT(diff, 1e-6 * scale);
  }
  // The three single-path gradients add up to the full one.
  for (int only = 0; only < 3; ++only) {
    chain.paths = {only == 0, only == 1, only == 2};
    const auto g = adv_loss(chain, beta).grad;
    for (std::size_t i = 0; i < kShapeDim; ++i) sum[i] += g[i];
  }
  for (std::size_t i = 0; i < kShapeDim; ++i) EXPECT_NEAR(sum[i], full[i], 1e-8 * (1 + std::abs(full[i])));
}

TEST(AdvLoss, NonfiniteInputNamesStage) {
  const AdvChain chain = make_chain(default_model(), fx().predictor, fx().hwp, a_pose());
  ShapeParams b;
  b[0] = std::nan("");
  try {
    adv_loss(chain, b);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.stage(), "input");
  }
}

AttackConfig plain(int steps, double eta = 0.1) {
  AttackConfig c;
  c.steps = steps;
  c.eta = eta;
  return c;
}

TEST(Ascend, ConstantGradientStep) {
  const ShapeParams b0 = ShapeParams::unit(3, 0.2);
  const AttackTrace t = ascend(
      [](const ShapeParams&) {
        LossAndGrad lg;
        lg.grad[0] = 1.0;
        return lg;
      },
      b0, plain(1));
  ASSERT_EQ(t.steps.size(), 2u);
  ShapeParams expected = b0;
  expected[0] += 0.1;
  EXPECT_EQ(t.final_beta(), expected);
}

TEST(Ascend, ClampsEveryStep) {
  ShapeParams b0;
  b0[0] = 2.95;
  b0[1] = -2.95;
  const AttackTrace t = ascend(
      [](const ShapeParams&) {
        LossAndGrad lg;
        lg.grad[0] = 1.0;
        lg.grad[1] = -1.0;
        return lg;
      },
      b0, plain(10));
  ASSERT_EQ(t.steps.size(), 11u);
  EXPECT_EQ(t.steps[1].beta[0], 3.0);
  EXPECT_EQ(t.final_beta()[1], -3.0);
  for (const auto& s : t.steps) EXPECT_TRUE(s.beta.within(-3, 3));
}

TEST(Ascend, RejectsStartOutsideRangeAndBadConfig) {
  auto zero = [](const ShapeParams&) { return LossAndGrad{}; };
  EXPECT_THROW(ascend(zero, ShapeParams::unit(0, 3.5), plain(1)), InvalidArgument);
  EXPECT_THROW(ascend(zero, {}, plain(0)), InvalidArgument);
  EXPECT_THROW(ascend(zero, {}, plain(1, 0.0)), InvalidArgument);
  AttackConfig c = plain(1);
  c.clamp_lo = c.clamp_hi;
  EXPECT_THROW(ascend(zero, {}, c), InvalidArgument);
}

TEST(Ascend, NonfiniteLossAbortsWithPartialTrace) {
  int calls = 0;
  const AttackTrace t = ascend(
      [&](const ShapeParams&) {
        LossAndGrad lg;
        lg.loss = ++calls == 3 ? std::nan("") : 1.0;
        lg.grad[0] = 1.0;
        return lg;
      },
      {}, plain(10));
  EXPECT_TRUE(t.aborted);
  EXPECT_EQ(t.steps.size(), 2u);
  EXPECT_FALSE(t.error.empty());
}

TEST(Ascend, AdamClimbsConcaveObjective) {
  AttackConfig c;
  c.optimizer = AscentOptimizer::kAdam;
  c.adam_steps = 5;
  c.adam_lr = 0.1;
  const ShapeParams target = ShapeParams::unit(2, 2.0);
  const AttackTrace t = ascend(
      [&](const ShapeParams& b) {
        LossAndGrad lg;
        for (std::size_t i = 0; i < kShapeDim; ++i) {
          lg.loss -= (b[i] - target[i]) * (b[i] - target[i]);
          lg.grad[i] = -2.0 * (b[i] - target[i]);
        }
        return lg;
      },
      {}, c);
  ASSERT_EQ(t.steps.size(), 6u);
  // Adam's first steps move each active coordinate by about lr.
  EXPECT_NEAR(t.final_beta()[2], 0.5, 1e-2);
  for (std::size_t i = 1; i < t.steps.size(); ++i) EXPECT_GT(t.steps[i].loss, t.steps[i - 1].loss);
}

TEST(Ascend, RealChainLeavesWeightsUntouchedAndRaisesLoss) {
  const auto psi = fx().net.params().checksum();
  const auto phi = fx().hw.params().checksum();
  const AdvChain chain = make_chain(default_model(), fx().predictor, fx().hwp, a_pose());
  Rng rng(11);
  int improved = 0;
  const int runs = 6;
  for (int i = 0; i < runs; ++i) {
    const AttackTrace t = ascend(chain, sample_shape_ball(rng, {}, 0.01), AttackConfig{});
    ASSERT_FALSE(t.aborted) << t.error;
    ASSERT_EQ(t.steps.size(), 11u);
    for (const auto& s : t.steps) ASSERT_TRUE(s.beta.within(-3, 3));
    if (t.steps.back().loss >= t.steps.front().loss) ++improved;
    EXPECT_GT(t.bmi, 0.0);
    EXPECT_EQ(t.frontal.width, 48);
  }
  EXPECT_GE(improved, runs - 1);
  EXPECT_EQ(fx().net.params().checksum(), psi);
  EXPECT_EQ(fx().hw.params().checksum(), phi);
}

TEST(TraceCsv, HeaderAndRows) {
  AttackTrace t;
  t.steps.push_back({ShapeParams::unit(0, 0.5), 1.0, 2.0});
  t.steps.push_back({ShapeParams::unit(0, 0.6), 1.5, 2.5});
  const auto dir = testing::scratch_dir();
  write_trace_csv(t, dir / "trace.csv");
  std::ifstream in(dir / "trace.csv");
  std::string header, row;
  std::getline(in, header);
  EXPECT_EQ(header, "step,loss,grad_norm,beta_1,beta_2,beta_3,beta_4,beta_5,beta_6,beta_7,beta_8,beta_9,beta_10");
  int rows = 0;
  while (std::getline(in, row)) ++rows;
  EXPECT_EQ(rows, 2);
}

SamplerContext context() {
  SamplerContext ctx{default_model(), fx().hwp};
  ctx.pose_sigma = 0.087;
  ctx.distance_lo = 1.7;
  ctx.distance_hi = 1.9;
  return ctx;
}

TEST(SampleAdversarial, EmptyAndErrors) {
  Rng rng(1);
  const std::vector<ShapeParams> pool = {ShapeParams::zeros()};
  EXPECT_TRUE(sample_adversarial_batch(context(), fx().predictor, pool, AttackConfig{}, 0, rng).empty());
  EXPECT_THROW(sample_adversarial_batch(context(), fx().predictor, {}, AttackConfig{}, 1, rng), InvalidArgument);
}

TEST(SampleAdversarial, SeededAndLabeled) {
  const std::vector<ShapeParams> pool = {ShapeParams::zeros(), ShapeParams::unit(1, 1.0),
                                         ShapeParams::unit(4, -1.0)};
  AttackConfig cfg;
  cfg.optimizer = AscentOptimizer::kAdam;
  cfg.init = InitMode::kPool;
  Rng a(3), b(3);
  const auto s1 = sample_adversarial_batch(context(), fx().predictor, pool, cfg, 3, a);
  const auto s2 = sample_adversarial_batch(context(), fx().predictor, pool, cfg, 3, b);
  ASSERT_EQ(s1.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(s1[i].beta, s2[i].beta);
    EXPECT_EQ(s1[i].frontal, s2[i].frontal);
    EXPECT_EQ(s1[i].steps, 5);
    ASSERT_GE(s1[i].init_index, 0);
    ASSERT_LT(s1[i].init_index, 3);
    EXPECT_NE(s1[i].beta, pool[static_cast<std::size_t>(s1[i].init_index)]);
    EXPECT_TRUE(s1[i].beta.within(-3, 3));
    for (double v : s1[i].frontal.values) ASSERT_TRUE(v == 0.0 || v == 1.0);
    const Mesh mesh = pose_shape(default_model(), s1[i].beta, s1[i].pose);
    EXPECT_EQ(s1[i].truth, measure_all(default_model(), mesh));
    EXPECT_EQ(s1[i].meta, fx().hw.forward(s1[i].beta));
    EXPECT_GE(s1[i].camera_distance, 1.7);
    EXPECT_LE(s1[i].camera_distance, 1.9);
  }
}

TEST(SampleRandom, UniformAndHypercube) {
  const std::vector<ShapeParams> pool = {ShapeParams::unit(0, 1.0), ShapeParams::unit(5, -2.9)};
  Rng rng(4);
  const auto u = sample_random_batch(context(), pool, {RandomMode::kUniform, 0.5, -3, 3}, 20, rng);
  ASSERT_EQ(u.size(), 20u);
  for (const auto& s : u) {
    EXPECT_TRUE(s.beta.within(-3, 3));
    EXPECT_EQ(s.init_index, -1);
  }
  const auto h = sample_random_batch(context(), pool, {RandomMode::kHypercube, 0.5, -3, 3}, 20, rng);
  for (const auto& s : h) {
    ASSERT_GE(s.init_index, 0);
    const ShapeParams& c = pool[static_cast<std::size_t>(s.init_index)];
    for (std::size_t d = 0; d < kShapeDim; ++d) EXPECT_LE(std::abs(s.beta[d] - c[d]), 0.25 + 1e-12);
    EXPECT_TRUE(s.beta.within(-3, 3));
  }
  Rng a(8), b(8);
  const auto r1 = sample_random_batch(context(), pool, {}, 4, a);
  const auto r2 = sample_random_batch(context(), pool, {}, 4, b);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r1[i].beta, r2[i].beta);
  EXPECT_TRUE(sample_random_batch(context(), pool, {}, 0, a).empty());
  EXPECT_THROW(sample_random_batch(context(), {}, {RandomMode::kHypercube, 0.5, -3, 3}, 1, a), InvalidArgument);
}

TEST(Analysis, SchemaAndEmptyTable) {
  const auto header = analysis_header();
  EXPECT_EQ(header.size(), 10u + 2 + 1 + 14 + 1);
  EXPECT_EQ(header.front(), "beta_1");
  EXPECT_EQ(header.back(), "mean_error_mm");
  const auto dir = testing::scratch_dir();
  write_analysis_csv({}, dir / "empty.csv");
  std::ifstream in(dir / "empty.csv");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 1);
  const GroupSummary g = summarize("none", {});
  EXPECT_EQ(g.count, 0u);
}

TEST(Analysis, RowsAgreeWithPredictor) {
  Rng rng(6);
  const auto samples = sample_random_batch(context(), {}, {}, 3, rng);
  const auto rows = analyze_population(samples, fx().predictor);
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const MeasurementVector y = fx().predictor.predict(samples[i].frontal, samples[i].lateral, samples[i].meta);
    double sum = 0;
    for (std::size_t k = 0; k < kNumMeasurements; ++k) {
      EXPECT_NEAR(rows[i].error_mm[k], 1000 * std::abs(y[k] - samples[i].truth[k]), 1e-9);
      sum += rows[i].error_mm[k];
    }
    EXPECT_NEAR(rows[i].mean_error_mm, sum / 14, 1e-9);
    EXPECT_DOUBLE_EQ(rows[i].bmi, bmi(samples[i].meta));
  }
  const GroupSummary g = summarize("random", rows);
  EXPECT_NEAR(g.mean_bmi, (rows[0].bmi + rows[1].bmi + rows[2].bmi) / 3, 1e-12);
  const auto dir = testing::scratch_dir();
  write_analysis_csv(rows, dir / "rows.csv");
  std::ifstream in(dir / "rows.csv");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 27);
}

}  // namespace
}  // namespace bodysim
