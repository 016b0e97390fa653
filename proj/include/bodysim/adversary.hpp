#pragma once

#include "bodysim/bmnet.hpp"
#include "bodysim/bodymodel.hpp"
#include "bodysim/hwnet.hpp"
#include "bodysim/measure.hpp"
#include "bodysim/renderer.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace bodysim {

struct PredictorCotangent {
  SilhouetteImage frontal;
  SilhouetteImage lateral;
  Metadata meta;
};

/// Measurement regressor as seen by the attack: silhouettes and metadata in,
/// 14 measurements out, with a reverse pass to its inputs.
class MeasurementPredictor {
 public:
  virtual ~MeasurementPredictor() = default;
  virtual MeasurementVector predict(const SilhouetteImage& frontal, const SilhouetteImage& lateral,
                                    const Metadata& meta) const = 0;
  virtual PredictorCotangent vjp(const SilhouetteImage& frontal, const SilhouetteImage& lateral,
                                 const Metadata& meta, const MeasurementVector& cotangent) const = 0;
};

class BMnetPredictor final : public MeasurementPredictor {
 public:
  explicit BMnetPredictor(const BMnet& net) : net_(net) {}
  MeasurementVector predict(const SilhouetteImage& frontal, const SilhouetteImage& lateral,
                            const Metadata& meta) const override;
  PredictorCotangent vjp(const SilhouetteImage& frontal, const SilhouetteImage& lateral,
                         const Metadata& meta, const MeasurementVector& cotangent) const override;

 private:
  const BMnet& net_;
};

/// Shape coefficients to (height, weight).
class MetadataPredictor {
 public:
  virtual ~MetadataPredictor() = default;
  virtual Metadata predict(const ShapeParams& beta) const = 0;
  virtual std::array<double, kShapeDim> vjp(const ShapeParams& beta,
                                            const Metadata& cotangent) const = 0;
};

class HWnetPredictor final : public MetadataPredictor {
 public:
  explicit HWnetPredictor(const HWnet& net) : net_(net) {}
  Metadata predict(const ShapeParams& beta) const override { return net_.forward(beta); }
  std::array<double, kShapeDim> vjp(const ShapeParams& beta, const Metadata& cot) const override {
    return net_.vjp(beta, cot);
  }

 private:
  const HWnet& net_;
};

/// Which dependencies on beta the gradient follows.
struct GradientPaths {
  bool silhouettes = true;
  bool metadata = true;
  bool ground_truth = true;
};

// Measurements are scaled by this factor (centimeters) before the squared error.
inline constexpr double kDefaultLossScale = 100.0;

struct AdvChain {
  const BodyModel& model;
  const MeasurementPredictor& predictor;
  const MetadataPredictor& hw;
  PoseParams pose;
  Camera frontal;
  Camera lateral;
  RenderConfig render{};
  double loss_scale = kDefaultLossScale;
  GradientPaths paths;
};

/// Default frontal and lateral cameras at the given distance.
AdvChain make_chain(const BodyModel& model, const MeasurementPredictor& predictor,
                    const MetadataPredictor& hw, PoseParams pose,
                    double camera_distance = kDefaultCameraDistance, RenderConfig render = {});

struct AdvEvaluation {
  double loss = 0.0;
  std::array<double, kShapeDim> grad{};
  MeasurementVector predicted;
  MeasurementVector truth;
  Metadata meta;
  SilhouetteImage frontal;
  SilhouetteImage lateral;
};

/// loss = || s (f(R_f(M), R_l(M), h(beta)) - g(M)) ||^2 with M = M(beta, pose).
AdvEvaluation adv_loss(const AdvChain& chain, const ShapeParams& beta, bool with_gradient = true);

enum class AscentOptimizer { kPlain, kAdam };
enum class InitMode { kBall, kPool, kGiven };

struct AttackConfig {
  double eta = 0.1;
  int steps = 10;
  double clamp_lo = -3.0;
  double clamp_hi = 3.0;
  AscentOptimizer optimizer = AscentOptimizer::kPlain;
  int adam_steps = 5;
  double adam_lr = 0.1;
  InitMode init = InitMode::kBall;
  double init_radius = 0.01;

  void validate() const;
  int step_count() const { return optimizer == AscentOptimizer::kAdam ? adam_steps : steps; }
};

struct TraceStep {
  ShapeParams beta;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct AttackTrace {
  std::vector<TraceStep> steps;
  bool aborted = false;
  std::string error;
  // Outputs at the final state (filled by the chain overload).
  SilhouetteImage frontal;
  SilhouetteImage lateral;
  MeasurementVector predicted;
  MeasurementVector truth;
  Metadata meta;
  double bmi = 0.0;

  const ShapeParams& final_beta() const { return steps.back().beta; }
};

struct LossAndGrad {
  double loss = 0.0;
  std::array<double, kShapeDim> grad{};
};
using Objective = std::function<LossAndGrad(const ShapeParams&)>;

/// Projected ascent; the clamp is applied after every step.
AttackTrace ascend(const Objective& objective, const ShapeParams& beta0, const AttackConfig& config);
AttackTrace ascend(const AdvChain& chain, const ShapeParams& beta0, const AttackConfig& config);

void write_trace_csv(const AttackTrace& trace, const std::filesystem::path& path);

struct SyntheticSample {
  ShapeParams beta;
  PoseParams pose;
  double camera_distance = kDefaultCameraDistance;
  SilhouetteImage frontal;
  SilhouetteImage lateral;
  Metadata meta;            // from the height/weight regressor
  MeasurementVector truth;  // g(M(beta, pose))
  std::ptrdiff_t init_index = -1;
  int steps = 0;
};

/// Rendering and labeling environment shared by the samplers.
struct SamplerContext {
  const BodyModel& model;
  const MetadataPredictor& hw;
  RenderConfig render{};
  double pose_sigma = 0.0;  // radians; 0 keeps the A-pose
  double distance_lo = kDefaultCameraDistance;
  double distance_hi = kDefaultCameraDistance;
  int width = 48;
  int height = 64;
  double loss_scale = kDefaultLossScale;
};

/// Hard silhouettes and labels for a given shape, pose and camera distance.
SyntheticSample make_sample(const SamplerContext& ctx, const ShapeParams& beta,
                            const PoseParams& pose, double camera_distance);

std::vector<SyntheticSample> sample_adversarial_batch(const SamplerContext& ctx,
                                                      const MeasurementPredictor& predictor,
                                                      std::span<const ShapeParams> pool,
                                                      const AttackConfig& config, std::size_t n,
                                                      Rng& rng);

enum class RandomMode { kUniform, kHypercube };

struct RandomSamplerConfig {
  RandomMode mode = RandomMode::kUniform;
  double side = 0.5;
  double lo = -3.0;
  double hi = 3.0;
};

std::vector<SyntheticSample> sample_random_batch(const SamplerContext& ctx,
                                                 std::span<const ShapeParams> pool,
                                                 const RandomSamplerConfig& config, std::size_t n,
                                                 Rng& rng);

struct AnalysisRow {
  ShapeParams beta;
  Metadata meta;
  double bmi = 0.0;
  std::array<double, kNumMeasurements> error_mm{};
  double mean_error_mm = 0.0;
};

struct GroupSummary {
  std::string group;
  std::size_t count = 0;
  double mean_bmi = 0.0;
  double mean_error_mm = 0.0;
};

std::vector<AnalysisRow> analyze_population(std::span<const SyntheticSample> samples,
                                            const MeasurementPredictor& predictor);
GroupSummary summarize(std::string group, std::span<const AnalysisRow> rows);

std::vector<std::string> analysis_header();
void write_analysis_csv(std::span<const AnalysisRow> rows, const std::filesystem::path& path);
void write_summary_csv(std::span<const GroupSummary> groups, const std::filesystem::path& path);

}  // namespace bodysim
