#pragma once

#include "bodysim/adversary.hpp"
#include "bodysim/bmnet.hpp"
#include "bodysim/dataio.hpp"
#include "bodysim/hwnet.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bodysim {

enum class Augmentation { kNone, kRandom, kAdversarial };
std::string_view augmentation_name(Augmentation a);
Augmentation parse_augmentation(std::string_view token);  // none | random | adv

struct TrainConfig {
  BMnetArch arch;
  std::int64_t iterations = 5000;
  int batch_size = 22;
  double lr = 1e-3;
  double val_fraction = 0.1;
  double reduced_fraction = 1.0;  // share of the training split kept, in (0, 1]
  std::uint64_t seed = 0;
  std::int64_t eval_every = 250;

  Augmentation augmentation = Augmentation::kNone;
  int synthetic_epochs = 10;
  std::size_t synthetic_per_epoch = 100;
  double synthetic_lr = 1e-4;
  std::int64_t real_iterations = 500;  // final fine-tune on the real split
  double real_lr = 1e-4;

  void validate() const;
  std::string describe() const;  // key=value lines, stable order
};

struct MetricsReport {
  double tp90 = 0.0;
  double tp75 = 0.0;
  double tp50 = 0.0;
  std::array<double, kNumMeasurements> mae_mm{};
  std::size_t count = 0;
};

/// Linear interpolation at rank (n - 1) q; input order is irrelevant.
double quantile(std::span<const double> values, double q);

/// Absolute errors in mm, one row per sample.
MetricsReport metrics_from_errors(std::span<const std::array<double, kNumMeasurements>> errors_mm);

using ExamplePredictor = std::function<MeasurementVector(const Example&)>;
MetricsReport evaluate(const ExamplePredictor& predictor, std::span<const Example> examples);
MetricsReport evaluate(const BMnet& net, std::span<const Example> examples);

void write_metrics_csv(std::span<const std::pair<std::string, MetricsReport>> rows,
                       const std::filesystem::path& path);

struct TrainLogRow {
  std::int64_t iter = 0;
  double lr = 0.0;
  double train_loss = 0.0;                               // batch mean L1, meters
  std::optional<double> val_tp90;                        // mm, on evaluation steps
};

struct TrainResult {
  BMnet net;
  std::vector<TrainLogRow> log;
  double best_val_tp90 = 0.0;
  std::int64_t best_iter = 0;  // 0 means the starting weights were kept
};

void write_train_log_csv(std::span<const TrainLogRow> log, const std::filesystem::path& path);

struct DataSplit {
  std::vector<Example> train;
  std::vector<Example> val;
};

/// Seeded shuffle, optional reduction, then the last val_fraction becomes validation.
DataSplit split_train_val(std::vector<Example> examples, double val_fraction,
                          double reduced_fraction, std::uint64_t seed);

/// Network with fresh weights and the output bias set to the mean target.
BMnet init_for_training(const BMnetArch& arch, std::span<const Example> train, std::uint64_t seed);

/// L1 training with the stepped schedule; returns the best-validation weights.
TrainResult train(const BMnet& start, const DataSplit& data, const TrainConfig& config);
TrainResult train(const DataSplit& data, const TrainConfig& config);

/// Short constant-rate L1 fine-tune, keeping the best validation weights (the
/// starting weights included).
TrainResult finetune_real(const BMnet& start, const DataSplit& data, const TrainConfig& config);

/// Produces n fresh samples, possibly depending on the current weights.
using SyntheticSampler =
    std::function<std::vector<SyntheticSample>(const BMnet& current, std::size_t n, Rng& rng)>;

struct FinetuneReport {
  BMnet net;
  std::vector<TrainLogRow> log;
  std::size_t samples = 0;
  std::size_t distinct_shapes = 0;
};

/// One pass per epoch over a freshly drawn synthetic set. Throws if the sampler
/// runs short or a shape repeats across epochs.
FinetuneReport finetune_synthetic(const BMnet& start, const SyntheticSampler& sampler, int epochs,
                                  const TrainConfig& config);

std::uint64_t shape_hash(const ShapeParams& beta);
Example to_example(const SyntheticSample& sample);

struct AugmentationEnv {
  const BodyModel& model;
  const HWnet& hw;
  std::vector<ShapeParams> pool;  // shapes of the training subjects
  RenderConfig render{};
  double pose_sigma = 0.0872664625997165;  // 5 degrees
  double distance_lo = 1.68;
  double distance_hi = 1.98;
  AttackConfig attack = adam_attack();
  RandomSamplerConfig random = {RandomMode::kHypercube, 0.5, -3.0, 3.0};

  static AttackConfig adam_attack();
};

SyntheticSampler make_sampler(Augmentation kind, const AugmentationEnv& env);

struct ProtocolResult {
  BMnet net;
  TrainResult baseline;
  std::optional<FinetuneReport> synthetic;
  TrainResult real;
};

/// Phases two and three on top of a trained baseline.
ProtocolResult augment(const TrainResult& baseline, const DataSplit& data, const TrainConfig& config,
                       const SyntheticSampler* sampler);
/// Baseline, synthetic fine-tune (unless augmentation is none), real fine-tune.
ProtocolResult run_protocol(const DataSplit& data, const TrainConfig& config,
                            const SyntheticSampler* sampler);

}  // namespace bodysim
