#pragma once

#include "bodysim/bodymodel.hpp"
#include "bodysim/diffcore.hpp"
#include "bodysim/measure.hpp"

#include <array>
#include <string>
#include <vector>

namespace bodysim {

/// Target standardization baked into the regressor output.
struct HWNormalizer {
  double height_mean = 1.75;
  double height_std = 0.1;
  double weight_mean = 70.0;
  double weight_std = 15.0;
  double input_scale = 1.0 / 3.0;  // applied to beta before the first layer

  std::string descriptor() const;
  static HWNormalizer from_descriptor(std::string_view text);
  friend bool operator==(const HWNormalizer&, const HWNormalizer&) = default;
};

/// Height/weight regressor from shape coefficients: 10 -> 32 -> 32 -> 2, relu between.
class HWnet {
 public:
  static constexpr int kHidden = 32;

  HWnet(HWNormalizer norm, ParamSet params);
  static HWnet init(Rng& rng, HWNormalizer norm = {});
  static ParamSet make_layout();

  const HWNormalizer& normalizer() const { return norm_; }
  const ParamSet& params() const { return params_; }
  void set_params(ParamSet params);
  void adam_step(const ParamGrads& grads, OptimizerState& state, double lr);

  Metadata forward(const ShapeParams& beta) const;
  /// (d meta / d beta)^T cotangent, with the cotangent given per meter and per kilogram.
  std::array<double, kShapeDim> vjp(const ShapeParams& beta, const Metadata& cotangent) const;
  /// Sign pattern of every hidden pre-activation; constant on each linear piece.
  std::vector<bool> activation_pattern(const ShapeParams& beta) const;

  /// Standardized outputs (2 x B) for a batch of inputs (10 x B) and, given the
  /// output cotangent, accumulated parameter gradients.
  MatrixXd forward_batch(const MatrixXd& betas) const;
  void backward_batch(const MatrixXd& betas, const MatrixXd& d_out, ParamGrads& grads) const;

 private:
  struct Weights {
    MatrixXd w1, w2, w3;
    VectorXd b1, b2, b3;
  };
  struct Cache {
    MatrixXd x, h1, h2;
  };
  MatrixXd run(const MatrixXd& betas, Cache* cache) const;
  void refresh();

  HWNormalizer norm_;
  ParamSet params_;
  Weights w_;
};

struct HWSample {
  ShapeParams beta;
  Metadata meta;
};

/// Uniform shapes in [lo, hi], identity pose, oracle labels.
std::vector<HWSample> make_hw_population(const BodyModel& model, std::size_t count, Rng& rng,
                                         double lo = -3.0, double hi = 3.0);

struct HWTrainConfig {
  std::size_t holdout = 500;
  int iterations = 6000;
  std::size_t batch = 256;
  double lr = 3e-3;
  std::uint64_t seed = 0;
};

struct HWTrainReport {
  double height_mae = 0.0;  // held-out, meters
  double weight_mae = 0.0;  // held-out, kilograms
  double train_height_mae = 0.0;
  double train_weight_mae = 0.0;
};

struct HWTrainResult {
  HWnet net;
  HWTrainReport report;
};

HWTrainResult train_hw(const std::vector<HWSample>& population, const HWTrainConfig& config);

}  // namespace bodysim
