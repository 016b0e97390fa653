#pragma once

#include "bodysim/bodymodel.hpp"
#include "bodysim/diffcore.hpp"
#include "bodysim/measure.hpp"
#include "bodysim/renderer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bodysim {

enum class PoolMode { kGlobalAverage, kFlatten };

struct BMnetArch {
  int view_height = 64;
  int view_width = 48;
  std::vector<int> channels = {8, 16, 32, 64};  // stride-2 3x3 conv blocks after the 3-channel input
  PoolMode pool = PoolMode::kFlatten;
  int hidden = 128;
  int outputs = static_cast<int>(kNumMeasurements);
  bool single_view = false;
  bool use_height = true;
  bool use_weight = true;
  double height_norm = 2.0;   // meters per unit in channel 1
  double weight_norm = 150.0;  // kilograms per unit in channel 2

  static constexpr int kInputChannels = 3;

  void validate() const;
  int input_width() const { return 2 * view_width; }
  // Spatial size after the conv stack.
  std::pair<int, int> feature_grid() const;
  int feature_size() const;

  std::string descriptor() const;  // key=value lines
  static BMnetArch from_descriptor(std::string_view text);

  friend bool operator==(const BMnetArch&, const BMnetArch&) = default;
};

/// 3 x H x 2W: silhouettes side by side (frontal | lateral), then constant
/// normalized height and weight planes.
using NetworkInput = Tensor3;

NetworkInput assemble_input(const BMnetArch& arch, const SilhouetteImage& frontal,
                            const SilhouetteImage* lateral, const std::optional<Metadata>& meta);

/// Cotangent of an input split back into its sources.
struct InputCotangent {
  SilhouetteImage frontal;
  SilhouetteImage lateral;
  Metadata meta;  // d/d height (per meter), d/d weight (per kilogram)
};
InputCotangent split_input_cotangent(const BMnetArch& arch, const NetworkInput& d_input);

struct BMnetCache {
  std::vector<Tensor3> activations;  // activations[0] is the input; then post-relu conv outputs
  VectorXd features;
  VectorXd hidden;  // post-relu
  VectorXd output;
};

class BMnet {
 public:
  BMnet(BMnetArch arch, ParamSet params);

  /// Fan-in scaled uniform weights, zero biases.
  static BMnet init(const BMnetArch& arch, Rng& rng);
  static ParamSet make_layout(const BMnetArch& arch);

  const BMnetArch& arch() const { return arch_; }
  const ParamSet& params() const { return params_; }
  void set_params(ParamSet params);
  void adam_step(const ParamGrads& grads, OptimizerState& state, double lr,
                 const AdamConfig& config = {});

  VectorXd forward(const NetworkInput& input, BMnetCache* cache = nullptr) const;
  MeasurementVector predict(const NetworkInput& input) const;
  /// Sign pattern of every relu unit.
  std::vector<bool> activation_pattern(const NetworkInput& input) const;

  /// Accumulates parameter gradients into dparams when given; writes the input
  /// cotangent into dinput when given.
  void backward(const BMnetCache& cache, const VectorXd& d_output, ParamGrads* dparams,
                NetworkInput* dinput) const;

 private:
  struct Weights {
    std::vector<MatrixXd> kernels;
    std::vector<VectorXd> biases;
    MatrixXd w1, w2;
    VectorXd b1, b2;
  };
  void refresh();
  void check_input(const NetworkInput& input) const;

  BMnetArch arch_;
  ParamSet params_;
  Weights w_;
};

}  // namespace bodysim
