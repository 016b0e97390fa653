#pragma once

#include "bodysim/types.hpp"

#include <Eigen/Core>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace bodysim {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One named parameter array; shape is fixed at creation.
struct ParamArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
};

/// Ordered collection of named float32 arrays.
class ParamSet {
 public:
  std::size_t add(std::string name, std::vector<int> shape);
  std::size_t index_of(std::string_view name) const;  // throws if absent

  std::size_t count() const { return arrays_.size(); }
  ParamArray& operator[](std::size_t i) { return arrays_[i]; }
  const ParamArray& operator[](std::size_t i) const { return arrays_[i]; }
  std::span<ParamArray> arrays() { return arrays_; }
  std::span<const ParamArray> arrays() const { return arrays_; }

  std::size_t total_size() const;
  bool all_finite() const;
  // FNV-1a over names, shapes and value bytes.
  std::uint64_t checksum() const;
  bool same_layout(const ParamSet& other) const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<ParamArray> arrays_;
};

/// Gradient buffers matching a ParamSet layout, in double precision.
struct ParamGrads {
  std::vector<std::vector<double>> arrays;

  static ParamGrads zeros_like(const ParamSet& params);
  void set_zero();
  void add_scaled(const ParamGrads& other, double scale);
  double squared_norm() const;
};

/// Copies a parameter array into a column-major double matrix of the given shape.
MatrixXd to_matrix(const ParamArray& a, int rows, int cols);
VectorXd to_vector(const ParamArray& a);

// Dense layer over a batch stored column-per-sample: Y = W X + b.
MatrixXd dense_forward(const MatrixXd& W, const VectorXd& b, const MatrixXd& X);

struct DenseGrads {
  MatrixXd dW;
  VectorXd db;
  MatrixXd dX;
};
DenseGrads dense_backward(const MatrixXd& W, const MatrixXd& X, const MatrixXd& dY);

/// Channel-major (C x H x W) feature map.
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t size() const { return data.size(); }
};

int conv_output_size(int input, int stride);

/// 3x3 cross-correlation with zero padding 1. kernel is Cout x (Cin * 9), laid out
/// as [cin][ky][kx] along columns.
Tensor3 conv2d_forward(const MatrixXd& kernel, const VectorXd& bias, int stride, const Tensor3& x);

struct ConvGrads {
  MatrixXd dkernel;
  VectorXd dbias;
  Tensor3 dx;  // empty when not requested
};
ConvGrads conv2d_backward(const MatrixXd& kernel, int stride, const Tensor3& x, const Tensor3& dy,
                          bool need_dx);

void relu_inplace(std::span<double> x);
// dy where x > 0, else 0.
void relu_backward_inplace(std::span<const double> x, std::span<double> dy);

VectorXd global_avg_pool_forward(const Tensor3& x);
Tensor3 global_avg_pool_backward(const Tensor3& x_shape, const VectorXd& dy);

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;
};

// mean |y - t|
LossResult l1_loss(std::span<const double> y, std::span<const double> t);
// sum (y - t)^2
LossResult l2sq_loss(std::span<const double> y, std::span<const double> t);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;

  static OptimizerState for_params(const ParamSet& params);
};

void adam_step(ParamSet& params, const ParamGrads& grads, OptimizerState& state, double lr,
               const AdamConfig& config = {});

/// Adam over a small double vector (used by the shape-space attack).
class VectorAdam {
 public:
  explicit VectorAdam(std::size_t dim, AdamConfig config = {});
  // Descends: x -= lr * mhat / (sqrt(vhat) + eps).
  void step(std::span<double> x, std::span<const double> grad, double lr);
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

/// base before 75% of training, 0.1 * base until 88%, 0.01 * base after.
double lr_schedule(std::int64_t step, std::int64_t total_steps, double base_lr);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::ptrdiff_t worst_index = -1;
  bool pass = true;
  std::size_t checked = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Central differences per coordinate; coordinates whose analytic and numeric
/// magnitudes are both below min_magnitude are skipped.
GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> analytic, std::span<const double> point,
                           double eps, double tol, double min_magnitude = 0.0);

}  // namespace bodysim
