#include "bodysim/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace bodysim {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t ParamSet::add(std::string name, std::vector<int> shape) {
  for (const auto& a : arrays_) {
    if (a.name == name) throw InvalidArgument("ParamSet: duplicate array name " + name);
  }
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw InvalidArgument("ParamSet: nonpositive dimension in " + name);
    n *= static_cast<std::size_t>(d);
  }
  arrays_.push_back({std::move(name), std::move(shape), std::vector<float>(n, 0.0f)});
  return arrays_.size() - 1;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    if (arrays_[i].name == name) return i;
  }
  throw InvalidArgument("ParamSet: no array named " + std::string(name));
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& a : arrays_) n += a.size();
  return n;
}

bool ParamSet::all_finite() const {
  for (const auto& a : arrays_) {
    for (float v : a.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& a : arrays_) {
    mix(a.name.data(), a.name.size());
    mix(a.shape.data(), a.shape.size() * sizeof(int));
    mix(a.values.data(), a.values.size() * sizeof(float));
  }
  return h;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (arrays_.size() != other.arrays_.size()) return false;
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    if (arrays_[i].name != other.arrays_[i].name || arrays_[i].shape != other.arrays_[i].shape) {
      return false;
    }
  }
  return true;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.arrays_.size(); ++i) {
    const auto& x = a.arrays_[i].values;
    const auto& y = b.arrays_[i].values;
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

ParamGrads ParamGrads::zeros_like(const ParamSet& params) {
  ParamGrads g;
  g.arrays.reserve(params.count());
  for (const auto& a : params.arrays()) g.arrays.emplace_back(a.size(), 0.0);
  return g;
}

void ParamGrads::set_zero() {
  for (auto& a : arrays) std::fill(a.begin(), a.end(), 0.0);
}

void ParamGrads::add_scaled(const ParamGrads& other, double scale) {
  if (other.arrays.size() != arrays.size()) throw InvalidArgument("ParamGrads: layout mismatch");
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    if (other.arrays[i].size() != arrays[i].size()) {
      throw InvalidArgument("ParamGrads: layout mismatch");
    }
    for (std::size_t j = 0; j < arrays[i].size(); ++j) arrays[i][j] += scale * other.arrays[i][j];
  }
}

double ParamGrads::squared_norm() const {
  double s = 0.0;
  for (const auto& a : arrays) {
    for (double v : a) s += v * v;
  }
  return s;
}

MatrixXd to_matrix(const ParamArray& a, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * cols != a.size()) {
    throw InvalidArgument("to_matrix: " + a.name + " has the wrong size");
  }
  // Stored row-major.
  MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = a.values[static_cast<std::size_t>(r) * cols + c];
  }
  return m;
}

VectorXd to_vector(const ParamArray& a) {
  VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a.values[i];
  return v;
}

MatrixXd dense_forward(const MatrixXd& W, const VectorXd& b, const MatrixXd& X) {
  if (W.cols() != X.rows() || W.rows() != b.size()) {
    throw InvalidArgument("dense_forward: shape mismatch (W " + std::to_string(W.rows()) + "x" +
                          std::to_string(W.cols()) + ", x " + std::to_string(X.rows()) + ")");
  }
  MatrixXd Y = W * X;
  Y.colwise() += b;
  return Y;
}

DenseGrads dense_backward(const MatrixXd& W, const MatrixXd& X, const MatrixXd& dY) {
  if (W.cols() != X.rows() || dY.rows() != W.rows() || dY.cols() != X.cols()) {
    throw InvalidArgument("dense_backward: shape mismatch");
  }
  return {dY * X.transpose(), dY.rowwise().sum(), W.transpose() * dY};
}

int conv_output_size(int input, int stride) { return (input + 2 - 3) / stride + 1; }

namespace {

void check_stride(int stride) {
  if (stride != 1 && stride != 2) throw InvalidArgument("conv2d: stride must be 1 or 2");
}

RowMatrix im2col(const Tensor3& x, int stride, int out_h, int out_w) {
  RowMatrix cols(x.channels * 9, out_h * out_w);
  for (int c = 0; c < x.channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = cols.row(c * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - 1;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - 1;
            const bool in = iy >= 0 && iy < x.height && ix >= 0 && ix < x.width;
            row[oy * out_w + ox] = in ? x.at(c, iy, ix) : 0.0;
          }
        }
      }
    }
  }
  return cols;
}

}  // namespace

Tensor3 conv2d_forward(const MatrixXd& kernel, const VectorXd& bias, int stride, const Tensor3& x) {
  check_stride(stride);
  if (kernel.cols() != x.channels * 9) {
    throw InvalidArgument("conv2d: kernel expects " + std::to_string(kernel.cols() / 9) +
                          " input channels, got " + std::to_string(x.channels));
  }
  if (bias.size() != kernel.rows()) throw InvalidArgument("conv2d: bias size mismatch");
  const int oh = conv_output_size(x.height, stride);
  const int ow = conv_output_size(x.width, stride);
  const RowMatrix cols = im2col(x, stride, oh, ow);
  Tensor3 y(static_cast<int>(kernel.rows()), oh, ow);
  Eigen::Map<RowMatrix> out(y.data.data(), kernel.rows(), oh * ow);
  out.noalias() = kernel * cols;
  out.colwise() += bias;
  return y;
}

ConvGrads conv2d_backward(const MatrixXd& kernel, int stride, const Tensor3& x, const Tensor3& dy,
                          bool need_dx) {
  check_stride(stride);
  const int oh = conv_output_size(x.height, stride);
  const int ow = conv_output_size(x.width, stride);
  if (kernel.cols() != x.channels * 9 || dy.channels != kernel.rows() || dy.height != oh ||
      dy.width != ow) {
    throw InvalidArgument("conv2d_backward: shape mismatch");
  }
  const RowMatrix cols = im2col(x, stride, oh, ow);
  Eigen::Map<const RowMatrix> g(dy.data.data(), dy.channels, oh * ow);
  ConvGrads out;
  out.dkernel = g * cols.transpose();
  out.dbias = g.rowwise().sum();
  if (need_dx) {
    const RowMatrix dcols = kernel.transpose() * g;
    out.dx = Tensor3(x.channels, x.height, x.width);
    for (int c = 0; c < x.channels; ++c) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double* row = dcols.row(c * 9 + ky * 3 + kx).data();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= x.height) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= x.width) continue;
              out.dx.at(c, iy, ix) += row[oy * ow + ox];
            }
          }
        }
      }
    }
  }
  return out;
}

void relu_inplace(std::span<double> x) {
  for (double& v : x) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(std::span<const double> x, std::span<double> dy) {
  if (x.size() != dy.size()) throw InvalidArgument("relu_backward: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0)) dy[i] = 0.0;
  }
}

VectorXd global_avg_pool_forward(const Tensor3& x) {
  const std::size_t plane = static_cast<std::size_t>(x.height) * x.width;
  VectorXd y(x.channels);
  for (int c = 0; c < x.channels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += x.data[c * plane + i];
    y[c] = s / static_cast<double>(plane);
  }
  return y;
}

Tensor3 global_avg_pool_backward(const Tensor3& x_shape, const VectorXd& dy) {
  if (dy.size() != x_shape.channels) throw InvalidArgument("global_avg_pool_backward: size mismatch");
  Tensor3 dx(x_shape.channels, x_shape.height, x_shape.width);
  const std::size_t plane = static_cast<std::size_t>(x_shape.height) * x_shape.width;
  for (int c = 0; c < x_shape.channels; ++c) {
    const double g = dy[c] / static_cast<double>(plane);
    std::fill_n(dx.data.begin() + static_cast<std::ptrdiff_t>(c * plane), plane, g);
  }
  return dx;
}

namespace {

void check_lengths(std::span<const double> y, std::span<const double> t, const char* what) {
  if (y.size() != t.size() || y.empty()) {
    throw InvalidArgument(std::string(what) + ": length mismatch (" + std::to_string(y.size()) +
                          " vs " + std::to_string(t.size()) + ")");
  }
}

}  // namespace

LossResult l1_loss(std::span<const double> y, std::span<const double> t) {
  check_lengths(y, t, "l1_loss");
  const double n = static_cast<double>(y.size());
  LossResult r{0.0, std::vector<double>(y.size())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - t[i];
    r.value += std::abs(d);
    r.grad[i] = (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0) / n;
  }
  r.value /= n;
  return r;
}

LossResult l2sq_loss(std::span<const double> y, std::span<const double> t) {
  check_lengths(y, t, "l2sq_loss");
  LossResult r{0.0, std::vector<double>(y.size())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - t[i];
    r.value += d * d;
    r.grad[i] = 2.0 * d;
  }
  return r;
}

OptimizerState OptimizerState::for_params(const ParamSet& params) {
  OptimizerState s;
  for (const auto& a : params.arrays()) {
    s.m.emplace_back(a.size(), 0.0);
    s.v.emplace_back(a.size(), 0.0);
  }
  return s;
}

void adam_step(ParamSet& params, const ParamGrads& grads, OptimizerState& state, double lr,
               const AdamConfig& config) {
  if (grads.arrays.size() != params.count() || state.m.size() != params.count()) {
    throw InvalidArgument("adam_step: layout mismatch");
  }
  for (std::size_t i = 0; i < params.count(); ++i) {
    if (grads.arrays[i].size() != params[i].size() || state.m[i].size() != params[i].size()) {
      throw InvalidArgument("adam_step: size mismatch in " + params[i].name);
    }
    for (double g : grads.arrays[i]) {
      if (!std::isfinite(g)) throw NumericError("adam_step", "nonfinite gradient in " + params[i].name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params[i].values;
    const auto& g = grads.arrays[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double update = lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config.eps);
      p[j] = static_cast<float>(static_cast<double>(p[j]) - update);
    }
  }
}

VectorAdam::VectorAdam(std::size_t dim, AdamConfig config)
    : config_(config), m_(dim, 0.0), v_(dim, 0.0) {}

void VectorAdam::step(std::span<double> x, std::span<const double> grad, double lr) {
  if (x.size() != m_.size() || grad.size() != m_.size()) {
    throw InvalidArgument("VectorAdam: dimension mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t j = 0; j < x.size(); ++j) {
    m_[j] = config_.beta1 * m_[j] + (1.0 - config_.beta1) * grad[j];
    v_[j] = config_.beta2 * v_[j] + (1.0 - config_.beta2) * grad[j] * grad[j];
    x[j] -= lr * (m_[j] / c1) / (std::sqrt(v_[j] / c2) + config_.eps);
  }
}

double lr_schedule(std::int64_t step, std::int64_t total_steps, double base_lr) {
  if (total_steps <= 0) throw InvalidArgument("lr_schedule: total_steps must be > 0");
  if (step < 0 || step > total_steps) throw InvalidArgument("lr_schedule: step out of range");
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  if (frac < 0.75) return base_lr;
  if (frac < 0.88) return 0.1 * base_lr;
  return 0.01 * base_lr;
}

GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> analytic, std::span<const double> point,
                           double eps, double tol, double min_magnitude) {
  if (!(eps > 0.0)) throw InvalidArgument("grad_check: eps must be > 0");
  if (analytic.size() != point.size()) throw InvalidArgument("grad_check: size mismatch");
  GradCheckReport rep;
  rep.analytic.assign(analytic.begin(), analytic.end());
  rep.numeric.resize(point.size());
  std::vector<double> x(point.begin(), point.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + eps;
    const double fp = f(x);
    x[i] = x0 - eps;
    const double fm = f(x);
    x[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check", "nonfinite evaluation at coordinate " + std::to_string(i));
    }
    const double num = (fp - fm) / (2.0 * eps);
    rep.numeric[i] = num;
    const double a = analytic[i];
    if (std::max(std::abs(a), std::abs(num)) <= min_magnitude) continue;
    ++rep.checked;
    const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8});
    if (rel > rep.max_rel_err || rep.worst_index < 0) {
      rep.max_rel_err = rel;
      rep.worst_index = static_cast<std::ptrdiff_t>(i);
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace bodysim
