#include "bodysim/hwnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace bodysim {

std::string HWNormalizer::descriptor() const {
  std::ostringstream os;
  os.precision(17);
  os << "kind=hwnet\n"
     << "layers=10,32,32,2\n"
     << "activation=relu\n"
     << "loss=mse_standardized\n"
     << "optimizer=adam\n"
     << "height_mean=" << height_mean << "\n"
     << "height_std=" << height_std << "\n"
     << "weight_mean=" << weight_mean << "\n"
     << "weight_std=" << weight_std << "\n"
     << "input_scale=" << input_scale << "\n";
  return os.str();
}

HWNormalizer HWNormalizer::from_descriptor(std::string_view text) {
  HWNormalizer n;
  bool kind_ok = false;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "kind") {
        if (val != "hwnet") throw InvalidArgument("hwnet descriptor: kind is " + val);
        kind_ok = true;
      } else if (key == "height_mean") {
        n.height_mean = std::stod(val);
      } else if (key == "height_std") {
        n.height_std = std::stod(val);
      } else if (key == "weight_mean") {
        n.weight_mean = std::stod(val);
      } else if (key == "weight_std") {
        n.weight_std = std::stod(val);
      } else if (key == "input_scale") {
        n.input_scale = std::stod(val);
      }
    } catch (const std::logic_error&) {
      throw InvalidArgument("hwnet descriptor: bad value for " + key);
    }
  }
  if (!kind_ok) throw InvalidArgument("hwnet descriptor: missing kind");
  return n;
}

ParamSet HWnet::make_layout() {
  ParamSet p;
  p.add("fc1.weight", {kHidden, static_cast<int>(kShapeDim)});
  p.add("fc1.bias", {kHidden});
  p.add("fc2.weight", {kHidden, kHidden});
  p.add("fc2.bias", {kHidden});
  p.add("fc3.weight", {2, kHidden});
  p.add("fc3.bias", {2});
  return p;
}

HWnet::HWnet(HWNormalizer norm, ParamSet params) : norm_(norm), params_(std::move(params)) {
  if (!params_.same_layout(make_layout())) {
    throw InvalidArgument("HWnet: parameter layout must be 10 -> 32 -> 32 -> 2");
  }
  refresh();
}

HWnet HWnet::init(Rng& rng, HWNormalizer norm) {
  ParamSet p = make_layout();
  for (auto& a : p.arrays()) {
    if (a.shape.size() != 2) continue;
    const double bound = std::sqrt(6.0 / a.shape[1]);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (float& v : a.values) v = static_cast<float>(u(rng));
  }
  return HWnet(norm, std::move(p));
}

void HWnet::set_params(ParamSet params) {
  if (!params.same_layout(params_)) throw InvalidArgument("HWnet::set_params: layout mismatch");
  params_ = std::move(params);
  refresh();
}

void HWnet::adam_step(const ParamGrads& grads, OptimizerState& state, double lr) {
  bodysim::adam_step(params_, grads, state, lr);
  refresh();
}

void HWnet::refresh() {
  w_.w1 = to_matrix(params_[0], kHidden, static_cast<int>(kShapeDim));
  w_.b1 = to_vector(params_[1]);
  w_.w2 = to_matrix(params_[2], kHidden, kHidden);
  w_.b2 = to_vector(params_[3]);
  w_.w3 = to_matrix(params_[4], 2, kHidden);
  w_.b3 = to_vector(params_[5]);
}

MatrixXd HWnet::run(const MatrixXd& betas, Cache* cache) const {
  if (betas.rows() != static_cast<Eigen::Index>(kShapeDim)) {
    throw InvalidArgument("HWnet: input must have 10 rows");
  }
  const MatrixXd x = norm_.input_scale * betas;
  MatrixXd h1 = dense_forward(w_.w1, w_.b1, x).cwiseMax(0.0);
  MatrixXd h2 = dense_forward(w_.w2, w_.b2, h1).cwiseMax(0.0);
  MatrixXd out = dense_forward(w_.w3, w_.b3, h2);
  if (cache) *cache = {x, std::move(h1), std::move(h2)};
  return out;
}

std::vector<bool> HWnet::activation_pattern(const ShapeParams& beta) const {
  Cache c;
  run(Eigen::Map<const VectorXd>(beta.values.data(), kShapeDim), &c);
  std::vector<bool> pattern;
  for (const MatrixXd* h : {&c.h1, &c.h2}) {
    for (Eigen::Index i = 0; i < h->size(); ++i) pattern.push_back((*h)(i) > 0.0);
  }
  return pattern;
}

MatrixXd HWnet::forward_batch(const MatrixXd& betas) const { return run(betas, nullptr); }

void HWnet::backward_batch(const MatrixXd& betas, const MatrixXd& d_out, ParamGrads& grads) const {
  Cache c;
  run(betas, &c);
  auto add = [](std::vector<double>& dst, const MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index k = 0; k < m.cols(); ++k) dst[static_cast<std::size_t>(r * m.cols() + k)] += m(r, k);
    }
  };
  DenseGrads g3 = dense_backward(w_.w3, c.h2, d_out);
  add(grads.arrays[4], g3.dW);
  add(grads.arrays[5], g3.db);
  MatrixXd d2 = g3.dX.cwiseProduct((c.h2.array() > 0.0).cast<double>().matrix());
  DenseGrads g2 = dense_backward(w_.w2, c.h1, d2);
  add(grads.arrays[2], g2.dW);
  add(grads.arrays[3], g2.db);
  MatrixXd d1 = g2.dX.cwiseProduct((c.h1.array() > 0.0).cast<double>().matrix());
  DenseGrads g1 = dense_backward(w_.w1, c.x, d1);
  add(grads.arrays[0], g1.dW);
  add(grads.arrays[1], g1.db);
}

Metadata HWnet::forward(const ShapeParams& beta) const {
  const Eigen::Map<const VectorXd> b(beta.values.data(), kShapeDim);
  const MatrixXd z = run(b, nullptr);
  return {norm_.height_mean + norm_.height_std * z(0, 0),
          norm_.weight_mean + norm_.weight_std * z(1, 0)};
}

std::array<double, kShapeDim> HWnet::vjp(const ShapeParams& beta, const Metadata& cot) const {
  const Eigen::Map<const VectorXd> b(beta.values.data(), kShapeDim);
  Cache c;
  run(b, &c);
  MatrixXd d(2, 1);
  d << cot.height * norm_.height_std, cot.weight * norm_.weight_std;
  MatrixXd g = w_.w3.transpose() * d;
  g = g.cwiseProduct((c.h2.array() > 0.0).cast<double>().matrix());
  g = w_.w2.transpose() * g;
  g = g.cwiseProduct((c.h1.array() > 0.0).cast<double>().matrix());
  g = w_.w1.transpose() * g;
  std::array<double, kShapeDim> out{};
  for (std::size_t i = 0; i < kShapeDim; ++i) out[i] = norm_.input_scale * g(static_cast<Eigen::Index>(i), 0);
  return out;
}

std::vector<HWSample> make_hw_population(const BodyModel& model, std::size_t count, Rng& rng,
                                         double lo, double hi) {
  std::vector<HWSample> out;
  out.reserve(count);
  const PoseParams pose = PoseParams::identity(model.joint_count());
  for (std::size_t i = 0; i < count; ++i) {
    const ShapeParams b = sample_shape_uniform(rng, lo, hi);
    out.push_back({b, oracle_metadata(pose_shape(model, b, pose))});
  }
  return out;
}

namespace {

MatrixXd betas_matrix(const std::vector<HWSample>& pop, std::span<const std::size_t> idx) {
  MatrixXd m(kShapeDim, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    for (std::size_t i = 0; i < kShapeDim; ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pop[idx[j]].beta[i];
  }
  return m;
}

std::pair<double, double> mae(const HWnet& net, const std::vector<HWSample>& pop,
                              std::span<const std::size_t> idx) {
  if (idx.empty()) return {0.0, 0.0};
  double eh = 0.0;
  double ew = 0.0;
  for (std::size_t k : idx) {
    const Metadata m = net.forward(pop[k].beta);
    eh += std::abs(m.height - pop[k].meta.height);
    ew += std::abs(m.weight - pop[k].meta.weight);
  }
  return {eh / static_cast<double>(idx.size()), ew / static_cast<double>(idx.size())};
}

}  // namespace

HWTrainResult train_hw(const std::vector<HWSample>& population, const HWTrainConfig& config) {
  if (population.empty()) throw InvalidArgument("train_hw: empty population");
  if (config.holdout >= population.size()) {
    throw InvalidArgument("train_hw: holdout must be smaller than the population");
  }
  if (config.iterations < 0 || config.batch == 0) throw InvalidArgument("train_hw: bad config");
  const std::size_t n_train = population.size() - config.holdout;
  std::vector<std::size_t> train_idx(n_train);
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::vector<std::size_t> hold_idx(config.holdout);
  std::iota(hold_idx.begin(), hold_idx.end(), n_train);

  HWNormalizer norm;
  {
    double sh = 0, sw = 0, qh = 0, qw = 0;
    for (std::size_t k : train_idx) {
      sh += population[k].meta.height;
      sw += population[k].meta.weight;
    }
    norm.height_mean = sh / static_cast<double>(n_train);
    norm.weight_mean = sw / static_cast<double>(n_train);
    for (std::size_t k : train_idx) {
      qh += std::pow(population[k].meta.height - norm.height_mean, 2);
      qw += std::pow(population[k].meta.weight - norm.weight_mean, 2);
    }
    norm.height_std = std::max(std::sqrt(qh / static_cast<double>(n_train)), 1e-6);
    norm.weight_std = std::max(std::sqrt(qw / static_cast<double>(n_train)), 1e-6);
  }

  Rng rng(config.seed);
  HWnet net = HWnet::init(rng, norm);
  OptimizerState opt = OptimizerState::for_params(net.params());
  ParamGrads grads = ParamGrads::zeros_like(net.params());
  const std::size_t batch = std::min(config.batch, n_train);
  std::vector<std::size_t> order = train_idx;
  std::size_t cursor = order.size();
  for (int it = 0; it < config.iterations; ++it) {
    if (cursor + batch > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::span<const std::size_t> idx(order.data() + cursor, batch);
    cursor += batch;
    const MatrixXd x = betas_matrix(population, idx);
    MatrixXd target(2, static_cast<Eigen::Index>(batch));
    for (std::size_t j = 0; j < batch; ++j) {
      const auto& m = population[idx[j]].meta;
      target(0, static_cast<Eigen::Index>(j)) = (m.height - norm.height_mean) / norm.height_std;
      target(1, static_cast<Eigen::Index>(j)) = (m.weight - norm.weight_mean) / norm.weight_std;
    }
    const MatrixXd out = net.forward_batch(x);
    const MatrixXd d = (2.0 / static_cast<double>(batch)) * (out - target);
    grads.set_zero();
    net.backward_batch(x, d, grads);
    net.adam_step(grads, opt, lr_schedule(it, config.iterations, config.lr));
  }

  HWTrainReport rep;
  std::tie(rep.height_mae, rep.weight_mae) = mae(net, population, hold_idx);
  std::tie(rep.train_height_mae, rep.train_weight_mae) = mae(net, population, train_idx);
  return {std::move(net), rep};
}

}  // namespace bodysim
