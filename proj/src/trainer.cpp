#include "bodysim/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace bodysim {

std::string_view augmentation_name(Augmentation a) {
  switch (a) {
    case Augmentation::kNone: return "none";
    case Augmentation::kRandom: return "random";
    case Augmentation::kAdversarial: return "adv";
  }
  return "none";
}

Augmentation parse_augmentation(std::string_view token) {
  if (token == "none") return Augmentation::kNone;
  if (token == "random") return Augmentation::kRandom;
  if (token == "adv" || token == "adversarial") return Augmentation::kAdversarial;
  throw InvalidArgument("unknown augmentation '" + std::string(token) + "' (none|random|adv)");
}

void TrainConfig::validate() const {
  arch.validate();
  if (iterations < 0) throw InvalidArgument("train config: iterations must be >= 0");
  if (batch_size < 1) throw InvalidArgument("train config: batch size must be >= 1");
  if (!(lr > 0.0) || !(synthetic_lr > 0.0) || !(real_lr > 0.0)) {
    throw InvalidArgument("train config: learning rates must be > 0");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw InvalidArgument("train config: validation fraction must lie in (0, 1)");
  }
  if (!(reduced_fraction > 0.0 && reduced_fraction <= 1.0)) {
    throw InvalidArgument("train config: reduced fraction must lie in (0, 1]");
  }
  if (eval_every < 1) throw InvalidArgument("train config: eval_every must be >= 1");
  if (synthetic_epochs < 0) throw InvalidArgument("train config: synthetic epochs must be >= 0");
  if (real_iterations < 0) throw InvalidArgument("train config: real iterations must be >= 0");
}

std::string TrainConfig::describe() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << arch.descriptor();
  os << "iterations=" << iterations << "\nbatch_size=" << batch_size << "\nlr=" << lr
     << "\nval_fraction=" << val_fraction << "\nreduced_fraction=" << reduced_fraction
     << "\nseed=" << seed << "\neval_every=" << eval_every
     << "\naugmentation=" << augmentation_name(augmentation)
     << "\nsynthetic_epochs=" << synthetic_epochs
     << "\nsynthetic_per_epoch=" << synthetic_per_epoch << "\nsynthetic_lr=" << synthetic_lr
     << "\nreal_iterations=" << real_iterations << "\nreal_lr=" << real_lr << "\n";
  return os.str();
}

// ---------------------------------------------------------------- metrics

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw InvalidArgument("quantile: empty input");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("quantile: q must lie in [0, 1]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = static_cast<double>(v.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return v[lo];
  return v[lo] + frac * (v[hi] - v[lo]);
}

MetricsReport metrics_from_errors(std::span<const std::array<double, kNumMeasurements>> errors_mm) {
  if (errors_mm.empty()) throw InvalidArgument("evaluate: no samples");
  MetricsReport r;
  r.count = errors_mm.size();
  std::vector<double> column(errors_mm.size());
  for (std::size_t m = 0; m < kNumMeasurements; ++m) {
    for (std::size_t i = 0; i < errors_mm.size(); ++i) column[i] = errors_mm[i][m];
    r.tp90 += quantile(column, 0.9);
    r.tp75 += quantile(column, 0.75);
    r.tp50 += quantile(column, 0.5);
    r.mae_mm[m] = std::accumulate(column.begin(), column.end(), 0.0) /
                  static_cast<double>(column.size());
  }
  const double n = static_cast<double>(kNumMeasurements);
  r.tp90 /= n;
  r.tp75 /= n;
  r.tp50 /= n;
  return r;
}

MetricsReport evaluate(const ExamplePredictor& predictor, std::span<const Example> examples) {
  std::vector<std::array<double, kNumMeasurements>> errors(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const MeasurementVector y = predictor(examples[i]);
    for (std::size_t m = 0; m < kNumMeasurements; ++m) {
      errors[i][m] = 1000.0 * std::abs(y[m] - examples[i].truth[m]);
    }
  }
  return metrics_from_errors(errors);
}

namespace {

NetworkInput input_for(const BMnetArch& arch, const Example& e) {
  return assemble_input(arch, e.frontal, &e.lateral, e.meta);
}

}  // namespace

MetricsReport evaluate(const BMnet& net, std::span<const Example> examples) {
  return evaluate([&net](const Example& e) { return net.predict(input_for(net.arch(), e)); },
                  examples);
}

void write_metrics_csv(std::span<const std::pair<std::string, MetricsReport>> rows,
                       const std::filesystem::path& path) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "run,count,quantile_method,tp90_mm,tp75_mm,tp50_mm";
  for (auto name : measurement_names()) os << ",mae_" << name << "_mm";
  os << "\n";
  for (const auto& [name, r] : rows) {
    os << name << "," << r.count << ",linear_rank_n_minus_1," << r.tp90 << "," << r.tp75 << ","
       << r.tp50;
    for (double v : r.mae_mm) os << "," << v;
    os << "\n";
  }
  write_file_atomic(path, os.str());
}

void write_train_log_csv(std::span<const TrainLogRow> log, const std::filesystem::path& path) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "iter,lr,train_loss,val_tp90\n";
  for (const auto& r : log) {
    os << r.iter << "," << r.lr << "," << r.train_loss << ",";
    if (r.val_tp90) os << *r.val_tp90;
    os << "\n";
  }
  write_file_atomic(path, os.str());
}

// --------------------------------------------------------------- training

namespace {

// Fisher-Yates with a plain modulus so the order is the same on every standard library.
template <typename T>
void shuffle_portable(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

class BatchOrder {
 public:
  BatchOrder(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    shuffle_portable(order_, rng_);
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      shuffle_portable(order_, rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

// Mean L1 over the batch; gradients are accumulated in batch order.
double batch_step(BMnet& net, std::span<const Example* const> batch, ParamGrads& grads,
                  OptimizerState& state, double lr) {
  grads.set_zero();
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const Example* e : batch) {
    BMnetCache cache;
    const NetworkInput x = input_for(net.arch(), *e);
    net.forward(x, &cache);
    const auto l = l1_loss(std::span<const double>(cache.output.data(), kNumMeasurements),
                           e->truth.values);
    loss += l.value * inv;
    VectorXd d = Eigen::Map<const VectorXd>(l.grad.data(), kNumMeasurements) * inv;
    net.backward(cache, d, &grads, nullptr);
  }
  if (!std::isfinite(loss)) throw NumericError("train", "nonfinite training loss");
  net.adam_step(grads, state, lr);
  return loss;
}

double val_tp90(const BMnet& net, std::span<const Example> val) { return evaluate(net, val).tp90; }

TrainResult fit(const BMnet& start, const DataSplit& data, const TrainConfig& config,
                std::int64_t iterations, double base_lr, bool scheduled, std::uint64_t seed) {
  if (data.train.empty()) throw InvalidArgument("train: empty training set");
  if (data.val.empty()) throw InvalidArgument("train: empty validation set");
  if (!(start.arch() == config.arch)) throw InvalidArgument("train: network/config arch mismatch");
  BMnet net = start;
  TrainResult result{start, {}, val_tp90(start, data.val), 0};
  result.log.push_back({0, scheduled && iterations > 0 ? lr_schedule(0, iterations, base_lr) : base_lr,
                        std::numeric_limits<double>::quiet_NaN(), result.best_val_tp90});
  if (iterations == 0) return result;

  OptimizerState state = OptimizerState::for_params(net.params());
  ParamGrads grads = ParamGrads::zeros_like(net.params());
  BatchOrder order(data.train.size(), seed);
  std::vector<const Example*> batch(static_cast<std::size_t>(config.batch_size));
  for (std::int64_t it = 1; it <= iterations; ++it) {
    const double lr = scheduled ? lr_schedule(it - 1, iterations, base_lr) : base_lr;
    for (auto& p : batch) p = &data.train[order.next()];
    TrainLogRow row{it, lr, batch_step(net, batch, grads, state, lr), std::nullopt};
    if (it % config.eval_every == 0 || it == iterations) {
      const double v = val_tp90(net, data.val);
      row.val_tp90 = v;
      if (v < result.best_val_tp90) {
        result.best_val_tp90 = v;
        result.best_iter = it;
        result.net = net;
      }
    }
    result.log.push_back(row);
  }
  return result;
}

}  // namespace

DataSplit split_train_val(std::vector<Example> examples, double val_fraction,
                          double reduced_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw InvalidArgument("split: validation fraction must lie in (0, 1)");
  }
  if (!(reduced_fraction > 0.0 && reduced_fraction <= 1.0)) {
    throw InvalidArgument("split: reduced fraction must lie in (0, 1]");
  }
  Rng rng(mix_seed(seed, 101));
  shuffle_portable(examples, rng);
  const auto keep = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::llround(reduced_fraction * static_cast<double>(examples.size()))));
  if (examples.size() < keep) throw InvalidArgument("split: need at least two examples");
  examples.resize(keep);
  const auto nval = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(keep))), 1, keep - 1);
  DataSplit out;
  out.val.assign(std::make_move_iterator(examples.end() - static_cast<std::ptrdiff_t>(nval)),
                 std::make_move_iterator(examples.end()));
  examples.resize(keep - nval);
  out.train = std::move(examples);
  return out;
}

BMnet init_for_training(const BMnetArch& arch, std::span<const Example> train, std::uint64_t seed) {
  if (train.empty()) throw InvalidArgument("train: empty training set");
  Rng rng(mix_seed(seed, 102));
  BMnet net = BMnet::init(arch, rng);
  ParamSet p = net.params();
  auto& bias = p[p.index_of("fc2.bias")].values;
  for (std::size_t m = 0; m < kNumMeasurements; ++m) {
    double s = 0.0;
    for (const auto& e : train) s += e.truth[m];
    bias[m] = static_cast<float>(s / static_cast<double>(train.size()));
  }
  net.set_params(std::move(p));
  return net;
}

TrainResult train(const BMnet& start, const DataSplit& data, const TrainConfig& config) {
  config.validate();
  return fit(start, data, config, config.iterations, config.lr, true, mix_seed(config.seed, 103));
}

TrainResult train(const DataSplit& data, const TrainConfig& config) {
  config.validate();
  return train(init_for_training(config.arch, data.train, config.seed), data, config);
}

TrainResult finetune_real(const BMnet& start, const DataSplit& data, const TrainConfig& config) {
  config.validate();
  return fit(start, data, config, config.real_iterations, config.real_lr, false,
             mix_seed(config.seed, 104));
}

std::uint64_t shape_hash(const ShapeParams& beta) {
  std::uint64_t h = 1469598103934665603ull;
  unsigned char bytes[sizeof(double) * kShapeDim];
  std::memcpy(bytes, beta.values.data(), sizeof(bytes));
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

Example to_example(const SyntheticSample& s) {
  return {s.frontal, s.lateral, s.meta, s.truth, s.beta};
}

FinetuneReport finetune_synthetic(const BMnet& start, const SyntheticSampler& sampler, int epochs,
                                  const TrainConfig& config) {
  config.validate();
  if (epochs < 0) throw InvalidArgument("finetune_synthetic: epochs must be >= 0");
  FinetuneReport rep{start, {}, 0, 0};
  if (epochs == 0 || config.synthetic_per_epoch == 0) return rep;
  if (!sampler) throw InvalidArgument("finetune_synthetic: no sampler");

  Rng rng(mix_seed(config.seed, 105));
  OptimizerState state = OptimizerState::for_params(rep.net.params());
  ParamGrads grads = ParamGrads::zeros_like(rep.net.params());
  std::unordered_set<std::uint64_t> seen;
  std::int64_t it = 0;
  const auto B = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<SyntheticSample> drawn = sampler(rep.net, config.synthetic_per_epoch, rng);
    if (drawn.size() < config.synthetic_per_epoch) {
      throw Error("finetune_synthetic: sampler exhausted after " + std::to_string(drawn.size()) +
                  " of " + std::to_string(config.synthetic_per_epoch) + " samples");
    }
    std::vector<Example> set;
    set.reserve(drawn.size());
    for (const auto& s : drawn) {
      if (!seen.insert(shape_hash(s.beta)).second) {
        throw Error("finetune_synthetic: synthetic shape repeated in epoch " + std::to_string(epoch));
      }
      set.push_back(to_example(s));
    }
    rep.samples += set.size();
    std::vector<const Example*> order;
    for (const auto& e : set) order.push_back(&e);
    shuffle_portable(order, rng);
    for (std::size_t i = 0; i < order.size(); i += B) {
      const std::size_t n = std::min(B, order.size() - i);
      const double loss = batch_step(rep.net, std::span(order).subspan(i, n), grads, state,
                                     config.synthetic_lr);
      rep.log.push_back({++it, config.synthetic_lr, loss, std::nullopt});
    }
  }
  rep.distinct_shapes = seen.size();
  return rep;
}

AttackConfig AugmentationEnv::adam_attack() {
  AttackConfig a;
  a.optimizer = AscentOptimizer::kAdam;
  a.adam_steps = 5;
  a.adam_lr = 0.1;
  a.init = InitMode::kPool;
  return a;
}

SyntheticSampler make_sampler(Augmentation kind, const AugmentationEnv& env) {
  auto shared = std::make_shared<const AugmentationEnv>(env);
  switch (kind) {
    case Augmentation::kNone:
      throw InvalidArgument("make_sampler: augmentation 'none' has no sampler");
    case Augmentation::kRandom:
      return [shared](const BMnet&, std::size_t n, Rng& rng) {
        const HWnetPredictor h(shared->hw);
        const SamplerContext ctx{shared->model, h, shared->render, shared->pose_sigma,
                                 shared->distance_lo, shared->distance_hi};
        return sample_random_batch(ctx, shared->pool, shared->random, n, rng);
      };
    case Augmentation::kAdversarial:
      return [shared](const BMnet& net, std::size_t n, Rng& rng) {
        const HWnetPredictor h(shared->hw);
        const BMnetPredictor f(net);
        const SamplerContext ctx{shared->model, h, shared->render, shared->pose_sigma,
                                 shared->distance_lo, shared->distance_hi};
        return sample_adversarial_batch(ctx, f, shared->pool, shared->attack, n, rng);
      };
  }
  throw InvalidArgument("make_sampler: unknown augmentation");
}

ProtocolResult augment(const TrainResult& baseline, const DataSplit& data, const TrainConfig& config,
                       const SyntheticSampler* sampler) {
  config.validate();
  ProtocolResult out{baseline.net, baseline, std::nullopt, baseline};
  const BMnet* start = &baseline.net;
  if (config.augmentation != Augmentation::kNone) {
    if (!sampler || !*sampler) throw InvalidArgument("augment: augmentation requires a sampler");
    out.synthetic = finetune_synthetic(baseline.net, *sampler, config.synthetic_epochs, config);
    start = &out.synthetic->net;
  }
  out.real = finetune_real(*start, data, config);
  out.net = out.real.net;
  return out;
}

ProtocolResult run_protocol(const DataSplit& data, const TrainConfig& config,
                            const SyntheticSampler* sampler) {
  return augment(train(data, config), data, config, sampler);
}

}  // namespace bodysim
