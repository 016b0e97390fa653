#include "bodysim/bmnet.hpp"

#include <cmath>
#include <sstream>

namespace bodysim {

void BMnetArch::validate() const {
  if (view_height < 8 || view_width < 8) throw InvalidArgument("bmnet arch: view dims must be >= 8");
  if (channels.empty()) throw InvalidArgument("bmnet arch: needs at least one conv block");
  for (int c : channels) {
    if (c < 1) throw InvalidArgument("bmnet arch: channel counts must be >= 1");
  }
  if (hidden < 1) throw InvalidArgument("bmnet arch: hidden width must be >= 1");
  if (outputs != static_cast<int>(kNumMeasurements)) {
    throw InvalidArgument("bmnet arch: outputs must be " + std::to_string(kNumMeasurements));
  }
  if (!(height_norm > 0.0 && weight_norm > 0.0)) {
    throw InvalidArgument("bmnet arch: normalizers must be > 0");
  }
}

std::pair<int, int> BMnetArch::feature_grid() const {
  int h = view_height;
  int w = input_width();
  for (std::size_t i = 0; i < channels.size(); ++i) {
    h = conv_output_size(h, 2);
    w = conv_output_size(w, 2);
  }
  return {h, w};
}

int BMnetArch::feature_size() const {
  if (pool == PoolMode::kGlobalAverage) return channels.back();
  const auto [h, w] = feature_grid();
  return channels.back() * h * w;
}

std::string BMnetArch::descriptor() const {
  std::ostringstream os;
  os.precision(17);
  os << "kind=bmnet\n";
  os << "view_height=" << view_height << "\n";
  os << "view_width=" << view_width << "\n";
  os << "channels=";
  for (std::size_t i = 0; i < channels.size(); ++i) os << (i ? "," : "") << channels[i];
  os << "\n";
  os << "pool=" << (pool == PoolMode::kFlatten ? "flatten" : "global_average") << "\n";
  os << "hidden=" << hidden << "\n";
  os << "outputs=" << outputs << "\n";
  os << "single_view=" << single_view << "\n";
  os << "use_height=" << use_height << "\n";
  os << "use_weight=" << use_weight << "\n";
  os << "height_norm=" << height_norm << "\n";
  os << "weight_norm=" << weight_norm << "\n";
  return os.str();
}

BMnetArch BMnetArch::from_descriptor(std::string_view text) {
  BMnetArch a;
  bool kind_ok = false;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument("bmnet descriptor: bad line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "kind") {
        if (val != "bmnet") throw InvalidArgument("bmnet descriptor: kind is " + val);
        kind_ok = true;
      } else if (key == "view_height") {
        a.view_height = std::stoi(val);
      } else if (key == "view_width") {
        a.view_width = std::stoi(val);
      } else if (key == "channels") {
        a.channels.clear();
        std::istringstream cs(val);
        std::string tok;
        while (std::getline(cs, tok, ',')) a.channels.push_back(std::stoi(tok));
      } else if (key == "pool") {
        if (val == "flatten") {
          a.pool = PoolMode::kFlatten;
        } else if (val == "global_average") {
          a.pool = PoolMode::kGlobalAverage;
        } else {
          throw InvalidArgument("bmnet descriptor: unknown pool " + val);
        }
      } else if (key == "hidden") {
        a.hidden = std::stoi(val);
      } else if (key == "outputs") {
        a.outputs = std::stoi(val);
      } else if (key == "single_view") {
        a.single_view = std::stoi(val) != 0;
      } else if (key == "use_height") {
        a.use_height = std::stoi(val) != 0;
      } else if (key == "use_weight") {
        a.use_weight = std::stoi(val) != 0;
      } else if (key == "height_norm") {
        a.height_norm = std::stod(val);
      } else if (key == "weight_norm") {
        a.weight_norm = std::stod(val);
      }
    } catch (const std::logic_error&) {
      throw InvalidArgument("bmnet descriptor: bad value for " + key);
    }
  }
  if (!kind_ok) throw InvalidArgument("bmnet descriptor: missing kind");
  a.validate();
  return a;
}

NetworkInput assemble_input(const BMnetArch& arch, const SilhouetteImage& frontal,
                            const SilhouetteImage* lateral, const std::optional<Metadata>& meta) {
  const int H = arch.view_height;
  const int W = arch.view_width;
  if (frontal.height != H || frontal.width != W) {
    throw InvalidArgument("assemble_input: frontal silhouette is " + std::to_string(frontal.height) +
                          "x" + std::to_string(frontal.width) + ", expected " +
                          std::to_string(H) + "x" + std::to_string(W));
  }
  if (!arch.single_view) {
    if (!lateral) throw InvalidArgument("assemble_input: multi-view input needs a lateral silhouette");
    if (lateral->height != H || lateral->width != W) {
      throw InvalidArgument("assemble_input: lateral silhouette dims differ from frontal");
    }
  }
  NetworkInput x(BMnetArch::kInputChannels, H, 2 * W);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      x.at(0, r, c) = frontal.at(r, c);
      if (!arch.single_view) x.at(0, r, W + c) = lateral->at(r, c);
    }
  }
  const double h = meta && arch.use_height ? meta->height / arch.height_norm : 0.0;
  const double w = meta && arch.use_weight ? meta->weight / arch.weight_norm : 0.0;
  const std::size_t plane = static_cast<std::size_t>(H) * 2 * W;
  std::fill_n(x.data.begin() + static_cast<std::ptrdiff_t>(plane), plane, h);
  std::fill_n(x.data.begin() + static_cast<std::ptrdiff_t>(2 * plane), plane, w);
  return x;
}

InputCotangent split_input_cotangent(const BMnetArch& arch, const NetworkInput& d) {
  const int H = arch.view_height;
  const int W = arch.view_width;
  if (d.channels != BMnetArch::kInputChannels || d.height != H || d.width != 2 * W) {
    throw InvalidArgument("split_input_cotangent: shape mismatch");
  }
  InputCotangent out{SilhouetteImage(W, H), SilhouetteImage(W, H), {}};
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      out.frontal.at(r, c) = d.at(0, r, c);
      if (!arch.single_view) out.lateral.at(r, c) = d.at(0, r, W + c);
    }
  }
  const std::size_t plane = static_cast<std::size_t>(H) * 2 * W;
  double sh = 0.0;
  double sw = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    sh += d.data[plane + i];
    sw += d.data[2 * plane + i];
  }
  out.meta.height = arch.use_height ? sh / arch.height_norm : 0.0;
  out.meta.weight = arch.use_weight ? sw / arch.weight_norm : 0.0;
  return out;
}

ParamSet BMnet::make_layout(const BMnetArch& arch) {
  arch.validate();
  ParamSet p;
  int cin = BMnetArch::kInputChannels;
  for (std::size_t i = 0; i < arch.channels.size(); ++i) {
    const int cout = arch.channels[i];
    p.add("conv" + std::to_string(i) + ".weight", {cout, cin * 9});
    p.add("conv" + std::to_string(i) + ".bias", {cout});
    cin = cout;
  }
  p.add("fc1.weight", {arch.hidden, arch.feature_size()});
  p.add("fc1.bias", {arch.hidden});
  p.add("fc2.weight", {arch.outputs, arch.hidden});
  p.add("fc2.bias", {arch.outputs});
  return p;
}

BMnet::BMnet(BMnetArch arch, ParamSet params) : arch_(std::move(arch)), params_(std::move(params)) {
  if (!params_.same_layout(make_layout(arch_))) {
    throw InvalidArgument("BMnet: parameter layout does not match the architecture");
  }
  refresh();
}

BMnet BMnet::init(const BMnetArch& arch, Rng& rng) {
  ParamSet p = make_layout(arch);
  for (auto& a : p.arrays()) {
    if (a.shape.size() != 2) continue;  // biases stay zero
    const double bound = std::sqrt(6.0 / a.shape[1]);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (float& v : a.values) v = static_cast<float>(u(rng));
  }
  return BMnet(arch, std::move(p));
}

void BMnet::set_params(ParamSet params) {
  if (!params.same_layout(params_)) throw InvalidArgument("BMnet::set_params: layout mismatch");
  params_ = std::move(params);
  refresh();
}

void BMnet::adam_step(const ParamGrads& grads, OptimizerState& state, double lr,
                      const AdamConfig& config) {
  bodysim::adam_step(params_, grads, state, lr, config);
  refresh();
}

void BMnet::refresh() {
  const std::size_t L = arch_.channels.size();
  w_.kernels.resize(L);
  w_.biases.resize(L);
  for (std::size_t i = 0; i < L; ++i) {
    const auto& k = params_[2 * i];
    w_.kernels[i] = to_matrix(k, k.shape[0], k.shape[1]);
    w_.biases[i] = to_vector(params_[2 * i + 1]);
  }
  const auto& f1 = params_[2 * L];
  const auto& f2 = params_[2 * L + 2];
  w_.w1 = to_matrix(f1, f1.shape[0], f1.shape[1]);
  w_.b1 = to_vector(params_[2 * L + 1]);
  w_.w2 = to_matrix(f2, f2.shape[0], f2.shape[1]);
  w_.b2 = to_vector(params_[2 * L + 3]);
}

void BMnet::check_input(const NetworkInput& x) const {
  if (x.channels != BMnetArch::kInputChannels || x.height != arch_.view_height ||
      x.width != arch_.input_width()) {
    throw InvalidArgument("BMnet: input is " + std::to_string(x.channels) + "x" +
                          std::to_string(x.height) + "x" + std::to_string(x.width) +
                          ", expected 3x" + std::to_string(arch_.view_height) + "x" +
                          std::to_string(arch_.input_width()));
  }
}

VectorXd BMnet::forward(const NetworkInput& input, BMnetCache* cache) const {
  check_input(input);
  Tensor3 x = input;
  std::vector<Tensor3> acts;
  if (cache) acts.push_back(x);
  for (std::size_t i = 0; i < w_.kernels.size(); ++i) {
    x = conv2d_forward(w_.kernels[i], w_.biases[i], 2, x);
    relu_inplace(x.data);
    if (cache) acts.push_back(x);
  }
  VectorXd feat;
  if (arch_.pool == PoolMode::kGlobalAverage) {
    feat = global_avg_pool_forward(x);
  } else {
    feat = Eigen::Map<const VectorXd>(x.data.data(), static_cast<Eigen::Index>(x.size()));
  }
  VectorXd h = w_.w1 * feat + w_.b1;
  relu_inplace(std::span<double>(h.data(), static_cast<std::size_t>(h.size())));
  VectorXd y = w_.w2 * h + w_.b2;
  if (cache) {
    cache->activations = std::move(acts);
    cache->features = std::move(feat);
    cache->hidden = h;
    cache->output = y;
  }
  return y;
}

MeasurementVector BMnet::predict(const NetworkInput& input) const {
  const VectorXd y = forward(input);
  MeasurementVector m;
  for (std::size_t i = 0; i < kNumMeasurements; ++i) m[i] = y[static_cast<Eigen::Index>(i)];
  return m;
}

std::vector<bool> BMnet::activation_pattern(const NetworkInput& input) const {
  BMnetCache cache;
  forward(input, &cache);
  std::vector<bool> pattern;
  for (std::size_t l = 1; l < cache.activations.size(); ++l) {
    for (double v : cache.activations[l].data) pattern.push_back(v > 0.0);
  }
  for (Eigen::Index i = 0; i < cache.hidden.size(); ++i) pattern.push_back(cache.hidden[i] > 0.0);
  return pattern;
}

namespace {

void accumulate(std::vector<double>& dst, const MatrixXd& m) {
  // dst holds a row-major rows x cols array.
  const auto rows = m.rows();
  const auto cols = m.cols();
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) dst[static_cast<std::size_t>(r * cols + c)] += m(r, c);
  }
}

void accumulate(std::vector<double>& dst, const VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) dst[static_cast<std::size_t>(i)] += v[i];
}

}  // namespace

void BMnet::backward(const BMnetCache& cache, const VectorXd& d_output, ParamGrads* dparams,
                     NetworkInput* dinput) const {
  const std::size_t L = w_.kernels.size();
  if (d_output.size() != arch_.outputs) throw InvalidArgument("BMnet::backward: cotangent size");
  if (cache.activations.size() != L + 1) throw InvalidArgument("BMnet::backward: cache is empty");
  if (dparams && dparams->arrays.size() != params_.count()) {
    throw InvalidArgument("BMnet::backward: gradient layout mismatch");
  }
  if (dparams) {
    accumulate(dparams->arrays[2 * L + 2], MatrixXd(d_output * cache.hidden.transpose()));
    accumulate(dparams->arrays[2 * L + 3], d_output);
  }
  VectorXd dh = w_.w2.transpose() * d_output;
  for (Eigen::Index i = 0; i < dh.size(); ++i) {
    if (!(cache.hidden[i] > 0.0)) dh[i] = 0.0;
  }
  if (dparams) {
    accumulate(dparams->arrays[2 * L], MatrixXd(dh * cache.features.transpose()));
    accumulate(dparams->arrays[2 * L + 1], dh);
  }
  const VectorXd dfeat = w_.w1.transpose() * dh;
  const Tensor3& last = cache.activations.back();
  Tensor3 g;
  if (arch_.pool == PoolMode::kGlobalAverage) {
    g = global_avg_pool_backward(last, dfeat);
  } else {
    g = Tensor3(last.channels, last.height, last.width);
    std::copy(dfeat.data(), dfeat.data() + dfeat.size(), g.data.begin());
  }
  for (std::size_t li = L; li-- > 0;) {
    relu_backward_inplace(cache.activations[li + 1].data, g.data);
    const bool need_dx = li > 0 || dinput != nullptr;
    ConvGrads cg = conv2d_backward(w_.kernels[li], 2, cache.activations[li], g, need_dx);
    if (dparams) {
      accumulate(dparams->arrays[2 * li], cg.dkernel);
      accumulate(dparams->arrays[2 * li + 1], cg.dbias);
    }
    if (need_dx) g = std::move(cg.dx);
  }
  if (dinput) *dinput = std::move(g);
}

}  // namespace bodysim
