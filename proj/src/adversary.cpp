#include "bodysim/adversary.hpp"

#include "bodysim/dataio.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace bodysim {

MeasurementVector BMnetPredictor::predict(const SilhouetteImage& frontal,
                                          const SilhouetteImage& lateral,
                                          const Metadata& meta) const {
  return net_.predict(assemble_input(net_.arch(), frontal, &lateral, meta));
}

PredictorCotangent BMnetPredictor::vjp(const SilhouetteImage& frontal,
                                       const SilhouetteImage& lateral, const Metadata& meta,
                                       const MeasurementVector& cotangent) const {
  const NetworkInput x = assemble_input(net_.arch(), frontal, &lateral, meta);
  BMnetCache cache;
  net_.forward(x, &cache);
  const Eigen::Map<const VectorXd> dy(cotangent.values.data(), kNumMeasurements);
  NetworkInput dx;
  net_.backward(cache, dy, nullptr, &dx);
  InputCotangent c = split_input_cotangent(net_.arch(), dx);
  return {std::move(c.frontal), std::move(c.lateral), c.meta};
}

AdvChain make_chain(const BodyModel& model, const MeasurementPredictor& predictor,
                    const MetadataPredictor& hw, PoseParams pose, double camera_distance,
                    RenderConfig render) {
  return AdvChain{model,
                  predictor,
                  hw,
                  std::move(pose),
                  make_camera(View::kFrontal, camera_distance),
                  make_camera(View::kLateral, camera_distance),
                  render,
                  kDefaultLossScale,
                  {}};
}

namespace {

void require_finite(double v, const char* stage, const char* what) {
  if (!std::isfinite(v)) throw NumericError(stage, std::string("nonfinite ") + what);
}

template <typename Range>
void require_finite_all(const Range& r, const char* stage, const char* what) {
  for (double v : r) require_finite(v, stage, what);
}

}  // namespace

AdvEvaluation adv_loss(const AdvChain& chain, const ShapeParams& beta, bool with_gradient) {
  if (!beta.all_finite()) throw NumericError("input", "nonfinite shape coefficients");
  AdvEvaluation ev;
  const Mesh mesh = pose_shape(chain.model, beta, chain.pose);
  require_finite_all(mesh.vertices.reshaped(), "pose_shape", "vertex");
  ev.frontal = rasterize_soft(chain.frontal, mesh, chain.render);
  ev.lateral = rasterize_soft(chain.lateral, mesh, chain.render);
  require_finite_all(ev.frontal.values, "render", "frontal pixel");
  require_finite_all(ev.lateral.values, "render", "lateral pixel");
  ev.meta = chain.hw.predict(beta);
  require_finite(ev.meta.height, "hw", "height");
  require_finite(ev.meta.weight, "hw", "weight");
  ev.predicted = chain.predictor.predict(ev.frontal, ev.lateral, ev.meta);
  require_finite_all(ev.predicted.values, "predictor", "measurement");
  ev.truth = measure_all(chain.model, mesh);
  require_finite_all(ev.truth.values, "measure", "measurement");

  const double s2 = chain.loss_scale * chain.loss_scale;
  MeasurementVector dy;
  for (std::size_t i = 0; i < kNumMeasurements; ++i) {
    const double r = ev.predicted[i] - ev.truth[i];
    ev.loss += s2 * r * r;
    dy[i] = 2.0 * s2 * r;
  }
  require_finite(ev.loss, "loss", "loss");
  if (!with_gradient) return ev;

  VertexArray vbar = VertexArray::Zero(mesh.vertices.rows(), 3);
  Metadata meta_bar{};
  if (chain.paths.silhouettes || chain.paths.metadata) {
    const PredictorCotangent pc = chain.predictor.vjp(ev.frontal, ev.lateral, ev.meta, dy);
    if (chain.paths.silhouettes) {
      vbar += rasterize_soft_vjp(chain.frontal, mesh, chain.render, pc.frontal);
      vbar += rasterize_soft_vjp(chain.lateral, mesh, chain.render, pc.lateral);
    }
    meta_bar = pc.meta;
  }
  if (chain.paths.ground_truth) {
    MeasurementVector neg;
    for (std::size_t i = 0; i < kNumMeasurements; ++i) neg[i] = -dy[i];
    vbar += measure_vjp(chain.model, mesh, neg);
  }
  ev.grad = pose_shape_vjp(chain.model, beta, chain.pose, vbar);
  if (chain.paths.metadata) {
    const auto gh = chain.hw.vjp(beta, meta_bar);
    for (std::size_t i = 0; i < kShapeDim; ++i) ev.grad[i] += gh[i];
  }
  require_finite_all(ev.grad, "gradient", "shape gradient");
  return ev;
}

void AttackConfig::validate() const {
  if (!(eta > 0.0)) throw InvalidArgument("attack: eta must be > 0");
  if (steps < 1) throw InvalidArgument("attack: steps must be >= 1");
  if (!(clamp_lo < clamp_hi)) throw InvalidArgument("attack: clamp range requires lo < hi");
  if (adam_steps < 1) throw InvalidArgument("attack: adam steps must be >= 1");
  if (!(adam_lr > 0.0)) throw InvalidArgument("attack: adam lr must be > 0");
  if (!(init_radius > 0.0)) throw InvalidArgument("attack: init radius must be > 0");
}

namespace {

double norm(const std::array<double, kShapeDim>& g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

}  // namespace

AttackTrace ascend(const Objective& objective, const ShapeParams& beta0, const AttackConfig& cfg) {
  cfg.validate();
  if (!beta0.within(cfg.clamp_lo, cfg.clamp_hi)) {
    throw InvalidArgument("ascend: initial shape lies outside the clamp range");
  }
  AttackTrace trace;
  ShapeParams beta = beta0;
  VectorAdam adam(kShapeDim);
  const int k = cfg.step_count();
  for (int t = 0;; ++t) {
    LossAndGrad lg;
    try {
      lg = objective(beta);
      if (!std::isfinite(lg.loss)) throw NumericError("loss", "nonfinite loss");
    } catch (const NumericError& e) {
      trace.aborted = true;
      trace.error = e.what();
      return trace;
    }
    trace.steps.push_back({beta, lg.loss, norm(lg.grad)});
    if (t == k) break;
    if (cfg.optimizer == AscentOptimizer::kPlain) {
      for (std::size_t i = 0; i < kShapeDim; ++i) beta[i] += cfg.eta * lg.grad[i];
    } else {
      std::array<double, kShapeDim> neg{};
      for (std::size_t i = 0; i < kShapeDim; ++i) neg[i] = -lg.grad[i];
      adam.step(beta.values, neg, cfg.adam_lr);
    }
    beta = clamp_shape(beta, cfg.clamp_lo, cfg.clamp_hi);
  }
  return trace;
}

AttackTrace ascend(const AdvChain& chain, const ShapeParams& beta0, const AttackConfig& cfg) {
  AdvEvaluation last;
  auto objective = [&](const ShapeParams& b) {
    last = adv_loss(chain, b, true);
    return LossAndGrad{last.loss, last.grad};
  };
  AttackTrace trace = ascend(objective, beta0, cfg);
  if (!trace.aborted) {
    trace.frontal = std::move(last.frontal);
    trace.lateral = std::move(last.lateral);
    trace.predicted = last.predicted;
    trace.truth = last.truth;
    trace.meta = last.meta;
    trace.bmi = bmi(last.meta);
  }
  return trace;
}

void write_trace_csv(const AttackTrace& trace, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "step,loss,grad_norm";
  for (std::size_t i = 0; i < kShapeDim; ++i) os << ",beta_" << (i + 1);
  os << "\n" << std::setprecision(17);
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    const auto& s = trace.steps[t];
    os << t << "," << s.loss << "," << s.grad_norm;
    for (double b : s.beta.values) os << "," << b;
    os << "\n";
  }
  write_file_atomic(path, os.str());
}

SyntheticSample make_sample(const SamplerContext& ctx, const ShapeParams& beta,
                            const PoseParams& pose, double camera_distance) {
  SyntheticSample s;
  s.beta = beta;
  s.pose = pose;
  s.camera_distance = camera_distance;
  const Mesh mesh = pose_shape(ctx.model, beta, pose);
  s.frontal = rasterize_hard(make_camera(View::kFrontal, camera_distance, ctx.width, ctx.height), mesh);
  s.lateral = rasterize_hard(make_camera(View::kLateral, camera_distance, ctx.width, ctx.height), mesh);
  s.meta = ctx.hw.predict(beta);
  s.truth = measure_all(ctx.model, mesh);
  return s;
}

namespace {

double draw_distance(const SamplerContext& ctx, Rng& rng) {
  if (ctx.distance_hi <= ctx.distance_lo) return ctx.distance_lo;
  return std::uniform_real_distribution<double>(ctx.distance_lo, ctx.distance_hi)(rng);
}

}  // namespace

std::vector<SyntheticSample> sample_adversarial_batch(const SamplerContext& ctx,
                                                      const MeasurementPredictor& predictor,
                                                      std::span<const ShapeParams> pool,
                                                      const AttackConfig& config, std::size_t n,
                                                      Rng& rng) {
  config.validate();
  std::vector<SyntheticSample> out;
  if (n == 0) return out;
  if (pool.empty()) throw InvalidArgument("sample_adversarial_batch: empty initialization pool");
  out.reserve(n);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = pick(rng);
    ShapeParams b0 = clamp_shape(pool[idx], config.clamp_lo, config.clamp_hi);
    if (config.init == InitMode::kBall) {
      b0 = clamp_shape(sample_shape_ball(rng, b0, config.init_radius), config.clamp_lo,
                       config.clamp_hi);
    }
    const PoseParams pose = sample_pose_jitter(ctx.model, rng, ctx.pose_sigma);
    const double dist = draw_distance(ctx, rng);
    AdvChain chain{ctx.model,
                   predictor,
                   ctx.hw,
                   pose,
                   make_camera(View::kFrontal, dist, ctx.width, ctx.height),
                   make_camera(View::kLateral, dist, ctx.width, ctx.height),
                   ctx.render,
                   ctx.loss_scale,
                   {}};
    const AttackTrace trace = ascend(chain, b0, config);
    if (trace.steps.empty()) throw NumericError("attack", trace.error);
    // An aborted attack keeps its last finite state.
    SyntheticSample s = make_sample(ctx, trace.final_beta(), pose, dist);
    s.init_index = static_cast<std::ptrdiff_t>(idx);
    s.steps = static_cast<int>(trace.steps.size()) - 1;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SyntheticSample> sample_random_batch(const SamplerContext& ctx,
                                                 std::span<const ShapeParams> pool,
                                                 const RandomSamplerConfig& config, std::size_t n,
                                                 Rng& rng) {
  if (!(config.lo < config.hi)) throw InvalidArgument("sample_random_batch: requires lo < hi");
  std::vector<SyntheticSample> out;
  if (n == 0) return out;
  if (config.mode == RandomMode::kHypercube && pool.empty()) {
    throw InvalidArgument("sample_random_batch: hypercube mode needs a nonempty pool");
  }
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ShapeParams b;
    std::ptrdiff_t idx = -1;
    if (config.mode == RandomMode::kUniform) {
      b = sample_shape_uniform(rng, config.lo, config.hi);
    } else {
      idx = static_cast<std::ptrdiff_t>(
          std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng));
      b = clamp_shape(sample_shape_hypercube(rng, pool[static_cast<std::size_t>(idx)], config.side),
                      config.lo, config.hi);
    }
    const PoseParams pose = sample_pose_jitter(ctx.model, rng, ctx.pose_sigma);
    const double dist = draw_distance(ctx, rng);
    SyntheticSample s = make_sample(ctx, b, pose, dist);
    s.init_index = idx;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<AnalysisRow> analyze_population(std::span<const SyntheticSample> samples,
                                            const MeasurementPredictor& predictor) {
  std::vector<AnalysisRow> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) {
    AnalysisRow r;
    r.beta = s.beta;
    r.meta = s.meta;
    r.bmi = bmi(s.meta);
    const MeasurementVector y = predictor.predict(s.frontal, s.lateral, s.meta);
    double sum = 0.0;
    for (std::size_t i = 0; i < kNumMeasurements; ++i) {
      r.error_mm[i] = 1000.0 * std::abs(y[i] - s.truth[i]);
      sum += r.error_mm[i];
    }
    r.mean_error_mm = sum / static_cast<double>(kNumMeasurements);
    rows.push_back(r);
  }
  return rows;
}

GroupSummary summarize(std::string group, std::span<const AnalysisRow> rows) {
  GroupSummary g{std::move(group), rows.size(), 0.0, 0.0};
  if (rows.empty()) return g;
  for (const auto& r : rows) {
    g.mean_bmi += r.bmi;
    g.mean_error_mm += r.mean_error_mm;
  }
  g.mean_bmi /= static_cast<double>(rows.size());
  g.mean_error_mm /= static_cast<double>(rows.size());
  return g;
}

std::vector<std::string> analysis_header() {
  std::vector<std::string> h;
  for (std::size_t i = 0; i < kShapeDim; ++i) h.push_back("beta_" + std::to_string(i + 1));
  h.insert(h.end(), {"height_m", "weight_kg", "bmi"});
  for (auto n : measurement_names()) h.push_back("err_" + std::string(n) + "_mm");
  h.push_back("mean_error_mm");
  return h;
}

void write_analysis_csv(std::span<const AnalysisRow> rows, const std::filesystem::path& path) {
  std::ostringstream os;
  const auto header = analysis_header();
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\n" << std::setprecision(10);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < kShapeDim; ++i) os << (i ? "," : "") << r.beta[i];
    os << "," << r.meta.height << "," << r.meta.weight << "," << r.bmi;
    for (double e : r.error_mm) os << "," << e;
    os << "," << r.mean_error_mm << "\n";
  }
  write_file_atomic(path, os.str());
}

void write_summary_csv(std::span<const GroupSummary> groups, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "group,count,mean_bmi,mean_error_mm\n" << std::setprecision(10);
  for (const auto& g : groups) {
    os << g.group << "," << g.count << "," << g.mean_bmi << "," << g.mean_error_mm << "\n";
  }
  write_file_atomic(path, os.str());
}

}  // namespace bodysim
