#include "bodysim/cli.hpp"

#include "bodysim/adversary.hpp"
#include "bodysim/dataio.hpp"
#include "bodysim/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>

namespace bodysim {
namespace {

using nlohmann::ordered_json;

struct Common {
  std::uint64_t seed = 0;
  int workers = 1;
  std::string template_path;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--workers", c.workers, "Worker threads cap")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--template", c.template_path, "Body template spec (key=value file)");
  auto* o = cmd->add_option("--out", c.out, "Output directory");
  if (out_required) o->required();
}

BodyModel load_model(const Common& c) {
  return build_template(c.template_path.empty() ? TemplateSpec{} : TemplateSpec::load(c.template_path));
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// Prints the reproducibility header and, with an output directory, writes the run manifest.
void record_run(std::ostream& out, std::string_view command, const Common& c, ordered_json config) {
  config["seed"] = c.seed;
  config["workers"] = c.workers;
  config["template"] = c.template_path;
  const std::string hash = hex64(fnv1a(config.dump()));
  out << "# bodysim " << kVersion << " command=" << command << " seed=" << c.seed
      << " config_hash=" << hash << "\n";
  if (c.out.empty()) return;
  std::filesystem::create_directories(c.out);
  ordered_json manifest;
  manifest["tool"] = "bodysim";
  manifest["version"] = std::string(kVersion);
  manifest["command"] = std::string(command);
  manifest["seed"] = c.seed;
  manifest["config_hash"] = hash;
  manifest["config"] = std::move(config);
  write_file_atomic(std::filesystem::path(c.out) / "run_manifest.json", manifest.dump(2) + "\n");
}

ShapeParams parse_beta(const std::vector<double>& v) {
  if (v.size() > kShapeDim) throw InvalidArgument("--beta takes at most 10 values");
  ShapeParams b;
  std::copy(v.begin(), v.end(), b.values.begin());
  if (!b.all_finite()) throw InvalidArgument("--beta values must be finite");
  return b;
}

std::vector<double> beta_json(const ShapeParams& b) { return {b.values.begin(), b.values.end()}; }

double deg(double d) { return d * std::numbers::pi / 180.0; }

Mesh load_obj_vertices(const BodyModel& model, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh " + path.string());
  std::vector<Vec3> pts;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag != "v") continue;
    Vec3 p;
    if (!(ls >> p.x() >> p.y() >> p.z())) throw IoError("malformed vertex line in " + path.string());
    pts.push_back(p);
  }
  if (pts.size() != model.vertex_count()) {
    throw InvalidArgument("mesh has " + std::to_string(pts.size()) + " vertices, model has " +
                          std::to_string(model.vertex_count()));
  }
  Mesh m{VertexArray(static_cast<Eigen::Index>(pts.size()), 3), model.shared_faces()};
  for (std::size_t i = 0; i < pts.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = pts[i];
  return m;
}

std::vector<ShapeParams> pool_from(const Dataset& ds) {
  std::vector<ShapeParams> pool;
  for (const Sample* s : ds.split(Split::kTrain)) {
    if (s->provenance) pool.push_back(s->provenance->beta);
  }
  if (pool.empty()) throw InvalidArgument("dataset has no training shapes to initialize from");
  return pool;
}

Dataset open_dataset(const std::string& dir) {
  return load_manifest(std::filesystem::path(dir) / kManifestName);
}

// ------------------------------------------------------------------ gen
struct GenOpts {
  Common c;
  std::size_t train = 2000, test_a = 400, test_b = 400;
  std::string hw;
};

void run_gen(const GenOpts& o, std::ostream& out) {
  const BodyModel model = load_model(o.c);
  PopulationSpec spec = PopulationSpec::desk_default(o.train, o.test_a, o.test_b);
  spec.seed = o.c.seed;
  spec.workers = o.c.workers;
  ordered_json cfg{{"train", o.train}, {"test_a", o.test_a}, {"test_b", o.test_b}, {"hw", o.hw}};
  record_run(out, "gen", o.c, cfg);
  std::optional<HWnet> hw;
  if (!o.hw.empty()) hw = load_hwnet(o.hw);
  const Dataset ds = generate_population(model, spec, o.c.out, hw ? &*hw : nullptr);
  out << "wrote " << ds.samples.size() << " subjects to " << o.c.out << "\n";
}

// --------------------------------------------------------------- render
struct RenderOpts {
  Common c;
  std::vector<double> beta;
  double pose_sigma_deg = 0.0;
  double distance = kDefaultCameraDistance;
  bool soft = false;
  double sigma = 1e-4;
};

void run_render(const RenderOpts& o, std::ostream& out) {
  const BodyModel model = load_model(o.c);
  const ShapeParams beta = parse_beta(o.beta);
  record_run(out, "render", o.c,
             {{"beta", beta_json(beta)}, {"pose_sigma_deg", o.pose_sigma_deg},
              {"distance", o.distance}, {"soft", o.soft}, {"sigma", o.sigma}});
  Rng rng(mix_seed(o.c.seed, 1));
  const PoseParams pose = sample_pose_jitter(model, rng, deg(o.pose_sigma_deg));
  const Mesh mesh = pose_shape(model, beta, pose);
  const std::filesystem::path dir(o.c.out);
  RenderConfig rc;
  rc.sigma = o.sigma;
  rc.workers = o.c.workers;
  for (View v : {View::kFrontal, View::kLateral}) {
    const Camera cam = make_camera(v, o.distance);
    const std::string name = v == View::kFrontal ? "frontal" : "lateral";
    save_silhouette(rasterize_hard(cam, mesh), dir / (name + ".pgm"));
    if (o.soft) save_float_image(rasterize_soft(cam, mesh, rc), dir / (name + "_soft.absf"));
  }
  export_mesh_obj(mesh, dir / "mesh.obj");
  out << "wrote silhouettes and mesh to " << dir.string() << "\n";
}

// -------------------------------------------------------------- measure
struct MeasureOpts {
  Common c;
  std::vector<double> beta;
  std::string mesh;
  double pose_sigma_deg = 0.0;
};

void run_measure(const MeasureOpts& o, std::ostream& out) {
  const BodyModel model = load_model(o.c);
  record_run(out, "measure", o.c,
             {{"beta", o.beta}, {"mesh", o.mesh}, {"pose_sigma_deg", o.pose_sigma_deg}});
  Mesh mesh;
  if (!o.mesh.empty()) {
    mesh = load_obj_vertices(model, o.mesh);
  } else {
    Rng rng(mix_seed(o.c.seed, 1));
    mesh = pose_shape(model, parse_beta(o.beta), sample_pose_jitter(model, rng, deg(o.pose_sigma_deg)));
  }
  const MeasurementVector m = measure_all(model, mesh);
  const Metadata meta = oracle_metadata(mesh);
  std::ostringstream os;
  os << std::setprecision(12) << "name,value\n";
  for (std::size_t i = 0; i < kNumMeasurements; ++i) os << measurement_names()[i] << "," << m[i] << "\n";
  os << "height," << meta.height << "\nweight," << meta.weight << "\nbmi," << bmi(meta) << "\n";
  write_file_atomic(std::filesystem::path(o.c.out) / "measurements.csv", os.str());
  out << os.str();
}

// ------------------------------------------------------------- train-hw
struct TrainHwOpts {
  Common c;
  std::size_t samples = 5000;
  HWTrainConfig cfg;
};

void run_train_hw(TrainHwOpts o, std::ostream& out) {
  o.cfg.seed = o.c.seed;
  const BodyModel model = load_model(o.c);
  record_run(out, "train-hw", o.c,
             {{"samples", o.samples}, {"holdout", o.cfg.holdout}, {"iterations", o.cfg.iterations},
              {"batch", o.cfg.batch}, {"lr", o.cfg.lr}});
  Rng rng(mix_seed(o.c.seed, 2));
  const auto pop = make_hw_population(model, o.samples, rng);
  const HWTrainResult r = train_hw(pop, o.cfg);
  const std::filesystem::path dir(o.c.out);
  save_checkpoint(r.net, dir / "hwnet.ckpt");
  std::ostringstream os;
  os << std::setprecision(10) << "split,height_mae_m,weight_mae_kg\n"
     << "train," << r.report.train_height_mae << "," << r.report.train_weight_mae << "\n"
     << "holdout," << r.report.height_mae << "," << r.report.weight_mae << "\n";
  write_file_atomic(dir / "hw_report.csv", os.str());
  out << os.str();
}

// ---------------------------------------------------------------- train
struct TrainOpts {
  Common c;
  std::string data, hw, aug = "none", pool = "flatten";
  TrainConfig cfg;
  bool single_view = false, no_height = false, no_weight = false;
};

void run_train(TrainOpts o, std::ostream& out) {
  TrainConfig& cfg = o.cfg;
  cfg.seed = o.c.seed;
  cfg.augmentation = parse_augmentation(o.aug);
  if (o.pool == "gap") {
    cfg.arch.pool = PoolMode::kGlobalAverage;
  } else if (o.pool != "flatten") {
    throw InvalidArgument("--pool must be flatten or gap");
  }
  cfg.arch.single_view = o.single_view;
  cfg.arch.use_height = !o.no_height;
  cfg.arch.use_weight = !o.no_weight;
  cfg.validate();
  record_run(out, "train", o.c, {{"data", o.data}, {"hw", o.hw}, {"config", cfg.describe()}});

  const Dataset ds = open_dataset(o.data);
  const DataSplit data = split_train_val(load_examples(ds, Split::kTrain), cfg.val_fraction,
                                         cfg.reduced_fraction, cfg.seed);
  out << "train " << data.train.size() << " val " << data.val.size() << "\n";

  std::optional<BodyModel> model;
  std::optional<HWnet> hw;
  SyntheticSampler sampler;
  if (cfg.augmentation != Augmentation::kNone) {
    if (o.hw.empty()) throw InvalidArgument("--aug " + o.aug + " needs --hw");
    model = load_model(o.c);
    hw = load_hwnet(o.hw);
    AugmentationEnv env{*model, *hw, {}};
    for (const auto& e : data.train) {
      if (!e.beta) throw InvalidArgument("augmentation needs shape provenance in the manifest");
      env.pool.push_back(*e.beta);
    }
    env.render.workers = o.c.workers;
    sampler = make_sampler(cfg.augmentation, env);
  }
  const ProtocolResult r = run_protocol(data, cfg, sampler ? &sampler : nullptr);

  const std::filesystem::path dir(o.c.out);
  save_checkpoint(r.net, dir / "bmnet.ckpt");
  write_train_log_csv(r.baseline.log, dir / "train_log.csv");
  if (r.synthetic) write_train_log_csv(r.synthetic->log, dir / "synthetic_log.csv");
  write_train_log_csv(r.real.log, dir / "real_log.csv");
  std::vector<std::pair<std::string, MetricsReport>> rows{{"val", evaluate(r.net, data.val)}};
  for (Split s : {Split::kTestA, Split::kTestB}) {
    const auto ex = load_examples(ds, s);
    if (!ex.empty()) rows.emplace_back(std::string(split_name(s)), evaluate(r.net, ex));
  }
  write_metrics_csv(rows, dir / "metrics.csv");
  for (const auto& [name, m] : rows) {
    out << name << " tp90=" << m.tp90 << " tp75=" << m.tp75 << " tp50=" << m.tp50 << " mm\n";
  }
}

// --------------------------------------------------------------- attack
struct AttackOpts {
  Common c;
  std::string bmnet, hw, data, init = "ball", optimizer = "plain";
  double eta = 0.1, clamp = 3.0, radius = 0.01, pose_sigma_deg = 0.0;
  double distance = kDefaultCameraDistance;
  int steps = 10, adam_steps = 5;
  double adam_lr = 0.1;
  std::vector<double> center;
  std::size_t count = 1;
};

void run_attack(const AttackOpts& o, std::ostream& out) {
  AttackConfig cfg;
  cfg.eta = o.eta;
  cfg.steps = o.steps;
  cfg.clamp_lo = -o.clamp;
  cfg.clamp_hi = o.clamp;
  cfg.adam_steps = o.adam_steps;
  cfg.adam_lr = o.adam_lr;
  cfg.init_radius = o.radius;
  if (o.optimizer == "adam") {
    cfg.optimizer = AscentOptimizer::kAdam;
  } else if (o.optimizer != "plain") {
    throw InvalidArgument("--optimizer must be plain or adam");
  }
  if (o.init == "pool") {
    cfg.init = InitMode::kPool;
  } else if (o.init != "ball") {
    throw InvalidArgument("--init must be ball or pool");
  }
  cfg.validate();
  record_run(out, "attack", o.c,
             {{"bmnet", o.bmnet}, {"hw", o.hw}, {"data", o.data}, {"init", o.init},
              {"optimizer", o.optimizer}, {"eta", o.eta}, {"steps", o.steps}, {"clamp", o.clamp},
              {"radius", o.radius}, {"adam_steps", o.adam_steps}, {"adam_lr", o.adam_lr},
              {"center", o.center}, {"count", o.count}, {"pose_sigma_deg", o.pose_sigma_deg},
              {"distance", o.distance}});

  const BodyModel model = load_model(o.c);
  const BMnet net = load_bmnet(o.bmnet);
  const HWnet hwnet = load_hwnet(o.hw);
  const BMnetPredictor f(net);
  const HWnetPredictor h(hwnet);
  std::vector<ShapeParams> pool;
  if (cfg.init == InitMode::kPool) {
    if (o.data.empty()) throw InvalidArgument("--init pool needs --data");
    pool = pool_from(open_dataset(o.data));
  }
  const ShapeParams center = parse_beta(o.center);
  RenderConfig rc;
  rc.workers = o.c.workers;
  const std::filesystem::path dir(o.c.out);
  std::ostringstream summary;
  summary << std::setprecision(10) << "run,initial_loss,final_loss,bmi,aborted\n";
  for (std::size_t i = 0; i < o.count; ++i) {
    Rng rng(mix_seed(o.c.seed, 3, i));
    ShapeParams b0 = center;
    if (cfg.init == InitMode::kPool) {
      b0 = pool[static_cast<std::size_t>(rng() % pool.size())];
    } else {
      b0 = sample_shape_ball(rng, center, cfg.init_radius);
    }
    b0 = clamp_shape(b0, cfg.clamp_lo, cfg.clamp_hi);
    const PoseParams pose = sample_pose_jitter(model, rng, deg(o.pose_sigma_deg));
    const AdvChain chain = make_chain(model, f, h, pose, o.distance, rc);
    const AttackTrace trace = ascend(chain, b0, cfg);
    const std::string tag = std::to_string(i);
    write_trace_csv(trace, dir / ("trace_" + tag + ".csv"));
    if (!trace.frontal.values.empty()) {
      save_silhouette(trace.frontal, dir / ("final_frontal_" + tag + ".pgm"));
      save_silhouette(trace.lateral, dir / ("final_lateral_" + tag + ".pgm"));
    }
    summary << i << "," << trace.steps.front().loss << "," << trace.steps.back().loss << ","
            << trace.bmi << "," << (trace.aborted ? 1 : 0) << "\n";
    if (trace.aborted) out << "run " << i << " aborted: " << trace.error << "\n";
  }
  write_file_atomic(dir / "attack_summary.csv", summary.str());
  out << summary.str();
}

// ----------------------------------------------------------------- eval
struct EvalOpts {
  Common c;
  std::string bmnet, data, split = "test";
};

void run_eval(const EvalOpts& o, std::ostream& out) {
  record_run(out, "eval", o.c, {{"bmnet", o.bmnet}, {"data", o.data}, {"split", o.split}});
  const BMnet net = load_bmnet(o.bmnet);
  const Dataset ds = open_dataset(o.data);
  std::vector<Example> ex;
  if (o.split == "test") {
    ex = load_examples(ds, Split::kTestA);
    auto b = load_examples(ds, Split::kTestB);
    ex.insert(ex.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
  } else {
    ex = load_examples(ds, parse_split(o.split));
  }
  const MetricsReport m = evaluate(net, ex);
  const std::vector<std::pair<std::string, MetricsReport>> rows{{o.split, m}};
  write_metrics_csv(rows, std::filesystem::path(o.c.out) / "metrics.csv");
  out << o.split << " n=" << m.count << " tp90=" << m.tp90 << " tp75=" << m.tp75
      << " tp50=" << m.tp50 << " mm\n";
}

// -------------------------------------------------------------- analyze
struct AnalyzeOpts {
  Common c;
  std::string bmnet, hw;
  std::size_t count = 200;
  double eta = 0.1, clamp = 3.0, radius = 0.01;
  int steps = 10;
};

void run_analyze(const AnalyzeOpts& o, std::ostream& out) {
  record_run(out, "analyze", o.c,
             {{"bmnet", o.bmnet}, {"hw", o.hw}, {"count", o.count}, {"eta", o.eta},
              {"steps", o.steps}, {"clamp", o.clamp}, {"radius", o.radius}});
  const BodyModel model = load_model(o.c);
  const BMnet net = load_bmnet(o.bmnet);
  const HWnet hwnet = load_hwnet(o.hw);
  const BMnetPredictor f(net);
  const HWnetPredictor h(hwnet);
  SamplerContext ctx{model, h};
  ctx.render.workers = o.c.workers;
  AttackConfig cfg;
  cfg.eta = o.eta;
  cfg.steps = o.steps;
  cfg.clamp_lo = -o.clamp;
  cfg.clamp_hi = o.clamp;
  cfg.init_radius = o.radius;
  const std::vector<ShapeParams> origin{ShapeParams::zeros()};
  Rng rng_adv(mix_seed(o.c.seed, 4));
  Rng rng_rand(mix_seed(o.c.seed, 5));
  const auto adv = sample_adversarial_batch(ctx, f, origin, cfg, o.count, rng_adv);
  const auto rnd = sample_random_batch(ctx, {}, {RandomMode::kUniform, 0.5, -o.clamp, o.clamp},
                                       o.count, rng_rand);
  const auto adv_rows = analyze_population(adv, f);
  const auto rnd_rows = analyze_population(rnd, f);
  const std::filesystem::path dir(o.c.out);
  write_analysis_csv(adv_rows, dir / "adversarial.csv");
  write_analysis_csv(rnd_rows, dir / "random.csv");
  const std::vector<GroupSummary> groups{summarize("adversarial", adv_rows),
                                         summarize("random", rnd_rows)};
  write_summary_csv(groups, dir / "summary.csv");
  for (const auto& g : groups) {
    out << g.group << " n=" << g.count << " mean_bmi=" << g.mean_bmi
        << " mean_error_mm=" << g.mean_error_mm << "\n";
  }
}

// ------------------------------------------------------------ gradcheck
struct GradcheckOpts {
  Common c;
  std::string bmnet, hw;
  int trials = 20;
  double eps = 1e-5, tol = 1e-2, sigma = 1e-4, min_grad = 1e-6;
};

int run_gradcheck(const GradcheckOpts& o, std::ostream& out) {
  record_run(out, "gradcheck", o.c,
             {{"bmnet", o.bmnet}, {"hw", o.hw}, {"trials", o.trials}, {"eps", o.eps},
              {"tol", o.tol}, {"sigma", o.sigma}, {"min_grad", o.min_grad}});
  const BodyModel model = load_model(o.c);
  Rng rng(mix_seed(o.c.seed, 6));
  const BMnet net = o.bmnet.empty() ? BMnet::init(BMnetArch{}, rng) : load_bmnet(o.bmnet);
  const HWnet hwnet = o.hw.empty() ? HWnet::init(rng) : load_hwnet(o.hw);
  const BMnetPredictor f(net);
  const HWnetPredictor h(hwnet);
  RenderConfig rc;
  rc.sigma = o.sigma;
  rc.workers = o.c.workers;
  std::ostringstream csv;
  csv << std::setprecision(10) << "trial,max_rel_err,worst_coord,checked,pass\n";
  double worst = 0.0;
  bool all = true;
  for (int t = 0; t < o.trials; ++t) {
    const ShapeParams beta = sample_shape_uniform(rng, -2.5, 2.5);
    const PoseParams pose = sample_pose_jitter(model, rng, deg(5.0));
    const AdvChain chain = make_chain(model, f, h, pose, kDefaultCameraDistance, rc);
    const AdvEvaluation ev = adv_loss(chain, beta, true);
    auto fn = [&](std::span<const double> x) {
      ShapeParams b;
      std::copy(x.begin(), x.end(), b.values.begin());
      return adv_loss(chain, b, false).loss;
    };
    const GradCheckReport rep = grad_check(fn, ev.grad, beta.values, o.eps, o.tol, o.min_grad);
    worst = std::max(worst, rep.max_rel_err);
    all = all && rep.pass;
    csv << t << "," << rep.max_rel_err << "," << rep.worst_index << "," << rep.checked << ","
        << (rep.pass ? 1 : 0) << "\n";
  }
  if (!o.c.out.empty()) write_file_atomic(std::filesystem::path(o.c.out) / "gradcheck.csv", csv.str());
  out << csv.str() << "max_rel_err=" << worst << (all ? " PASS" : " FAIL") << "\n";
  return all ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"bodysim: parametric body simulator, silhouette renderer and adversarial augmentation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  GenOpts gen;
  auto* c_gen = app.add_subcommand("gen", "Generate a synthetic population (manifest + PGMs)");
  add_common(c_gen, gen.c);
  c_gen->add_option("--train", gen.train)->capture_default_str();
  c_gen->add_option("--test-a", gen.test_a)->capture_default_str();
  c_gen->add_option("--test-b", gen.test_b)->capture_default_str();
  c_gen->add_option("--hw", gen.hw, "Height/weight regressor for metadata (default: oracle)");

  RenderOpts ren;
  auto* c_ren = app.add_subcommand("render", "Render silhouettes and export the mesh");
  add_common(c_ren, ren.c);
  c_ren->add_option("--beta", ren.beta, "Shape coefficients (up to 10)")->delimiter(',');
  c_ren->add_option("--pose-sigma-deg", ren.pose_sigma_deg)->capture_default_str();
  c_ren->add_option("--distance", ren.distance)->capture_default_str();
  c_ren->add_flag("--soft", ren.soft, "Also write soft renders as float images");
  c_ren->add_option("--sigma", ren.sigma)->capture_default_str();

  MeasureOpts mea;
  auto* c_mea = app.add_subcommand("measure", "Measure a body given by shape or OBJ mesh");
  add_common(c_mea, mea.c);
  c_mea->add_option("--beta", mea.beta)->delimiter(',');
  c_mea->add_option("--mesh", mea.mesh, "OBJ with the model's vertex order");
  c_mea->add_option("--pose-sigma-deg", mea.pose_sigma_deg)->capture_default_str();

  TrainHwOpts thw;
  auto* c_thw = app.add_subcommand("train-hw", "Train the height/weight regressor");
  add_common(c_thw, thw.c);
  c_thw->add_option("--samples", thw.samples)->capture_default_str();
  c_thw->add_option("--holdout", thw.cfg.holdout)->capture_default_str();
  c_thw->add_option("--iterations", thw.cfg.iterations)->capture_default_str();
  c_thw->add_option("--batch", thw.cfg.batch)->capture_default_str();
  c_thw->add_option("--lr", thw.cfg.lr)->capture_default_str();

  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train", "Train the measurement network");
  add_common(c_tr, tr.c);
  c_tr->add_option("--data", tr.data, "Dataset directory")->required();
  c_tr->add_option("--hw", tr.hw, "Height/weight regressor (needed for augmentation)");
  c_tr->add_option("--aug", tr.aug, "none|random|adv")->capture_default_str();
  c_tr->add_option("--reduced-fraction", tr.cfg.reduced_fraction)->capture_default_str();
  c_tr->add_option("--iterations", tr.cfg.iterations)->capture_default_str();
  c_tr->add_option("--batch", tr.cfg.batch_size)->capture_default_str();
  c_tr->add_option("--lr", tr.cfg.lr)->capture_default_str();
  c_tr->add_option("--val-fraction", tr.cfg.val_fraction)->capture_default_str();
  c_tr->add_option("--eval-every", tr.cfg.eval_every)->capture_default_str();
  c_tr->add_option("--epochs", tr.cfg.synthetic_epochs, "Synthetic fine-tune epochs")->capture_default_str();
  c_tr->add_option("--per-epoch", tr.cfg.synthetic_per_epoch)->capture_default_str();
  c_tr->add_option("--synthetic-lr", tr.cfg.synthetic_lr)->capture_default_str();
  c_tr->add_option("--real-iterations", tr.cfg.real_iterations)->capture_default_str();
  c_tr->add_option("--real-lr", tr.cfg.real_lr)->capture_default_str();
  c_tr->add_option("--pool", tr.pool, "flatten|gap")->capture_default_str();
  c_tr->add_flag("--single-view", tr.single_view);
  c_tr->add_flag("--no-height", tr.no_height);
  c_tr->add_flag("--no-weight", tr.no_weight);

  AttackOpts at;
  auto* c_at = app.add_subcommand("attack", "Adversarial ascent in shape space");
  add_common(c_at, at.c);
  c_at->add_option("--bmnet", at.bmnet)->required();
  c_at->add_option("--hw", at.hw)->required();
  c_at->add_option("--data", at.data, "Dataset providing the pool for --init pool");
  c_at->add_option("--eta", at.eta)->capture_default_str();
  c_at->add_option("--steps", at.steps)->capture_default_str();
  c_at->add_option("--clamp", at.clamp, "Symmetric clamp bound")->capture_default_str();
  c_at->add_option("--init", at.init, "ball|pool")->capture_default_str();
  c_at->add_option("--radius", at.radius)->capture_default_str();
  c_at->add_option("--center", at.center)->delimiter(',');
  c_at->add_option("--optimizer", at.optimizer, "plain|adam")->capture_default_str();
  c_at->add_option("--adam-steps", at.adam_steps)->capture_default_str();
  c_at->add_option("--adam-lr", at.adam_lr)->capture_default_str();
  c_at->add_option("--count", at.count, "Number of independent starts")->capture_default_str();
  c_at->add_option("--pose-sigma-deg", at.pose_sigma_deg)->capture_default_str();
  c_at->add_option("--distance", at.distance)->capture_default_str();

  EvalOpts ev;
  auto* c_ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  add_common(c_ev, ev.c);
  c_ev->add_option("--bmnet", ev.bmnet)->required();
  c_ev->add_option("--data", ev.data)->required();
  c_ev->add_option("--split", ev.split, "train|testA|testB|test")->capture_default_str();

  AnalyzeOpts an;
  auto* c_an = app.add_subcommand("analyze", "Adversarial vs uniform population tables");
  add_common(c_an, an.c);
  c_an->add_option("--bmnet", an.bmnet)->required();
  c_an->add_option("--hw", an.hw)->required();
  c_an->add_option("--count", an.count)->capture_default_str();
  c_an->add_option("--eta", an.eta)->capture_default_str();
  c_an->add_option("--steps", an.steps)->capture_default_str();
  c_an->add_option("--clamp", an.clamp)->capture_default_str();
  c_an->add_option("--radius", an.radius)->capture_default_str();

  GradcheckOpts gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of the full chain");
  add_common(c_gc, gc.c, false);
  c_gc->add_option("--bmnet", gc.bmnet, "Checkpoint (default: fresh weights)");
  c_gc->add_option("--hw", gc.hw, "Checkpoint (default: fresh weights)");
  c_gc->add_option("--trials", gc.trials)->capture_default_str();
  c_gc->add_option("--eps", gc.eps)->capture_default_str();
  c_gc->add_option("--tol", gc.tol)->capture_default_str();
  c_gc->add_option("--sigma", gc.sigma)->capture_default_str();
  c_gc->add_option("--min-grad", gc.min_grad)->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (c_gen->parsed()) run_gen(gen, out);
    if (c_ren->parsed()) run_render(ren, out);
    if (c_mea->parsed()) run_measure(mea, out);
    if (c_thw->parsed()) run_train_hw(thw, out);
    if (c_tr->parsed()) run_train(tr, out);
    if (c_at->parsed()) run_attack(at, out);
    if (c_ev->parsed()) run_eval(ev, out);
    if (c_an->parsed()) run_analyze(an, out);
    if (c_gc->parsed()) return run_gradcheck(gc, out);
  } catch (const NumericError& e) {
    err << "bodysim " << stage << ": numeric failure in stage '" << e.stage() << "': " << e.what()
        << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "bodysim " << stage << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run_cli(int argc, const char* const* argv) {
  return run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace bodysim
