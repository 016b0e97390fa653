#include "bodysim/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>
#include <unistd.h>

namespace bodysim {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kTestA:
      return "testA";
    case Split::kTestB:
      return "testB";
  }
  return "train";
}

Split parse_split(std::string_view t) {
  if (t == "train") return Split::kTrain;
  if (t == "testA") return Split::kTestA;
  if (t == "testB") return Split::kTestB;
  throw InvalidArgument("unknown split token '" + std::string(t) + "' (expected train, testA, testB)");
}

std::size_t bmi_band(double v) {
  std::size_t b = 0;
  while (b < kBmiBandEdges.size() && v >= kBmiBandEdges[b]) ++b;
  return b;
}

std::string_view bmi_band_label(std::size_t band) {
  static constexpr std::array<std::string_view, kNumBmiBands> labels = {
      "<18.5", "18.5-25", "25-30", "30-40", "40-50", ">=50"};
  if (band >= kNumBmiBands) throw InvalidArgument("bmi_band_label: band out of range");
  return labels[band];
}

std::vector<const Sample*> Dataset::split(Split s) const {
  std::vector<const Sample*> out;
  for (const auto& x : samples) {
    if (x.split == s) out.push_back(&x);
  }
  return out;
}

void PopulationSpec::validate() const {
  for (const SplitSpec* s : {&train, &test_a, &test_b}) {
    double sum = 0.0;
    for (double f : s->band_fractions) {
      if (f < 0.0) throw InvalidArgument("population spec: negative band fraction");
      sum += f;
    }
    if (s->count > 0 && std::abs(sum - 1.0) > 1e-6) {
      throw InvalidArgument("population spec: band fractions must sum to 1");
    }
  }
  if (width < 8 || height < 8) throw InvalidArgument("population spec: image dims must be >= 8");
  if (!(distance_lo > 0.0 && distance_lo <= distance_hi)) {
    throw InvalidArgument("population spec: bad camera distance range");
  }
  if (!(beta_lo < beta_hi)) throw InvalidArgument("population spec: requires beta_lo < beta_hi");
  if (pose_sigma_deg < 0.0) throw InvalidArgument("population spec: negative pose sigma");
  if (workers < 1) throw InvalidArgument("population spec: workers must be >= 1");
}

namespace {

std::array<double, kNumBmiBands> normalized(std::array<double, kNumBmiBands> a) {
  double s = 0.0;
  for (double v : a) s += v;
  for (double& v : a) v /= s;
  return a;
}

}  // namespace

PopulationSpec PopulationSpec::desk_default(std::size_t train, std::size_t test_a,
                                            std::size_t test_b) {
  PopulationSpec s;
  s.train = {train, normalized({2, 51, 34, 11, 1, 0})};
  s.test_a = {test_a, normalized({4, 64, 22, 8, 0, 0})};
  s.test_b = {test_b, normalized({5, 55, 23, 14, 4, 0})};
  return s;
}

namespace {

// Largest-remainder apportionment of count over fractions.
std::array<std::size_t, kNumBmiBands> band_targets(const SplitSpec& s) {
  std::array<std::size_t, kNumBmiBands> out{};
  std::array<double, kNumBmiBands> rem{};
  std::size_t assigned = 0;
  for (std::size_t b = 0; b < kNumBmiBands; ++b) {
    const double exact = s.band_fractions[b] * static_cast<double>(s.count);
    out[b] = static_cast<std::size_t>(std::floor(exact));
    rem[b] = exact - static_cast<double>(out[b]);
    assigned += out[b];
  }
  while (assigned < s.count) {
    const auto it = std::max_element(rem.begin(), rem.end());
    ++out[static_cast<std::size_t>(it - rem.begin())];
    *it = -1.0;
    ++assigned;
  }
  return out;
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

std::string subject_id(Split s, std::size_t i) {
  std::ostringstream os;
  os << split_name(s) << "_" << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

struct Candidate {
  ShapeParams beta;
  std::size_t band;
};

}  // namespace

SilhouetteImage apply_segmentation_noise(const SilhouetteImage& image, int radius, int specks,
                                         Rng& rng) {
  SilhouetteImage out = image;
  if (radius != 0) {
    const double target = radius > 0 ? 1.0 : 0.0;
    const int r = std::abs(radius);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        for (int dy = -r; dy <= r && out.at(y, x) != target; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= image.height || xx >= image.width) continue;
            if ((image.at(yy, xx) >= 0.5) == (target == 1.0)) {
              out.at(y, x) = target;
              break;
            }
          }
        }
      }
    }
  }
  std::vector<std::size_t> body;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.values[i] >= 0.5) body.push_back(i);
  }
  for (int k = 0; k < specks && !body.empty(); ++k) {
    out.values[body[static_cast<std::size_t>(rng() % body.size())]] = 0.0;
  }
  return out;
}

Dataset generate_population(const BodyModel& model, const PopulationSpec& spec,
                            const fs::path& root, const HWnet* hw) {
  spec.validate();
  Dataset ds;
  ds.root = root;
  const PoseParams rest = PoseParams::identity(model.joint_count());
  const std::array<std::pair<Split, const SplitSpec*>, 3> splits = {
      {{Split::kTrain, &spec.train}, {Split::kTestA, &spec.test_a}, {Split::kTestB, &spec.test_b}}};

  for (const auto& [split, sspec] : splits) {
    if (sspec->count == 0) continue;
    auto targets = band_targets(*sspec);
    std::size_t remaining = sspec->count;
    std::vector<Candidate> accepted;
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(split), 0));
    std::size_t draws = 0;
    while (remaining > 0) {
      if (draws++ >= spec.max_draws) {
        std::ostringstream os;
        os << "generate_population: split " << split_name(split) << " could not fill BMI bands";
        for (std::size_t b = 0; b < kNumBmiBands; ++b) {
          if (targets[b] > 0) os << " [" << bmi_band_label(b) << " short by " << targets[b] << "]";
        }
        os << " within " << spec.max_draws << " draws";
        throw Error(os.str());
      }
      const ShapeParams beta = sample_shape_uniform(rng, spec.beta_lo, spec.beta_hi);
      const double v = bmi(oracle_metadata(pose_shape(model, beta, rest)));
      const std::size_t band = bmi_band(v);
      if (targets[band] == 0) continue;
      --targets[band];
      --remaining;
      accepted.push_back({beta, band});
    }

    const std::size_t first = ds.samples.size();
    ds.samples.resize(first + accepted.size());
    auto render_range = [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        Sample& s = ds.samples[first + i];
        s.subject_id = subject_id(split, i);
        s.split = split;
        Rng srng(mix_seed(spec.seed, static_cast<std::uint64_t>(split) + 1, i));
        Provenance prov;
        prov.beta = accepted[i].beta;
        prov.pose = sample_pose_jitter(model, srng, spec.pose_sigma_deg * std::numbers::pi / 180.0);
        prov.camera_distance =
            spec.distance_hi > spec.distance_lo
                ? std::uniform_real_distribution<double>(spec.distance_lo, spec.distance_hi)(srng)
                : spec.distance_lo;
        const Mesh posed = pose_shape(model, prov.beta, prov.pose);
        const Metadata canon = hw ? hw->forward(prov.beta)
                                  : oracle_metadata(pose_shape(model, prov.beta, rest));
        s.meta = {round6(canon.height), round6(canon.weight)};
        const MeasurementVector mv = measure_all(model, posed);
        for (std::size_t m = 0; m < kNumMeasurements; ++m) s.measurements[m] = round6(mv[m]);
        s.front_path = "silhouettes/" + s.subject_id + "_front.pgm";
        s.lateral_path = "silhouettes/" + s.subject_id + "_lateral.pgm";
        const auto cam_f =
            make_camera(View::kFrontal, prov.camera_distance, spec.width, spec.height);
        const auto cam_l =
            make_camera(View::kLateral, prov.camera_distance, spec.width, spec.height);
        SilhouetteImage front = rasterize_hard(cam_f, posed);
        SilhouetteImage lateral = rasterize_hard(cam_l, posed);
        s.extra = {{"bmi_band", std::string(bmi_band_label(accepted[i].band))}};
        if (spec.noise.enabled) {
          std::uniform_int_distribution<int> rad(-spec.noise.max_radius, spec.noise.max_radius);
          std::uniform_int_distribution<int> spk(0, spec.noise.max_specks);
          std::ostringstream tag;
          for (SilhouetteImage* img : {&front, &lateral}) {
            const int r = rad(srng);
            const int k = spk(srng);
            *img = apply_segmentation_noise(*img, r, k, srng);
            tag << (img == &front ? "" : ";") << "r=" << r << " specks=" << k;
          }
          s.extra.emplace_back("seg_noise", tag.str());
        }
        save_silhouette(front, root / s.front_path);
        save_silhouette(lateral, root / s.lateral_path);
        s.provenance = std::move(prov);
      }
    };
    fs::create_directories(root / "silhouettes");
    const int nw = std::min<int>(spec.workers, static_cast<int>(accepted.size()));
    if (nw <= 1) {
      render_range(0, accepted.size());
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < nw; ++w) {
        pool.emplace_back(render_range, accepted.size() * w / nw, accepted.size() * (w + 1) / nw);
      }
      for (auto& t : pool) t.join();
    }
  }
  save_manifest(ds, root / kManifestName);
  return ds;
}

std::vector<std::string> manifest_required_columns() {
  std::vector<std::string> c = {"subject_id", "split", "height_m", "weight_kg"};
  for (auto n : measurement_names()) c.emplace_back(n);
  c.emplace_back("front_path");
  c.emplace_back("lateral_path");
  return c;
}

namespace {

std::vector<std::string> provenance_columns() {
  std::vector<std::string> c;
  for (std::size_t i = 0; i < kShapeDim; ++i) c.push_back("beta_" + std::to_string(i + 1));
  c.emplace_back("pose");
  c.emplace_back("camera_distance");
  return c;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string fmt6(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

std::string fmt_exact(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string encode_pose(const PoseParams& p) {
  std::string s;
  for (std::size_t j = 0; j < p.size(); ++j) {
    for (int k = 0; k < 3; ++k) {
      if (!s.empty()) s += ' ';
      s += fmt_exact(p.rotations[j][k]);
    }
  }
  return s;
}

PoseParams decode_pose(const std::string& text) {
  std::istringstream is(text);
  std::vector<double> v;
  double x;
  while (is >> x) v.push_back(x);
  if (v.size() % 3 != 0) throw InvalidArgument("manifest: pose column length not a multiple of 3");
  PoseParams p;
  for (std::size_t i = 0; i < v.size(); i += 3) p.rotations.emplace_back(v[i], v[i + 1], v[i + 2]);
  return p;
}

double parse_double(const std::string& s, const std::string& column, std::size_t line) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::logic_error&) {
    throw InvalidArgument("manifest line " + std::to_string(line) + ": bad number '" + s +
                          "' in column " + column);
  }
}

}  // namespace

void save_manifest(const Dataset& ds, const fs::path& path) {
  const auto req = manifest_required_columns();
  const auto prov = provenance_columns();
  const bool any_prov = std::any_of(ds.samples.begin(), ds.samples.end(),
                                    [](const Sample& s) { return s.provenance.has_value(); });
  // Extra columns: union of names in first-seen order.
  std::vector<std::string> extra;
  for (const auto& s : ds.samples) {
    for (const auto& [k, v] : s.extra) {
      if (std::find(extra.begin(), extra.end(), k) == extra.end()) extra.push_back(k);
    }
  }
  std::ostringstream os;
  std::vector<std::string> header = req;
  if (any_prov) header.insert(header.end(), prov.begin(), prov.end());
  header.insert(header.end(), extra.begin(), extra.end());
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\n";
  for (const auto& s : ds.samples) {
    os << s.subject_id << "," << split_name(s.split) << "," << fmt6(s.meta.height) << ","
       << fmt6(s.meta.weight);
    for (double m : s.measurements.values) os << "," << fmt6(m);
    os << "," << s.front_path << "," << s.lateral_path;
    if (any_prov) {
      if (s.provenance) {
        for (double b : s.provenance->beta.values) os << "," << fmt_exact(b);
        os << "," << encode_pose(s.provenance->pose) << ","
           << fmt_exact(s.provenance->camera_distance);
      } else {
        for (std::size_t i = 0; i < prov.size(); ++i) os << ",";
      }
    }
    for (const auto& name : extra) {
      os << ",";
      for (const auto& [k, v] : s.extra) {
        if (k == name) {
          os << v;
          break;
        }
      }
    }
    os << "\n";
  }
  write_file_atomic(path, os.str());
}

Dataset load_manifest(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw IoError("manifest " + path.string() + " is empty");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& r : manifest_required_columns()) {
    if (!col.count(r)) throw InvalidArgument("manifest " + path.string() + ": missing column " + r);
  }
  const auto prov_cols = provenance_columns();
  const bool has_prov = std::all_of(prov_cols.begin(), prov_cols.end(),
                                    [&](const std::string& c) { return col.count(c) > 0; });
  std::vector<std::size_t> extra_idx;
  const auto req = manifest_required_columns();
  for (std::size_t i = 0; i < header.size(); ++i) {
    const bool known = std::find(req.begin(), req.end(), header[i]) != req.end() ||
                       (has_prov && std::find(prov_cols.begin(), prov_cols.end(), header[i]) !=
                                        prov_cols.end());
    if (!known) extra_idx.push_back(i);
  }

  Dataset ds;
  ds.root = path.parent_path();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw InvalidArgument("manifest line " + std::to_string(lineno) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(f.size()));
    }
    Sample s;
    s.subject_id = f[col["subject_id"]];
    s.split = parse_split(f[col["split"]]);
    s.meta.height = parse_double(f[col["height_m"]], "height_m", lineno);
    s.meta.weight = parse_double(f[col["weight_kg"]], "weight_kg", lineno);
    for (std::size_t m = 0; m < kNumMeasurements; ++m) {
      const std::string name(measurement_names()[m]);
      s.measurements[m] = parse_double(f[col[name]], name, lineno);
    }
    s.front_path = f[col["front_path"]];
    s.lateral_path = f[col["lateral_path"]];
    if (has_prov && !f[col["beta_1"]].empty()) {
      Provenance p;
      for (std::size_t i = 0; i < kShapeDim; ++i) {
        const std::string c = "beta_" + std::to_string(i + 1);
        p.beta[i] = parse_double(f[col[c]], c, lineno);
      }
      p.pose = decode_pose(f[col["pose"]]);
      p.camera_distance = parse_double(f[col["camera_distance"]], "camera_distance", lineno);
      s.provenance = std::move(p);
    }
    for (std::size_t i : extra_idx) s.extra.emplace_back(header[i], f[i]);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_silhouette(const SilhouetteImage& img, const fs::path& path) {
  if (img.width <= 0 || img.height <= 0 ||
      img.values.size() != static_cast<std::size_t>(img.width) * img.height) {
    throw InvalidArgument("save_silhouette: malformed image");
  }
  std::string data = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  const std::size_t off = data.size();
  data.resize(off + img.values.size());
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    const double v = std::clamp(img.values[i], 0.0, 1.0);
    data[off + i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  write_file_atomic(path, data);
}

SilhouetteImage load_silhouette(const fs::path& path) {
  const std::string data = read_file(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) ++pos;
    if (start == pos) throw IoError(path.string() + ": bad PGM header (" + what + ")");
    return std::stoi(data.substr(start, pos - start));
  };
  if (data.size() < 2 || data[0] != 'P' || data[1] != '5') {
    throw IoError(path.string() + ": not a binary PGM (magic P5 expected)");
  }
  pos = 2;
  const int w = read_int("width");
  const int h = read_int("height");
  const int maxval = read_int("maxval");
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw IoError(path.string() + ": unsupported PGM dimensions or maxval");
  }
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos]))) {
    throw IoError(path.string() + ": truncated PGM header");
  }
  ++pos;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (data.size() - pos < n) throw IoError(path.string() + ": truncated PGM pixel data");
  SilhouetteImage img(w, h);
  for (std::size_t i = 0; i < n; ++i) {
    img.values[i] = static_cast<unsigned char>(data[pos + i]) / static_cast<double>(maxval);
  }
  return img;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(const std::string& data, std::string source) : d_(data), src_(std::move(source)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(d_[p_ + i])) << (8 * i);
    p_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = d_.substr(p_, n);
    p_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (d_.size() - p_ < n) throw IoError(src_ + ": truncated file");
  }
  const std::string& d_;
  std::string src_;
  std::size_t p_ = 0;
};

}  // namespace

void save_float_image(const SilhouetteImage& img, const fs::path& path) {
  std::string out = "ABSF";
  put_u32(out, static_cast<std::uint32_t>(img.width));
  put_u32(out, static_cast<std::uint32_t>(img.height));
  put_u32(out, 0);
  for (double v : img.values) put_f32(out, static_cast<float>(v));
  write_file_atomic(path, out);
}

SilhouetteImage load_float_image(const fs::path& path) {
  const std::string data = read_file(path);
  Reader r(data, path.string());
  if (r.bytes(4) != "ABSF") throw IoError(path.string() + ": bad magic (ABSF expected)");
  const auto w = static_cast<int>(r.u32());
  const auto h = static_cast<int>(r.u32());
  r.u32();
  SilhouetteImage img(w, h);
  for (auto& v : img.values) v = r.f32();
  return img;
}

void write_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  std::string out = "ABSM";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.descriptor.size()));
  out += ckpt.descriptor;
  put_u32(out, static_cast<std::uint32_t>(ckpt.params.count()));
  for (const auto& a : ckpt.params.arrays()) {
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (int d : a.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : a.values) put_f32(out, v);
  }
  write_file_atomic(path, out);
}

Checkpoint read_checkpoint(const fs::path& path) {
  const std::string data = read_file(path);
  Reader r(data, path.string());
  if (r.bytes(4) != "ABSM") throw IoError(path.string() + ": bad magic (ABSM expected)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": checkpoint version " + std::to_string(version) +
                  " is not supported (reader supports " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.descriptor = r.bytes(r.u32());
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.bytes(r.u32());
    const std::uint32_t ndim = r.u32();
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    const std::size_t k = c.params.add(std::move(name), std::move(shape));
    for (float& v : c.params[k].values) v = r.f32();
  }
  return c;
}

void save_checkpoint(const BMnet& net, const fs::path& path) {
  write_checkpoint({net.arch().descriptor(), net.params()}, path);
}

void save_checkpoint(const HWnet& net, const fs::path& path) {
  write_checkpoint({net.normalizer().descriptor(), net.params()}, path);
}

namespace {

void check_layout(const ParamSet& expected, const ParamSet& got, const fs::path& path) {
  if (expected.same_layout(got)) return;
  std::ostringstream os;
  os << path.string() << ": parameter arrays do not match the architecture descriptor";
  for (std::size_t i = 0; i < std::min(expected.count(), got.count()); ++i) {
    if (expected[i].name != got[i].name || expected[i].shape != got[i].shape) {
      os << " (first difference at array " << i << ", '" << got[i].name << "')";
      break;
    }
  }
  if (expected.count() != got.count()) {
    os << " (expected " << expected.count() << " arrays, found " << got.count() << ")";
  }
  throw IoError(os.str());
}

}  // namespace

BMnet load_bmnet(const fs::path& path) {
  Checkpoint c = read_checkpoint(path);
  const BMnetArch arch = BMnetArch::from_descriptor(c.descriptor);
  check_layout(BMnet::make_layout(arch), c.params, path);
  return BMnet(arch, std::move(c.params));
}

HWnet load_hwnet(const fs::path& path) {
  Checkpoint c = read_checkpoint(path);
  const HWNormalizer norm = HWNormalizer::from_descriptor(c.descriptor);
  check_layout(HWnet::make_layout(), c.params, path);
  return HWnet(norm, std::move(c.params));
}

std::vector<Example> load_examples(const Dataset& ds, Split split) {
  std::vector<Example> out;
  for (const Sample* s : ds.split(split)) {
    Example e;
    e.frontal = load_silhouette(ds.root / s->front_path);
    e.lateral = load_silhouette(ds.root / s->lateral_path);
    e.meta = s->meta;
    e.truth = s->measurements;
    if (s->provenance) e.beta = s->provenance->beta;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace bodysim
