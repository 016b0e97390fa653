#include "bodysim/bodymodel.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

namespace bodysim {

ShapeParams ShapeParams::unit(std::size_t mode, double scale) {
  ShapeParams b;
  b.values.at(mode) = scale;
  return b;
}

double ShapeParams::norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

bool ShapeParams::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

bool ShapeParams::within(double lo, double hi) const {
  return std::all_of(values.begin(), values.end(), [&](double v) { return v >= lo && v <= hi; });
}

PoseParams PoseParams::identity(std::size_t joint_count) {
  return PoseParams{std::vector<Vec3>(joint_count, Vec3::Zero())};
}

bool PoseParams::is_identity() const {
  return std::all_of(rotations.begin(), rotations.end(),
                     [](const Vec3& r) { return r.x() == 0.0 && r.y() == 0.0 && r.z() == 0.0; });
}

std::string_view shape_mode_name(std::size_t mode) {
  static constexpr std::array<std::string_view, kShapeDim> kNames = {
      "height",          "girth",     "torso_width", "limb_length", "belly",
      "shoulder_width",  "hip_width", "leg_girth",   "arm_girth",   "head_scale"};
  return kNames.at(mode);
}

const std::array<std::string_view, kNumMeasurements>& measurement_names() {
  static constexpr std::array<std::string_view, kNumMeasurements> kNames = {
      "ankle_girth",      "arm_length",         "bicep_girth", "calf_girth",
      "chest_girth",      "forearm_girth",      "head_to_heel", "hip_girth",
      "leg_length",       "shoulder_breadth",   "shoulder_to_crotch",
      "thigh_girth",      "waist_girth",        "wrist_girth"};
  return kNames;
}

bool MeasurementVector::valid() const {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v) && v > 0.0; });
}

// ---------------------------------------------------------------------------
// TemplateSpec config

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw InvalidArgument("template spec: bad value for '" + std::string(key) + "': '" +
                          std::string(value) + "'");
  }
  return out;
}

}  // namespace

TemplateSpec TemplateSpec::parse(std::string_view text) {
  TemplateSpec spec;
  bool saw_version = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw InvalidArgument("template spec: expected key=value, got '" + std::string(line) + "'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "version") {
      const int v = parse_number<int>(key, value);
      if (v != kVersion) {
        throw InvalidArgument("template spec: unsupported version " + std::to_string(v));
      }
      saw_version = true;
    } else if (key == "ring_resolution") {
      spec.ring_resolution = parse_number<int>(key, value);
    } else if (key == "torso_rings") {
      spec.torso_rings = parse_number<int>(key, value);
    } else if (key == "neck_rings") {
      spec.neck_rings = parse_number<int>(key, value);
    } else if (key == "head_rings") {
      spec.head_rings = parse_number<int>(key, value);
    } else if (key == "arm_rings") {
      spec.arm_rings = parse_number<int>(key, value);
    } else if (key == "leg_rings") {
      spec.leg_rings = parse_number<int>(key, value);
    } else if (key == "foot_rings") {
      spec.foot_rings = parse_number<int>(key, value);
    } else if (key == "stature") {
      spec.stature = parse_number<double>(key, value);
    } else if (key == "arm_abduction_deg") {
      spec.arm_abduction_deg = parse_number<double>(key, value);
    } else if (key == "surface_noise") {
      spec.surface_noise = parse_number<double>(key, value);
    } else if (key == "seed") {
      spec.seed = parse_number<std::uint64_t>(key, value);
    } else {
      throw InvalidArgument("template spec: unknown key '" + std::string(key) + "'");
    }
  }
  if (!saw_version) throw InvalidArgument("template spec: missing version line");
  return spec;
}

TemplateSpec TemplateSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open template spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TemplateSpec::to_string() const {
  std::ostringstream os;
  os.precision(17);
  os << "version=" << kVersion << "\n"
     << "ring_resolution=" << ring_resolution << "\n"
     << "torso_rings=" << torso_rings << "\n"
     << "neck_rings=" << neck_rings << "\n"
     << "head_rings=" << head_rings << "\n"
     << "arm_rings=" << arm_rings << "\n"
     << "leg_rings=" << leg_rings << "\n"
     << "foot_rings=" << foot_rings << "\n"
     << "stature=" << stature << "\n"
     << "arm_abduction_deg=" << arm_abduction_deg << "\n"
     << "surface_noise=" << surface_noise << "\n"
     << "seed=" << seed << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Procedural humanoid. Geometry is laid out for a 1.75 m reference body (feet on
// y = 0, facing +z) and scaled by stature / 1.75 at the end.

namespace {

constexpr double kRefStature = 1.75;

enum class Segment { kTorso, kNeck, kHead, kArmL, kArmR, kLegL, kLegR, kFootL, kFootR };

bool is_arm(Segment s) { return s == Segment::kArmL || s == Segment::kArmR; }
bool is_leg(Segment s) { return s == Segment::kLegL || s == Segment::kLegR; }
bool is_foot(Segment s) { return s == Segment::kFootL || s == Segment::kFootR; }

// Where a point sits on the body; drives shape modes and skin weights.
struct PointInfo {
  Segment seg = Segment::kTorso;
  Vec3 p = Vec3::Zero();       // reference position
  Vec3 center = Vec3::Zero();  // cross-section center
  double s = 0.0;              // axial coordinate of the segment
  double rx = 1.0, rz = 1.0;   // local cross-section semi-axes
  int side = 0;                // +1 left (x > 0), -1 right
};

struct ProfileKey {
  double s, r1, r2;
};

std::pair<double, double> interp_profile(std::span<const ProfileKey> keys, double s) {
  if (s <= keys.front().s) return {keys.front().r1, keys.front().r2};
  if (s >= keys.back().s) return {keys.back().r1, keys.back().r2};
  for (std::size_t i = 1; i < keys.size(); ++i) {
    if (s <= keys[i].s) {
      const double t = (s - keys[i - 1].s) / (keys[i].s - keys[i - 1].s);
      return {keys[i - 1].r1 + t * (keys[i].r1 - keys[i - 1].r1),
              keys[i - 1].r2 + t * (keys[i].r2 - keys[i - 1].r2)};
    }
  }
  return {keys.back().r1, keys.back().r2};
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct RingFrame {
  Vec3 center;
  Vec3 e1, e2;  // e1 x e2 = direction of increasing ring index
  double r1, r2;
  double s;
};

struct Tube {
  std::vector<int> ring_start;
  std::vector<double> ring_s;
  int pole_begin = -1;
  int pole_end = -1;

  int nearest_ring(double s) const {
    int best = 0;
    for (int i = 1; i < static_cast<int>(ring_s.size()); ++i) {
      if (std::abs(ring_s[i] - s) < std::abs(ring_s[best] - s)) best = i;
    }
    return best;
  }
};

struct Builder {
  int resolution;
  std::vector<Vec3> verts;
  std::vector<PointInfo> info;
  std::vector<Face> faces;

  int add_vertex(const Vec3& p, PointInfo pi) {
    pi.p = p;
    verts.push_back(p);
    info.push_back(pi);
    return static_cast<int>(verts.size()) - 1;
  }

  // A closed generalized cylinder: rings from frames, fan caps at both poles.
  Tube add_tube(Segment seg, int side, const std::vector<RingFrame>& frames, const Vec3& pole_begin,
                double s_begin, const Vec3& pole_end, double s_end) {
    Tube tube;
    const int R = resolution;
    for (const auto& f : frames) {
      tube.ring_start.push_back(static_cast<int>(verts.size()));
      tube.ring_s.push_back(f.s);
      for (int k = 0; k < R; ++k) {
        const double phi = 2.0 * std::numbers::pi * k / R;
        const Vec3 p = f.center + f.r1 * std::cos(phi) * f.e1 + f.r2 * std::sin(phi) * f.e2;
        add_vertex(p, PointInfo{seg, p, f.center, f.s, f.r1, f.r2, side});
      }
    }
    const auto& f0 = frames.front();
    const auto& f1 = frames.back();
    tube.pole_begin = add_vertex(pole_begin, PointInfo{seg, pole_begin, pole_begin, s_begin,
                                                      f0.r1, f0.r2, side});
    tube.pole_end =
        add_vertex(pole_end, PointInfo{seg, pole_end, pole_end, s_end, f1.r1, f1.r2, side});
    const int rings = static_cast<int>(frames.size());
    for (int i = 0; i + 1 < rings; ++i) {
      const int a0 = tube.ring_start[i];
      const int b0 = tube.ring_start[i + 1];
      for (int k = 0; k < R; ++k) {
        const int k1 = (k + 1) % R;
        faces.push_back({a0 + k, a0 + k1, b0 + k});
        faces.push_back({a0 + k1, b0 + k1, b0 + k});
      }
    }
    const int first = tube.ring_start.front();
    const int last = tube.ring_start.back();
    for (int k = 0; k < R; ++k) {
      const int k1 = (k + 1) % R;
      faces.push_back({tube.pole_begin, first + k1, first + k});
      faces.push_back({tube.pole_end, last + k, last + k1});
    }
    return tube;
  }
};

// Reference-frame constants.
constexpr double kHipJointY = 0.90;
constexpr double kLegBaseY = 0.92;  // height lifted by the limb-length mode
constexpr double kHeadBaseY = 1.545;
constexpr double kHeadCenterY = 1.645;
constexpr double kHeadZ = 0.01;
constexpr double kShoulderX = 0.185;
constexpr double kShoulderY = 1.415;
constexpr double kElbowS = 0.295;
constexpr double kLegX = 0.088;
constexpr double kKneeY = 0.48;

constexpr std::array<ProfileKey, 12> kTorsoProfile = {{{0.80, 0.120, 0.090},
                                                       {0.85, 0.160, 0.108},
                                                       {0.91, 0.172, 0.114},
                                                       {0.98, 0.160, 0.106},
                                                       {1.05, 0.143, 0.098},
                                                       {1.13, 0.148, 0.102},
                                                       {1.22, 0.162, 0.112},
                                                       {1.29, 0.168, 0.116},
                                                       {1.36, 0.176, 0.110},
                                                       {1.42, 0.168, 0.096},
                                                       {1.47, 0.120, 0.078},
                                                       {1.50, 0.070, 0.060}}};

constexpr std::array<ProfileKey, 9> kArmProfile = {{{-0.02, 0.050, 0.052},
                                                    {0.06, 0.049, 0.051},
                                                    {0.14, 0.046, 0.048},
                                                    {0.29, 0.037, 0.039},
                                                    {0.37, 0.040, 0.041},
                                                    {0.55, 0.026, 0.022},
                                                    {0.60, 0.030, 0.015},
                                                    {0.70, 0.028, 0.012},
                                                    {0.73, 0.012, 0.008}}};

// Keyed by height y (descending axial order is handled by the caller).
constexpr std::array<ProfileKey, 8> kLegProfile = {{{0.06, 0.034, 0.040},
                                                   {0.11, 0.031, 0.034},
                                                   {0.25, 0.043, 0.046},
                                                   {0.38, 0.054, 0.058},
                                                   {0.48, 0.050, 0.054},
                                                   {0.65, 0.065, 0.068},
                                                   {0.80, 0.080, 0.084},
                                                   {0.97, 0.086, 0.090}}};

// Foot keyed by z; r1 along x, r2 along y.
constexpr std::array<ProfileKey, 4> kFootProfile = {
    {{-0.05, 0.030, 0.028}, {-0.02, 0.040, 0.035}, {0.10, 0.045, 0.033}, {0.19, 0.035, 0.020}}};

Vec3 arm_direction(int side, double abduction) {
  return Vec3(side * std::sin(abduction), -std::cos(abduction), 0.0);
}

Vec3 shoulder_position(int side) { return Vec3(side * kShoulderX, kShoulderY, 0.0); }

// Displacement of a reference point per unit coefficient of one shape mode.
Vec3 mode_displacement(std::size_t mode, const PointInfo& pi, double abduction) {
  const Vec3 r = pi.p - pi.center;
  const double y = pi.p.y();
  const bool torso = pi.seg == Segment::kTorso;
  const bool arm = is_arm(pi.seg);
  const bool leg = is_leg(pi.seg);
  const bool foot = is_foot(pi.seg);
  switch (static_cast<ShapeMode>(mode)) {
    case ShapeMode::kHeight: {
      // Radial growth at half the axial rate keeps BMI roughly height-neutral.
      Vec3 d(0.0, 0.067 * y, 0.0);
      if (torso || arm || leg || pi.seg == Segment::kNeck) d += 0.0335 * r;
      return d;
    }
    case ShapeMode::kGirth: {
      if (pi.seg == Segment::kHead || foot) return Vec3::Zero();
      const double w = pi.seg == Segment::kNeck ? 0.6 : 1.0;
      return 0.06 * w * r;
    }
    case ShapeMode::kTorsoWidth: {
      constexpr double k = 0.06;
      if (torso) return Vec3(k * r.x() * (1.0 - smoothstep(1.40, 1.50, y)), 0.0, 0.0);
      if (arm) return Vec3(pi.side * k * 0.168, 0.0, 0.0);
      return Vec3::Zero();
    }
    case ShapeMode::kLimbLength: {
      constexpr double k = 0.045;
      if (foot) return Vec3(0.0, k * std::min(y, kLegBaseY), 0.0);
      if (leg) return Vec3(0.0, k * std::min(y, kLegBaseY), 0.0) + 0.5 * k * r;
      Vec3 d(0.0, k * kLegBaseY, 0.0);
      if (arm) d += k * std::max(pi.s, 0.0) * arm_direction(pi.side, abduction) + 0.5 * k * r;
      return d;
    }
    case ShapeMode::kBelly: {
      if (!torso) return Vec3::Zero();
      const double n = r.norm();
      if (n == 0.0) return Vec3::Zero();
      const double u = r.z() / n;
      const double lobe = u > 0.0 ? u * u : 0.0;
      const double bump = std::exp(-std::pow((y - 1.04) / 0.10, 2));
      return Vec3(0.0, 0.0, 0.018 * bump * lobe);
    }
    case ShapeMode::kShoulderWidth: {
      constexpr double k = 0.014;
      if (torso) {
        const double w = smoothstep(1.20, 1.36, y) * (1.0 - smoothstep(1.44, 1.50, y));
        return Vec3(k * (r.x() / pi.rx) * w, 0.0, 0.0);
      }
      if (arm) return Vec3(pi.side * k, 0.0, 0.0);
      return Vec3::Zero();
    }
    case ShapeMode::kHipWidth: {
      constexpr double k = 0.013;
      if (torso) return Vec3(k * (r.x() / pi.rx) * (1.0 - smoothstep(0.92, 1.04, y)), 0.0, 0.0);
      if (leg || foot) {
        const double fan = 0.5 + 0.5 * std::clamp(y / 0.97, 0.0, 1.0);
        return Vec3(pi.side * k * fan, 0.0, 0.0);
      }
      return Vec3::Zero();
    }
    case ShapeMode::kLegGirth:
      if (leg) return 0.06 * (0.6 + 0.4 * smoothstep(0.1, 0.9, y)) * r;
      return Vec3::Zero();
    case ShapeMode::kArmGirth:
      if (arm) return 0.07 * (1.0 - 0.5 * smoothstep(0.3, 0.6, pi.s)) * r;
      return Vec3::Zero();
    case ShapeMode::kHeadScale:
      if (pi.seg == Segment::kHead) return 0.05 * (pi.p - Vec3(0.0, kHeadBaseY, kHeadZ));
      return Vec3::Zero();
  }
  return Vec3::Zero();
}

// Joint order, parents, and skinning.
enum JointId : int {
  kPelvis = 0,
  kSpine,
  kNeck,
  kHead,
  kShoulderL,
  kElbowL,
  kShoulderR,
  kElbowR,
  kHipL,
  kKneeL,
  kHipR,
  kKneeR,
  kJointCount
};

std::vector<std::pair<int, double>> skin_weights_for(const PointInfo& pi) {
  const double y = pi.p.y();
  auto blend = [](int a, int b, double wb) -> std::vector<std::pair<int, double>> {
    if (wb <= 0.0) return {{a, 1.0}};
    if (wb >= 1.0) return {{b, 1.0}};
    return {{a, 1.0 - wb}, {b, wb}};
  };
  switch (pi.seg) {
    case Segment::kTorso:
      return blend(kPelvis, kSpine, smoothstep(1.02, 1.22, y));
    case Segment::kNeck:
      return blend(kSpine, kNeck, smoothstep(1.45, 1.52, y));
    case Segment::kHead:
      return {{kHead, 1.0}};
    case Segment::kArmL:
      return blend(kShoulderL, kElbowL, smoothstep(0.25, 0.34, pi.s));
    case Segment::kArmR:
      return blend(kShoulderR, kElbowR, smoothstep(0.25, 0.34, pi.s));
    case Segment::kLegL:
      return blend(kHipL, kKneeL, 1.0 - smoothstep(0.43, 0.53, y));
    case Segment::kLegR:
      return blend(kHipR, kKneeR, 1.0 - smoothstep(0.43, 0.53, y));
    case Segment::kFootL:
      return {{kKneeL, 1.0}};
    case Segment::kFootR:
      return {{kKneeR, 1.0}};
  }
  return {{kPelvis, 1.0}};
}

std::vector<RingFrame> torso_frames(int rings) {
  std::vector<RingFrame> frames;
  constexpr double y0 = 0.80, y1 = 1.50;
  for (int i = 0; i < rings; ++i) {
    const double y = y0 + (y1 - y0) * i / (rings - 1);
    auto [rx, rz] = interp_profile(kTorsoProfile, y);
    frames.push_back({Vec3(0, y, 0), Vec3::UnitX(), -Vec3::UnitZ(), rx, rz, y});
  }
  return frames;
}

std::vector<RingFrame> neck_frames(int rings) {
  std::vector<RingFrame> frames;
  constexpr double y0 = 1.45, y1 = 1.60;
  for (int i = 0; i < rings; ++i) {
    const double y = y0 + (y1 - y0) * i / (rings - 1);
    frames.push_back({Vec3(0, y, 0), Vec3::UnitX(), -Vec3::UnitZ(), 0.055, 0.058, y});
  }
  return frames;
}

constexpr double kHeadA = 0.105, kHeadRx = 0.078, kHeadRz = 0.095;

std::vector<RingFrame> head_frames(int rings) {
  std::vector<RingFrame> frames;
  for (int i = 0; i < rings; ++i) {
    const double th = std::numbers::pi * (i + 1) / (rings + 1);
    const double y = kHeadCenterY - kHeadA * std::cos(th);
    frames.push_back({Vec3(0, y, kHeadZ), Vec3::UnitX(), -Vec3::UnitZ(), kHeadRx * std::sin(th),
                      kHeadRz * std::sin(th), y});
  }
  return frames;
}

std::vector<RingFrame> arm_frames(int rings, int side, double abduction) {
  std::vector<RingFrame> frames;
  const Vec3 d = arm_direction(side, abduction);
  const Vec3 e2 = Vec3::UnitZ();
  const Vec3 e1 = e2.cross(d);
  const Vec3 origin = shoulder_position(side);
  constexpr double s0 = -0.02, s1 = 0.73;
  for (int i = 0; i < rings; ++i) {
    const double s = s0 + (s1 - s0) * i / (rings - 1);
    auto [r1, r2] = interp_profile(kArmProfile, s);
    frames.push_back({origin + s * d, e1, e2, r1, r2, s});
  }
  return frames;
}

std::vector<RingFrame> leg_frames(int rings, int side) {
  std::vector<RingFrame> frames;
  // Built top to bottom: axis -y, e2 = +z, e1 = e2 x axis = +x.
  constexpr double y0 = 0.97, y1 = 0.06;
  for (int i = 0; i < rings; ++i) {
    const double y = y0 + (y1 - y0) * i / (rings - 1);
    auto [rx, rz] = interp_profile(kLegProfile, y);
    frames.push_back({Vec3(side * kLegX, y, 0), Vec3::UnitX(), Vec3::UnitZ(), rx, rz, y});
  }
  return frames;
}

std::vector<RingFrame> foot_frames(int rings, int side) {
  std::vector<RingFrame> frames;
  constexpr double z0 = -0.05, z1 = 0.19;
  for (int i = 0; i < rings; ++i) {
    const double z = z0 + (z1 - z0) * i / (rings - 1);
    auto [rx, ry] = interp_profile(kFootProfile, z);
    // Sole rests on y = 0.
    frames.push_back({Vec3(side * kLegX, ry, z), Vec3::UnitX(), Vec3::UnitY(), rx, ry, z});
  }
  return frames;
}

int nearest_k(int resolution, double phi) {
  const double k = phi / (2.0 * std::numbers::pi) * resolution;
  return static_cast<int>(std::lround(k)) % resolution;
}

void check_resolution(const char* name, int value) {
  if (value < 3) {
    throw InvalidArgument(std::string("template spec: ") + name + " must be >= 3, got " +
                          std::to_string(value));
  }
}

double independent_path_sum(const VertexArray& v, const MeasurementPath& path) {
  double total = 0.0;
  const std::size_t n = path.vertices.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    total += (v.row(path.vertices[i + 1]) - v.row(path.vertices[i])).norm();
  }
  if (path.closed) total += (v.row(path.vertices.front()) - v.row(path.vertices.back())).norm();
  return total;
}

}  // namespace

BodyModel build_template(const TemplateSpec& spec) {
  check_resolution("ring_resolution", spec.ring_resolution);
  check_resolution("torso_rings", spec.torso_rings);
  check_resolution("neck_rings", spec.neck_rings);
  check_resolution("head_rings", spec.head_rings);
  check_resolution("arm_rings", spec.arm_rings);
  check_resolution("leg_rings", spec.leg_rings);
  check_resolution("foot_rings", spec.foot_rings);
  if (!(spec.stature > 0.5 && spec.stature < 2.6)) {
    throw InvalidArgument("template spec: stature out of range");
  }
  if (!(spec.arm_abduction_deg > 0.0 && spec.arm_abduction_deg < 90.0)) {
    throw InvalidArgument("template spec: arm_abduction_deg must be in (0, 90)");
  }
  const double abduction = spec.arm_abduction_deg * std::numbers::pi / 180.0;
  const int R = spec.ring_resolution;

  Builder b{R, {}, {}, {}};

  const Tube torso = b.add_tube(Segment::kTorso, 0, torso_frames(spec.torso_rings),
                                Vec3(0, 0.785, 0), 0.785, Vec3(0, 1.51, 0), 1.51);
  b.add_tube(Segment::kNeck, 0, neck_frames(spec.neck_rings), Vec3(0, 1.44, 0), 1.44,
             Vec3(0, 1.61, 0), 1.61);
  const Tube head =
      b.add_tube(Segment::kHead, 0, head_frames(spec.head_rings),
                 Vec3(0, kHeadCenterY - kHeadA, kHeadZ), kHeadCenterY - kHeadA,
                 Vec3(0, kHeadCenterY + kHeadA, kHeadZ), kHeadCenterY + kHeadA);
  std::array<Tube, 2> arms;
  std::array<Tube, 2> legs;
  std::array<Tube, 2> feet;
  for (int i = 0; i < 2; ++i) {
    const int side = i == 0 ? 1 : -1;
    const Vec3 d = arm_direction(side, abduction);
    const Vec3 o = shoulder_position(side);
    arms[i] = b.add_tube(i == 0 ? Segment::kArmL : Segment::kArmR, side,
                         arm_frames(spec.arm_rings, side, abduction), o - 0.035 * d, -0.035,
                         o + 0.742 * d, 0.742);
    legs[i] = b.add_tube(i == 0 ? Segment::kLegL : Segment::kLegR, side,
                         leg_frames(spec.leg_rings, side), Vec3(side * kLegX, 0.985, 0), 0.985,
                         Vec3(side * kLegX, 0.05, 0), 0.05);
    feet[i] = b.add_tube(i == 0 ? Segment::kFootL : Segment::kFootR, side,
                         foot_frames(spec.foot_rings, side), Vec3(side * kLegX, 0.028, -0.06),
                         -0.06, Vec3(side * kLegX, 0.02, 0.20), 0.20);
  }

  if (spec.surface_noise > 0.0) {
    Rng rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.surface_noise);
    for (std::size_t i = 0; i < b.verts.size(); ++i) {
      const Vec3 r = b.verts[i] - b.info[i].center;
      const double n = r.norm();
      if (n == 0.0) continue;
      b.verts[i] += noise(rng) * (r / n);
      b.info[i].p = b.verts[i];
    }
  }

  const double scale = spec.stature / kRefStature;
  const int N = static_cast<int>(b.verts.size());

  BodyModel model;
  model.spec_ = spec;
  model.template_vertices_.resize(N, 3);
  for (int i = 0; i < N; ++i) model.template_vertices_.row(i) = scale * b.verts[i].transpose();
  model.faces_ = std::make_shared<const std::vector<Face>>(std::move(b.faces));

  for (std::size_t m = 0; m < kShapeDim; ++m) {
    VertexArray basis(N, 3);
    for (int i = 0; i < N; ++i) {
      basis.row(i) = scale * mode_displacement(m, b.info[i], abduction).transpose();
    }
    model.shape_basis_[m] = std::move(basis);
  }

  // Skeleton. Joints sit on their segment's axis so girth-type modes leave them fixed.
  struct JointDef {
    const char* name;
    int parent;
    PointInfo where;
  };
  auto axis_point = [](Segment seg, const Vec3& p, double s, int side) {
    return PointInfo{seg, p, p, s, 1.0, 1.0, side};
  };
  const Vec3 dl = arm_direction(1, abduction);
  const Vec3 dr = arm_direction(-1, abduction);
  const std::array<JointDef, kJointCount> defs = {{
      {"pelvis", -1, axis_point(Segment::kTorso, Vec3(0, 0.92, 0), 0.92, 0)},
      {"spine", kPelvis, axis_point(Segment::kTorso, Vec3(0, 1.22, 0), 1.22, 0)},
      {"neck", kSpine, axis_point(Segment::kNeck, Vec3(0, 1.47, 0), 1.47, 0)},
      {"head", kNeck, axis_point(Segment::kHead, Vec3(0, kHeadBaseY, kHeadZ), kHeadBaseY, 0)},
      {"shoulder_l", kSpine, axis_point(Segment::kArmL, shoulder_position(1), 0.0, 1)},
      {"elbow_l", kShoulderL,
       axis_point(Segment::kArmL, shoulder_position(1) + kElbowS * dl, kElbowS, 1)},
      {"shoulder_r", kSpine, axis_point(Segment::kArmR, shoulder_position(-1), 0.0, -1)},
      {"elbow_r", kShoulderR,
       axis_point(Segment::kArmR, shoulder_position(-1) + kElbowS * dr, kElbowS, -1)},
      {"hip_l", kPelvis, axis_point(Segment::kLegL, Vec3(kLegX, kHipJointY, 0), kHipJointY, 1)},
      {"knee_l", kHipL, axis_point(Segment::kLegL, Vec3(kLegX, kKneeY, 0), kKneeY, 1)},
      {"hip_r", kPelvis,
       axis_point(Segment::kLegR, Vec3(-kLegX, kHipJointY, 0), kHipJointY, -1)},
      {"knee_r", kHipR, axis_point(Segment::kLegR, Vec3(-kLegX, kKneeY, 0), kKneeY, -1)},
  }};
  for (const auto& def : defs) {
    Joint j;
    j.name = def.name;
    j.parent = def.parent;
    j.rest = scale * def.where.p;
    for (std::size_t m = 0; m < kShapeDim; ++m) {
      j.shape_offsets[m] = scale * mode_displacement(m, def.where, abduction);
    }
    model.joints_.push_back(std::move(j));
  }
  model.jitter_joints_ = {kShoulderL, kElbowL, kShoulderR, kElbowR};

  model.skin_weights_ = Eigen::MatrixXd::Zero(N, kJointCount);
  model.sparse_weights_.resize(N);
  for (int i = 0; i < N; ++i) {
    auto w = skin_weights_for(b.info[i]);
    for (auto [j, wj] : w) model.skin_weights_(i, j) = wj;
    model.sparse_weights_[i] = std::move(w);
  }

  // Measurement paths.
  auto ring = [&](const Tube& t, int ring_index) {
    std::vector<int> idx(R);
    for (int k = 0; k < R; ++k) idx[k] = t.ring_start[ring_index] + k;
    return idx;
  };
  auto line = [&](const Tube& t, int from, int to, int k) {
    std::vector<int> idx;
    const int step = from <= to ? 1 : -1;
    for (int i = from;; i += step) {
      idx.push_back(t.ring_start[i] + k);
      if (i == to) break;
    }
    return idx;
  };
  const Tube& arm = arms[0];
  const Tube& leg = legs[0];
  const int k_front = nearest_k(R, 1.5 * std::numbers::pi);  // torso: e2 = -z, so +z at 3pi/2
  const int k_back_end = nearest_k(R, std::numbers::pi);
  const int k_sole = nearest_k(R, 1.5 * std::numbers::pi);  // foot: e2 = +y

  auto path = [&](Measurement m, std::vector<int> idx, bool closed) {
    auto& p = model.paths_[static_cast<std::size_t>(m)];
    p.name = std::string(measurement_names()[static_cast<std::size_t>(m)]);
    p.vertices = std::move(idx);
    p.closed = closed;
  };
  path(Measurement::kAnkleGirth, ring(leg, leg.nearest_ring(0.11)), true);
  path(Measurement::kArmLength, line(arm, arm.nearest_ring(0.0), arm.nearest_ring(0.55), 0),
       false);
  path(Measurement::kBicepGirth, ring(arm, arm.nearest_ring(0.14)), true);
  path(Measurement::kCalfGirth, ring(leg, leg.nearest_ring(0.38)), true);
  path(Measurement::kChestGirth, ring(torso, torso.nearest_ring(1.29)), true);
  path(Measurement::kForearmGirth, ring(arm, arm.nearest_ring(0.37)), true);
  path(Measurement::kHeadToHeel, {head.pole_end, feet[0].ring_start[0] + k_sole}, false);
  path(Measurement::kHipGirth, ring(torso, torso.nearest_ring(0.91)), true);
  path(Measurement::kLegLength,
       line(leg, leg.nearest_ring(kHipJointY), static_cast<int>(leg.ring_s.size()) - 1, 0), false);
  {
    const int r = torso.nearest_ring(1.42);
    std::vector<int> idx;
    for (int k = 0; k <= k_back_end; ++k) idx.push_back(torso.ring_start[r] + k);
    path(Measurement::kShoulderBreadth, std::move(idx), false);
  }
  {
    auto idx = line(torso, torso.nearest_ring(1.42), 0, k_front);
    idx.push_back(torso.pole_begin);
    path(Measurement::kShoulderToCrotch, std::move(idx), false);
  }
  path(Measurement::kThighGirth, ring(leg, leg.nearest_ring(0.80)), true);
  path(Measurement::kWaistGirth, ring(torso, torso.nearest_ring(1.05)), true);
  path(Measurement::kWristGirth, ring(arm, arm.nearest_ring(0.55)), true);

  for (std::size_t m = 0; m < kNumMeasurements; ++m) {
    model.template_measurements_[m] =
        independent_path_sum(model.template_vertices_, model.paths_[m]);
  }
  return model;
}

Mesh BodyModel::template_mesh() const { return Mesh{template_vertices_, faces_}; }

// ---------------------------------------------------------------------------
// Shaping and skinning

namespace {

void check_inputs(const BodyModel& model, const ShapeParams& beta, const PoseParams& pose) {
  if (pose.size() != model.joint_count()) {
    throw InvalidArgument("pose has " + std::to_string(pose.size()) + " joints, model has " +
                          std::to_string(model.joint_count()));
  }
  if (!beta.all_finite()) throw InvalidArgument("shape parameters must be finite");
  for (const auto& r : pose.rotations) {
    if (!r.allFinite()) throw InvalidArgument("pose rotations must be finite");
  }
}

Mat3 rodrigues(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

struct Skeleton {
  std::vector<Mat3> world_rot;
  std::vector<Vec3> shaped_joint;
  std::vector<Vec3> world_pos;
};

Skeleton solve_skeleton(const BodyModel& model, const ShapeParams& beta, const PoseParams& pose) {
  const auto& joints = model.joints();
  const std::size_t J = joints.size();
  Skeleton sk{std::vector<Mat3>(J), std::vector<Vec3>(J), std::vector<Vec3>(J)};
  for (std::size_t j = 0; j < J; ++j) {
    Vec3 p = joints[j].rest;
    for (std::size_t m = 0; m < kShapeDim; ++m) p += beta[m] * joints[j].shape_offsets[m];
    sk.shaped_joint[j] = p;
  }
  for (std::size_t j = 0; j < J; ++j) {
    const Mat3 local = rodrigues(pose.rotations[j]);
    const int parent = joints[j].parent;
    if (parent < 0) {
      sk.world_rot[j] = local;
      sk.world_pos[j] = sk.shaped_joint[j];
    } else {
      sk.world_rot[j] = sk.world_rot[parent] * local;
      sk.world_pos[j] = sk.world_pos[parent] +
                        sk.world_rot[parent] * (sk.shaped_joint[j] - sk.shaped_joint[parent]);
    }
  }
  return sk;
}

}  // namespace

Mesh pose_shape(const BodyModel& model, const ShapeParams& beta, const PoseParams& pose) {
  check_inputs(model, beta, pose);
  VertexArray shaped = model.template_vertices_;
  for (std::size_t m = 0; m < kShapeDim; ++m) {
    if (beta[m] != 0.0) shaped.noalias() += beta[m] * model.shape_basis_[m];
  }
  if (pose.is_identity()) return Mesh{std::move(shaped), model.faces_};

  const Skeleton sk = solve_skeleton(model, beta, pose);
  const int N = static_cast<int>(shaped.rows());
  VertexArray out(N, 3);
  for (int i = 0; i < N; ++i) {
    const Vec3 v = shaped.row(i).transpose();
    Vec3 acc = Vec3::Zero();
    for (auto [j, w] : model.sparse_weights_[i]) {
      acc += w * (sk.world_rot[j] * (v - sk.shaped_joint[j]) + sk.world_pos[j]);
    }
    out.row(i) = acc.transpose();
  }
  return Mesh{std::move(out), model.faces_};
}

std::array<double, kShapeDim> pose_shape_vjp(const BodyModel& model, const ShapeParams& beta,
                                             const PoseParams& pose,
                                             const VertexArray& mesh_cotangent) {
  check_inputs(model, beta, pose);
  const int N = static_cast<int>(model.vertex_count());
  if (mesh_cotangent.rows() != N) {
    throw InvalidArgument("mesh cotangent has " + std::to_string(mesh_cotangent.rows()) +
                          " rows, expected " + std::to_string(N));
  }
  std::array<double, kShapeDim> grad{};
  if (pose.is_identity()) {
    for (std::size_t m = 0; m < kShapeDim; ++m) {
      grad[m] = model.shape_basis_[m].cwiseProduct(mesh_cotangent).sum();
    }
    return grad;
  }

  const Skeleton sk = solve_skeleton(model, beta, pose);
  const std::size_t J = model.joint_count();
  VertexArray shaped_cot(N, 3);
  std::vector<Vec3> joint_cot(J, Vec3::Zero());
  std::vector<Vec3> pos_cot(J, Vec3::Zero());
  for (int i = 0; i < N; ++i) {
    const Vec3 c = mesh_cotangent.row(i).transpose();
    Vec3 acc = Vec3::Zero();
    for (auto [j, w] : model.sparse_weights_[i]) {
      const Vec3 rc = w * (sk.world_rot[j].transpose() * c);
      acc += rc;
      joint_cot[j] -= rc;
      pos_cot[j] += w * c;
    }
    shaped_cot.row(i) = acc.transpose();
  }
  // Reverse the forward kinematics; parents precede children in joint order.
  const auto& joints = model.joints();
  for (std::size_t jj = J; jj-- > 0;) {
    const int parent = joints[jj].parent;
    if (parent < 0) {
      joint_cot[jj] += pos_cot[jj];
      continue;
    }
    pos_cot[parent] += pos_cot[jj];
    const Vec3 rc = sk.world_rot[parent].transpose() * pos_cot[jj];
    joint_cot[jj] += rc;
    joint_cot[parent] -= rc;
  }
  for (std::size_t m = 0; m < kShapeDim; ++m) {
    double g = model.shape_basis_[m].cwiseProduct(shaped_cot).sum();
    for (std::size_t j = 0; j < J; ++j) g += joints[j].shape_offsets[m].dot(joint_cot[j]);
    grad[m] = g;
  }
  return grad;
}

ShapeParams clamp_shape(const ShapeParams& beta, double lo, double hi) {
  if (!(lo < hi)) throw InvalidArgument("clamp_shape: requires lo < hi");
  ShapeParams out;
  for (std::size_t i = 0; i < kShapeDim; ++i) out[i] = std::min(std::max(beta[i], lo), hi);
  return out;
}

ShapeParams sample_shape_uniform(Rng& rng, double lo, double hi) {
  if (!(lo < hi)) throw InvalidArgument("sample_shape_uniform: requires lo < hi");
  std::uniform_real_distribution<double> u(lo, hi);
  ShapeParams b;
  for (auto& v : b.values) v = u(rng);
  return b;
}

ShapeParams sample_shape_ball(Rng& rng, const ShapeParams& center, double radius) {
  if (!(radius > 0.0)) throw InvalidArgument("sample_shape_ball: radius must be > 0");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, kShapeDim> dir{};
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (auto& d : dir) {
      d = gauss(rng);
      n2 += d * d;
    }
  } while (n2 == 0.0);
  const double r = radius * std::pow(u(rng), 1.0 / kShapeDim) / std::sqrt(n2);
  ShapeParams out = center;
  for (std::size_t i = 0; i < kShapeDim; ++i) out[i] += r * dir[i];
  return out;
}

ShapeParams sample_shape_hypercube(Rng& rng, const ShapeParams& center, double side) {
  if (!(side > 0.0)) throw InvalidArgument("sample_shape_hypercube: side must be > 0");
  std::uniform_real_distribution<double> u(-0.5 * side, 0.5 * side);
  ShapeParams out = center;
  for (auto& v : out.values) v += u(rng);
  return out;
}

PoseParams sample_pose_jitter(const BodyModel& model, Rng& rng, double sigma_rad) {
  PoseParams pose = PoseParams::identity(model.joint_count());
  if (sigma_rad <= 0.0) return pose;
  std::normal_distribution<double> gauss(0.0, sigma_rad);
  for (int j : model.jitter_joints()) {
    pose.rotations[j] = Vec3(gauss(rng), gauss(rng), gauss(rng));
  }
  return pose;
}

void export_mesh_obj(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(9);
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
    out << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' '
        << mesh.vertices(i, 2) << '\n';
  }
  for (const auto& f : *mesh.faces) {
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace bodysim
