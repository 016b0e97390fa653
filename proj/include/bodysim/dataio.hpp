#pragma once

#include "bodysim/bmnet.hpp"
#include "bodysim/bodymodel.hpp"
#include "bodysim/diffcore.hpp"
#include "bodysim/hwnet.hpp"
#include "bodysim/measure.hpp"
#include "bodysim/renderer.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bodysim {

/// Writes to a temporary sibling and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

enum class Split { kTrain, kTestA, kTestB };
std::string_view split_name(Split s);
Split parse_split(std::string_view token);

inline constexpr std::size_t kNumBmiBands = 6;
// Bands: <18.5, 18.5-25, 25-30, 30-40, 40-50, >=50.
inline constexpr std::array<double, kNumBmiBands - 1> kBmiBandEdges = {18.5, 25.0, 30.0, 40.0, 50.0};
std::size_t bmi_band(double bmi_value);
std::string_view bmi_band_label(std::size_t band);

struct Provenance {
  ShapeParams beta;
  PoseParams pose;
  double camera_distance = 0.0;
};

struct Sample {
  std::string subject_id;
  Split split = Split::kTrain;
  Metadata meta;
  MeasurementVector measurements;
  std::string front_path;  // relative to the dataset root
  std::string lateral_path;
  std::optional<Provenance> provenance;
  std::vector<std::pair<std::string, std::string>> extra;  // unknown manifest columns, in order
};

struct Dataset {
  std::filesystem::path root;
  std::vector<Sample> samples;

  std::vector<const Sample*> split(Split s) const;
};

struct SplitSpec {
  std::size_t count = 0;
  std::array<double, kNumBmiBands> band_fractions{};
};

/// Boundary dilation (radius > 0) or erosion (radius < 0) in Chebyshev pixels,
/// then `specks` body pixels cleared at random.
SilhouetteImage apply_segmentation_noise(const SilhouetteImage& image, int radius, int specks,
                                         Rng& rng);

struct SegmentationNoise {
  bool enabled = false;
  int max_radius = 2;  // radius drawn uniformly from [-max_radius, max_radius]
  int max_specks = 3;
};

struct PopulationSpec {
  SplitSpec train;
  SplitSpec test_a;
  SplitSpec test_b;
  std::uint64_t seed = 0;
  int width = 48;
  int height = 64;
  double pose_sigma_deg = 5.0;
  double distance_lo = 1.68;
  double distance_hi = 1.98;
  double beta_lo = -3.0;
  double beta_hi = 3.0;
  std::size_t max_draws = 2'000'000;  // per split
  SegmentationNoise noise;
  int workers = 1;

  void validate() const;
  /// Band mix per split modeled on a real-capture population, at the given scale.
  static PopulationSpec desk_default(std::size_t train = 2000, std::size_t test_a = 400,
                                     std::size_t test_b = 400);
};

inline constexpr std::string_view kManifestName = "manifest.csv";

/// Rejection-samples shapes into BMI bands, renders hard silhouettes, writes
/// PGMs and the manifest under root. Height and weight come from the oracle on
/// the canonical-pose mesh unless a regressor is given.
Dataset generate_population(const BodyModel& model, const PopulationSpec& spec,
                            const std::filesystem::path& root, const HWnet* hw = nullptr);

std::vector<std::string> manifest_required_columns();
void save_manifest(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_manifest(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255); load maps bytes to value / 255.
void save_silhouette(const SilhouetteImage& image, const std::filesystem::path& path);
SilhouetteImage load_silhouette(const std::filesystem::path& path);

/// 16-byte header (magic "ABSF", width, height, reserved) then row-major float32.
void save_float_image(const SilhouetteImage& image, const std::filesystem::path& path);
SilhouetteImage load_float_image(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string descriptor;
  ParamSet params;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_checkpoint(const BMnet& net, const std::filesystem::path& path);
void save_checkpoint(const HWnet& net, const std::filesystem::path& path);
BMnet load_bmnet(const std::filesystem::path& path);
HWnet load_hwnet(const std::filesystem::path& path);

/// Supervised example with silhouettes in memory.
struct Example {
  SilhouetteImage frontal;
  SilhouetteImage lateral;
  Metadata meta;
  MeasurementVector truth;
  std::optional<ShapeParams> beta;
};

std::vector<Example> load_examples(const Dataset& dataset, Split split);

}  // namespace bodysim
