#pragma once

// Dataset synthesis: image corpora mapped to phase/amplitude objects,
// holograms at one or more distances, optional RME aberrations, and the
// on-disk container (manifest.json + per-record PRT tensors).

#include "phaserec/optics.hpp"

#include <torch/torch.h>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace phaserec {

inline constexpr const char* kContainerVersion = "1";

struct PhaseRange {
  double min = 0.0;
  double max = std::numbers::pi;

  double width() const { return max - min; }
  void validate() const;
};

void to_json(nlohmann::json& j, const PhaseRange& r);
void from_json(const nlohmann::json& j, PhaseRange& r);

/// Resizes `image` (values in [0, 1]) to n x n with antialiased bilinear
/// filtering and maps it affinely onto the phase range.
torch::Tensor image_to_phase(const torch::Tensor& image, std::int64_t n,
                             PhaseRange range);

/// Random matrix enlargement.
struct RMEConfig {
  std::int64_t seed_matrix_size = 4;
  double amplitude_min = 0.0;
  double amplitude_max = 2.0;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const RMEConfig& c);
void from_json(const nlohmann::json& j, RMEConfig& c);

/// Smooth random phase: a k x k uniform matrix enlarged bicubically to
/// n x n, mapped into the amplitude range and clamped to it.
torch::Tensor rme_aberration(const RMEConfig& cfg, std::int64_t n);

enum class CorpusStyle { dense, medium, sparse };

std::string to_string(CorpusStyle s);
CorpusStyle corpus_style_from_string(const std::string& s);

/// One synthetic image, a deterministic function of (style, seed, index).
/// Dense: multi-scale filtered noise. Medium: a few smooth blobs over a faint
/// texture. Sparse: 2-4 binary strokes on an empty background.
torch::Tensor synthetic_image(CorpusStyle style, std::uint64_t seed,
                              std::int64_t index, std::int64_t size);

std::vector<torch::Tensor> synthetic_corpus(std::int64_t count, CorpusStyle style,
                                            std::uint64_t seed, std::int64_t size);

/// Sequential image stream with random access by index.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual std::int64_t available() const = 0;
  /// Image `index` as float64 [h, w] in [0, 1].
  virtual torch::Tensor image(std::int64_t index) const = 0;
  virtual std::string descriptor() const = 0;
};

/// "synthetic:dense", "synthetic:medium", "synthetic:sparse", or a directory
/// of PNG/BMP/PGM images.
std::unique_ptr<ImageSource> open_corpus(const std::string& spec, std::uint64_t seed,
                                         std::int64_t size);

/// amplitude = min + (max - min) * (invert ? 1 - image : image)
struct AmplitudeMapping {
  double min = 0.0;
  double max = 1.0;
  bool invert = false;
};

void to_json(nlohmann::json& j, const AmplitudeMapping& m);
void from_json(const nlohmann::json& j, AmplitudeMapping& m);

struct GenerationSpec {
  std::string corpus = "synthetic:dense";
  std::int64_t count = 100;
  /// Corpus index of the first record; lets train/test splits share a corpus.
  std::int64_t first_index = 0;
  PhaseRange phase_range;
  std::optional<std::string> amplitude_corpus;  // none: A == 1
  AmplitudeMapping amplitude_mapping;
  /// Per record the RME seed is mixed with the record index.
  std::optional<RMEConfig> aberration;
  /// Samples confined to a centered disk of this radius (pixels).
  std::optional<double> support_radius_px;
  bool include_gt = true;
  std::uint64_t seed = 0;
  int jobs = 1;
};

void to_json(nlohmann::json& j, const GenerationSpec& s);
void from_json(const nlohmann::json& j, GenerationSpec& s);

struct DatasetManifest {
  OpticalConfig optics;  // optics.distances_m lists the hologram distances
  std::int64_t count = 0;
  PhaseRange phase_range;
  std::string corpus_descriptor;
  std::vector<std::string> records;  // paths relative to the dataset root
  std::string container_version = kContainerVersion;
  std::string hologram_convention = "intensity";
  bool has_gt_phase = false;
  bool has_gt_amplitude = false;
  bool has_aberration = false;
  std::optional<double> support_radius_px;
  nlohmann::json generation;  // full GenerationSpec for provenance

  const std::vector<double>& distances() const { return optics.distances_m; }
  void validate() const;
  /// Hash of the manifest text; ties trained weights to their data.
  std::string hash() const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

struct DatasetRecord {
  std::string record_id;
  std::vector<Hologram> holograms;  // one per manifest distance
  torch::Tensor gt_phase;           // undefined when absent
  torch::Tensor gt_amplitude;
  torch::Tensor aberration_phase;
};

/// File name of the hologram at distance z, e.g. "holo_0.02.prt".
std::string hologram_filename(double z_m);

/// Builds the sample object of one record from its stored tensors: the phase
/// that actually formed the hologram is gt_phase + aberration_phase.
SampleObject record_sample(const DatasetRecord& record);

DatasetManifest generate_dataset(const GenerationSpec& spec, const OpticalConfig& optics,
                                 const std::filesystem::path& out);

void write_manifest(const std::filesystem::path& dir, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& dir);

void write_record(const std::filesystem::path& dataset_dir,
                  const std::string& relative_path, const DatasetRecord& r);
DatasetRecord read_record(const std::filesystem::path& dataset_dir,
                          const DatasetManifest& m, std::size_t index);

/// Grayscale image file -> hologram at optics.distance(), resized to the
/// optics grid and scaled to unit mean. Optics must be given explicitly;
/// a missing configuration is a ConfigError, never a default.
Hologram ingest_external_hologram(const std::filesystem::path& file,
                                  const std::optional<OpticalConfig>& optics);

/// Centered binary disk of radius r on an n x n grid (float64).
torch::Tensor disk_mask(std::int64_t n, double radius_px);

}  // namespace phaserec
