#pragma once

// Comparison protocols: strategy table, cross-generalization matrix,
// ill-posedness suite, aberration prior test and defocus sweep.
//
// Every harness works in a cache directory: datasets, trained weights and
// per-measurement refinements are keyed by a hash of the configuration that
// produced them, so reruns and harnesses sharing a setup reuse earlier work.

#include "phaserec/datagen.hpp"
#include "phaserec/metrics.hpp"
#include "phaserec/models.hpp"
#include "phaserec/optics.hpp"
#include "phaserec/strategies.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace phaserec {

inline constexpr int kHarnessSchemaVersion = 1;

struct SuiteConfig {
  OpticalConfig optics;
  std::string corpus = "synthetic:dense";
  PhaseRange phase_range;
  std::int64_t train_count = 500;
  std::int64_t test_count = 32;
  ModelSpec model;
  std::int64_t epochs = 20;
  std::int64_t batch = 16;
  std::int64_t upd_cycles = 2000;
  std::int64_t tpdr_cycles = 200;
  /// Test records refined by uPD / tPDr; -1 means all.
  std::int64_t refine_records = -1;
  double alpha = 0.3;
  double beta = 0.1;
  double band_cutoff = kDefaultBandCutoff;
  std::uint64_t seed = 0;
  int jobs = 1;

  /// 64x64, 16 um pitch, 532 nm, 20 mm; depth-3 width-16 network.
  static SuiteConfig desk();
  void validate() const;
};

void to_json(nlohmann::json& j, const SuiteConfig& c);
void from_json(const nlohmann::json& j, SuiteConfig& c);

/// Named axes and one cell per combination of axis values. Cell keys join
/// the values in axis order with '/'.
struct HarnessGrid {
  int schema_version = kHarnessSchemaVersion;
  std::string harness;
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  std::map<std::string, nlohmann::json> cells;
  nlohmann::json provenance;  // config, seeds, dataset hashes, weights hashes

  static std::string key(const std::vector<std::string>& values);
  std::vector<std::string> expected_keys() const;
  bool complete() const;
  const nlohmann::json& cell(const std::vector<std::string>& values) const;
  void save(const std::filesystem::path& path) const;
  static HarnessGrid load(const std::filesystem::path& path);
};

void to_json(nlohmann::json& j, const HarnessGrid& g);
void from_json(const nlohmann::json& j, HarnessGrid& g);

/// Cache of datasets and trained weights under one work directory.
class Workspace {
 public:
  explicit Workspace(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  /// Generates the dataset unless an identical one is cached.
  std::filesystem::path dataset(const GenerationSpec& spec, const OpticalConfig& optics);

  /// Trains unless weights for the same (strategy, spec, dataset) are cached.
  TrainResult trained(const StrategyConfig& strategy, const std::filesystem::path& dataset,
                      const ModelSpec& spec);

  /// Per-measurement refinement (uPD from scratch, tPDr from `init`) of
  /// every listed record, cached per record.
  torch::Tensor refined_phase(const StrategyConfig& strategy, const DatasetView& test,
                              std::int64_t records, const ModelSpec& spec,
                              const ModelWeights* init, double* seconds_per_record);

 private:
  std::filesystem::path root_;
};

struct HarnessOptions {
  std::filesystem::path work_dir;
  std::filesystem::path out_dir;  // report.json plus PNG/CSV exports; empty: none
};

/// Strategy table on one train/test split: PSNR, SSIM, band errors and
/// timings per strategy.
HarnessGrid run_strategy_comparison(const SuiteConfig& cfg, const HarnessOptions& opt,
                                    const std::vector<StrategyKind>& strategies);

/// Train-corpus x test-corpus SSIM per strategy.
HarnessGrid run_cross_generalization(const SuiteConfig& cfg, const HarnessOptions& opt,
                                     const std::vector<CorpusStyle>& styles,
                                     const std::vector<StrategyKind>& strategies);

enum class IllPosedVariant { single, aperture, multi };
std::string to_string(IllPosedVariant v);
IllPosedVariant illposed_variant_from_string(const std::string& s);

struct IllPosedConfig {
  double support_radius_px = 20.0;
  std::vector<double> multi_distances_m{0.02, 0.04, 0.06};
  AmplitudeMapping amplitude{0.5, 1.0, true};
};

void to_json(nlohmann::json& j, const IllPosedConfig& c);
void from_json(const nlohmann::json& j, IllPosedConfig& c);

/// Dual-output networks under single hologram, aperture constraint and
/// three-distance input. Phase is scored inside the object support.
HarnessGrid run_illposedness_suite(const SuiteConfig& cfg, const HarnessOptions& opt,
                                   const IllPosedConfig& ill,
                                   const std::vector<CorpusStyle>& styles,
                                   const std::vector<StrategyKind>& strategies,
                                   const std::vector<IllPosedVariant>& variants);

/// Networks trained on holograms of (sample + RME aberration); DD learns from
/// the aberration-free phase. Reports SSIM against the clean phase and
/// correlations with the clean and with the aberrated phase.
HarnessGrid run_aberration_suite(const SuiteConfig& cfg, const HarnessOptions& opt,
                                 const RMEConfig& rme,
                                 const std::vector<StrategyKind>& strategies);

/// SSIM of networks trained at cfg.optics.distance() on test holograms
/// regenerated at each distance.
HarnessGrid run_defocus_sweep(const SuiteConfig& cfg, const HarnessOptions& opt,
                              const std::vector<double>& distances_m,
                              const std::vector<StrategyKind>& strategies);

}  // namespace phaserec
