#pragma once

// Training and inference strategies: supervised (DD), untrained physics
// optimization (uPD), physics pre-training (tPD), tPD with per-measurement
// refinement (tPDr) and the co-driven mix (CD).

#include "phaserec/datagen.hpp"
#include "phaserec/models.hpp"
#include "phaserec/optics.hpp"

#include <torch/torch.h>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace phaserec {

enum class StrategyKind { dd, upd, tpd, tpdr, cd };

std::string to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double lr_decay = 0.95;
  /// Epochs (dataset strategies) or cycles (uPD/tPDr) between decays.
  std::int64_t decay_every = 5;
  double lr_floor = 1e-5;
  std::int64_t batch = 16;
  std::int64_t epochs = 100;
};

struct StrategyConfig {
  StrategyKind kind = StrategyKind::dd;
  double alpha = 0.3;
  double beta = 0.1;
  std::optional<double> aperture_radius_px;
  /// Empty: use the dataset's distances.
  std::vector<double> distances_m;
  std::int64_t cycles = 0;
  OptimizerConfig optimizer;
  std::uint64_t rng_seed = 0;

  /// Defaults per strategy: uPD 10,000 cycles / tPDr 1,000 cycles with weight
  /// decay 1e-3 and decay every 500 / 100 cycles; dataset strategies 100
  /// epochs, batch 16, decay every 5 epochs.
  static StrategyConfig defaults(StrategyKind kind);
  void validate() const;
  bool needs_ground_truth() const { return kind == StrategyKind::dd || kind == StrategyKind::cd; }
  bool per_measurement() const { return kind == StrategyKind::upd || kind == StrategyKind::tpdr; }
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);
void to_json(nlohmann::json& j, const StrategyConfig& c);
/// Missing keys fall back to StrategyConfig::defaults(kind).
void from_json(const nlohmann::json& j, StrategyConfig& c);

struct TrainReport {
  std::string strategy;
  /// Per-epoch (training) or per-cycle (refinement) traces keyed by term:
  /// "total", "data", "physics", "aperture", and "best" for refinement.
  std::map<std::string, std::vector<double>> traces;
  double wall_seconds = 0.0;
  std::int64_t steps = 0;
  std::int64_t epochs = 0;
  std::int64_t cycles = 0;
  std::int64_t best_cycle = -1;
  double best_loss = 0.0;

  /// JSON summary plus one PRT file per trace ([1, T]).
  void save(const std::filesystem::path& dir) const;
};

void to_json(nlohmann::json& j, const TrainReport& r);
void from_json(const nlohmann::json& j, TrainReport& r);

/// In-memory view of a dataset: stacked holograms and optional ground truth.
class DatasetView {
 public:
  explicit DatasetView(const std::filesystem::path& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::int64_t size() const { return manifest_.count; }

  torch::Tensor holograms() const { return holograms_; }  // [n, K, N, N] f32
  torch::Tensor gt_phase() const { return gt_phase_; }    // [n, 1, N, N] or undefined
  torch::Tensor gt_amplitude() const { return gt_amplitude_; }
  torch::Tensor aberration() const { return aberration_; }

 private:
  std::filesystem::path dir_;
  DatasetManifest manifest_;
  torch::Tensor holograms_, gt_phase_, gt_amplitude_, aberration_;
};

struct TrainResult {
  ModelWeights weights;
  TrainReport report;
};

/// Trains DD, tPD or CD on a dataset. DD and CD require ground truth
/// (ConfigError otherwise); tPD needs holograms only.
TrainResult train(const StrategyConfig& strategy, const DatasetView& dataset,
                  const ModelSpec& spec);
TrainResult train(const StrategyConfig& strategy, const std::filesystem::path& dataset,
                  const ModelSpec& spec);

struct Inference {
  NetOutput output;  // detached, [B, 1, N, N]
  double seconds = 0.0;
};

/// One forward pass without gradients.
Inference infer_trained(const ModelWeights& weights, const torch::Tensor& holograms);

struct RefineResult {
  NetOutput output;  // best-loss iterate
  TrainReport report;
  ModelWeights weights;
};

/// Holograms as [K, N, N] with one forward model per channel.
struct Measurement {
  torch::Tensor holograms;
  OpticalConfig optics;  // optics.distances_m: one per channel

  static Measurement from(const std::vector<Hologram>& stack);
};

/// Optimizes a freshly initialized network on one measurement.
RefineResult infer_upd(const Measurement& measurement, const ModelSpec& spec,
                       const StrategyConfig& strategy);

/// Fine-tunes a copy of tPD-trained weights on one measurement.
RefineResult refine_tpdr(const ModelWeights& weights, const Measurement& measurement,
                         const StrategyConfig& strategy);

}  // namespace phaserec
