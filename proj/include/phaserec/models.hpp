#pragma once

// U-Net (phase head) and Y-Net (phase + amplitude heads) builders,
// deterministic initialization and checkpoint I/O.

#include "phaserec/datagen.hpp"

#include <torch/torch.h>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace phaserec {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ModelSpec {
  std::int64_t input_channels = 1;
  bool amplitude_head = false;
  std::int64_t depth = 4;
  std::int64_t base_width = 32;
  std::uint64_t rng_seed = 0;
  PhaseRange phase_range;

  void validate() const;
  /// Throws ConfigError unless n is divisible by 2^depth.
  void validate_grid(std::int64_t n) const;
};

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

/// What produced a set of weights.
struct Provenance {
  std::string strategy = "init";
  std::int64_t epochs = 0;
  std::int64_t cycles = 0;
  std::string dataset_hash;
  std::optional<OpticalConfig> optics;
};

void to_json(nlohmann::json& j, const Provenance& p);
void from_json(const nlohmann::json& j, Provenance& p);

/// conv3x3 -> GroupNorm -> ReLU, twice.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(std::int64_t in_channels, std::int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
};
TORCH_MODULE(ConvBlock);

/// One up-sampling path: bilinear x2, skip concatenation, ConvBlock per
/// level, then a 1x1 head.
class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(std::int64_t depth, std::int64_t base_width);
  torch::Tensor forward(torch::Tensor x, const std::vector<torch::Tensor>& skips);

  torch::nn::Conv2d head() const { return head_; }

 private:
  torch::nn::ModuleList blocks_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Decoder);

struct NetOutput {
  torch::Tensor phase;      // [B, 1, N, N], inside the spec's phase range
  torch::Tensor amplitude;  // [B, 1, N, N] in [0, 1]; undefined for U-Net
};

class PhaseNetImpl : public torch::nn::Module {
 public:
  explicit PhaseNetImpl(const ModelSpec& spec);
  NetOutput forward(const torch::Tensor& x);

  Decoder phase_decoder() const { return phase_decoder_; }
  Decoder amplitude_decoder() const { return amplitude_decoder_; }

 private:
  ModelSpec spec_;
  torch::nn::ModuleList encoder_;
  ConvBlock bottleneck_{nullptr};
  Decoder phase_decoder_{nullptr};
  Decoder amplitude_decoder_{nullptr};
};
TORCH_MODULE(PhaseNet);

/// A network together with the spec that shaped it and its provenance.
/// Copies share the underlying module; use clone() for an independent copy.
struct ModelWeights {
  ModelSpec spec;
  PhaseNet net{nullptr};
  Provenance provenance;

  ModelWeights clone() const;
  std::int64_t parameter_count() const;
};

ModelWeights build_model(const ModelSpec& spec);

/// Accepts [C, N, N] or [B, C, N, N] hologram stacks.
NetOutput forward(const ModelWeights& weights, const torch::Tensor& input);

/// Versioned header + named tensors, each in the PRT encoding.
void save_checkpoint(const ModelWeights& weights, const std::filesystem::path& path);
ModelWeights load_checkpoint(const std::filesystem::path& path);

/// Device from the PHASEREC_DEVICE environment variable (default cpu).
torch::Device compute_device();

}  // namespace phaserec
