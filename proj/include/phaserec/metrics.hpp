#pragma once

// Image-quality metrics for reconstructions. Inputs are [.., N, N]; batch
// dimensions are averaged unless noted.

#include <torch/torch.h>

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace phaserec {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kDefaultBandCutoff = 0.05;

struct Psnr {
  double db = 0.0;
  bool identical = false;  // zero error; db is then kPsnrCap
};

/// 10 log10(range^2 / mse), capped at kPsnrCap.
Psnr psnr(const torch::Tensor& pred, const torch::Tensor& gt, double data_range);

/// Local SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 0.01,
/// K2 0.03). Result is [.., N-10, N-10].
torch::Tensor ssim_map(const torch::Tensor& pred, const torch::Tensor& gt, double data_range);

/// Mean of ssim_map. A mask [N, N] restricts the mean to window centres
/// inside it.
double ssim(const torch::Tensor& pred, const torch::Tensor& gt, double data_range,
            const torch::Tensor& mask = {});

/// Removes the global phase offset of pred relative to gt, modulo 2 pi:
/// returns gt + wrap(pred - gt - c) where c is the circular mean of
/// pred - gt (over the mask when given), per image.
torch::Tensor piston_align(const torch::Tensor& pred, const torch::Tensor& gt,
                           const torch::Tensor& mask = {});

struct BandSplit {
  double low_rms = 0.0;
  double high_rms = 0.0;
};

/// RMS of the piston-aligned error split at a radial spatial frequency
/// (cycles/px). low + high energies add up to the total (Parseval).
BandSplit band_split_error(const torch::Tensor& pred, const torch::Tensor& gt,
                           double cutoff = kDefaultBandCutoff);

enum class ProfileAxis { row, column };

/// One row or column of a 2-D image; out-of-range index is a ValidationError.
torch::Tensor line_profile(const torch::Tensor& image, std::int64_t index,
                           ProfileAxis axis = ProfileAxis::row);

/// Pearson correlation of two images (optionally masked).
double pearson(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask = {});

struct RecordMetrics {
  std::string record_id;
  double psnr_db = 0.0;
  bool identical = false;
  double ssim = 0.0;
  BandSplit bands;
};

struct MetricReport {
  std::vector<RecordMetrics> records;
  double mean_psnr_db = 0.0;
  double mean_ssim = 0.0;
  BandSplit mean_bands;
  std::string error_map_path;  // mean absolute error map (PRT), if written

  void finalize();  // recomputes the means
};

void to_json(nlohmann::json& j, const BandSplit& b);
void from_json(const nlohmann::json& j, BandSplit& b);
void to_json(nlohmann::json& j, const RecordMetrics& r);
void from_json(const nlohmann::json& j, RecordMetrics& r);
void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

struct PhaseEvalOptions {
  double data_range = 0.0;  // phase range width
  double cutoff = kDefaultBandCutoff;
  torch::Tensor mask;       // optional [N, N] support
  bool align = true;
};

/// Per-record phase metrics after piston alignment. pred/gt: [B, 1, N, N]
/// or [B, N, N].
MetricReport evaluate_phase(const torch::Tensor& pred, const torch::Tensor& gt,
                            const PhaseEvalOptions& options,
                            const std::vector<std::string>& ids = {});

/// Amplitude metrics (no alignment, data range 1).
MetricReport evaluate_amplitude(const torch::Tensor& pred, const torch::Tensor& gt,
                                const torch::Tensor& mask = {},
                                const std::vector<std::string>& ids = {});

/// Mean |pred - gt| over the batch, [N, N].
torch::Tensor mean_abs_error_map(const torch::Tensor& pred, const torch::Tensor& gt);

}  // namespace phaserec
