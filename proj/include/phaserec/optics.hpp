#pragma once

// Scalar diffraction forward model: band-limited angular-spectrum
// propagation on a periodic square grid, hologram formation and the
// padding/cropping edge control.

#include <torch/torch.h>

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace phaserec {

struct OpticalConfig {
  double wavelength_m = 532e-9;
  double pixel_pitch_m = 4e-6;
  std::int64_t grid_size = 256;
  bool pad = false;
  /// One entry for single-hologram setups, three for multi-distance stacks.
  std::vector<double> distances_m{0.02};

  /// Throws ConfigError on non-positive wavelength/pitch, odd or tiny grids
  /// and non-finite distances.
  void validate() const;

  double distance() const { return distances_m.front(); }

  /// Largest |z| for which the transfer function is adequately sampled,
  /// (pitch * N)^2 / wavelength.
  double sampling_limit_m() const;

  bool same_geometry(const OpticalConfig& other) const;
};

void to_json(nlohmann::json& j, const OpticalConfig& c);
void from_json(const nlohmann::json& j, OpticalConfig& c);

/// Sampled complex wave. `values` is complex with the grid in the last two
/// dimensions; leading dimensions are treated as a batch.
struct ComplexField {
  torch::Tensor values;
  OpticalConfig config;

  double energy() const;
};

/// Object-plane description: phase in radians, amplitude in [0, 1].
struct SampleObject {
  torch::Tensor phase;
  torch::Tensor amplitude;  // undefined tensor means A == 1 (phase-only)

  bool phase_only() const { return !amplitude.defined(); }
  void validate() const;
};

struct Hologram {
  torch::Tensor intensity;
  double z_m = 0.0;
  OpticalConfig config;

  void validate() const;
};

/// Number of frequency samples on an n x n grid that are evanescent for the
/// given optics and therefore zeroed by the transfer function.
std::int64_t evanescent_count(const OpticalConfig& optics, std::int64_t n);

/// exp(i 2 pi z sqrt(1/lambda^2 - fx^2 - fy^2)) on the unshifted FFT grid,
/// evanescent entries zeroed. Always complex128.
torch::Tensor transfer_function(const OpticalConfig& optics, std::int64_t n,
                                double z_m);

/// Differentiable propagation of a complex tensor (..., n, n) by z.
/// Precision follows the input dtype.
torch::Tensor propagate(const torch::Tensor& field, const OpticalConfig& optics,
                        double z_m);

ComplexField angular_spectrum_propagate(const ComplexField& field, double z_m);

/// Intensity |G(A exp(iP))|^2 for batched phase/amplitude tensors (..., N, N).
/// Honors optics.pad: when set, the object is embedded in a 2N x 2N unit
/// plane wave and the intensity is cropped back to the central N x N.
/// Differentiable with respect to both phase and amplitude.
torch::Tensor hologram_intensity(const torch::Tensor& phase,
                                 const torch::Tensor& amplitude,
                                 const OpticalConfig& optics, double z_m);

Hologram form_hologram(const SampleObject& sample, double z_m,
                       const OpticalConfig& config);

/// form_hologram with padding forced on.
Hologram pad_and_crop(const SampleObject& sample, double z_m,
                      const OpticalConfig& config);

/// Caches the transfer function for one (optics, z) pair. Each training loop
/// owns its own instance, so no locking is needed.
class ForwardModel {
 public:
  ForwardModel(OpticalConfig optics, double z_m);

  torch::Tensor operator()(const torch::Tensor& phase,
                           const torch::Tensor& amplitude) const;

  const OpticalConfig& optics() const { return optics_; }
  double distance() const { return z_m_; }

 private:
  OpticalConfig optics_;
  double z_m_;
  torch::Tensor transfer_c128_;
  torch::Tensor transfer_c64_;
};

}  // namespace phaserec
