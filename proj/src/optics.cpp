#include "phaserec/optics.hpp"

#include "phaserec/error.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace phaserec {

namespace {

using torch::indexing::Slice;

void require_square_even(const torch::Tensor& t, const char* what) {
  if (t.dim() < 2) {
    throw ConfigError(std::string(what) + ": expected at least 2 dimensions");
  }
  const auto h = t.size(-2);
  const auto w = t.size(-1);
  if (h != w) {
    throw ConfigError(std::string(what) + ": grid must be square, got " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  if (h % 2 != 0 || h < 8) {
    throw ConfigError(std::string(what) +
                      ": grid size must be even and >= 8, got " +
                      std::to_string(h));
  }
}

void require_finite(const torch::Tensor& t, const char* what) {
  if (!torch::isfinite(t.detach()).all().item<bool>()) {
    throw ValidationError(std::string(what) + ": non-finite entries");
  }
}

torch::Tensor transfer_like(const torch::Tensor& c128, const torch::Tensor& like) {
  auto t = like.scalar_type() == torch::kComplexDouble ||
                   like.scalar_type() == torch::kDouble
               ? c128
               : c128.to(torch::kComplexFloat);
  return t.device() == like.device() ? t : t.to(like.device());
}

torch::Tensor to_complex_field(const torch::Tensor& phase,
                               const torch::Tensor& amplitude) {
  auto amp = amplitude.defined() ? amplitude : torch::ones_like(phase);
  return torch::polar(amp, phase);
}

// Embeds a field in a 2N x 2N unit plane wave.
torch::Tensor embed_padded(const torch::Tensor& field) {
  const auto n = field.size(-1);
  const auto p = n / 2;
  namespace F = torch::nn::functional;
  return F::pad(field - 1.0, F::PadFuncOptions({p, p, p, p})) + 1.0;
}

torch::Tensor crop_center(const torch::Tensor& t, std::int64_t n) {
  const auto p = (t.size(-1) - n) / 2;
  return t.index({"...", Slice(p, p + n), Slice(p, p + n)});
}

}  // namespace

void OpticalConfig::validate() const {
  if (!(wavelength_m > 0.0) || !std::isfinite(wavelength_m)) {
    throw ConfigError("wavelength must be positive");
  }
  if (!(pixel_pitch_m > 0.0) || !std::isfinite(pixel_pitch_m)) {
    throw ConfigError("pixel pitch must be positive");
  }
  if (grid_size < 8 || grid_size % 2 != 0) {
    throw ConfigError("grid size must be even and >= 8, got " +
                      std::to_string(grid_size));
  }
  if (distances_m.empty()) {
    throw ConfigError("at least one propagation distance is required");
  }
  for (double z : distances_m) {
    if (!std::isfinite(z)) throw ConfigError("propagation distance must be finite");
  }
}

double OpticalConfig::sampling_limit_m() const {
  const double side = pixel_pitch_m * static_cast<double>(grid_size);
  return side * side / wavelength_m;
}

bool OpticalConfig::same_geometry(const OpticalConfig& o) const {
  return wavelength_m == o.wavelength_m && pixel_pitch_m == o.pixel_pitch_m &&
         grid_size == o.grid_size && pad == o.pad;
}

void to_json(nlohmann::json& j, const OpticalConfig& c) {
  j = nlohmann::json{{"wavelength_m", c.wavelength_m},
                     {"pixel_pitch_m", c.pixel_pitch_m},
                     {"grid_size", c.grid_size},
                     {"pad", c.pad}};
  if (c.distances_m.size() == 1) {
    j["distance_m"] = c.distances_m.front();
  } else {
    j["distance_m"] = c.distances_m;
  }
}

void from_json(const nlohmann::json& j, OpticalConfig& c) {
  try {
    c.wavelength_m = j.at("wavelength_m").get<double>();
    c.pixel_pitch_m = j.at("pixel_pitch_m").get<double>();
    c.grid_size = j.at("grid_size").get<std::int64_t>();
    c.pad = j.value("pad", false);
    const auto& d = j.at("distance_m");
    c.distances_m = d.is_array() ? d.get<std::vector<double>>()
                                 : std::vector<double>{d.get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("optics: ") + e.what());
  }
}

double ComplexField::energy() const {
  return values.abs().square().sum().item<double>();
}

void SampleObject::validate() const {
  if (!phase.defined()) throw ValidationError("sample has no phase");
  require_finite(phase, "sample phase");
  if (amplitude.defined()) {
    if (!amplitude.sizes().equals(phase.sizes())) {
      throw ValidationError("sample amplitude and phase shapes differ");
    }
    require_finite(amplitude, "sample amplitude");
    if ((amplitude < 0).any().item<bool>() || (amplitude > 1).any().item<bool>()) {
      throw ValidationError("sample amplitude must lie in [0, 1]");
    }
  }
}

void Hologram::validate() const {
  require_finite(intensity, "hologram");
  if ((intensity < 0).any().item<bool>()) {
    throw ValidationError("hologram intensity must be non-negative");
  }
}

std::int64_t evanescent_count(const OpticalConfig& optics, std::int64_t n) {
  auto f = torch::fft::fftfreq(n, optics.pixel_pitch_m, torch::kFloat64);
  auto f2 = f.square().unsqueeze(1) + f.square().unsqueeze(0);
  const double cutoff = 1.0 / (optics.wavelength_m * optics.wavelength_m);
  return (f2 >= cutoff).sum().item<std::int64_t>();
}

torch::Tensor transfer_function(const OpticalConfig& optics, std::int64_t n,
                                double z_m) {
  auto f = torch::fft::fftfreq(n, optics.pixel_pitch_m, torch::kFloat64);
  auto f2 = f.square().unsqueeze(1) + f.square().unsqueeze(0);
  const double inv_lambda2 = 1.0 / (optics.wavelength_m * optics.wavelength_m);
  auto arg = inv_lambda2 - f2;
  auto propagating = (arg > 0).to(torch::kFloat64);
  auto kz = torch::sqrt(torch::clamp_min(arg, 0.0));
  return torch::polar(propagating, 2.0 * std::numbers::pi * z_m * kz);
}

torch::Tensor propagate(const torch::Tensor& field, const OpticalConfig& optics,
                        double z_m) {
  require_square_even(field, "propagate");
  require_finite(torch::view_as_real(field.is_complex() ? field
                                                        : field.to(torch::kComplexDouble)),
                 "propagate input");
  if (z_m == 0.0) return field;
  auto u = field.is_complex() ? field : field.to(torch::kComplexDouble);
  auto h = transfer_like(transfer_function(optics, u.size(-1), z_m), u);
  return torch::fft::ifft2(torch::fft::fft2(u) * h);
}

ComplexField angular_spectrum_propagate(const ComplexField& field, double z_m) {
  field.config.validate();
  return ComplexField{propagate(field.values, field.config, z_m), field.config};
}

torch::Tensor hologram_intensity(const torch::Tensor& phase,
                                 const torch::Tensor& amplitude,
                                 const OpticalConfig& optics, double z_m) {
  return ForwardModel(optics, z_m)(phase, amplitude);
}

Hologram form_hologram(const SampleObject& sample, double z_m,
                       const OpticalConfig& config) {
  config.validate();
  sample.validate();
  auto intensity = hologram_intensity(sample.phase, sample.amplitude, config, z_m);
  return Hologram{intensity, z_m, config};
}

Hologram pad_and_crop(const SampleObject& sample, double z_m,
                      const OpticalConfig& config) {
  auto padded = config;
  padded.pad = true;
  return form_hologram(sample, z_m, padded);
}

ForwardModel::ForwardModel(OpticalConfig optics, double z_m)
    : optics_(std::move(optics)), z_m_(z_m) {
  const auto n = optics_.pad ? 2 * optics_.grid_size : optics_.grid_size;
  transfer_c128_ = transfer_function(optics_, n, z_m_);
  transfer_c64_ = transfer_c128_.to(torch::kComplexFloat);
}

torch::Tensor ForwardModel::operator()(const torch::Tensor& phase,
                                       const torch::Tensor& amplitude) const {
  require_square_even(phase, "hologram");
  if (phase.size(-1) != optics_.grid_size) {
    throw ConfigError("hologram: phase grid " + std::to_string(phase.size(-1)) +
                      " does not match optics grid " +
                      std::to_string(optics_.grid_size));
  }
  auto u = to_complex_field(phase, amplitude);
  if (optics_.pad) u = embed_padded(u);
  if (z_m_ != 0.0) {
    const auto& h = u.scalar_type() == torch::kComplexDouble ? transfer_c128_
                                                             : transfer_c64_;
    auto hd = h.device() == u.device() ? h : h.to(u.device());
    u = torch::fft::ifft2(torch::fft::fft2(u) * hd);
  }
  auto intensity = torch::real(u * torch::conj(u));
  if (optics_.pad) intensity = crop_center(intensity, optics_.grid_size);
  return intensity;
}

}  // namespace phaserec
