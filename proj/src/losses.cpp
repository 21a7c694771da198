#include "phaserec/losses.hpp"

#include "phaserec/datagen.hpp"
#include "phaserec/error.hpp"

#include <string>

namespace phaserec {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.defined() || !b.defined()) {
    throw ValidationError(std::string(what) + ": missing tensor");
  }
  if (!a.sizes().equals(b.sizes())) {
    throw ValidationError(std::string(what) + ": shape mismatch " +
                          c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
  }
}

torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b) {
  return (a - b).square().mean();
}

}  // namespace

torch::Tensor loss_dd(const torch::Tensor& pred_phase, const torch::Tensor& gt_phase) {
  require_same_shape(pred_phase, gt_phase, "loss_dd");
  return mse(pred_phase, gt_phase);
}

torch::Tensor loss_physics(const torch::Tensor& pred_phase,
                           const torch::Tensor& pred_amplitude,
                           const torch::Tensor& hologram, const ForwardModel& model) {
  require_same_shape(pred_phase, hologram, "loss_physics");
  if (pred_amplitude.defined()) require_same_shape(pred_phase, pred_amplitude, "loss_physics");
  return mse(model(pred_phase, pred_amplitude), hologram);
}

torch::Tensor loss_cd(const torch::Tensor& pred_phase, const torch::Tensor& gt_phase,
                      const torch::Tensor& hologram, const ForwardModel& model,
                      double alpha) {
  if (alpha < 0.0) throw ValidationError("loss_cd: alpha must be >= 0");
  return alpha * loss_dd(pred_phase, gt_phase) +
         loss_physics(pred_phase, torch::Tensor(), hologram, model);
}

torch::Tensor loss_dd_dual(const torch::Tensor& pred_phase, const torch::Tensor& pred_amplitude,
                           const torch::Tensor& gt_phase, const torch::Tensor& gt_amplitude,
                           double beta) {
  if (beta < 0.0) throw ValidationError("loss_dd_dual: beta must be >= 0");
  require_same_shape(pred_amplitude, gt_amplitude, "loss_dd_dual");
  return loss_dd(pred_phase, gt_phase) + beta * mse(pred_amplitude, gt_amplitude);
}

torch::Tensor loss_aperture(const torch::Tensor& pred_amplitude, double radius_px) {
  if (!pred_amplitude.defined() || pred_amplitude.dim() < 2) {
    throw ValidationError("loss_aperture: amplitude must be at least 2-D");
  }
  const auto n = pred_amplitude.size(-1);
  auto outside = (1.0 - disk_mask(n, radius_px))
                     .to(pred_amplitude.device(), pred_amplitude.scalar_type());
  return (pred_amplitude * outside).square().mean();
}

torch::Tensor loss_multidistance(const torch::Tensor& pred_phase,
                                 const torch::Tensor& pred_amplitude,
                                 const torch::Tensor& holograms,
                                 std::span<const ForwardModel> models) {
  if (holograms.dim() < 3) throw ValidationError("loss_multidistance: expected [.., K, N, N]");
  const auto k = holograms.size(-3);
  if (k != static_cast<std::int64_t>(models.size())) {
    throw ValidationError("loss_multidistance: " + std::to_string(k) + " holograms but " +
                          std::to_string(models.size()) + " distances");
  }
  // Collapse a singleton channel axis so shapes line up with [.., N, N] holograms.
  auto phase = pred_phase.dim() == holograms.dim() ? pred_phase.select(-3, 0) : pred_phase;
  auto amp = pred_amplitude;
  if (amp.defined() && amp.dim() == holograms.dim()) amp = amp.select(-3, 0);
  torch::Tensor total;
  for (std::int64_t i = 0; i < k; ++i) {
    auto term = loss_physics(phase, amp, holograms.select(-3, i),
                             models[static_cast<std::size_t>(i)]);
    total = total.defined() ? total + term : term;
  }
  return total;
}

}  // namespace phaserec
