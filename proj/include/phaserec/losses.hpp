#pragma once

// Training objectives. Every squared l2 norm is reduced as the mean of the
// element-wise squared differences over pixels, then over the batch.

#include "phaserec/optics.hpp"

#include <torch/torch.h>

#include <span>

namespace phaserec {

/// Supervised phase error.
torch::Tensor loss_dd(const torch::Tensor& pred_phase, const torch::Tensor& gt_phase);

/// Intensity residual after re-propagating the prediction through the
/// forward model. An undefined amplitude means a phase-only object.
torch::Tensor loss_physics(const torch::Tensor& pred_phase,
                           const torch::Tensor& pred_amplitude,
                           const torch::Tensor& hologram, const ForwardModel& model);

/// alpha * loss_dd + loss_physics. The weight sits on the data term.
torch::Tensor loss_cd(const torch::Tensor& pred_phase, const torch::Tensor& gt_phase,
                      const torch::Tensor& hologram, const ForwardModel& model,
                      double alpha);

/// loss_dd(phase) + beta * mse(amplitude).
torch::Tensor loss_dd_dual(const torch::Tensor& pred_phase, const torch::Tensor& pred_amplitude,
                           const torch::Tensor& gt_phase, const torch::Tensor& gt_amplitude,
                           double beta);

/// Penalizes amplitude outside the centered disk C(r): mse(A * (1 - C(r)), 0).
torch::Tensor loss_aperture(const torch::Tensor& pred_amplitude, double radius_px);

/// Sum of loss_physics over distances. `holograms` is [B, K, N, N] (or
/// [K, N, N]) with channel k recorded by models[k].
torch::Tensor loss_multidistance(const torch::Tensor& pred_phase,
                                 const torch::Tensor& pred_amplitude,
                                 const torch::Tensor& holograms,
                                 std::span<const ForwardModel> models);

}  // namespace phaserec
