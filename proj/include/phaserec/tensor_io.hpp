#pragma once

// Binary tensor container shared by datasets, checkpoints and reports.
//
// Layout (all integers little-endian):
//   bytes 0..3   magic "PRT1"
//   u32          height
//   u32          width
//   u32          channels
//   f32[h*w*c]   row-major samples, channel fastest: index (y*w + x)*c + k

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <iosfwd>

namespace phaserec {

inline constexpr char kTensorMagic[4] = {'P', 'R', 'T', '1'};

/// Accepts float tensors shaped [h, w] or [h, w, c]; values are stored as f32.
void write_tensor(std::ostream& out, const torch::Tensor& t);
void write_tensor(const std::filesystem::path& path, const torch::Tensor& t);

/// Returns a contiguous f32 tensor, [h, w] when channels == 1 and [h, w, c]
/// otherwise. Throws IoError on truncation or a bad magic.
torch::Tensor read_tensor(std::istream& in);
torch::Tensor read_tensor(const std::filesystem::path& path);

}  // namespace phaserec
