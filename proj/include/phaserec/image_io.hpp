#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

namespace phaserec {

/// Reads a PNG/BMP/PGM file as grayscale, scaled to [0, 1] by the file's bit
/// depth. Returns a float64 [h, w] tensor. Throws IoError when unreadable.
torch::Tensor read_grayscale(const std::filesystem::path& path);

/// Writes an 8-bit grayscale PNG, mapping [lo, hi] to [0, 255] with clamping.
void write_png(const std::filesystem::path& path, const torch::Tensor& image,
               double lo, double hi);

/// Image files (png, bmp, pgm) directly inside `dir`, lexicographic order.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Antialiased bilinear resize of a [h, w] image to n x n.
torch::Tensor resize_bilinear(const torch::Tensor& image, std::int64_t n);

/// Bicubic resize (no antialiasing) of a [h, w] image to n x n.
torch::Tensor resize_bicubic(const torch::Tensor& image, std::int64_t n);

}  // namespace phaserec
