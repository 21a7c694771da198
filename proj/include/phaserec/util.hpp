#pragma once

#include <ATen/core/Generator.h>
#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <string_view>

namespace phaserec {

/// splitmix64 of (seed, index); derives independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

at::Generator make_generator(std::uint64_t seed);

/// 64-bit FNV-1a as 16 hex digits.
std::string content_hash(std::string_view bytes);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

bool all_finite(const torch::Tensor& t);

}  // namespace phaserec
