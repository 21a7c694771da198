#include "phaserec/tensor_io.hpp"

#include "phaserec/error.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

namespace phaserec {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xffu),
                              static_cast<char>((v >> 8) & 0xffu),
                              static_cast<char>((v >> 16) & 0xffu),
                              static_cast<char>((v >> 24) & 0xffu)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw IoError("tensor: truncated header");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint32_t checked_dim(std::int64_t d) {
  if (d < 0 || d > std::numeric_limits<std::uint32_t>::max()) {
    throw IoError("tensor: dimension out of range");
  }
  return static_cast<std::uint32_t>(d);
}

}  // namespace

void write_tensor(std::ostream& out, const torch::Tensor& t) {
  if (t.dim() != 2 && t.dim() != 3) {
    throw IoError("tensor: expected 2 or 3 dimensions, got " +
                  std::to_string(t.dim()));
  }
  auto data = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  const auto h = checked_dim(data.size(0));
  const auto w = checked_dim(data.size(1));
  const auto c = checked_dim(data.dim() == 3 ? data.size(2) : 1);
  out.write(kTensorMagic, 4);
  put_u32(out, h);
  put_u32(out, w);
  put_u32(out, c);
  const auto n = static_cast<std::size_t>(data.numel());
  const float* p = data.data_ptr<float>();
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(p),
              static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) put_u32(out, std::bit_cast<std::uint32_t>(p[i]));
  }
  if (!out) throw IoError("tensor: write failed");
}

void write_tensor(const std::filesystem::path& path, const torch::Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

torch::Tensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw IoError("tensor: truncated header");
  if (std::memcmp(magic, kTensorMagic, 4) != 0) throw IoError("tensor: bad magic");
  const auto h = get_u32(in);
  const auto w = get_u32(in);
  const auto c = get_u32(in);
  const auto n = static_cast<std::size_t>(h) * w * c;
  auto t = torch::empty({static_cast<std::int64_t>(n)}, torch::kFloat32);
  float* p = t.data_ptr<float>();
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(p),
                 static_cast<std::streamsize>(n * sizeof(float)))) {
      throw IoError("tensor: truncated payload");
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) p[i] = std::bit_cast<float>(get_u32(in));
  }
  if (c == 1) return t.view({h, w});
  return t.view({h, w, c});
}

torch::Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_tensor(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace phaserec
