#include "phaserec/error.hpp"
#include "phaserec/models.hpp"

#include "testing.hpp"

#include <filesystem>
#include <fstream>
#include <numbers>

using namespace phaserec;
namespace fs = std::filesystem;

namespace {

ModelSpec small_spec(bool amplitude = false, std::int64_t channels = 1) {
  ModelSpec s;
  s.depth = 2;
  s.base_width = 8;
  s.amplitude_head = amplitude;
  s.input_channels = channels;
  s.rng_seed = 5;
  return s;
}

torch::Tensor input(std::int64_t b, std::int64_t c, std::int64_t n, std::uint64_t seed = 0) {
  auto g = at::make_generator<at::CPUGeneratorImpl>(seed);
  return 1.0 + 0.3 * torch::randn({b, c, n, n}, g, torch::kFloat32);
}

}  // namespace

TEST_CASE("U-Net and Y-Net output shapes and ranges") {
  auto u = build_model(small_spec());
  auto out = forward(u, input(2, 1, 32));
  CHECK(out.phase.sizes() == torch::IntArrayRef({2, 1, 32, 32}));
  CHECK_FALSE(out.amplitude.defined());
  CHECK(out.phase.min().item<double>() >= 0.0);
  CHECK(out.phase.max().item<double>() <= std::numbers::pi);

  auto spec = small_spec(true, 3);
  spec.phase_range = {-1.0, 1.0};
  auto y = build_model(spec);
  auto yo = forward(y, input(1, 3, 32)[0]);
  CHECK(yo.phase.sizes() == torch::IntArrayRef({1, 32, 32}));
  CHECK(yo.amplitude.sizes() == torch::IntArrayRef({1, 32, 32}));
  CHECK(yo.phase.min().item<double>() >= -1.0);
  CHECK(yo.amplitude.max().item<double>() <= 1.0);
  CHECK(yo.amplitude.min().item<double>() >= 0.0);
}

TEST_CASE("Y-Net decoders are independent") {
  auto y = build_model(small_spec(true));
  auto x = input(1, 1, 32);
  auto out = forward(y, x);
  y.net->zero_grad();
  out.amplitude.sum().backward();
  for (const auto& p : y.net->phase_decoder()->parameters()) {
    CHECK((!p.grad().defined() || p.grad().abs().max().item<double>() == 0.0));
  }
}

TEST_CASE("initialization is deterministic per seed") {
  auto a = build_model(small_spec());
  auto b = build_model(small_spec());
  auto x = input(2, 1, 32);
  CHECK(torch::equal(forward(a, x).phase, forward(b, x).phase));
  auto spec = small_spec();
  spec.rng_seed = 6;
  CHECK_FALSE(torch::equal(forward(a, x).phase, forward(build_model(spec), x).phase));
}

TEST_CASE("no batch leakage: batched forward equals per-sample forward") {
  auto m = build_model(small_spec(true));
  auto x = input(4, 1, 32, 3);
  auto batched = forward(m, x);
  for (std::int64_t i = 0; i < 4; ++i) {
    auto single = forward(m, x[i]);
    CHECK((single.phase - batched.phase[i]).abs().max().item<double>() < 1e-5);
    CHECK((single.amplitude - batched.amplitude[i]).abs().max().item<double>() < 1e-5);
  }
}

TEST_CASE("network gradient matches finite differences in double precision") {
  auto m = build_model(small_spec());
  m.net->to(torch::kFloat64);
  auto x = input(1, 1, 16).to(torch::kFloat64);
  auto loss_of = [&] { return forward(m, x).phase.square().mean(); };
  m.net->zero_grad();
  loss_of().backward();
  torch::NoGradGuard guard;
  int checked = 0;
  for (auto& p : m.net->parameters()) {
    if (checked >= 4) break;
    auto flat = p.view(-1);
    auto g = p.grad().view(-1);
    const double h = 1e-6;
    const double old = flat[0].item<double>();
    flat[0] = old + h;
    const double fp = loss_of().item<double>();
    flat[0] = old - h;
    const double fm = loss_of().item<double>();
    flat[0] = old;
    const double fd = (fp - fm) / (2 * h);
    CHECK(std::abs(fd - g[0].item<double>()) <= 1e-6 + 1e-4 * std::abs(fd));
    ++checked;
  }
}

TEST_CASE("grid and channel validation") {
  auto m = build_model(small_spec());
  CHECK_THROWS_AS(forward(m, input(1, 1, 30)), ConfigError);
  CHECK_THROWS_AS(forward(m, input(1, 2, 32)), ValidationError);
  CHECK_THROWS_AS(forward(m, torch::ones({1, 1, 32, 16})), ValidationError);
  auto bad = small_spec();
  bad.depth = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("checkpoint round-trip is bit-identical and keeps provenance") {
  auto dir = fs::temp_directory_path() / "phaserec_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto m = build_model(small_spec(true, 3));
  m.provenance.strategy = "tpd";
  m.provenance.epochs = 7;
  m.provenance.dataset_hash = "abc";
  OpticalConfig o;
  o.grid_size = 32;
  o.distances_m = {0.02, 0.04, 0.06};
  m.provenance.optics = o;
  save_checkpoint(m, dir / "m.ckpt");
  auto back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.provenance.strategy == "tpd");
  CHECK(back.provenance.epochs == 7);
  CHECK(back.provenance.optics->distances_m == o.distances_m);
  CHECK(back.spec.amplitude_head);
  auto pa = m.net->named_parameters();
  auto pb = back.net->named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (const auto& item : pa) CHECK(torch::equal(item.value(), pb[item.key()]));
  auto x = input(2, 3, 32);
  CHECK(torch::equal(forward(m, x).phase, forward(back, x).phase));

  // Truncated and corrupted files are rejected.
  const auto size = fs::file_size(dir / "m.ckpt");
  fs::copy_file(dir / "m.ckpt", dir / "t.ckpt");
  fs::resize_file(dir / "t.ckpt", size / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), CheckpointError);
  {
    std::fstream f(dir / "m.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("clone is independent of the original") {
  auto m = build_model(small_spec());
  auto c = m.clone();
  torch::NoGradGuard guard;
  c.net->parameters()[0].add_(1.0);
  CHECK_FALSE(torch::equal(m.net->parameters()[0], c.net->parameters()[0]));
}

TEST_CASE("parameter count matches a layer-by-layer tally") {
  auto block = [](std::int64_t i, std::int64_t o) { return 9 * i * o + 9 * o * o + 6 * o; };
  auto decoder = [&](std::int64_t d, std::int64_t b) {
    std::int64_t total = 0, ch = b << d;
    for (std::int64_t l = d - 1; l >= 0; --l) {
      total += block(ch + (b << l), b << l);
      ch = b << l;
    }
    return total + b + 1;
  };
  for (std::int64_t channels : {1, 3}) {
    ModelSpec s;
    s.depth = 3;
    s.base_width = 16;
    s.input_channels = channels;
    std::int64_t enc = 0, ch = channels;
    for (std::int64_t l = 0; l < 3; ++l) {
      enc += block(ch, 16 << l);
      ch = 16 << l;
    }
    enc += block(ch, 2 * ch);
    CHECK(build_model(s).parameter_count() == enc + decoder(3, 16));
    s.amplitude_head = true;
    CHECK(build_model(s).parameter_count() == enc + 2 * decoder(3, 16));
  }
}
