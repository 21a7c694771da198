#include "oracles.hpp"

#include "phaserec/error.hpp"
#include "phaserec/optics.hpp"

#include "testing.hpp"

#include <cmath>
#include <numbers>

using namespace phaserec;

namespace {

OpticalConfig optics32() {
  OpticalConfig o;
  o.grid_size = 32;
  o.pixel_pitch_m = 4e-6;
  o.wavelength_m = 532e-9;
  o.distances_m = {1e-3};
  return o;
}

// Gaussian envelope with a smooth phase bump and a slight tilt.
oracle::Field gaussian_field(std::int64_t n, double sigma_px) {
  oracle::Field f{n, std::vector<oracle::cplx>(static_cast<std::size_t>(n * n))};
  const double c0 = (n - 1) / 2.0;
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t c = 0; c < n; ++c) {
      const double y = r - c0, x = c - c0;
      const double a = std::exp(-(x * x + y * y) / (2 * sigma_px * sigma_px));
      const double p = 0.8 * std::exp(-(x * x + y * y) / (2 * 4.0 * 4.0)) + 0.05 * x;
      f.at(r, c) = std::polar(a, p);
    }
  }
  return f;
}

torch::Tensor to_tensor(const oracle::Field& f) {
  auto t = torch::empty({f.n, f.n}, torch::kComplexDouble);
  auto acc = t.accessor<c10::complex<double>, 2>();
  for (std::int64_t r = 0; r < f.n; ++r) {
    for (std::int64_t c = 0; c < f.n; ++c) {
      acc[r][c] = c10::complex<double>(f.at(r, c).real(), f.at(r, c).imag());
    }
  }
  return t;
}

oracle::Field from_tensor(const torch::Tensor& t) {
  const auto n = t.size(-1);
  oracle::Field f{n, std::vector<oracle::cplx>(static_cast<std::size_t>(n * n))};
  auto c = t.contiguous();
  auto acc = c.accessor<c10::complex<double>, 2>();
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t k = 0; k < n; ++k) f.at(r, k) = {acc[r][k].real(), acc[r][k].imag()};
  }
  return f;
}

double rel(const torch::Tensor& a, const torch::Tensor& b) {
  return ((a - b).abs().square().sum() / b.abs().square().sum()).sqrt().item<double>();
}

torch::Tensor random_field(std::int64_t n, std::uint64_t seed) {
  auto g = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto re = torch::randn({n, n}, g, torch::kFloat64);
  auto im = torch::randn({n, n}, g, torch::kFloat64);
  return torch::complex(re, im);
}

}  // namespace

TEST_CASE("angular spectrum matches brute-force Rayleigh-Sommerfeld on 32x32") {
  const auto o = optics32();
  // Both discretizations resolve their kernels near z = N dx^2 / lambda (0.96 mm here).
  for (double z : {1e-3, 1.5e-3}) {
    const auto src = gaussian_field(32, 3.0);
    const auto expected = oracle::rayleigh_sommerfeld(src, o.pixel_pitch_m, o.wavelength_m, z);
    const auto got = from_tensor(propagate(to_tensor(src), o, z));
    CAPTURE(z);
    CHECK(oracle::rel_l2(got, expected) < 1e-3);
  }
}

TEST_CASE("propagation preserves energy, inverts and composes") {
  const auto o = optics32();
  REQUIRE(evanescent_count(o, 32) == 0);
  const auto u = random_field(32, 7);
  const auto a = propagate(u, o, 1.5e-3);
  CHECK(std::abs(a.abs().square().sum().item<double>() / u.abs().square().sum().item<double>() -
                 1.0) < 1e-6);
  CHECK(rel(propagate(a, o, -1.5e-3), u) < 1e-6);
  CHECK(rel(propagate(propagate(u, o, 0.7e-3), o, 0.8e-3), a) < 1e-6);
}

TEST_CASE("evanescent components are removed") {
  OpticalConfig o = optics32();
  o.pixel_pitch_m = 0.2e-6;  // finer than lambda / 2
  const auto n = evanescent_count(o, 32);
  CHECK(n > 0);
  const auto h = transfer_function(o, 32, 1e-3);
  CHECK((h.abs() == 0).sum().item<std::int64_t>() == n);
  auto mag = h.abs();
  CHECK(((mag == 0) | ((mag - 1).abs() < 1e-12)).all().item<bool>());
}

TEST_CASE("z = 0 is the identity and the plane wave is invariant") {
  const auto o = optics32();
  const auto u = random_field(32, 3);
  CHECK(torch::equal(propagate(u, o, 0.0), u));
  auto plane = torch::ones({32, 32}, torch::kComplexDouble);
  auto i = hologram_intensity(torch::zeros({32, 32}, torch::kFloat64), {}, o, 2e-3);
  CHECK((i - 1).abs().max().item<double>() < 1e-12);
  CHECK(rel(propagate(plane, o, 2e-3).abs(), plane.abs()) < 1e-12);
}

TEST_CASE("propagation follows the input precision") {
  const auto o = optics32();
  const auto u = random_field(32, 5);
  const auto d = propagate(u, o, 1e-3);
  const auto f = propagate(u.to(torch::kComplexFloat), o, 1e-3);
  CHECK((f.scalar_type() == torch::kComplexFloat));
  CHECK(rel(f.to(torch::kComplexDouble), d) < 1e-5);
}

TEST_CASE("hologram of a phase object: forward-model identities") {
  auto o = optics32();
  auto g = at::make_generator<at::CPUGeneratorImpl>(11);
  auto phase = torch::rand({32, 32}, g, torch::kFloat64) * std::numbers::pi;
  auto amp = 0.5 + 0.5 * torch::rand({32, 32}, g, torch::kFloat64);
  const double z = 1e-3;
  auto field = torch::polar(amp, phase);
  auto expected = propagate(field, o, z).abs().square();
  CHECK(rel(hologram_intensity(phase, amp, o, z), expected) < 1e-12);
  // Global piston leaves the intensity unchanged.
  CHECK(rel(hologram_intensity(phase + 1.234, amp, o, z), expected) < 1e-12);
  // Mean intensity equals mean |u|^2 (energy conservation).
  CHECK(std::abs(expected.mean().item<double>() - amp.square().mean().item<double>()) < 1e-10);
  // ForwardModel equals the free function.
  ForwardModel fm(o, z);
  CHECK(rel(fm(phase, amp), expected) < 1e-12);
  CHECK(rel(fm(phase, torch::Tensor()), hologram_intensity(phase, {}, o, z)) < 1e-12);
}

TEST_CASE("padding embeds the object in a unit plane wave") {
  auto o = optics32();
  SampleObject s;
  s.phase = torch::zeros({32, 32}, torch::kFloat64);
  s.phase.index_put_({torch::indexing::Slice(12, 20), torch::indexing::Slice(12, 20)}, 1.0);
  auto plain = form_hologram(s, 1e-3, o);
  auto padded = pad_and_crop(s, 1e-3, o);
  CHECK(padded.intensity.sizes() == plain.intensity.sizes());
  CHECK(padded.config.pad);
  // Manual reference: embed in 64 x 64 ones, propagate, crop the centre.
  auto big = torch::ones({64, 64}, torch::kComplexDouble);
  big.index_put_({torch::indexing::Slice(16, 48), torch::indexing::Slice(16, 48)},
                 torch::polar(torch::ones({32, 32}, torch::kFloat64), s.phase));
  auto ob = o;
  ob.grid_size = 64;
  auto ref = propagate(big, ob, 1e-3)
                 .abs()
                 .square()
                 .index({torch::indexing::Slice(16, 48), torch::indexing::Slice(16, 48)});
  CHECK(rel(padded.intensity.to(torch::kFloat64), ref) < 1e-6);
  // A zero-phase object is a plane wave with or without padding.
  SampleObject flat{torch::zeros({32, 32}, torch::kFloat64), {}};
  CHECK((pad_and_crop(flat, 1e-3, o).intensity - 1).abs().max().item<double>() < 1e-10);
}

TEST_CASE("invalid inputs are rejected") {
  auto o = optics32();
  CHECK_THROWS_AS(propagate(torch::ones({31, 31}, torch::kComplexDouble), o, 1e-3), ConfigError);
  CHECK_THROWS_AS(propagate(torch::ones({32, 16}, torch::kComplexDouble), o, 1e-3), ConfigError);
  auto nan = torch::ones({32, 32}, torch::kComplexDouble);
  nan[0][0] = c10::complex<double>(std::nan(""), 0.0);
  CHECK_THROWS_AS(propagate(nan, o, 1e-3), ValidationError);
  o.wavelength_m = -1;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  SampleObject s{torch::zeros({32, 32}), torch::full({32, 32}, 1.5)};
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("optical configuration round-trips through JSON") {
  OpticalConfig o = optics32();
  o.distances_m = {0.02, 0.04, 0.06};
  o.pad = true;
  const nlohmann::json j = o;
  const auto back = j.get<OpticalConfig>();
  CHECK(back.distances_m == o.distances_m);
  CHECK(back.pad);
  CHECK(back.same_geometry(o));
  nlohmann::json single = optics32();
  CHECK(single["distance_m"].is_number());
}
