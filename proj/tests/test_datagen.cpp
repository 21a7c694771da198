#include "phaserec/datagen.hpp"
#include "phaserec/error.hpp"
#include "phaserec/image_io.hpp"
#include "phaserec/tensor_io.hpp"

#include "testing.hpp"

#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace phaserec;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("phaserec_test_" + name);
  fs::remove_all(p);
  return p;
}

OpticalConfig small_optics() {
  OpticalConfig o;
  o.grid_size = 32;
  o.pixel_pitch_m = 8e-6;
  o.distances_m = {0.01};
  return o;
}

}  // namespace

TEST_CASE("image to phase is an affine map of the image") {
  auto ramp = torch::linspace(0, 1, 32, torch::kFloat64).repeat({32, 1});
  auto p = image_to_phase(ramp, 32, PhaseRange{0.5, 2.5});
  CHECK(torch::allclose(p, 0.5 + 2.0 * ramp, 0, 1e-15));
  auto flat = image_to_phase(torch::full({100, 80}, 0.25, torch::kFloat64), 32, PhaseRange{});
  CHECK((flat - 0.25 * std::numbers::pi).abs().max().item<double>() < 1e-12);
  CHECK_THROWS_AS(image_to_phase(torch::zeros({0}), 32, PhaseRange{}), ValidationError);
  CHECK_THROWS_AS(PhaseRange({1.0, 1.0}).validate(), ValidationError);
}

TEST_CASE("RME aberration: bounded, deterministic and smooth") {
  RMEConfig c;
  c.rng_seed = 42;
  auto a = rme_aberration(c, 64);
  CHECK(a.sizes() == torch::IntArrayRef({64, 64}));
  CHECK(a.min().item<double>() >= 0.0);
  CHECK(a.max().item<double>() <= 2.0);
  CHECK(torch::equal(a, rme_aberration(c, 64)));
  auto other = c;
  other.rng_seed = 43;
  CHECK_FALSE(torch::equal(a, rme_aberration(other, 64)));
  // Neighbouring pixels differ far less than independent noise would.
  auto dx = (a.slice(1, 1) - a.slice(1, 0, -1)).abs().mean().item<double>();
  CHECK(dx < 0.05);
  c.seed_matrix_size = 65;
  CHECK_THROWS_AS(rme_aberration(c, 64), ValidationError);
}

TEST_CASE("synthetic corpora: range, determinism, background fraction") {
  for (auto style : {CorpusStyle::dense, CorpusStyle::medium, CorpusStyle::sparse}) {
    auto img = synthetic_image(style, 3, 5, 64);
    CAPTURE(to_string(style));
    CHECK(img.min().item<double>() >= 0.0);
    CHECK(img.max().item<double>() <= 1.0);
    CHECK(torch::equal(img, synthetic_image(style, 3, 5, 64)));
    CHECK_FALSE(torch::equal(img, synthetic_image(style, 3, 6, 64)));
  }
  auto zero_fraction = [](CorpusStyle s) {
    double f = 0;
    for (int i = 0; i < 8; ++i) {
      f += (synthetic_image(s, 0, i, 64) < 1e-3).to(torch::kFloat64).mean().item<double>();
    }
    return f / 8;
  };
  CHECK(zero_fraction(CorpusStyle::sparse) > 0.6);
  CHECK(zero_fraction(CorpusStyle::dense) < 0.05);
  CHECK(corpus_style_from_string("medium") == CorpusStyle::medium);
  CHECK_THROWS_AS(corpus_style_from_string("fluffy"), ConfigError);
}

TEST_CASE("folder corpora read images in name order") {
  auto dir = scratch("folder");
  fs::create_directories(dir);
  write_png(dir / "b.png", torch::full({16, 16}, 1.0), 0, 1);
  write_png(dir / "a.png", torch::zeros({16, 16}), 0, 1);
  std::ofstream(dir / "notes.txt") << "ignored";
  auto src = open_corpus(dir.string(), 0, 32);
  REQUIRE(src->available() == 2);
  CHECK(src->image(0).max().item<double>() == 0.0);
  CHECK(src->image(1).min().item<double>() == 1.0);
  CHECK_THROWS_AS(open_corpus((dir / "missing").string(), 0, 32), IoError);
  fs::remove_all(dir);
}

TEST_CASE("PRT container round-trips bit-identically and rejects corruption") {
  auto g = at::make_generator<at::CPUGeneratorImpl>(1);
  auto t = torch::randn({5, 7, 3}, g, torch::kFloat32);
  std::stringstream ss;
  write_tensor(ss, t);
  auto back = read_tensor(ss);
  CHECK(torch::equal(back, t));
  const auto bytes = ss.str();
  CHECK(bytes.size() == 16 + 5 * 7 * 3 * 4);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_tensor(truncated), IoError);
  std::stringstream bad("XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(read_tensor(bad), IoError);
}

TEST_CASE("generated dataset is self-consistent and round-trips") {
  const auto dir = scratch("dataset");
  GenerationSpec spec;
  spec.corpus = "synthetic:medium";
  spec.count = 4;
  spec.amplitude_corpus = "synthetic:dense";
  spec.aberration = RMEConfig{};
  spec.seed = 9;
  auto optics = small_optics();
  optics.distances_m = {0.01, 0.02, 0.03};
  const auto m = generate_dataset(spec, optics, dir);
  CHECK(m.count == 4);
  CHECK(m.has_gt_phase);
  CHECK(m.has_gt_amplitude);
  CHECK(m.has_aberration);
  const auto read = read_manifest(dir);
  CHECK(read.hash() == m.hash());
  CHECK(read.distances() == optics.distances_m);
  for (std::size_t i = 0; i < 4; ++i) {
    auto r = read_record(dir, read, i);
    REQUIRE(r.holograms.size() == 3);
    auto sample = record_sample(r);
    for (const auto& h : r.holograms) {
      auto again = form_hologram(sample, h.z_m, optics).intensity.to(torch::kFloat32);
      CHECK(torch::equal(again, h.intensity));
    }
  }
  // Regeneration is deterministic, also with parallel workers.
  const auto dir2 = scratch("dataset2");
  spec.jobs = 3;
  generate_dataset(spec, optics, dir2);
  for (std::size_t i = 0; i < 4; ++i) {
    auto a = read_record(dir, read, i);
    auto b = read_record(dir2, read_manifest(dir2), i);
    CHECK(torch::equal(a.holograms[1].intensity, b.holograms[1].intensity));
    CHECK(torch::equal(a.aberration_phase, b.aberration_phase));
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("hologram-only datasets carry no ground truth") {
  const auto dir = scratch("holo_only");
  GenerationSpec spec;
  spec.count = 2;
  spec.include_gt = false;
  generate_dataset(spec, small_optics(), dir);
  auto m = read_manifest(dir);
  CHECK_FALSE(m.has_gt_phase);
  auto r = read_record(dir, m, 0);
  CHECK_FALSE(r.gt_phase.defined());
  CHECK(r.holograms.size() == 1);
  CHECK_THROWS_AS(record_sample(r), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("support radius confines phase and amplitude") {
  const auto dir = scratch("support");
  GenerationSpec spec;
  spec.count = 1;
  spec.support_radius_px = 8.0;
  generate_dataset(spec, small_optics(), dir);
  auto m = read_manifest(dir);
  auto r = read_record(dir, m, 0);
  auto outside = 1.0 - disk_mask(32, 8.0);
  CHECK((r.gt_phase.to(torch::kFloat64) * outside).abs().max().item<double>() == 0.0);
  CHECK((r.gt_amplitude.to(torch::kFloat64) * outside).abs().max().item<double>() == 0.0);
  CHECK(m.support_radius_px.value() == 8.0);
  fs::remove_all(dir);
}

TEST_CASE("corrupt datasets fail with I/O errors") {
  const auto dir = scratch("corrupt");
  GenerationSpec spec;
  spec.count = 1;
  generate_dataset(spec, small_optics(), dir);
  auto m = read_manifest(dir);
  const auto holo = dir / m.records[0] / hologram_filename(0.01);
  REQUIRE(fs::exists(holo));
  fs::resize_file(holo, 10);
  CHECK_THROWS_AS(read_record(dir, m, 0), IoError);
  std::ofstream(dir / "manifest.json") << "{ not json";
  CHECK_THROWS(read_manifest(dir));
  CHECK_THROWS_AS(read_manifest(dir / "nowhere"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("external holograms need explicit optics") {
  const auto dir = scratch("external");
  fs::create_directories(dir);
  auto img = torch::linspace(0.2, 0.8, 48, torch::kFloat64).repeat({48, 1});
  write_png(dir / "h.png", img, 0, 1);
  CHECK_THROWS_AS(ingest_external_hologram(dir / "h.png", std::nullopt), ConfigError);
  auto o = small_optics();
  o.distances_m = {8.78e-3};
  auto h = ingest_external_hologram(dir / "h.png", o);
  CHECK(h.intensity.sizes() == torch::IntArrayRef({32, 32}));
  CHECK(std::abs(h.intensity.mean().item<double>() - 1.0) < 1e-5);
  CHECK(h.z_m == 8.78e-3);
  CHECK_THROWS_AS(ingest_external_hologram(dir / "missing.png", o), IoError);
  fs::remove_all(dir);
}

TEST_CASE("disk mask is centred between the middle pixels") {
  auto m = disk_mask(8, 1.0);
  // Centre (3.5, 3.5): the four middle pixels are at distance sqrt(0.5).
  CHECK(m.sum().item<double>() == 4.0);
  CHECK(m[3][3].item<double>() == 1.0);
  CHECK(m[4][4].item<double>() == 1.0);
}

TEST_CASE("RME power stays below 2k/N cycles per pixel") {
  // A Hann window keeps the non-periodic borders from leaking into high frequencies.
  auto w = torch::hann_window(256, false, torch::kFloat64);
  auto window = w.view({256, 1}) * w.view({1, 256});
  auto f = torch::fft::fftfreq(256, 1.0, torch::kFloat64);
  auto radius = torch::sqrt(f.view({256, 1}).square() + f.view({1, 256}).square());
  for (std::int64_t k : {2, 3, 4, 8}) {
    for (std::uint64_t seed : {0, 1, 2}) {
      RMEConfig c;
      c.seed_matrix_size = k;
      c.rng_seed = seed;
      auto a = rme_aberration(c, 256);
      auto x = (a - a.mean()) * window;
      auto power = torch::fft::fft2(x - x.mean()).abs().square();
      const double high = (power * (radius > 2.0 * k / 256.0)).sum().item<double>();
      CAPTURE(k);
      CHECK(high < 0.05 * power.sum().item<double>());
    }
  }
}

TEST_CASE("aberrated records keep an aberration-free ground truth") {
  const auto dir = scratch("aberrated");
  GenerationSpec spec;
  spec.count = 1;
  spec.aberration = RMEConfig{};
  generate_dataset(spec, small_optics(), dir);
  auto m = read_manifest(dir);
  auto r = read_record(dir, m, 0);
  auto clean = hologram_intensity(r.gt_phase.to(torch::kFloat64), {}, small_optics(), 0.01);
  CHECK((clean - r.holograms[0].intensity.to(torch::kFloat64)).abs().mean().item<double>() > 1e-3);
  auto full = hologram_intensity((r.gt_phase + r.aberration_phase).to(torch::kFloat64), {},
                                 small_optics(), 0.01);
  CHECK((full - r.holograms[0].intensity.to(torch::kFloat64)).abs().max().item<double>() < 1e-5);
  fs::remove_all(dir);
}
