#include "oracles.hpp"

#include "phaserec/error.hpp"
#include "phaserec/metrics.hpp"

#include "testing.hpp"

#include <numbers>
#include <vector>

using namespace phaserec;

namespace {

torch::Tensor smooth_random(std::int64_t n, std::uint64_t seed) {
  auto g = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto x = torch::rand({1, 1, n, n}, g, torch::kFloat64);
  return torch::avg_pool2d(x, 3, 1, 1, false, false).view({n, n});
}

std::vector<double> to_vec(const torch::Tensor& t) {
  auto c = t.contiguous().to(torch::kFloat64);
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace

TEST_CASE("PSNR: identity, analytic value and loop oracle") {
  auto a = smooth_random(32, 1);
  auto same = psnr(a, a, 1.0);
  CHECK(same.identical);
  CHECK(same.db == kPsnrCap);
  auto p = psnr(a + 0.1, a, 1.0);
  CHECK_FALSE(p.identical);
  CHECK(p.db == doctest::Approx(20.0).epsilon(1e-9));
  auto b = smooth_random(32, 2);
  CHECK(std::abs(psnr(a, b, 2.0).db - oracle::psnr(to_vec(a), to_vec(b), 2.0)) < 1e-9);
}

TEST_CASE("SSIM: identity, constants, loop oracle, symmetry") {
  auto a = smooth_random(32, 3);
  CHECK(ssim(a, a, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  // Constant images leave only the luminance term.
  const double c1 = 1e-4;
  const double expected = (2 * 0.2 * 0.6 + c1) / (0.04 + 0.36 + c1);
  CHECK(ssim(torch::full({24, 24}, 0.2, torch::kFloat64), torch::full({24, 24}, 0.6,
                                                                      torch::kFloat64),
             1.0) == doctest::Approx(expected).epsilon(1e-10));
  for (std::uint64_t seed : {4, 5, 6}) {
    auto b = smooth_random(32, seed);
    const double ours = ssim(a, b, 1.0);
    CHECK(std::abs(ours - oracle::ssim(to_vec(a), to_vec(b), 32, 1.0)) < 1e-6);
    CHECK(std::abs(ours - ssim(b, a, 1.0)) < 1e-12);
  }
  // Valid window positions only: a 32 x 32 map has 22 x 22 entries.
  CHECK(ssim_map(a, a, 1.0).sizes() == torch::IntArrayRef({22, 22}));
  CHECK_THROWS_AS(ssim(torch::zeros({8, 8}), torch::zeros({8, 8}), 1.0), ValidationError);
}

TEST_CASE("SSIM decreases monotonically with noise") {
  auto a = smooth_random(48, 7);
  auto g = at::make_generator<at::CPUGeneratorImpl>(8);
  auto noise = torch::randn({48, 48}, g, torch::kFloat64);
  double last = 1.0;
  for (double s : {0.01, 0.05, 0.1, 0.3}) {
    const double v = ssim(a + s * noise, a, 1.0);
    CHECK(v < last);
    last = v;
  }
}

TEST_CASE("masked SSIM averages over window centres inside the mask") {
  auto a = smooth_random(32, 9);
  auto b = smooth_random(32, 10);
  CHECK(ssim(a, b, 1.0, torch::ones({32, 32})) == doctest::Approx(ssim(a, b, 1.0)));
  auto map = ssim_map(a, b, 1.0);
  auto mask = torch::zeros({32, 32});
  mask.index_put_({torch::indexing::Slice(5, 10), torch::indexing::Slice(5, 27)}, 1.0);
  // Centres 5..9 map to rows 0..4 of the valid map; columns 5..26 to 0..21.
  const double expected = map.slice(0, 0, 5).mean().item<double>();
  CHECK(ssim(a, b, 1.0, mask) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("piston alignment removes a global offset, including across the wrap") {
  auto gt = smooth_random(32, 11) * 2.0;
  for (double c : {0.4, -1.2, 2.0 * std::numbers::pi + 0.3}) {
    auto aligned = piston_align(gt + c, gt);
    CHECK((aligned - gt).abs().max().item<double>() < 1e-12);
  }
  PhaseEvalOptions o;
  o.data_range = std::numbers::pi;
  auto report = evaluate_phase((gt + 0.9).unsqueeze(0), gt.unsqueeze(0), o);
  REQUIRE(report.records.size() == 1);
  CHECK(report.records[0].bands.low_rms < 1e-12);
  CHECK(report.records[0].bands.high_rms < 1e-12);
  CHECK(report.mean_ssim == doctest::Approx(1.0).epsilon(1e-9));
  o.align = false;
  CHECK(evaluate_phase((gt + 0.9).unsqueeze(0), gt.unsqueeze(0), o).mean_psnr_db ==
        doctest::Approx(20.0 * std::log10(std::numbers::pi / 0.9)));
}

TEST_CASE("band split separates smooth and fine errors") {
  const std::int64_t n = 64;
  auto gt = torch::zeros({n, n}, torch::kFloat64);
  auto x = torch::arange(n, torch::kFloat64).repeat({n, 1});
  auto zero = band_split_error(gt, gt);
  CHECK(zero.low_rms == 0.0);
  CHECK(zero.high_rms == 0.0);
  // A constant error is a piston and vanishes after alignment.
  auto piston = band_split_error(gt + 0.3, gt);
  CHECK(piston.low_rms < 1e-12);
  CHECK(piston.high_rms < 1e-12);
  // sin at 0.25 cycles/px lies entirely above the cutoff.
  auto fine = band_split_error(0.1 * torch::sin(2 * std::numbers::pi * 0.25 * x), gt);
  CHECK(fine.low_rms < 1e-12);
  CHECK(fine.high_rms == doctest::Approx(0.1 / std::sqrt(2.0)).epsilon(1e-9));
  // One cycle across the grid lies below it.
  auto coarse = band_split_error(0.1 * torch::sin(2 * std::numbers::pi * x / n), gt);
  CHECK(coarse.high_rms < 1e-12);
  CHECK(coarse.low_rms == doctest::Approx(0.1 / std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("line profiles and correlation") {
  auto img = torch::arange(16, torch::kFloat64).view({4, 4});
  CHECK(torch::equal(line_profile(img, 1), torch::tensor({4.0, 5.0, 6.0, 7.0}, torch::kFloat64)));
  CHECK(torch::equal(line_profile(img, 2, ProfileAxis::column),
                     torch::tensor({2.0, 6.0, 10.0, 14.0}, torch::kFloat64)));
  CHECK_THROWS_AS(line_profile(img, 4), ValidationError);
  auto a = smooth_random(16, 12);
  CHECK(pearson(a, 3.0 * a + 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson(a, -a) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_THROWS_AS(pearson(a, torch::ones({16, 16})), ValidationError);
}

TEST_CASE("metric reports average records and round-trip through JSON") {
  auto gt = torch::stack({smooth_random(32, 13), smooth_random(32, 14)});
  auto pred = gt + 0.05 * torch::stack({smooth_random(32, 15), smooth_random(32, 16)});
  auto report = evaluate_amplitude(pred, gt, {}, {"a", "b"});
  REQUIRE(report.records.size() == 2);
  CHECK(report.mean_ssim == doctest::Approx((report.records[0].ssim + report.records[1].ssim) / 2));
  CHECK(report.records[1].record_id == "b");
  nlohmann::json j = report;
  auto back = j.get<MetricReport>();
  CHECK(back.mean_psnr_db == report.mean_psnr_db);
  CHECK(back.records[0].bands.high_rms == report.records[0].bands.high_rms);
  auto err = mean_abs_error_map(pred, gt);
  CHECK(torch::allclose(err, (pred - gt).abs().mean(0)));
}

TEST_CASE("PSNR and SSIM are symmetric in their arguments") {
  auto a = smooth_random(32, 17);
  auto b = smooth_random(32, 18);
  CHECK(psnr(a, b, 1.0).db == psnr(b, a, 1.0).db);
  CHECK(ssim(a, b, 1.0) == doctest::Approx(ssim(b, a, 1.0)).epsilon(1e-14));
}
