#include "phaserec/metrics.hpp"

#include "phaserec/error.hpp"

#include <cmath>
#include <numbers>

namespace phaserec {

namespace {

constexpr std::int64_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

void require_pair(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.defined() || !b.defined() || a.dim() < 2) {
    throw ValidationError(std::string(what) + ": expected images of at least 2 dims");
  }
  if (!a.sizes().equals(b.sizes())) {
    throw ValidationError(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) +
                          " vs " + c10::str(b.sizes()));
  }
}

torch::Tensor as_f64(const torch::Tensor& t) { return t.detach().to(torch::kCPU, torch::kFloat64); }

// [.., H, W] -> [B, 1, H, W]
torch::Tensor as_batch(const torch::Tensor& t) {
  return t.reshape({-1, 1, t.size(-2), t.size(-1)});
}

torch::Tensor gaussian_window() {
  auto x = torch::arange(kWindow, torch::kFloat64) - (kWindow - 1) / 2.0;
  auto g = torch::exp(-x.square() / (2.0 * kSigma * kSigma));
  g = g / g.sum();
  return torch::outer(g, g).reshape({1, 1, kWindow, kWindow});
}

torch::Tensor filter(const torch::Tensor& x, const torch::Tensor& w) {
  return torch::conv2d(x, w);
}

torch::Tensor mask_f64(const torch::Tensor& mask, const torch::Tensor& like) {
  auto m = as_f64(mask);
  if (m.size(-1) != like.size(-1) || m.size(-2) != like.size(-2)) {
    throw ValidationError("mask shape does not match the image");
  }
  return m;
}

}  // namespace

Psnr psnr(const torch::Tensor& pred, const torch::Tensor& gt, double data_range) {
  require_pair(pred, gt, "psnr");
  if (!(data_range > 0.0)) throw ValidationError("psnr: data range must be positive");
  const double mse = (as_f64(pred) - as_f64(gt)).square().mean().item<double>();
  if (mse == 0.0) return {kPsnrCap, true};
  return {std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse)), false};
}

torch::Tensor ssim_map(const torch::Tensor& pred, const torch::Tensor& gt, double data_range) {
  require_pair(pred, gt, "ssim");
  if (!(data_range > 0.0)) throw ValidationError("ssim: data range must be positive");
  if (pred.size(-1) < kWindow || pred.size(-2) < kWindow) {
    throw ValidationError("ssim: images must be at least 11x11");
  }
  const auto x = as_batch(as_f64(pred));
  const auto y = as_batch(as_f64(gt));
  const auto w = gaussian_window();
  const double c1 = std::pow(kK1 * data_range, 2);
  const double c2 = std::pow(kK2 * data_range, 2);
  auto mx = filter(x, w);
  auto my = filter(y, w);
  auto vx = filter(x * x, w) - mx * mx;
  auto vy = filter(y * y, w) - my * my;
  auto cxy = filter(x * y, w) - mx * my;
  auto map = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
  auto sizes = pred.sizes().vec();
  sizes[sizes.size() - 1] = map.size(-1);
  sizes[sizes.size() - 2] = map.size(-2);
  return map.reshape(sizes);
}

double ssim(const torch::Tensor& pred, const torch::Tensor& gt, double data_range,
            const torch::Tensor& mask) {
  auto map = ssim_map(pred, gt, data_range);
  if (!mask.defined()) return map.mean().item<double>();
  const auto m = mask_f64(mask, pred);
  const auto h = kWindow / 2;
  auto centres = m.slice(-2, h, m.size(-2) - h).slice(-1, h, m.size(-1) - h);
  auto weights = centres.expand_as(map);
  const double total = weights.sum().item<double>();
  if (total == 0.0) throw ValidationError("ssim: mask selects no window centres");
  return (map * weights).sum().item<double>() / total;
}

torch::Tensor piston_align(const torch::Tensor& pred, const torch::Tensor& gt,
                           const torch::Tensor& mask) {
  require_pair(pred, gt, "piston_align");
  const auto p = as_f64(pred);
  const auto g = as_f64(gt);
  auto d = p - g;
  torch::Tensor s, c;
  if (mask.defined()) {
    auto m = mask_f64(mask, pred).expand_as(d);
    auto count = m.sum({-2, -1}, true);
    s = (torch::sin(d) * m).sum({-2, -1}, true) / count;
    c = (torch::cos(d) * m).sum({-2, -1}, true) / count;
  } else {
    s = torch::sin(d).mean({-2, -1}, true);
    c = torch::cos(d).mean({-2, -1}, true);
  }
  auto offset = torch::atan2(s, c);
  constexpr double pi = std::numbers::pi;
  auto residual = torch::remainder(d - offset + pi, 2.0 * pi) - pi;
  return g + residual;
}

BandSplit band_split_error(const torch::Tensor& pred, const torch::Tensor& gt, double cutoff) {
  require_pair(pred, gt, "band_split_error");
  if (!(cutoff > 0.0)) throw ValidationError("band_split_error: cutoff must be positive");
  auto e = piston_align(pred, gt) - as_f64(gt);
  const auto h = e.size(-2);
  const auto w = e.size(-1);
  auto spectrum = torch::fft::fft2(e, c10::nullopt, {-2, -1}, "ortho");
  auto fy = torch::fft::fftfreq(h, 1.0, torch::kFloat64).reshape({h, 1});
  auto fx = torch::fft::fftfreq(w, 1.0, torch::kFloat64).reshape({1, w});
  auto low = (torch::sqrt(fy * fy + fx * fx) < cutoff).to(torch::kFloat64);
  auto power = spectrum.abs().square();
  // Unitary transform: sum |E|^2 = sum |e|^2, so band energy / pixels is band MSE.
  const double pixels = static_cast<double>(e.numel());
  const double low_e = (power * low).sum().item<double>();
  const double high_e = (power * (1.0 - low)).sum().item<double>();
  return {std::sqrt(low_e / pixels), std::sqrt(high_e / pixels)};
}

torch::Tensor line_profile(const torch::Tensor& image, std::int64_t index, ProfileAxis axis) {
  if (!image.defined() || image.dim() != 2) {
    throw ValidationError("line_profile: expected a 2-D image");
  }
  const auto d = axis == ProfileAxis::row ? 0 : 1;
  if (index < 0 || index >= image.size(d)) {
    throw ValidationError("line_profile: index " + std::to_string(index) + " outside [0, " +
                          std::to_string(image.size(d)) + ")");
  }
  return image.select(d, index).clone();
}

double pearson(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask) {
  require_pair(a, b, "pearson");
  auto x = as_f64(a).flatten();
  auto y = as_f64(b).flatten();
  if (mask.defined()) {
    auto m = mask_f64(mask, a).expand_as(as_f64(a)).flatten() > 0.5;
    x = x.masked_select(m);
    y = y.masked_select(m);
  }
  x = x - x.mean();
  y = y - y.mean();
  const double den = std::sqrt(x.square().sum().item<double>() * y.square().sum().item<double>());
  if (den == 0.0) throw ValidationError("pearson: zero variance input");
  return (x * y).sum().item<double>() / den;
}

void MetricReport::finalize() {
  mean_psnr_db = mean_ssim = 0.0;
  mean_bands = {};
  if (records.empty()) return;
  for (const auto& r : records) {
    mean_psnr_db += r.psnr_db;
    mean_ssim += r.ssim;
    mean_bands.low_rms += r.bands.low_rms;
    mean_bands.high_rms += r.bands.high_rms;
  }
  const double n = static_cast<double>(records.size());
  mean_psnr_db /= n;
  mean_ssim /= n;
  mean_bands.low_rms /= n;
  mean_bands.high_rms /= n;
}

void to_json(nlohmann::json& j, const BandSplit& b) {
  j = {{"low_rms", b.low_rms}, {"high_rms", b.high_rms}};
}

void from_json(const nlohmann::json& j, BandSplit& b) {
  b.low_rms = j.at("low_rms").get<double>();
  b.high_rms = j.at("high_rms").get<double>();
}

void to_json(nlohmann::json& j, const RecordMetrics& r) {
  j = {{"record_id", r.record_id}, {"psnr_db", r.psnr_db}, {"identical", r.identical},
       {"ssim", r.ssim},           {"bands", r.bands}};
}

void from_json(const nlohmann::json& j, RecordMetrics& r) {
  r.record_id = j.value("record_id", std::string{});
  r.psnr_db = j.at("psnr_db").get<double>();
  r.identical = j.value("identical", false);
  r.ssim = j.at("ssim").get<double>();
  r.bands = j.at("bands").get<BandSplit>();
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = {{"records", r.records},     {"mean_psnr_db", r.mean_psnr_db},
       {"mean_ssim", r.mean_ssim}, {"mean_bands", r.mean_bands},
       {"error_map_path", r.error_map_path}};
}

void from_json(const nlohmann::json& j, MetricReport& r) {
  r.records = j.at("records").get<std::vector<RecordMetrics>>();
  r.error_map_path = j.value("error_map_path", std::string{});
  r.finalize();
}

namespace {

torch::Tensor squeeze_channel(const torch::Tensor& t) {
  if (t.dim() == 4) {
    if (t.size(1) != 1) throw ValidationError("expected a single channel");
    return t.select(1, 0);
  }
  if (t.dim() == 2) return t.unsqueeze(0);
  if (t.dim() != 3) throw ValidationError("expected [B, 1, N, N], [B, N, N] or [N, N]");
  return t;
}

std::string record_name(const std::vector<std::string>& ids, std::int64_t i) {
  return i < static_cast<std::int64_t>(ids.size()) ? ids[static_cast<std::size_t>(i)]
                                                   : std::to_string(i);
}

}  // namespace

MetricReport evaluate_phase(const torch::Tensor& pred, const torch::Tensor& gt,
                            const PhaseEvalOptions& options,
                            const std::vector<std::string>& ids) {
  auto p = squeeze_channel(as_f64(pred));
  auto g = squeeze_channel(as_f64(gt));
  require_pair(p, g, "evaluate_phase");
  MetricReport report;
  for (std::int64_t i = 0; i < p.size(0); ++i) {
    auto gi = g[i];
    auto pi = options.align ? piston_align(p[i], gi, options.mask) : p[i];
    RecordMetrics r;
    r.record_id = record_name(ids, i);
    Psnr ps;
    if (options.mask.defined()) {
      auto m = options.mask > 0.5;
      ps = psnr(pi.masked_select(m).reshape({1, -1}), gi.masked_select(m).reshape({1, -1}),
                options.data_range);
    } else {
      ps = psnr(pi, gi, options.data_range);
    }
    r.psnr_db = ps.db;
    r.identical = ps.identical;
    r.ssim = ssim(pi, gi, options.data_range, options.mask);
    r.bands = band_split_error(pi, gi, options.cutoff);
    report.records.push_back(r);
  }
  report.finalize();
  return report;
}

MetricReport evaluate_amplitude(const torch::Tensor& pred, const torch::Tensor& gt,
                                const torch::Tensor& mask, const std::vector<std::string>& ids) {
  PhaseEvalOptions o;
  o.data_range = 1.0;
  o.mask = mask;
  o.align = false;
  return evaluate_phase(pred, gt, o, ids);
}

torch::Tensor mean_abs_error_map(const torch::Tensor& pred, const torch::Tensor& gt) {
  auto p = squeeze_channel(as_f64(pred));
  auto g = squeeze_channel(as_f64(gt));
  require_pair(p, g, "mean_abs_error_map");
  return (p - g).abs().mean(0);
}

}  // namespace phaserec
