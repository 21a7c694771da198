#include "phaserec/image_io.hpp"

#include "phaserec/error.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cctype>
#include <string>

namespace phaserec {

namespace fs = std::filesystem;

torch::Tensor read_grayscale(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw IoError("cannot read image " + path.string());
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE | cv::IMREAD_ANYDEPTH);
  if (img.empty()) throw IoError("cannot decode image " + path.string());
  double scale = 1.0;
  switch (img.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F:
    case CV_64F: scale = 1.0; break;
    default: throw IoError("unsupported pixel depth in " + path.string());
  }
  cv::Mat as_double;
  img.convertTo(as_double, CV_64F, scale);
  auto t = torch::from_blob(as_double.ptr<double>(), {as_double.rows, as_double.cols},
                            torch::kFloat64);
  return t.clone();
}

void write_png(const fs::path& path, const torch::Tensor& image, double lo,
               double hi) {
  if (image.dim() != 2) throw IoError("write_png: expected a 2-D image");
  const double span = hi > lo ? hi - lo : 1.0;
  auto scaled = ((image.detach().to(torch::kCPU, torch::kFloat64) - lo) / span * 255.0)
                    .round()
                    .clamp(0.0, 255.0)
                    .to(torch::kUInt8)
                    .contiguous();
  cv::Mat mat(static_cast<int>(scaled.size(0)), static_cast<int>(scaled.size(1)), CV_8U,
              scaled.data_ptr<std::uint8_t>());
  if (!cv::imwrite(path.string(), mat)) throw IoError("cannot write " + path.string());
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png" || ext == ".bmp" || ext == ".pgm") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

torch::Tensor resize_with(const torch::Tensor& image, std::int64_t n,
                          torch::nn::functional::InterpolateFuncOptions::mode_t mode, bool antialias) {
  if (image.dim() != 2 || image.numel() == 0) {
    throw ValidationError("resize: expected a non-empty 2-D image");
  }
  if (image.size(0) == n && image.size(1) == n) return image;
  namespace F = torch::nn::functional;
  auto x = image.unsqueeze(0).unsqueeze(0);
  auto opts = F::InterpolateFuncOptions()
                  .size(std::vector<std::int64_t>{n, n})
                  .mode(mode)
                  .align_corners(false)
                  .antialias(antialias);
  return F::interpolate(x, opts).squeeze(0).squeeze(0);
}

}  // namespace

torch::Tensor resize_bilinear(const torch::Tensor& image, std::int64_t n) {
  return resize_with(image, n, torch::kBilinear, true);
}

torch::Tensor resize_bicubic(const torch::Tensor& image, std::int64_t n) {
  return resize_with(image, n, torch::kBicubic, false);
}

}  // namespace phaserec
