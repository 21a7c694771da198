#include "phaserec/datagen.hpp"

#include "phaserec/error.hpp"
#include "phaserec/image_io.hpp"
#include "phaserec/log.hpp"
#include "phaserec/tensor_io.hpp"
#include "phaserec/util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace phaserec {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- ranges

void PhaseRange::validate() const {
  if (!std::isfinite(min) || !std::isfinite(max) || !(min < max)) {
    throw ValidationError("phase range must satisfy min < max");
  }
}

void to_json(nlohmann::json& j, const PhaseRange& r) { j = {r.min, r.max}; }

void from_json(const nlohmann::json& j, PhaseRange& r) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("phase_range must be [min, max]");
  r.min = j[0].get<double>();
  r.max = j[1].get<double>();
}

torch::Tensor image_to_phase(const torch::Tensor& image, std::int64_t n,
                             PhaseRange range) {
  range.validate();
  if (!image.defined() || image.dim() != 2 || image.numel() == 0) {
    throw ValidationError("image_to_phase: empty or non 2-D image");
  }
  if (!all_finite(image)) throw ValidationError("image_to_phase: non-finite pixels");
  auto resized = resize_bilinear(image.to(torch::kFloat64), n);
  return range.min + range.width() * resized;
}

// ---------------------------------------------------------------- RME

void RMEConfig::validate() const {
  if (seed_matrix_size < 1) throw ValidationError("RME seed matrix size must be >= 1");
  if (!(amplitude_min <= amplitude_max)) {
    throw ValidationError("RME amplitude range must satisfy min <= max");
  }
}

void to_json(nlohmann::json& j, const RMEConfig& c) {
  j = {{"seed_matrix_size", c.seed_matrix_size},
       {"amplitude_range", {c.amplitude_min, c.amplitude_max}},
       {"rng_seed", c.rng_seed}};
}

void from_json(const nlohmann::json& j, RMEConfig& c) {
  c.seed_matrix_size = j.value("seed_matrix_size", std::int64_t{4});
  if (j.contains("amplitude_range")) {
    c.amplitude_min = j["amplitude_range"][0].get<double>();
    c.amplitude_max = j["amplitude_range"][1].get<double>();
  }
  c.rng_seed = j.value("rng_seed", std::uint64_t{0});
}

torch::Tensor rme_aberration(const RMEConfig& cfg, std::int64_t n) {
  cfg.validate();
  if (cfg.seed_matrix_size > n) {
    throw ValidationError("RME seed matrix larger than the grid");
  }
  auto gen = make_generator(cfg.rng_seed);
  auto seed = torch::rand({cfg.seed_matrix_size, cfg.seed_matrix_size}, gen,
                          torch::kFloat64);
  auto mapped = cfg.amplitude_min + (cfg.amplitude_max - cfg.amplitude_min) * seed;
  auto enlarged = resize_bicubic(mapped, n);
  return enlarged.clamp(cfg.amplitude_min, cfg.amplitude_max);
}

// ---------------------------------------------------------------- corpora

std::string to_string(CorpusStyle s) {
  switch (s) {
    case CorpusStyle::dense: return "dense";
    case CorpusStyle::medium: return "medium";
    case CorpusStyle::sparse: return "sparse";
  }
  return "dense";
}

CorpusStyle corpus_style_from_string(const std::string& s) {
  if (s == "dense") return CorpusStyle::dense;
  if (s == "medium") return CorpusStyle::medium;
  if (s == "sparse") return CorpusStyle::sparse;
  throw ConfigError("unknown corpus style '" + s + "'");
}

namespace {

torch::Tensor gaussian_filtered_noise(const at::Generator& gen, std::int64_t n,
                                      double sigma_px) {
  auto noise = torch::randn({n, n}, gen, torch::kFloat64);
  auto f = torch::fft::fftfreq(n, 1.0, torch::kFloat64);
  auto f2 = f.square().unsqueeze(1) + f.square().unsqueeze(0);
  const double w = 2.0 * std::numbers::pi * sigma_px;
  auto kernel = torch::exp(-0.5 * w * w * f2);
  return torch::real(torch::fft::ifft2(torch::fft::fft2(noise) * kernel));
}

torch::Tensor normalize_unit(const torch::Tensor& img) {
  auto lo = img.min();
  auto hi = img.max();
  auto span = (hi - lo).item<double>();
  if (span <= 0.0) return torch::zeros_like(img);
  return ((img - lo) / span).clamp(0.0, 1.0);
}

torch::Tensor dense_image(const at::Generator& gen, std::int64_t n) {
  const double unit = static_cast<double>(n) / 64.0;
  auto img = torch::zeros({n, n}, torch::kFloat64);
  for (double s : {1.0, 2.0, 4.0, 8.0}) {
    img += gaussian_filtered_noise(gen, n, s * unit) * s;
  }
  return normalize_unit(img);
}

torch::Tensor medium_image(const at::Generator& gen, std::int64_t n) {
  const double nd = static_cast<double>(n);
  auto coords = torch::arange(n, torch::kFloat64);
  auto yy = coords.unsqueeze(1).expand({n, n});
  auto xx = coords.unsqueeze(0).expand({n, n});
  auto img = 0.15 * gaussian_filtered_noise(gen, n, 2.0 * nd / 64.0) * 2.0;
  const auto blobs = torch::randint(4, 9, {1}, gen).item<std::int64_t>();
  for (std::int64_t b = 0; b < blobs; ++b) {
    auto p = torch::rand({5}, gen, torch::kFloat64);
    const double cy = (0.15 + 0.7 * p[0].item<double>()) * nd;
    const double cx = (0.15 + 0.7 * p[1].item<double>()) * nd;
    const double sigma = (0.05 + 0.15 * p[2].item<double>()) * nd;
    const double weight = 0.4 + 0.6 * p[3].item<double>();
    const double sign = p[4].item<double>() < 0.75 ? 1.0 : -0.5;
    img += sign * weight *
           torch::exp(-((yy - cy).square() + (xx - cx).square()) / (2.0 * sigma * sigma));
  }
  return normalize_unit(img);
}

torch::Tensor sparse_image(const at::Generator& gen, std::int64_t n) {
  const double nd = static_cast<double>(n);
  auto coords = torch::arange(n, torch::kFloat64);
  auto yy = coords.unsqueeze(1).expand({n, n});
  auto xx = coords.unsqueeze(0).expand({n, n});
  auto img = torch::zeros({n, n}, torch::kFloat64);
  const auto strokes = torch::randint(2, 5, {1}, gen).item<std::int64_t>();
  for (std::int64_t s = 0; s < strokes; ++s) {
    auto p = torch::rand({5}, gen, torch::kFloat64);
    const double y0 = (0.2 + 0.6 * p[0].item<double>()) * nd;
    const double x0 = (0.2 + 0.6 * p[1].item<double>()) * nd;
    const double y1 = (0.2 + 0.6 * p[2].item<double>()) * nd;
    const double x1 = (0.2 + 0.6 * p[3].item<double>()) * nd;
    const double half_width = (1.25 + 1.0 * p[4].item<double>()) * nd / 64.0;
    const double dy = y1 - y0;
    const double dx = x1 - x0;
    const double len2 = dy * dy + dx * dx + 1e-9;
    auto t = (((yy - y0) * dy + (xx - x0) * dx) / len2).clamp(0.0, 1.0);
    auto dist = torch::hypot(yy - y0 - t * dy, xx - x0 - t * dx);
    img = torch::where(dist < half_width, torch::ones_like(img), img);
  }
  return img;
}

class SyntheticSource final : public ImageSource {
 public:
  SyntheticSource(CorpusStyle style, std::uint64_t seed, std::int64_t size)
      : style_(style), seed_(seed), size_(size) {}

  std::int64_t available() const override {
    return std::numeric_limits<std::int64_t>::max();
  }
  torch::Tensor image(std::int64_t index) const override {
    return synthetic_image(style_, seed_, index, size_);
  }
  std::string descriptor() const override {
    return "synthetic:" + to_string(style_) + ":seed=" + std::to_string(seed_);
  }

 private:
  CorpusStyle style_;
  std::uint64_t seed_;
  std::int64_t size_;
};

class FolderSource final : public ImageSource {
 public:
  explicit FolderSource(fs::path dir) : dir_(std::move(dir)), files_(list_images(dir_)) {}

  std::int64_t available() const override {
    return static_cast<std::int64_t>(files_.size());
  }
  torch::Tensor image(std::int64_t index) const override {
    if (index < 0 || index >= available()) {
      throw ValidationError("corpus " + dir_.string() + " exhausted at image " +
                            std::to_string(index));
    }
    return read_grayscale(files_[static_cast<std::size_t>(index)]);
  }
  std::string descriptor() const override { return "folder:" + dir_.string(); }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
};

}  // namespace

torch::Tensor synthetic_image(CorpusStyle style, std::uint64_t seed,
                              std::int64_t index, std::int64_t size) {
  if (size < 8) throw ValidationError("synthetic image size must be >= 8");
  auto gen = make_generator(mix_seed(seed, static_cast<std::uint64_t>(index)));
  switch (style) {
    case CorpusStyle::dense: return dense_image(gen, size);
    case CorpusStyle::medium: return medium_image(gen, size);
    case CorpusStyle::sparse: return sparse_image(gen, size);
  }
  return dense_image(gen, size);
}

std::vector<torch::Tensor> synthetic_corpus(std::int64_t count, CorpusStyle style,
                                            std::uint64_t seed, std::int64_t size) {
  if (count <= 0) throw ValidationError("synthetic corpus count must be positive");
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) out.push_back(synthetic_image(style, seed, i, size));
  return out;
}

std::unique_ptr<ImageSource> open_corpus(const std::string& spec, std::uint64_t seed,
                                         std::int64_t size) {
  constexpr std::string_view prefix = "synthetic:";
  if (spec.rfind(prefix, 0) == 0) {
    return std::make_unique<SyntheticSource>(
        corpus_style_from_string(spec.substr(prefix.size())), seed, size);
  }
  if (!fs::is_directory(spec)) throw IoError("corpus directory not found: " + spec);
  return std::make_unique<FolderSource>(spec);
}

// ---------------------------------------------------------------- specs

void to_json(nlohmann::json& j, const AmplitudeMapping& m) {
  j = {{"range", {m.min, m.max}}, {"invert", m.invert}};
}

void from_json(const nlohmann::json& j, AmplitudeMapping& m) {
  if (j.contains("range")) {
    m.min = j["range"][0].get<double>();
    m.max = j["range"][1].get<double>();
  }
  m.invert = j.value("invert", false);
}

void to_json(nlohmann::json& j, const GenerationSpec& s) {
  j = {{"corpus", s.corpus},
       {"count", s.count},
       {"first_index", s.first_index},
       {"phase_range", s.phase_range},
       {"amplitude_mapping", s.amplitude_mapping},
       {"include_gt", s.include_gt},
       {"seed", s.seed}};
  j["amplitude_corpus"] = s.amplitude_corpus ? nlohmann::json(*s.amplitude_corpus)
                                             : nlohmann::json(nullptr);
  j["aberration"] = s.aberration ? nlohmann::json(*s.aberration) : nlohmann::json(nullptr);
  j["support_radius_px"] = s.support_radius_px ? nlohmann::json(*s.support_radius_px)
                                               : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, GenerationSpec& s) {
  s.corpus = j.value("corpus", s.corpus);
  s.count = j.value("count", s.count);
  s.first_index = j.value("first_index", s.first_index);
  if (j.contains("phase_range")) s.phase_range = j["phase_range"].get<PhaseRange>();
  if (j.contains("amplitude_mapping")) {
    s.amplitude_mapping = j["amplitude_mapping"].get<AmplitudeMapping>();
  }
  s.include_gt = j.value("include_gt", s.include_gt);
  s.seed = j.value("seed", s.seed);
  if (j.contains("amplitude_corpus") && !j["amplitude_corpus"].is_null()) {
    s.amplitude_corpus = j["amplitude_corpus"].get<std::string>();
  }
  if (j.contains("aberration") && !j["aberration"].is_null()) {
    s.aberration = j["aberration"].get<RMEConfig>();
  }
  if (j.contains("support_radius_px") && !j["support_radius_px"].is_null()) {
    s.support_radius_px = j["support_radius_px"].get<double>();
  }
}

void DatasetManifest::validate() const {
  if (count <= 0) throw ValidationError("manifest count must be positive");
  if (static_cast<std::size_t>(count) != records.size()) {
    throw ValidationError("manifest count does not match its record list");
  }
  optics.validate();
}

std::string DatasetManifest::hash() const {
  nlohmann::json j = *this;
  return content_hash(j.dump());
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = {{"container_version", m.container_version},
       {"optics", m.optics},
       {"distances_m", m.optics.distances_m},
       {"count", m.count},
       {"phase_range", m.phase_range},
       {"corpus_descriptor", m.corpus_descriptor},
       {"hologram_convention", m.hologram_convention},
       {"has_gt_phase", m.has_gt_phase},
       {"has_gt_amplitude", m.has_gt_amplitude},
       {"has_aberration", m.has_aberration},
       {"generation", m.generation},
       {"records", m.records}};
  j["support_radius_px"] = m.support_radius_px ? nlohmann::json(*m.support_radius_px)
                                               : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  try {
    m.container_version = j.at("container_version").get<std::string>();
    m.optics = j.at("optics").get<OpticalConfig>();
    if (j.contains("distances_m")) {
      m.optics.distances_m = j["distances_m"].get<std::vector<double>>();
    }
    m.count = j.at("count").get<std::int64_t>();
    m.phase_range = j.at("phase_range").get<PhaseRange>();
    m.corpus_descriptor = j.value("corpus_descriptor", std::string{});
    m.hologram_convention = j.value("hologram_convention", std::string{"intensity"});
    m.has_gt_phase = j.value("has_gt_phase", false);
    m.has_gt_amplitude = j.value("has_gt_amplitude", false);
    m.has_aberration = j.value("has_aberration", false);
    m.generation = j.value("generation", nlohmann::json::object());
    m.records = j.at("records").get<std::vector<std::string>>();
    if (j.contains("support_radius_px") && !j["support_radius_px"].is_null()) {
      m.support_radius_px = j["support_radius_px"].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("manifest: ") + e.what());
  }
}

// ---------------------------------------------------------------- records

std::string hologram_filename(double z_m) { return "holo_" + format_double(z_m) + ".prt"; }

torch::Tensor disk_mask(std::int64_t n, double radius_px) {
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  auto coords = torch::arange(n, torch::kFloat64) - c;
  auto r2 = coords.square().unsqueeze(1) + coords.square().unsqueeze(0);
  return (r2 <= radius_px * radius_px).to(torch::kFloat64);
}

SampleObject record_sample(const DatasetRecord& r) {
  if (!r.gt_phase.defined()) {
    throw ConfigError("record " + r.record_id + " has no ground-truth phase");
  }
  auto phase = r.gt_phase.to(torch::kFloat64);
  if (r.aberration_phase.defined()) phase = phase + r.aberration_phase.to(torch::kFloat64);
  torch::Tensor amp;
  if (r.gt_amplitude.defined()) amp = r.gt_amplitude.to(torch::kFloat64);
  return SampleObject{phase, amp};
}

void write_record(const fs::path& dataset_dir, const std::string& relative_path,
                  const DatasetRecord& r) {
  const auto dir = dataset_dir / relative_path;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& h : r.holograms) write_tensor(dir / hologram_filename(h.z_m), h.intensity);
  if (r.gt_phase.defined()) write_tensor(dir / "gt_phase.prt", r.gt_phase);
  if (r.gt_amplitude.defined()) write_tensor(dir / "gt_amp.prt", r.gt_amplitude);
  if (r.aberration_phase.defined()) write_tensor(dir / "aberration.prt", r.aberration_phase);
}

DatasetRecord read_record(const fs::path& dataset_dir, const DatasetManifest& m,
                          std::size_t index) {
  if (index >= m.records.size()) throw ValidationError("record index out of range");
  const auto dir = dataset_dir / m.records[index];
  DatasetRecord r;
  r.record_id = fs::path(m.records[index]).filename().string();
  for (double z : m.distances()) {
    r.holograms.push_back(Hologram{read_tensor(dir / hologram_filename(z)), z, m.optics});
  }
  if (m.has_gt_phase) r.gt_phase = read_tensor(dir / "gt_phase.prt");
  if (m.has_gt_amplitude) r.gt_amplitude = read_tensor(dir / "gt_amp.prt");
  if (m.has_aberration) r.aberration_phase = read_tensor(dir / "aberration.prt");
  return r;
}

void write_manifest(const fs::path& dir, const DatasetManifest& m) {
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << nlohmann::json(m).dump(2) << '\n';
  if (!out) throw IoError("cannot write manifest in " + dir.string());
}

DatasetManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest: " + std::string(e.what()));
  }
  auto m = j.get<DatasetManifest>();
  m.validate();
  return m;
}

namespace {

std::string record_name(std::int64_t index) {
  std::ostringstream s;
  s << std::setw(6) << std::setfill('0') << index;
  return s.str();
}

// Stored tensors are f32; holograms are formed from the f32-rounded arrays so
// that re-simulating a record from disk reproduces it exactly.
DatasetRecord make_record(const GenerationSpec& spec, const OpticalConfig& optics,
                          const ImageSource& phase_src, const ImageSource* amp_src,
                          std::int64_t i) {
  const auto n = optics.grid_size;
  const auto corpus_index = spec.first_index + i;
  DatasetRecord r;
  r.record_id = record_name(i);

  auto phase = image_to_phase(phase_src.image(corpus_index), n, spec.phase_range);
  torch::Tensor amp;
  if (amp_src != nullptr) {
    auto img = resize_bilinear(amp_src->image(corpus_index).to(torch::kFloat64), n)
                   .clamp(0.0, 1.0);
    if (spec.amplitude_mapping.invert) img = 1.0 - img;
    const auto& am = spec.amplitude_mapping;
    amp = (am.min + (am.max - am.min) * img).clamp(0.0, 1.0);
  }
  if (spec.support_radius_px) {
    auto mask = disk_mask(n, *spec.support_radius_px);
    phase = phase * mask;
    amp = (amp.defined() ? amp : torch::ones({n, n}, torch::kFloat64)) * mask;
  }
  r.gt_phase = phase.to(torch::kFloat32);
  if (amp.defined()) r.gt_amplitude = amp.to(torch::kFloat32);
  if (spec.aberration) {
    auto cfg = *spec.aberration;
    cfg.rng_seed = mix_seed(cfg.rng_seed, static_cast<std::uint64_t>(corpus_index));
    r.aberration_phase = rme_aberration(cfg, n).to(torch::kFloat32);
  }

  auto sample = record_sample(r);
  for (double z : optics.distances_m) {
    auto h = form_hologram(sample, z, optics);
    h.intensity = h.intensity.to(torch::kFloat32);
    r.holograms.push_back(std::move(h));
  }
  if (!spec.include_gt) {
    r.gt_phase = torch::Tensor();
    r.gt_amplitude = torch::Tensor();
    r.aberration_phase = torch::Tensor();
  }
  return r;
}

}  // namespace

DatasetManifest generate_dataset(const GenerationSpec& spec, const OpticalConfig& optics,
                                 const fs::path& out) {
  optics.validate();
  spec.phase_range.validate();
  if (spec.count <= 0) throw ValidationError("dataset count must be positive");
  if (spec.aberration) spec.aberration->validate();
  for (double z : optics.distances_m) {
    if (std::abs(z) >= optics.sampling_limit_m()) {
      log::warn("propagation distance exceeds the sampling limit",
                {{"distance_m", z}, {"limit_m", optics.sampling_limit_m()}});
    }
  }

  auto phase_src = open_corpus(spec.corpus, spec.seed, optics.grid_size);
  std::unique_ptr<ImageSource> amp_src;
  if (spec.amplitude_corpus) {
    amp_src = open_corpus(*spec.amplitude_corpus, mix_seed(spec.seed, 0xA3u), optics.grid_size);
  }
  const auto needed = spec.first_index + spec.count;
  if (phase_src->available() < needed ||
      (amp_src && amp_src->available() < needed)) {
    throw ValidationError("corpus exhausted: " + std::to_string(needed) +
                          " images required");
  }

  std::error_code ec;
  fs::create_directories(out / "records", ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());

  DatasetManifest m;
  m.optics = optics;
  m.count = spec.count;
  m.phase_range = spec.phase_range;
  m.corpus_descriptor = phase_src->descriptor();
  m.has_gt_phase = spec.include_gt;
  m.has_gt_amplitude = spec.include_gt && spec.amplitude_corpus.has_value();
  if (spec.include_gt && spec.support_radius_px) m.has_gt_amplitude = true;
  m.has_aberration = spec.include_gt && spec.aberration.has_value();
  m.support_radius_px = spec.support_radius_px;
  m.generation = spec;
  for (std::int64_t i = 0; i < spec.count; ++i) m.records.push_back("records/" + record_name(i));

  std::atomic<std::int64_t> next{0};
  std::mutex error_mutex;
  std::string first_error;
  int error_code = 0;
  auto worker = [&] {
    for (std::int64_t i = next++; i < spec.count; i = next++) {
      try {
        auto r = make_record(spec, optics, *phase_src, amp_src.get(), i);
        write_record(out, m.records[static_cast<std::size_t>(i)], r);
      } catch (const Error& e) {
        std::lock_guard lock(error_mutex);
        if (first_error.empty()) {
          first_error = "record " + std::to_string(i) + ": " + e.what();
          error_code = e.exit_code();
        }
        next = spec.count;
      }
    }
  };
  const int jobs = std::max(1, spec.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }
  if (!first_error.empty()) {
    if (error_code == 3) throw IoError(first_error);
    throw ValidationError(first_error);
  }
  write_manifest(out, m);
  return m;
}

Hologram ingest_external_hologram(const fs::path& file,
                                  const std::optional<OpticalConfig>& optics) {
  if (!optics) {
    throw ConfigError("external hologram " + file.string() +
                      ": optics metadata (distance, wavelength, pitch) is required");
  }
  optics->validate();
  auto img = read_grayscale(file);
  auto resized = resize_bilinear(img, optics->grid_size);
  const double mean = resized.mean().item<double>();
  if (!(mean > 0.0)) throw ValidationError("external hologram has zero mean intensity");
  if (resized.var().item<double>() == 0.0) {
    log::warn("external hologram has zero variance", {{"file", file.string()}});
  }
  Hologram h{(resized / mean).to(torch::kFloat32), optics->distance(), *optics};
  h.validate();
  return h;
}

}  // namespace phaserec
