#include "phaserec/harness.hpp"

#include "phaserec/error.hpp"
#include "phaserec/image_io.hpp"
#include "phaserec/log.hpp"
#include "phaserec/tensor_io.hpp"
#include "phaserec/util.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

namespace phaserec {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

SuiteConfig SuiteConfig::desk() {
  SuiteConfig c;
  c.optics.grid_size = 64;
  c.optics.pixel_pitch_m = 16e-6;
  c.optics.wavelength_m = 532e-9;
  c.optics.distances_m = {0.02};
  c.model.depth = 3;
  c.model.base_width = 16;
  return c;
}

void SuiteConfig::validate() const {
  optics.validate();
  phase_range.validate();
  model.validate();
  model.validate_grid(optics.grid_size);
  if (train_count < 1 || test_count < 1) throw ConfigError("train/test counts must be >= 1");
  if (epochs < 0 || batch < 1 || upd_cycles < 0 || tpdr_cycles < 0) {
    throw ConfigError("epochs, batch and cycle counts must be non-negative");
  }
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("alpha and beta must be >= 0");
  if (!(band_cutoff > 0.0)) throw ConfigError("band cutoff must be positive");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

void to_json(json& j, const SuiteConfig& c) {
  j = {{"optics", c.optics},
       {"corpus", c.corpus},
       {"phase_range", c.phase_range},
       {"train_count", c.train_count},
       {"test_count", c.test_count},
       {"model", c.model},
       {"epochs", c.epochs},
       {"batch", c.batch},
       {"upd_cycles", c.upd_cycles},
       {"tpdr_cycles", c.tpdr_cycles},
       {"refine_records", c.refine_records},
       {"alpha", c.alpha},
       {"beta", c.beta},
       {"band_cutoff", c.band_cutoff},
       {"seed", c.seed},
       {"jobs", c.jobs}};
}

void from_json(const json& j, SuiteConfig& c) {
  c = SuiteConfig::desk();
  if (j.contains("optics")) c.optics = j["optics"].get<OpticalConfig>();
  c.corpus = j.value("corpus", c.corpus);
  if (j.contains("phase_range")) c.phase_range = j["phase_range"].get<PhaseRange>();
  c.train_count = j.value("train_count", c.train_count);
  c.test_count = j.value("test_count", c.test_count);
  if (j.contains("model")) c.model = j["model"].get<ModelSpec>();
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.upd_cycles = j.value("upd_cycles", c.upd_cycles);
  c.tpdr_cycles = j.value("tpdr_cycles", c.tpdr_cycles);
  c.refine_records = j.value("refine_records", c.refine_records);
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.band_cutoff = j.value("band_cutoff", c.band_cutoff);
  c.seed = j.value("seed", c.seed);
  c.jobs = j.value("jobs", c.jobs);
}

std::string to_string(IllPosedVariant v) {
  switch (v) {
    case IllPosedVariant::single: return "single";
    case IllPosedVariant::aperture: return "aperture";
    case IllPosedVariant::multi: return "multi";
  }
  return "single";
}

IllPosedVariant illposed_variant_from_string(const std::string& s) {
  if (s == "single") return IllPosedVariant::single;
  if (s == "aperture") return IllPosedVariant::aperture;
  if (s == "multi") return IllPosedVariant::multi;
  throw ConfigError("unknown ill-posedness variant '" + s + "'");
}

void to_json(json& j, const IllPosedConfig& c) {
  j = {{"support_radius_px", c.support_radius_px},
       {"multi_distances_m", c.multi_distances_m},
       {"amplitude", c.amplitude}};
}

void from_json(const json& j, IllPosedConfig& c) {
  c.support_radius_px = j.value("support_radius_px", c.support_radius_px);
  c.multi_distances_m = j.value("multi_distances_m", c.multi_distances_m);
  if (j.contains("amplitude")) c.amplitude = j["amplitude"].get<AmplitudeMapping>();
}

// ---------------------------------------------------------------- grid

std::string HarnessGrid::key(const std::vector<std::string>& values) {
  std::string k;
  for (const auto& v : values) {
    if (!k.empty()) k += '/';
    k += v;
  }
  return k;
}

std::vector<std::string> HarnessGrid::expected_keys() const {
  std::vector<std::vector<std::string>> combos{{}};
  for (const auto& [name, values] : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& c : combos) {
      for (const auto& v : values) {
        auto e = c;
        e.push_back(v);
        next.push_back(std::move(e));
      }
    }
    combos = std::move(next);
  }
  std::vector<std::string> keys;
  for (const auto& c : combos) keys.push_back(key(c));
  return keys;
}

bool HarnessGrid::complete() const {
  for (const auto& k : expected_keys()) {
    if (!cells.contains(k)) return false;
  }
  return true;
}

const json& HarnessGrid::cell(const std::vector<std::string>& values) const {
  auto it = cells.find(key(values));
  if (it == cells.end()) throw ValidationError("missing harness cell " + key(values));
  return it->second;
}

void to_json(json& j, const HarnessGrid& g) {
  json axes = json::array();
  for (const auto& [name, values] : g.axes) axes.push_back({{"name", name}, {"values", values}});
  j = {{"schema_version", g.schema_version},
       {"harness", g.harness},
       {"axes", axes},
       {"cells", g.cells},
       {"provenance", g.provenance}};
}

void from_json(const json& j, HarnessGrid& g) {
  g.schema_version = j.at("schema_version").get<int>();
  if (g.schema_version != kHarnessSchemaVersion) {
    throw ValidationError("unsupported report schema version " +
                          std::to_string(g.schema_version));
  }
  g.harness = j.at("harness").get<std::string>();
  g.axes.clear();
  for (const auto& a : j.at("axes")) {
    g.axes.emplace_back(a.at("name").get<std::string>(),
                        a.at("values").get<std::vector<std::string>>());
  }
  g.cells = j.at("cells").get<std::map<std::string, json>>();
  g.provenance = j.value("provenance", json::object());
}

void HarnessGrid::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << json(*this).dump(2) << '\n';
}

HarnessGrid HarnessGrid::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in).get<HarnessGrid>();
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- workspace

namespace {

std::mutex& dataset_mutex() {
  static std::mutex m;
  return m;
}

std::string hash_json(const json& j) { return content_hash(j.dump()); }

json generation_key(const GenerationSpec& spec, const OpticalConfig& optics) {
  json g = spec;
  g.erase("jobs");
  return {{"generation", g}, {"optics", optics}};
}

std::string weights_fingerprint(const ModelWeights& w) {
  torch::NoGradGuard guard;
  double acc = 0.0;
  double weight = 1.0;
  for (const auto& p : w.net->parameters()) {
    acc += weight * p.to(torch::kFloat64).sum().item<double>();
    weight += 1.0;
  }
  json j = {{"spec", w.spec}, {"provenance", w.provenance}, {"sum", format_double(acc)}};
  return hash_json(j);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return json::parse(in);
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (auto i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            return;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

Workspace::Workspace(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw IoError("cannot create work directory " + root_.string());
}

fs::path Workspace::dataset(const GenerationSpec& spec, const OpticalConfig& optics) {
  std::lock_guard lock(dataset_mutex());
  const auto dir = root_ / "datasets" / hash_json(generation_key(spec, optics));
  if (fs::exists(dir / "manifest.json")) return dir;
  auto tmp = dir;
  tmp += ".partial";
  fs::remove_all(tmp);
  log::info("generating dataset", {{"dir", dir.string()}, {"count", spec.count}});
  generate_dataset(spec, optics, tmp);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
  return dir;
}

TrainResult Workspace::trained(const StrategyConfig& strategy, const fs::path& dataset,
                               const ModelSpec& spec) {
  const auto manifest = read_manifest(dataset);
  const json key = {{"strategy", strategy}, {"spec", spec}, {"dataset", manifest.hash()}};
  const auto dir = root_ / "models" / hash_json(key);
  if (fs::exists(dir / "model.ckpt") && fs::exists(dir / "train_report.json")) {
    return {load_checkpoint(dir / "model.ckpt"),
            read_json(dir / "train_report.json").get<TrainReport>()};
  }
  log::info("training", {{"strategy", to_string(strategy.kind)}, {"dir", dir.string()}});
  auto result = train(strategy, dataset, spec);
  fs::create_directories(dir);
  result.report.save(dir);
  write_json(dir / "config.json", key);
  save_checkpoint(result.weights, dir / "model.ckpt");
  return result;
}

torch::Tensor Workspace::refined_phase(const StrategyConfig& strategy, const DatasetView& test,
                                       std::int64_t records, const ModelSpec& spec,
                                       const ModelWeights* init, double* seconds_per_record) {
  json key = {{"strategy", strategy},
              {"spec", spec},
              {"dataset", test.manifest().hash()},
              {"init", init ? weights_fingerprint(*init) : std::string("none")}};
  const auto dir = root_ / "refine" / hash_json(key);
  fs::create_directories(dir);
  write_json(dir / "config.json", key);
  Measurement m;
  m.optics = test.manifest().optics;
  std::vector<torch::Tensor> phases;
  double seconds = 0.0;
  for (std::int64_t i = 0; i < records; ++i) {
    const auto stem = "rec_" + std::to_string(i);
    const auto phase_file = dir / (stem + ".prt");
    const auto info_file = dir / (stem + ".json");
    if (fs::exists(phase_file) && fs::exists(info_file)) {
      phases.push_back(read_tensor(phase_file).to(torch::kFloat32));
      seconds += read_json(info_file).at("seconds").get<double>();
      continue;
    }
    m.holograms = test.holograms()[i];
    auto result = init ? refine_tpdr(*init, m, strategy) : infer_upd(m, spec, strategy);
    auto phase = result.output.phase.reshape({m.holograms.size(-2), m.holograms.size(-1)});
    write_tensor(phase_file, phase.to(torch::kCPU));
    write_json(info_file, {{"seconds", result.report.wall_seconds},
                           {"best_cycle", result.report.best_cycle},
                           {"best_loss", result.report.best_loss}});
    log::info("refined record", {{"strategy", to_string(strategy.kind)},
                                 {"record", i},
                                 {"seconds", result.report.wall_seconds},
                                 {"best_loss", result.report.best_loss}});
    phases.push_back(phase.to(torch::kCPU, torch::kFloat32));
    seconds += result.report.wall_seconds;
  }
  if (seconds_per_record) *seconds_per_record = records > 0 ? seconds / records : 0.0;
  return torch::stack(phases).unsqueeze(1);
}

// ---------------------------------------------------------------- shared

namespace {

GenerationSpec split_spec(const SuiteConfig& cfg, const std::string& corpus, bool test) {
  GenerationSpec g;
  g.corpus = corpus;
  g.count = test ? cfg.test_count : cfg.train_count;
  g.first_index = test ? cfg.train_count : 0;
  g.phase_range = cfg.phase_range;
  g.include_gt = true;
  g.seed = cfg.seed;
  g.jobs = cfg.jobs;
  return g;
}

StrategyConfig strategy_for(const SuiteConfig& cfg, StrategyKind kind) {
  auto s = StrategyConfig::defaults(kind);
  s.alpha = cfg.alpha;
  s.beta = cfg.beta;
  s.rng_seed = cfg.seed;
  s.optimizer.batch = cfg.batch;
  s.optimizer.epochs = cfg.epochs;
  if (kind == StrategyKind::upd) s.cycles = cfg.upd_cycles;
  if (kind == StrategyKind::tpdr) s.cycles = cfg.tpdr_cycles;
  return s;
}

ModelSpec model_for(const SuiteConfig& cfg, std::int64_t channels, bool amplitude) {
  auto m = cfg.model;
  m.phase_range = cfg.phase_range;
  m.input_channels = channels;
  m.amplitude_head = amplitude;
  return m;
}

std::vector<std::string> record_ids(const DatasetManifest& m, std::int64_t n) {
  std::vector<std::string> ids;
  for (std::int64_t i = 0; i < n; ++i) {
    ids.push_back(fs::path(m.records[static_cast<std::size_t>(i)]).filename().string());
  }
  return ids;
}

std::string corpus_name(CorpusStyle s) { return "synthetic:" + to_string(s); }

// Error map, first prediction/ground truth and a centre-row profile.
void export_cell(const fs::path& out, const std::string& key, const torch::Tensor& pred,
                 const torch::Tensor& gt, double lo, double hi, bool align,
                 const torch::Tensor& mask = {}) {
  if (out.empty()) return;
  const auto dir = out / "cells" / key;
  fs::create_directories(dir);
  auto p = pred.detach().to(torch::kCPU, torch::kFloat64).reshape({-1, pred.size(-2), pred.size(-1)});
  auto g = gt.detach().to(torch::kCPU, torch::kFloat64).reshape({-1, gt.size(-2), gt.size(-1)});
  g = g.slice(0, 0, p.size(0));
  auto aligned = align ? piston_align(p, g, mask) : p;
  auto err = mean_abs_error_map(aligned, g);
  write_png(dir / "error_map.png", err, 0.0, hi - lo);
  write_tensor(dir / "error_map.prt", err);
  write_png(dir / "prediction_0.png", aligned[0], lo, hi);
  write_png(dir / "ground_truth_0.png", g[0], lo, hi);
  const auto row = g.size(-2) / 2;
  auto gp = line_profile(g[0], row);
  auto pp = line_profile(aligned[0], row);
  std::ofstream csv(dir / "profile_0.csv", std::ios::trunc);
  csv << "x,ground_truth,prediction\n";
  for (std::int64_t x = 0; x < gp.size(0); ++x) {
    csv << x << ',' << format_double(gp[x].item<double>()) << ','
        << format_double(pp[x].item<double>()) << '\n';
  }
}

void finish(HarnessGrid& grid, const HarnessOptions& opt) {
  if (!grid.complete()) throw Error("harness grid is incomplete");
  if (!opt.out_dir.empty()) grid.save(opt.out_dir / "report.json");
}

torch::Tensor infer_phase(const ModelWeights& w, const DatasetView& test, double* seconds) {
  auto inf = infer_trained(w, test.holograms());
  if (seconds) *seconds = inf.seconds / static_cast<double>(test.size());
  return inf.output.phase;
}

}  // namespace

// ---------------------------------------------------------------- strategy table

HarnessGrid run_strategy_comparison(const SuiteConfig& cfg, const HarnessOptions& opt,
                                    const std::vector<StrategyKind>& strategies) {
  cfg.validate();
  Workspace ws(opt.work_dir);
  const auto train_dir = ws.dataset(split_spec(cfg, cfg.corpus, false), cfg.optics);
  const auto test_dir = ws.dataset(split_spec(cfg, cfg.corpus, true), cfg.optics);
  const DatasetView test(test_dir);
  const auto channels = static_cast<std::int64_t>(cfg.optics.distances_m.size());
  const auto spec = model_for(cfg, channels, false);
  const auto refine_n =
      cfg.refine_records < 0 ? test.size() : std::min(cfg.refine_records, test.size());

  HarnessGrid grid;
  grid.harness = "strategy_comparison";
  std::vector<std::string> names;
  for (auto k : strategies) names.push_back(to_string(k));
  grid.axes = {{"strategy", names}};
  grid.provenance = {{"config", cfg},
                     {"train_dataset", read_manifest(train_dir).hash()},
                     {"test_dataset", test.manifest().hash()}};

  // Dataset strategies train independently; tPDr needs the tPD weights.
  std::vector<StrategyKind> to_train;
  for (auto k : strategies) {
    if (!StrategyConfig::defaults(k).per_measurement()) to_train.push_back(k);
  }
  const bool need_tpd = std::find(strategies.begin(), strategies.end(), StrategyKind::tpdr) !=
                        strategies.end();
  if (need_tpd && std::find(to_train.begin(), to_train.end(), StrategyKind::tpd) == to_train.end()) {
    to_train.push_back(StrategyKind::tpd);
  }
  std::map<StrategyKind, TrainResult> trained;
  std::mutex trained_mutex;
  parallel_for(to_train.size(), cfg.jobs, [&](std::size_t i) {
    auto r = ws.trained(strategy_for(cfg, to_train[i]), train_dir, spec);
    std::lock_guard lock(trained_mutex);
    trained.emplace(to_train[i], std::move(r));
  });

  PhaseEvalOptions eval;
  eval.data_range = cfg.phase_range.width();
  eval.cutoff = cfg.band_cutoff;
  for (auto kind : strategies) {
    const auto name = to_string(kind);
    json cell;
    torch::Tensor pred, gt;
    double seconds = 0.0;
    if (kind == StrategyKind::upd || kind == StrategyKind::tpdr) {
      const ModelWeights* init = kind == StrategyKind::tpdr ? &trained.at(StrategyKind::tpd).weights
                                                            : nullptr;
      auto s = strategy_for(cfg, kind);
      pred = ws.refined_phase(s, test, refine_n, spec, init, &seconds);
      gt = test.gt_phase().slice(0, 0, refine_n);
      cell["cycles"] = s.cycles;
      cell["train_seconds"] =
          kind == StrategyKind::tpdr ? trained.at(StrategyKind::tpd).report.wall_seconds : 0.0;
    } else {
      const auto& t = trained.at(kind);
      pred = infer_phase(t.weights, test, &seconds);
      gt = test.gt_phase();
      cell["cycles"] = 1;
      cell["train_seconds"] = t.report.wall_seconds;
      cell["final_train_loss"] = t.report.traces.at("total").empty()
                                     ? 0.0
                                     : t.report.traces.at("total").back();
      cell["initial_train_loss"] = t.report.traces.at("total").empty()
                                       ? 0.0
                                       : t.report.traces.at("total").front();
    }
    auto report = evaluate_phase(pred, gt, eval, record_ids(test.manifest(), pred.size(0)));
    cell["phase"] = report;
    cell["inference_seconds_per_record"] = seconds;
    cell["records"] = pred.size(0);
    export_cell(opt.out_dir, name, pred, gt, cfg.phase_range.min, cfg.phase_range.max, true);
    grid.cells[HarnessGrid::key({name})] = cell;
    log::info("strategy evaluated", {{"strategy", name},
                                     {"ssim", report.mean_ssim},
                                     {"psnr_db", report.mean_psnr_db}});
  }
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    std::ofstream csv(opt.out_dir / "table.csv", std::ios::trunc);
    csv << "strategy,records,psnr_db,ssim,low_rms,high_rms,train_seconds,"
           "inference_seconds_per_record,cycles\n";
    for (const auto& name : names) {
      const auto& c = grid.cells.at(name);
      const auto& p = c.at("phase");
      csv << name << ',' << c.at("records").get<std::int64_t>() << ','
          << format_double(p.at("mean_psnr_db").get<double>()) << ','
          << format_double(p.at("mean_ssim").get<double>()) << ','
          << format_double(p.at("mean_bands").at("low_rms").get<double>()) << ','
          << format_double(p.at("mean_bands").at("high_rms").get<double>()) << ','
          << format_double(c.at("train_seconds").get<double>()) << ','
          << format_double(c.at("inference_seconds_per_record").get<double>()) << ','
          << c.at("cycles").get<std::int64_t>() << '\n';
    }
  }
  finish(grid, opt);
  return grid;
}

// ---------------------------------------------------------------- defocus sweep

HarnessGrid run_defocus_sweep(const SuiteConfig& cfg, const HarnessOptions& opt,
                              const std::vector<double>& distances_m,
                              const std::vector<StrategyKind>& strategies) {
  cfg.validate();
  if (distances_m.empty()) throw ConfigError("defocus sweep needs at least one distance");
  if (cfg.optics.distances_m.size() != 1) {
    throw ConfigError("defocus sweep trains on a single distance");
  }
  for (auto k : strategies) {
    if (StrategyConfig::defaults(k).per_measurement()) {
      throw ConfigError("defocus sweep takes trained strategies (dd, tpd, cd)");
    }
  }
  Workspace ws(opt.work_dir);
  const auto train_dir = ws.dataset(split_spec(cfg, cfg.corpus, false), cfg.optics);
  const auto spec = model_for(cfg, 1, false);

  HarnessGrid grid;
  grid.harness = "defocus_sweep";
  std::vector<std::string> names, zs;
  for (auto k : strategies) names.push_back(to_string(k));
  for (double z : distances_m) zs.push_back(format_double(z * 1000.0));
  grid.axes = {{"strategy", names}, {"distance_mm", zs}};
  grid.provenance = {{"config", cfg},
                     {"train_distance_m", cfg.optics.distance()},
                     {"train_dataset", read_manifest(train_dir).hash()}};

  std::vector<TrainResult> trained(strategies.size());
  parallel_for(strategies.size(), cfg.jobs, [&](std::size_t i) {
    trained[i] = ws.trained(strategy_for(cfg, strategies[i]), train_dir, spec);
  });

  PhaseEvalOptions eval;
  eval.data_range = cfg.phase_range.width();
  eval.cutoff = cfg.band_cutoff;
  json test_hashes = json::object();
  for (std::size_t zi = 0; zi < distances_m.size(); ++zi) {
    auto optics = cfg.optics;
    optics.distances_m = {distances_m[zi]};
    const DatasetView test(ws.dataset(split_spec(cfg, cfg.corpus, true), optics));
    test_hashes[zs[zi]] = test.manifest().hash();
    for (std::size_t si = 0; si < strategies.size(); ++si) {
      auto pred = infer_phase(trained[si].weights, test, nullptr);
      auto report = evaluate_phase(pred, test.gt_phase(), eval);
      grid.cells[HarnessGrid::key({names[si], zs[zi]})] = {{"phase", report},
                                                            {"distance_m", distances_m[zi]}};
    }
  }
  grid.provenance["test_datasets"] = test_hashes;
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    std::ofstream csv(opt.out_dir / "sweep.csv", std::ios::trunc);
    csv << "distance_mm";
    for (const auto& n : names) csv << ',' << n;
    csv << '\n';
    for (const auto& z : zs) {
      csv << z;
      for (const auto& n : names) {
        csv << ',' << format_double(grid.cells.at(HarnessGrid::key({n, z}))
                                        .at("phase")
                                        .at("mean_ssim")
                                        .get<double>());
      }
      csv << '\n';
    }
  }
  finish(grid, opt);
  return grid;
}

// ---------------------------------------------------------------- cross-generalization

HarnessGrid run_cross_generalization(const SuiteConfig& cfg, const HarnessOptions& opt,
                                     const std::vector<CorpusStyle>& styles,
                                     const std::vector<StrategyKind>& strategies) {
  cfg.validate();
  for (auto k : strategies) {
    if (StrategyConfig::defaults(k).per_measurement()) {
      throw ConfigError("cross-generalization takes trained strategies (dd, tpd, cd)");
    }
  }
  Workspace ws(opt.work_dir);
  const auto spec = model_for(cfg, static_cast<std::int64_t>(cfg.optics.distances_m.size()), false);
  std::vector<std::string> names, corpora;
  for (auto k : strategies) names.push_back(to_string(k));
  for (auto s : styles) corpora.push_back(to_string(s));

  HarnessGrid grid;
  grid.harness = "cross_generalization";
  grid.axes = {{"strategy", names}, {"train", corpora}, {"test", corpora}};
  grid.provenance = {{"config", cfg}};

  std::vector<fs::path> train_dirs, test_dirs;
  json hashes = json::object();
  for (auto s : styles) {
    train_dirs.push_back(ws.dataset(split_spec(cfg, corpus_name(s), false), cfg.optics));
    test_dirs.push_back(ws.dataset(split_spec(cfg, corpus_name(s), true), cfg.optics));
    hashes[to_string(s)] = {{"train", read_manifest(train_dirs.back()).hash()},
                            {"test", read_manifest(test_dirs.back()).hash()}};
  }
  grid.provenance["datasets"] = hashes;

  const auto cells = strategies.size() * styles.size();
  std::vector<TrainResult> trained(cells);
  parallel_for(cells, cfg.jobs, [&](std::size_t i) {
    const auto si = i / styles.size();
    const auto ti = i % styles.size();
    trained[i] = ws.trained(strategy_for(cfg, strategies[si]), train_dirs[ti], spec);
  });

  PhaseEvalOptions eval;
  eval.data_range = cfg.phase_range.width();
  eval.cutoff = cfg.band_cutoff;
  for (std::size_t te = 0; te < styles.size(); ++te) {
    const DatasetView test(test_dirs[te]);
    for (std::size_t i = 0; i < cells; ++i) {
      const auto si = i / styles.size();
      const auto tr = i % styles.size();
      auto pred = infer_phase(trained[i].weights, test, nullptr);
      auto report = evaluate_phase(pred, test.gt_phase(), eval);
      const auto key = HarnessGrid::key({names[si], corpora[tr], corpora[te]});
      grid.cells[key] = {{"phase", report}, {"ssim", report.mean_ssim}};
      export_cell(opt.out_dir, key, pred, test.gt_phase(), cfg.phase_range.min,
                  cfg.phase_range.max, true);
    }
  }
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    std::ofstream csv(opt.out_dir / "matrix.csv", std::ios::trunc);
    csv << "strategy,train,test,ssim\n";
    for (const auto& n : names) {
      for (const auto& tr : corpora) {
        for (const auto& te : corpora) {
          csv << n << ',' << tr << ',' << te << ','
              << format_double(grid.cells.at(HarnessGrid::key({n, tr, te})).at("ssim").get<double>())
              << '\n';
        }
      }
    }
  }
  finish(grid, opt);
  return grid;
}

// ---------------------------------------------------------------- ill-posedness

HarnessGrid run_illposedness_suite(const SuiteConfig& cfg, const HarnessOptions& opt,
                                   const IllPosedConfig& ill,
                                   const std::vector<CorpusStyle>& styles,
                                   const std::vector<StrategyKind>& strategies,
                                   const std::vector<IllPosedVariant>& variants) {
  cfg.validate();
  if (!(ill.support_radius_px > 0.0)) throw ConfigError("support radius must be positive");
  if (ill.multi_distances_m.size() != 3) throw ConfigError("multi-distance input takes 3 distances");
  for (auto k : strategies) {
    if (StrategyConfig::defaults(k).per_measurement()) {
      throw ConfigError("ill-posedness suite takes trained strategies (dd, tpd, cd)");
    }
  }
  Workspace ws(opt.work_dir);
  std::vector<std::string> snames, knames, vnames;
  for (auto s : styles) snames.push_back(to_string(s));
  for (auto k : strategies) knames.push_back(to_string(k));
  for (auto v : variants) vnames.push_back(to_string(v));

  HarnessGrid grid;
  grid.harness = "illposedness";
  grid.axes = {{"corpus", snames}, {"strategy", knames}, {"variant", vnames}};
  grid.provenance = {{"config", cfg}, {"illposed", ill}};

  auto single_optics = cfg.optics;
  single_optics.distances_m = {cfg.optics.distance()};
  auto multi_optics = cfg.optics;
  multi_optics.distances_m = ill.multi_distances_m;
  auto gen = [&](CorpusStyle s, bool test) {
    auto g = split_spec(cfg, corpus_name(s), test);
    g.amplitude_corpus = corpus_name(s);
    g.amplitude_mapping = ill.amplitude;
    g.support_radius_px = ill.support_radius_px;
    return g;
  };

  struct Job {
    std::size_t style, strategy, variant;
    fs::path train_dir, test_dir;
  };
  std::vector<Job> jobs;
  json hashes = json::object();
  for (std::size_t s = 0; s < styles.size(); ++s) {
    for (std::size_t k = 0; k < strategies.size(); ++k) {
      for (std::size_t v = 0; v < variants.size(); ++v) {
        const auto& optics =
            variants[v] == IllPosedVariant::multi ? multi_optics : single_optics;
        Job j{s, k, v, ws.dataset(gen(styles[s], false), optics),
              ws.dataset(gen(styles[s], true), optics)};
        hashes[snames[s] + "/" + vnames[v]] = {{"train", read_manifest(j.train_dir).hash()},
                                               {"test", read_manifest(j.test_dir).hash()}};
        jobs.push_back(std::move(j));
      }
    }
  }
  grid.provenance["datasets"] = hashes;

  std::vector<TrainResult> trained(jobs.size());
  parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i) {
    const auto& j = jobs[i];
    auto s = strategy_for(cfg, strategies[j.strategy]);
    if (variants[j.variant] == IllPosedVariant::aperture) s.aperture_radius_px = ill.support_radius_px;
    const auto channels = variants[j.variant] == IllPosedVariant::multi ? 3 : 1;
    trained[i] = ws.trained(s, j.train_dir, model_for(cfg, channels, true));
  });

  const auto support = disk_mask(cfg.optics.grid_size, ill.support_radius_px);
  PhaseEvalOptions eval;
  eval.data_range = cfg.phase_range.width();
  eval.cutoff = cfg.band_cutoff;
  eval.mask = support;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& j = jobs[i];
    const DatasetView test(j.test_dir);
    auto inf = infer_trained(trained[i].weights, test.holograms());
    auto phase = evaluate_phase(inf.output.phase, test.gt_phase(), eval);
    auto amp = evaluate_amplitude(inf.output.amplitude, test.gt_amplitude());
    const auto key = HarnessGrid::key({snames[j.style], knames[j.strategy], vnames[j.variant]});
    grid.cells[key] = {{"phase", phase},
                       {"amplitude", amp},
                       {"phase_ssim", phase.mean_ssim},
                       {"amplitude_ssim", amp.mean_ssim},
                       {"mean_ssim", 0.5 * (phase.mean_ssim + amp.mean_ssim)}};
    export_cell(opt.out_dir, key + "/phase", inf.output.phase, test.gt_phase(),
                cfg.phase_range.min, cfg.phase_range.max, true, support);
    export_cell(opt.out_dir, key + "/amplitude", inf.output.amplitude, test.gt_amplitude(), 0.0,
                1.0, false);
  }
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    std::ofstream csv(opt.out_dir / "illposedness.csv", std::ios::trunc);
    csv << "corpus,strategy,variant,phase_ssim,amplitude_ssim,mean_ssim\n";
    for (const auto& [key, c] : grid.cells) {
      auto k = key;
      std::replace(k.begin(), k.end(), '/', ',');
      csv << k << ',' << format_double(c.at("phase_ssim").get<double>()) << ','
          << format_double(c.at("amplitude_ssim").get<double>()) << ','
          << format_double(c.at("mean_ssim").get<double>()) << '\n';
    }
  }
  finish(grid, opt);
  return grid;
}

// ---------------------------------------------------------------- aberration

HarnessGrid run_aberration_suite(const SuiteConfig& cfg, const HarnessOptions& opt,
                                 const RMEConfig& rme,
                                 const std::vector<StrategyKind>& strategies) {
  cfg.validate();
  rme.validate();
  for (auto k : strategies) {
    if (StrategyConfig::defaults(k).per_measurement()) {
      throw ConfigError("aberration suite takes trained strategies (dd, tpd, cd)");
    }
  }
  Workspace ws(opt.work_dir);
  auto gen = [&](bool test) {
    auto g = split_spec(cfg, cfg.corpus, test);
    g.aberration = rme;
    return g;
  };
  const auto train_dir = ws.dataset(gen(false), cfg.optics);
  const DatasetView test(ws.dataset(gen(true), cfg.optics));
  // The network must be able to express sample + aberration.
  auto spec = model_for(cfg, static_cast<std::int64_t>(cfg.optics.distances_m.size()), false);
  spec.phase_range.max += rme.amplitude_max;
  spec.phase_range.min += rme.amplitude_min;

  std::vector<std::string> names;
  for (auto k : strategies) names.push_back(to_string(k));
  HarnessGrid grid;
  grid.harness = "aberration";
  grid.axes = {{"strategy", names}};
  grid.provenance = {{"config", cfg},
                     {"rme", rme},
                     {"model_phase_range", spec.phase_range},
                     {"train_dataset", read_manifest(train_dir).hash()},
                     {"test_dataset", test.manifest().hash()}};

  std::vector<TrainResult> trained(strategies.size());
  parallel_for(strategies.size(), cfg.jobs, [&](std::size_t i) {
    trained[i] = ws.trained(strategy_for(cfg, strategies[i]), train_dir, spec);
  });

  PhaseEvalOptions eval;
  eval.data_range = cfg.phase_range.width();
  eval.cutoff = cfg.band_cutoff;
  const auto clean = test.gt_phase().to(torch::kFloat64);
  const auto total = clean + test.aberration().to(torch::kFloat64);
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    auto pred = infer_phase(trained[i].weights, test, nullptr).to(torch::kFloat64);
    auto report = evaluate_phase(pred, clean, eval);
    double corr_sample = 0.0, corr_total = 0.0;
    for (std::int64_t r = 0; r < test.size(); ++r) {
      corr_sample += pearson(pred[r], clean[r]);
      corr_total += pearson(pred[r], total[r]);
    }
    const double n = static_cast<double>(test.size());
    grid.cells[names[i]] = {{"phase", report},
                            {"ssim", report.mean_ssim},
                            {"corr_sample", corr_sample / n},
                            {"corr_total", corr_total / n}};
    export_cell(opt.out_dir, names[i], pred, clean, spec.phase_range.min, spec.phase_range.max,
                true);
  }
  finish(grid, opt);
  return grid;
}

}  // namespace phaserec
