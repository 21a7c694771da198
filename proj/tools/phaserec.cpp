// phaserec: simulate holograms, train and run phase-recovery networks, and
// reproduce the comparison protocols.

#include "binder.hpp"

#include "phaserec/datagen.hpp"
#include "phaserec/error.hpp"
#include "phaserec/harness.hpp"
#include "phaserec/image_io.hpp"
#include "phaserec/log.hpp"
#include "phaserec/metrics.hpp"
#include "phaserec/models.hpp"
#include "phaserec/strategies.hpp"
#include "phaserec/tensor_io.hpp"
#include "phaserec/util.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using nlohmann::json;

namespace phaserec::cli {
namespace {

constexpr double kMm = 1e3;  // divisors from user units to SI
constexpr double kNm = 1e9;
constexpr double kUm = 1e6;

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

// Output directory must be new or empty unless --force.
fs::path prepare_out(const json& cfg) {
  const auto out = fs::path(cfg.value("out", std::string{}));
  if (out.empty()) throw ConfigError("--out is required");
  if (fs::exists(out) && !fs::is_empty(out) && !cfg.value("force", false)) {
    throw ConfigError("output directory " + out.string() + " is not empty (use --force)");
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  return out;
}

void require_path(const json& cfg, const char* key, const char* flag) {
  if (!cfg.contains(key) || cfg[key].is_null() || cfg[key].get<std::string>().empty()) {
    throw ConfigError(std::string(flag) + " is required");
  }
  if (!fs::exists(cfg[key].get<std::string>())) {
    throw IoError(std::string(flag) + " " + cfg[key].get<std::string>() + " does not exist");
  }
}

// ---------------------------------------------------------------- inputs

struct Item {
  std::string id;
  Measurement measurement;
  torch::Tensor gt_phase, gt_amplitude;  // [N, N] or undefined
};

struct Inputs {
  std::vector<Item> items;
  std::optional<double> support_radius_px;
  std::optional<PhaseRange> phase_range;
};

// The optics given on the command line for an external hologram.
std::optional<OpticalConfig> external_optics(const json& cfg, const ModelWeights* weights) {
  const auto& o = cfg.value("optics", json::object());
  const bool has_all = o.contains("wavelength_m") && o.contains("pixel_pitch_m") &&
                       o.contains("distance_m");
  if (!has_all) return std::nullopt;
  json full = o;
  if (!full.contains("grid_size")) {
    if (weights && weights->provenance.optics) {
      full["grid_size"] = weights->provenance.optics->grid_size;
    } else {
      throw ConfigError("--grid is required when the weights carry no optics");
    }
  }
  return full.get<OpticalConfig>();
}

Inputs load_inputs(const json& cfg, const ModelWeights* weights) {
  Inputs in;
  const bool has_dataset = cfg.contains("dataset") && !cfg["dataset"].is_null();
  const bool has_hologram = cfg.contains("hologram") && !cfg["hologram"].is_null();
  if (has_dataset == has_hologram) throw ConfigError("give exactly one of --dataset or --hologram");
  if (has_hologram) {
    require_path(cfg, "hologram", "--hologram");
    auto h = ingest_external_hologram(cfg["hologram"].get<std::string>(),
                                      external_optics(cfg, weights));
    Item item;
    item.id = fs::path(cfg["hologram"].get<std::string>()).stem().string();
    item.measurement = Measurement::from({h});
    in.items.push_back(std::move(item));
    return in;
  }
  require_path(cfg, "dataset", "--dataset");
  const DatasetView view(cfg["dataset"].get<std::string>());
  const auto& m = view.manifest();
  auto optics = m.optics;
  if (cfg.contains("optics") && cfg["optics"].contains("pad")) optics.pad = cfg["optics"]["pad"];
  const auto limit = cfg.value("records", std::int64_t{-1});
  const auto n = limit < 0 ? view.size() : std::min(limit, view.size());
  for (std::int64_t i = 0; i < n; ++i) {
    Item item;
    item.id = fs::path(m.records[static_cast<std::size_t>(i)]).filename().string();
    item.measurement.holograms = view.holograms()[i];
    item.measurement.optics = optics;
    if (view.gt_phase().defined()) item.gt_phase = view.gt_phase()[i][0];
    if (view.gt_amplitude().defined()) item.gt_amplitude = view.gt_amplitude()[i][0];
    in.items.push_back(std::move(item));
  }
  in.support_radius_px = m.support_radius_px;
  in.phase_range = m.phase_range;
  return in;
}

void check_compatible(const ModelWeights& w, const OpticalConfig& optics) {
  if (!w.provenance.optics) return;
  if (!w.provenance.optics->same_geometry(optics)) {
    throw ConfigError("input optics (grid, pitch, wavelength) differ from the optics the "
                      "weights were trained with");
  }
  if (w.provenance.optics->distances_m != optics.distances_m) {
    log::warn("input distances differ from the training distances",
              {{"trained_m", w.provenance.optics->distances_m}, {"input_m", optics.distances_m}});
  }
}

// Writes reconstructions and, when ground truth exists, metrics.json.
void write_outputs(const fs::path& out, const Inputs& in,
                   const std::vector<NetOutput>& outputs, const PhaseRange& range) {
  std::vector<torch::Tensor> preds, gts, amps, gt_amps;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < in.items.size(); ++i) {
    const auto& item = in.items[i];
    const auto dir = out / item.id;
    fs::create_directories(dir);
    const auto n = item.measurement.holograms.size(-1);
    auto phase = outputs[i].phase.detach().to(torch::kCPU).reshape({n, n});
    write_tensor(dir / "phase.prt", phase);
    write_png(dir / "phase.png", phase, range.min, range.max);
    if (outputs[i].amplitude.defined()) {
      auto amp = outputs[i].amplitude.detach().to(torch::kCPU).reshape({n, n});
      write_tensor(dir / "amplitude.prt", amp);
      write_png(dir / "amplitude.png", amp, 0.0, 1.0);
      if (item.gt_amplitude.defined()) {
        amps.push_back(amp);
        gt_amps.push_back(item.gt_amplitude);
      }
    }
    if (item.gt_phase.defined()) {
      preds.push_back(phase);
      gts.push_back(item.gt_phase);
      ids.push_back(item.id);
    }
  }
  if (preds.empty()) return;
  PhaseEvalOptions eval;
  eval.data_range = in.phase_range ? in.phase_range->width() : range.width();
  if (in.support_radius_px) eval.mask = disk_mask(preds.front().size(-1), *in.support_radius_px);
  json metrics = {{"phase", evaluate_phase(torch::stack(preds), torch::stack(gts), eval, ids)}};
  if (!amps.empty()) {
    metrics["amplitude"] = evaluate_amplitude(torch::stack(amps), torch::stack(gt_amps), {}, ids);
  }
  write_json_file(out / "metrics.json", metrics);
  std::cout << "mean phase SSIM " << format_double(metrics["phase"]["mean_ssim"].get<double>())
            << ", PSNR " << format_double(metrics["phase"]["mean_psnr_db"].get<double>())
            << " dB\n";
}

// ---------------------------------------------------------------- commands

void run_simulate(const json& cfg) {
  const auto out = prepare_out(cfg);
  auto optics = cfg.at("optics").get<OpticalConfig>();
  auto gen = cfg.at("generation").get<GenerationSpec>();
  if (cfg.value("holograms_only", false)) gen.include_gt = false;
  write_json_file(out / "run_config.json", cfg);
  auto manifest = generate_dataset(gen, optics, out);
  std::cout << "wrote " << manifest.count << " records to " << out.string() << '\n';
}

void run_train(const json& cfg) {
  require_path(cfg, "dataset", "--dataset");
  const auto out = prepare_out(cfg);
  auto strategy = cfg.at("strategy").get<StrategyConfig>();
  if (strategy.per_measurement()) {
    throw ConfigError("train takes dd, tpd or cd; use infer --strategy upd or refine");
  }
  const DatasetView view(cfg["dataset"].get<std::string>());
  auto spec = cfg.at("model").get<ModelSpec>();
  spec.input_channels = static_cast<std::int64_t>(view.manifest().distances().size());
  if (!cfg["model"].contains("phase_range")) spec.phase_range = view.manifest().phase_range;
  write_json_file(out / "run_config.json", cfg);
  auto result = train(strategy, view, spec);
  save_checkpoint(result.weights, out / "model.ckpt");
  result.report.save(out);
  const auto& total = result.report.traces.at("total");
  std::cout << "trained " << to_string(strategy.kind) << " for " << result.report.epochs
            << " epochs in " << format_double(result.report.wall_seconds) << " s";
  if (!total.empty()) std::cout << ", loss " << format_double(total.front()) << " -> "
                                << format_double(total.back());
  std::cout << '\n';
}

void save_refine_report(const fs::path& out, const std::string& id, const TrainReport& r) {
  r.save(out / id / "refine");
}

void run_infer(const json& cfg) {
  const auto out = prepare_out(cfg);
  const bool upd = cfg.value("mode", std::string{"trained"}) == "upd";
  std::optional<ModelWeights> weights;
  if (upd) {
    if (cfg.contains("weights") && !cfg["weights"].is_null()) {
      throw ConfigError("uPD starts from an untrained network; drop --weights");
    }
  } else {
    require_path(cfg, "weights", "--weights");
    weights = load_checkpoint(cfg["weights"].get<std::string>());
  }
  auto in = load_inputs(cfg, weights ? &*weights : nullptr);
  write_json_file(out / "run_config.json", cfg);
  std::vector<NetOutput> outputs;
  PhaseRange range;
  if (upd) {
    auto strategy = cfg.at("strategy").get<StrategyConfig>();
    auto spec = cfg.at("model").get<ModelSpec>();
    if (in.phase_range && !cfg["model"].contains("phase_range")) spec.phase_range = *in.phase_range;
    range = spec.phase_range;
    for (const auto& item : in.items) {
      spec.input_channels = item.measurement.holograms.size(0);
      auto r = infer_upd(item.measurement, spec, strategy);
      save_refine_report(out, item.id, r.report);
      outputs.push_back(r.output);
    }
  } else {
    range = weights->spec.phase_range;
    for (const auto& item : in.items) {
      check_compatible(*weights, item.measurement.optics);
      auto r = infer_trained(*weights, item.measurement.holograms);
      outputs.push_back(r.output);
    }
  }
  write_outputs(out, in, outputs, range);
  std::cout << "reconstructed " << outputs.size() << " measurement(s) into " << out.string()
            << '\n';
}

void run_refine(const json& cfg) {
  require_path(cfg, "weights", "--weights");
  const auto out = prepare_out(cfg);
  auto weights = load_checkpoint(cfg["weights"].get<std::string>());
  auto in = load_inputs(cfg, &weights);
  write_json_file(out / "run_config.json", cfg);
  auto strategy = cfg.at("strategy").get<StrategyConfig>();
  std::vector<NetOutput> outputs;
  for (const auto& item : in.items) {
    check_compatible(weights, item.measurement.optics);
    auto r = refine_tpdr(weights, item.measurement, strategy);
    save_refine_report(out, item.id, r.report);
    outputs.push_back(r.output);
  }
  write_outputs(out, in, outputs, weights.spec.phase_range);
  std::cout << "refined " << outputs.size() << " measurement(s) into " << out.string() << '\n';
}

HarnessOptions harness_options(const json& cfg, const fs::path& out) {
  HarnessOptions o;
  o.out_dir = out;
  const auto work = cfg.value("work", std::string{});
  o.work_dir = work.empty() ? out / "work" : fs::path(work);
  return o;
}

std::vector<StrategyKind> strategies_of(const json& cfg) {
  std::vector<StrategyKind> ks;
  for (const auto& s : cfg.at("strategies")) ks.push_back(strategy_from_string(s.get<std::string>()));
  if (ks.empty()) throw ConfigError("--strategies must not be empty");
  return ks;
}

std::vector<CorpusStyle> corpora_of(const json& cfg) {
  std::vector<CorpusStyle> cs;
  for (const auto& s : cfg.at("corpora")) cs.push_back(corpus_style_from_string(s.get<std::string>()));
  if (cs.empty()) throw ConfigError("--corpora must not be empty");
  return cs;
}

void print_cells(const HarnessGrid& g, const char* field) {
  for (const auto& [key, cell] : g.cells) {
    std::cout << key << '\t';
    if (cell.contains(field)) {
      std::cout << format_double(cell[field].get<double>());
    } else {
      std::cout << format_double(cell["phase"]["mean_ssim"].get<double>());
    }
    std::cout << '\n';
  }
}

void run_evaluate(const json& cfg) {
  const auto out = prepare_out(cfg);
  write_json_file(out / "run_config.json", cfg);
  auto grid = run_strategy_comparison(cfg.at("suite").get<SuiteConfig>(),
                                      harness_options(cfg, out), strategies_of(cfg));
  std::cout << "strategy\tSSIM\n";
  print_cells(grid, "ssim");
}

void run_sweep(const json& cfg) {
  const auto out = prepare_out(cfg);
  write_json_file(out / "run_config.json", cfg);
  auto grid = run_defocus_sweep(cfg.at("suite").get<SuiteConfig>(), harness_options(cfg, out),
                                cfg.at("distances_m").get<std::vector<double>>(),
                                strategies_of(cfg));
  std::cout << "strategy/distance_mm\tSSIM\n";
  print_cells(grid, "ssim");
}

void run_crossgen(const json& cfg) {
  const auto out = prepare_out(cfg);
  write_json_file(out / "run_config.json", cfg);
  auto grid = run_cross_generalization(cfg.at("suite").get<SuiteConfig>(),
                                       harness_options(cfg, out), corpora_of(cfg),
                                       strategies_of(cfg));
  std::cout << "strategy/train/test\tSSIM\n";
  print_cells(grid, "ssim");
}

void run_illposed(const json& cfg) {
  const auto out = prepare_out(cfg);
  write_json_file(out / "run_config.json", cfg);
  std::vector<IllPosedVariant> variants;
  for (const auto& v : cfg.at("variants")) variants.push_back(illposed_variant_from_string(v));
  auto grid = run_illposedness_suite(cfg.at("suite").get<SuiteConfig>(),
                                     harness_options(cfg, out),
                                     cfg.at("illposed").get<IllPosedConfig>(), corpora_of(cfg),
                                     strategies_of(cfg), variants);
  std::cout << "corpus/strategy/variant\tmean SSIM\n";
  print_cells(grid, "mean_ssim");
}

void run_aberration(const json& cfg) {
  const auto out = prepare_out(cfg);
  write_json_file(out / "run_config.json", cfg);
  auto grid = run_aberration_suite(cfg.at("suite").get<SuiteConfig>(), harness_options(cfg, out),
                                   cfg.at("aberration").get<RMEConfig>(), strategies_of(cfg));
  std::cout << "strategy\tSSIM vs clean\tcorr(sample)\tcorr(sample+aberration)\n";
  for (const auto& [key, c] : grid.cells) {
    std::cout << key << '\t' << format_double(c["ssim"].get<double>()) << '\t'
              << format_double(c["corr_sample"].get<double>()) << '\t'
              << format_double(c["corr_total"].get<double>()) << '\n';
  }
}

// ---------------------------------------------------------------- flags

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<Binder> bind;
  json defaults;
  std::string config_file;
  void (*run)(const json&) = nullptr;
};

void common_flags(Command& c) {
  c.app->add_option("--config", c.config_file,
                    "run_config.json to start from; flags given here override it");
  c.bind->option<std::string>("--out", "/out", "output directory (new or empty)");
  c.bind->flag("--force", "/force", "allow a non-empty output directory");
}

void optics_flags(Binder& b, const std::string& base) {
  b.list<double>("--distance-mm", base + "/distance_m", "defocus distance(s) in mm, comma separated", kMm);
  b.option<double>("--wavelength-nm", base + "/wavelength_m", "illumination wavelength in nm", kNm);
  b.option<double>("--pitch-um", base + "/pixel_pitch_m", "sensor pixel pitch in um", kUm);
  b.option<std::int64_t>("--grid", base + "/grid_size", "grid size N in pixels (N x N)");
}

void suite_flags(Binder& b) {
  optics_flags(b, "/suite/optics");
  b.option<std::string>("--corpus", "/suite/corpus", "synthetic:dense|synthetic:medium|synthetic:sparse or an image directory");
  b.list<double>("--phase-range", "/suite/phase_range", "sample phase range min,max in rad")->expected(2);
  b.option<std::int64_t>("--train-count", "/suite/train_count", "training records");
  b.option<std::int64_t>("--test-count", "/suite/test_count", "test records");
  b.option<std::int64_t>("--epochs", "/suite/epochs", "training epochs");
  b.option<std::int64_t>("--batch", "/suite/batch", "batch size (records)");
  b.option<std::int64_t>("--depth", "/suite/model/depth", "network depth (down-sampling levels)");
  b.option<std::int64_t>("--width", "/suite/model/base_width", "channels at the first level");
  b.option<std::int64_t>("--upd-cycles", "/suite/upd_cycles", "uPD optimization cycles per measurement");
  b.option<std::int64_t>("--tpdr-cycles", "/suite/tpdr_cycles", "tPDr refinement cycles per measurement");
  b.option<std::int64_t>("--refine-records", "/suite/refine_records", "test records refined by uPD/tPDr (-1: all)");
  b.option<double>("--alpha", "/suite/alpha", "CD data-term weight (dimensionless)");
  b.option<double>("--beta", "/suite/beta", "amplitude data-term weight (dimensionless)");
  b.option<double>("--band-cutoff", "/suite/band_cutoff", "band-split cutoff in cycles/px");
  b.option<std::uint64_t>("--seed", "/suite/seed", "seed for data and training");
  b.option<int>("--jobs", "/suite/jobs", "parallel jobs (dataset records, harness cells)");
  b.option<std::string>("--work", "/work", "cache directory (default: <out>/work)");
}

json suite_defaults(const char* command, std::vector<std::string> strategies) {
  return {{"command", command},
          {"out", ""},
          {"force", false},
          {"work", ""},
          {"suite", SuiteConfig::desk()},
          {"strategies", strategies}};
}

void strategy_flags(Binder& b) {
  b.option<double>("--alpha", "/strategy/alpha", "CD data-term weight (dimensionless)");
  b.option<double>("--beta", "/strategy/beta", "amplitude data-term weight (dimensionless)");
  b.option<double>("--aperture-radius-px", "/strategy/aperture_radius_px", "aperture constraint radius in px");
  b.option<double>("--lr", "/strategy/optimizer/learning_rate", "initial learning rate");
  b.option<double>("--weight-decay", "/strategy/optimizer/weight_decay", "Adam weight decay");
  b.option<std::uint64_t>("--seed", "/strategy/rng_seed", "seed for shuffling");
}

void model_flags(Binder& b) {
  b.option<std::int64_t>("--depth", "/model/depth", "network depth (down-sampling levels)");
  b.option<std::int64_t>("--width", "/model/base_width", "channels at the first level");
  b.flag("--amplitude-head", "/model/amplitude_head", "dual output: phase and amplitude");
  b.list<double>("--model-phase-range", "/model/phase_range", "output phase range min,max in rad (default: the dataset's)")->expected(2);
  b.option<std::uint64_t>("--init-seed", "/model/rng_seed", "seed for weight initialization");
}

void input_flags(Binder& b) {
  b.option<std::string>("--dataset", "/dataset", "dataset directory");
  b.option<std::int64_t>("--records", "/records", "first N records of the dataset (-1: all)");
  b.option<std::string>("--hologram", "/hologram", "external hologram image (PNG/BMP/PGM)");
  optics_flags(b, "/optics");
  b.flag("--pad,!--no-pad", "/optics/pad", "pad to 2N x 2N in the forward model");
}

json model_defaults() {
  json m = ModelSpec{};
  m.erase("phase_range");
  m.erase("input_channels");
  return m;
}

}  // namespace
}  // namespace phaserec::cli

int main(int argc, char** argv) {
  using namespace phaserec;
  using namespace phaserec::cli;

  CLI::App app{"Phase recovery from in-line holograms: simulation, training, inference and "
               "comparison protocols.\nLengths are given in mm (distances), nm (wavelength) and "
               "um (pixel pitch); configs store SI units.\nSet PHASEREC_DEVICE (cpu, cuda) to "
               "choose the compute device."};
  app.require_subcommand(1);
  bool log_json = false;
  bool verbose = false;
  app.add_flag("--log-json", log_json, "log as line-delimited JSON on stderr");
  app.add_flag("-v,--verbose", verbose, "debug logging");

  std::map<std::string, Command> commands;
  auto make = [&](const std::string& name, const std::string& help, json defaults,
                  void (*run)(const json&)) -> Command& {
    auto& c = commands[name];
    c.app = app.add_subcommand(name, help);
    c.bind = std::make_unique<Binder>(c.app);
    c.defaults = std::move(defaults);
    c.run = run;
    common_flags(c);
    return c;
  };

  {
    GenerationSpec gen;
    OpticalConfig optics;
    auto& c = make("simulate", "generate a hologram dataset",
                   {{"command", "simulate"}, {"out", ""}, {"force", false},
                    {"optics", optics}, {"generation", gen}},
                   run_simulate);
    auto& b = *c.bind;
    b.option<std::string>("--corpus", "/generation/corpus", "image directory or synthetic:dense|synthetic:medium|synthetic:sparse");
    b.option<std::int64_t>("--count", "/generation/count", "number of records");
    b.option<std::int64_t>("--first-index", "/generation/first_index", "corpus index of the first record");
    b.list<double>("--phase-range", "/generation/phase_range", "phase range min,max in rad")->expected(2);
    optics_flags(b, "/optics");
    b.flag("--pad,!--no-pad", "/optics/pad", "pad to 2N x 2N before propagation");
    b.option<std::int64_t>("--aberration-k", "/generation/aberration/seed_matrix_size", "add RME aberration from a k x k seed matrix");
    b.list<double>("--aberration-range", "/generation/aberration/amplitude_range", "RME aberration range min,max in rad")->expected(2);
    b.option<std::string>("--amplitude-corpus", "/generation/amplitude_corpus", "corpus for the amplitude (default: pure phase)");
    b.list<double>("--amplitude-range", "/generation/amplitude_mapping/range", "amplitude range min,max (dimensionless)")->expected(2);
    b.flag("--invert-amplitude", "/generation/amplitude_mapping/invert", "amplitude from 1 - image");
    b.option<double>("--support-radius-px", "/generation/support_radius_px", "confine samples to a centred disk, radius in px");
    b.flag("--holograms-only", "/holograms_only", "omit ground truth from the records");
    b.option<std::uint64_t>("--seed", "/generation/seed", "corpus and aberration seed");
    b.option<int>("--jobs", "/generation/jobs", "parallel workers");
  }
  {
    json d = {{"command", "train"}, {"out", ""}, {"force", false}, {"dataset", nullptr},
              {"strategy", StrategyConfig::defaults(StrategyKind::dd)}, {"model", model_defaults()}};
    auto& c = make("train", "train a network with dd, tpd or cd", d, run_train);
    auto& b = *c.bind;
    b.option<std::string>("--strategy", "/strategy/kind", "dd|tpd|cd");
    b.option<std::string>("--dataset", "/dataset", "dataset directory");
    b.option<std::int64_t>("--epochs", "/strategy/optimizer/epochs", "training epochs");
    b.option<std::int64_t>("--batch", "/strategy/optimizer/batch", "batch size (records)");
    strategy_flags(b);
    model_flags(b);
  }
  {
    json d = {{"command", "infer"}, {"out", ""}, {"force", false}, {"mode", "trained"},
              {"weights", nullptr}, {"dataset", nullptr}, {"hologram", nullptr}, {"records", -1},
              {"optics", json::object()},
              {"strategy", StrategyConfig::defaults(StrategyKind::upd)}, {"model", model_defaults()}};
    auto& c = make("infer", "reconstruct with trained weights, or with uPD from scratch", d, run_infer);
    auto& b = *c.bind;
    b.option<std::string>("--weights", "/weights", "checkpoint from train");
    b.mapped<std::string>("--strategy", "trained (default) or upd", [](json& j, const std::string& v) {
      if (v == "upd") {
        j["mode"] = "upd";
      } else if (v == "trained" || v == "dd" || v == "tpd" || v == "cd") {
        j["mode"] = "trained";
      } else {
        throw ConfigError("infer --strategy takes trained or upd, not '" + v + "'");
      }
    });
    b.option<std::int64_t>("--cycles", "/strategy/cycles", "uPD optimization cycles");
    input_flags(b);
    strategy_flags(b);
    model_flags(b);
  }
  {
    json d = {{"command", "refine"}, {"out", ""}, {"force", false}, {"weights", nullptr},
              {"dataset", nullptr}, {"hologram", nullptr}, {"records", -1},
              {"optics", json::object()}, {"strategy", StrategyConfig::defaults(StrategyKind::tpdr)}};
    auto& c = make("refine", "fine-tune tpd weights on each measurement (tPDr)", d, run_refine);
    auto& b = *c.bind;
    b.option<std::string>("--weights", "/weights", "checkpoint trained with tpd");
    b.option<std::int64_t>("--cycles", "/strategy/cycles", "refinement cycles");
    input_flags(b);
    strategy_flags(b);
  }
  {
    auto& c = make("evaluate", "strategy comparison table (PSNR, SSIM, band errors, timings)",
                   suite_defaults("evaluate", {"dd", "upd", "tpd", "tpdr", "cd"}), run_evaluate);
    suite_flags(*c.bind);
    c.bind->list<std::string>("--strategies", "/strategies", "subset of dd,upd,tpd,tpdr,cd");
  }
  {
    auto d = suite_defaults("sweep-defocus", {"dd", "tpd", "cd"});
    d["distances_m"] = {0.015, 0.0175, 0.02, 0.0225, 0.025};
    auto& c = make("sweep-defocus", "SSIM versus test defocus for networks trained at one distance",
                   d, run_sweep);
    suite_flags(*c.bind);
    c.bind->list<std::string>("--strategies", "/strategies", "subset of dd,tpd,cd");
    c.bind->list<double>("--sweep-mm", "/distances_m", "test distances in mm", kMm);
  }
  {
    auto d = suite_defaults("crossgen", {"dd", "tpd"});
    d["corpora"] = {"dense", "medium", "sparse"};
    auto& c = make("crossgen", "train-corpus x test-corpus generalization matrix", d, run_crossgen);
    suite_flags(*c.bind);
    c.bind->list<std::string>("--strategies", "/strategies", "subset of dd,tpd,cd");
    c.bind->list<std::string>("--corpora", "/corpora", "subset of dense,medium,sparse");
  }
  {
    auto d = suite_defaults("illposed", {"dd", "tpd"});
    d["corpora"] = {"sparse", "dense"};
    d["variants"] = {"single", "aperture", "multi"};
    d["illposed"] = IllPosedConfig{};
    auto& c = make("illposed", "dual-output phase and amplitude: single, aperture, multi-distance",
                   d, run_illposed);
    suite_flags(*c.bind);
    c.bind->list<std::string>("--strategies", "/strategies", "subset of dd,tpd,cd");
    c.bind->list<std::string>("--corpora", "/corpora", "subset of dense,medium,sparse");
    c.bind->list<std::string>("--variants", "/variants", "subset of single,aperture,multi");
    c.bind->option<double>("--support-radius-px", "/illposed/support_radius_px", "sample support radius in px");
    c.bind->list<double>("--multi-distance-mm", "/illposed/multi_distances_m", "three distances in mm", kMm)->expected(3);
  }
  {
    auto d = suite_defaults("aberration", {"dd", "tpd"});
    d["aberration"] = RMEConfig{};
    auto& c = make("aberration", "prior-capacity test with RME aberrations", d, run_aberration);
    suite_flags(*c.bind);
    c.bind->list<std::string>("--strategies", "/strategies", "subset of dd,tpd,cd");
    c.bind->option<std::int64_t>("--aberration-k", "/aberration/seed_matrix_size", "RME seed matrix size k");
    c.bind->list<double>("--aberration-range", "/aberration/amplitude_range", "RME range min,max in rad")->expected(2);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  log::set_json(log_json);
  if (verbose) log::set_level(log::Level::debug);

  for (auto& [name, c] : commands) {
    if (!c.app->parsed()) continue;
    try {
      json cfg = c.defaults;
      if (!c.config_file.empty()) {
        auto file = read_json_file(c.config_file);
        if (file.value("command", name) != name) {
          throw ConfigError(c.config_file + " is a " + file["command"].get<std::string>() +
                            " config, not " + name);
        }
        cfg.merge_patch(file);
      }
      c.bind->apply(cfg);
      cfg["command"] = name;
      c.run(cfg);
      return 0;
    } catch (const Error& e) {
      log::error(e.what(), {{"command", name}, {"exit_code", e.exit_code()}});
      return e.exit_code();
    } catch (const nlohmann::json::exception& e) {
      log::error(std::string("invalid configuration: ") + e.what(), {{"command", name}, {"exit_code", 2}});
      return 2;
    } catch (const std::exception& e) {
      log::error(e.what(), {{"command", name}, {"exit_code", 1}});
      return 1;
    }
  }
  return 0;
}
