#include "phaserec/strategies.hpp"

#include "phaserec/error.hpp"
#include "phaserec/log.hpp"
#include "phaserec/losses.hpp"
#include "phaserec/tensor_io.hpp"
#include "phaserec/util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

namespace phaserec {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::dd: return "dd";
    case StrategyKind::upd: return "upd";
    case StrategyKind::tpd: return "tpd";
    case StrategyKind::tpdr: return "tpdr";
    case StrategyKind::cd: return "cd";
  }
  return "dd";
}

StrategyKind strategy_from_string(const std::string& s) {
  if (s == "dd") return StrategyKind::dd;
  if (s == "upd") return StrategyKind::upd;
  if (s == "tpd") return StrategyKind::tpd;
  if (s == "tpdr") return StrategyKind::tpdr;
  if (s == "cd") return StrategyKind::cd;
  throw ConfigError("unknown strategy '" + s + "'");
}

StrategyConfig StrategyConfig::defaults(StrategyKind kind) {
  StrategyConfig c;
  c.kind = kind;
  if (kind == StrategyKind::upd) {
    c.cycles = 10000;
    c.optimizer.weight_decay = 1e-3;
    c.optimizer.decay_every = 500;
  } else if (kind == StrategyKind::tpdr) {
    c.cycles = 1000;
    c.optimizer.weight_decay = 1e-3;
    c.optimizer.decay_every = 100;
  }
  return c;
}

void StrategyConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("alpha and beta must be >= 0");
  if (per_measurement() && cycles < 0) throw ConfigError("cycles must be >= 0");
  if (!distances_m.empty() && distances_m.size() != 1 && distances_m.size() != 3) {
    throw ConfigError("strategies take 1 or 3 distances");
  }
  if (aperture_radius_px && !(*aperture_radius_px > 0.0)) {
    throw ConfigError("aperture radius must be positive");
  }
  const auto& o = optimizer;
  if (!(o.learning_rate > 0.0) || o.batch < 1 || o.epochs < 0 || o.decay_every < 1 ||
      !(o.lr_decay > 0.0) || o.weight_decay < 0.0) {
    throw ConfigError("invalid optimizer settings");
  }
}

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
       {"lr_decay", c.lr_decay},           {"decay_every", c.decay_every},
       {"lr_floor", c.lr_floor},           {"batch", c.batch},
       {"epochs", c.epochs}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.decay_every = j.value("decay_every", c.decay_every);
  c.lr_floor = j.value("lr_floor", c.lr_floor);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
}

void to_json(nlohmann::json& j, const StrategyConfig& c) {
  j = {{"kind", to_string(c.kind)}, {"alpha", c.alpha},         {"beta", c.beta},
       {"distances_m", c.distances_m}, {"cycles", c.cycles},   {"optimizer", c.optimizer},
       {"rng_seed", c.rng_seed}};
  j["aperture_radius_px"] =
      c.aperture_radius_px ? nlohmann::json(*c.aperture_radius_px) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, StrategyConfig& c) {
  c = StrategyConfig::defaults(strategy_from_string(j.value("kind", std::string{"dd"})));
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.distances_m = j.value("distances_m", c.distances_m);
  c.cycles = j.value("cycles", c.cycles);
  if (j.contains("optimizer")) {
    auto o = c.optimizer;
    from_json(j["optimizer"], o);
    c.optimizer = o;
  }
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  if (j.contains("aperture_radius_px") && !j["aperture_radius_px"].is_null()) {
    c.aperture_radius_px = j["aperture_radius_px"].get<double>();
  }
}

void to_json(nlohmann::json& j, const TrainReport& r) {
  j = {{"strategy", r.strategy},   {"wall_seconds", r.wall_seconds},
       {"steps", r.steps},         {"epochs", r.epochs},
       {"cycles", r.cycles},       {"best_cycle", r.best_cycle},
       {"best_loss", r.best_loss}, {"traces", r.traces}};
}

void from_json(const nlohmann::json& j, TrainReport& r) {
  r.strategy = j.value("strategy", std::string{});
  r.wall_seconds = j.value("wall_seconds", 0.0);
  r.steps = j.value("steps", std::int64_t{0});
  r.epochs = j.value("epochs", std::int64_t{0});
  r.cycles = j.value("cycles", std::int64_t{0});
  r.best_cycle = j.value("best_cycle", std::int64_t{-1});
  r.best_loss = j.value("best_loss", 0.0);
  r.traces = j.value("traces", std::map<std::string, std::vector<double>>{});
}

void TrainReport::save(const fs::path& dir) const {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  {
    std::ofstream out(dir / "train_report.json", std::ios::trunc);
    if (!out) throw IoError("cannot write train report in " + dir.string());
    out << nlohmann::json(*this).dump(2) << '\n';
  }
  for (const auto& [name, values] : traces) {
    auto t = torch::tensor(values, torch::kFloat64).reshape({1, static_cast<std::int64_t>(values.size())});
    write_tensor(dir / ("trace_" + name + ".prt"), t);
  }
}

// ---------------------------------------------------------------- dataset

DatasetView::DatasetView(const fs::path& dir) : dir_(dir), manifest_(read_manifest(dir)) {
  const auto n = manifest_.count;
  std::vector<torch::Tensor> holo, phase, amp, aber;
  holo.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    auto r = read_record(dir, manifest_, static_cast<std::size_t>(i));
    std::vector<torch::Tensor> channels;
    for (const auto& h : r.holograms) channels.push_back(h.intensity);
    holo.push_back(torch::stack(channels));
    if (r.gt_phase.defined()) phase.push_back(r.gt_phase.unsqueeze(0));
    if (r.gt_amplitude.defined()) amp.push_back(r.gt_amplitude.unsqueeze(0));
    if (r.aberration_phase.defined()) aber.push_back(r.aberration_phase.unsqueeze(0));
  }
  holograms_ = torch::stack(holo);
  if (!phase.empty()) gt_phase_ = torch::stack(phase);
  if (!amp.empty()) gt_amplitude_ = torch::stack(amp);
  if (!aber.empty()) aberration_ = torch::stack(aber);
}

// ---------------------------------------------------------------- shared

namespace {

struct Terms {
  torch::Tensor total;
  double data = 0.0;
  double physics = 0.0;
  double aperture = 0.0;
};

std::vector<ForwardModel> forward_models(const OpticalConfig& optics) {
  std::vector<ForwardModel> models;
  for (double z : optics.distances_m) models.emplace_back(optics, z);
  return models;
}

void check_distances(const StrategyConfig& s, const OpticalConfig& optics) {
  if (!s.distances_m.empty() && s.distances_m != optics.distances_m) {
    throw ConfigError("strategy distances do not match the data's distances");
  }
}

void check_spec(const ModelSpec& spec, const StrategyConfig& s, std::int64_t channels,
                std::int64_t grid) {
  spec.validate();
  spec.validate_grid(grid);
  if (spec.input_channels != channels) {
    throw ConfigError("model expects " + std::to_string(spec.input_channels) +
                      " input channels but the data has " + std::to_string(channels));
  }
  if (s.aperture_radius_px && !spec.amplitude_head) {
    throw ConfigError("the aperture constraint needs a model with an amplitude head");
  }
}

Terms compute_terms(const StrategyConfig& s, const NetOutput& out,
                    const torch::Tensor& holograms, const torch::Tensor& gt_phase,
                    const torch::Tensor& gt_amplitude, std::span<const ForwardModel> models) {
  Terms t;
  const bool data_term = s.kind == StrategyKind::dd || s.kind == StrategyKind::cd;
  const bool physics_term = s.kind != StrategyKind::dd;
  if (data_term) {
    auto data = out.amplitude.defined() && gt_amplitude.defined()
                    ? loss_dd_dual(out.phase, out.amplitude, gt_phase, gt_amplitude, s.beta)
                    : loss_dd(out.phase, gt_phase);
    t.data = data.item<double>();
    t.total = s.kind == StrategyKind::cd ? s.alpha * data : data;
  }
  if (physics_term) {
    auto phys = loss_multidistance(out.phase, out.amplitude, holograms, models);
    t.physics = phys.item<double>();
    t.total = t.total.defined() ? t.total + phys : phys;
  }
  if (s.aperture_radius_px && out.amplitude.defined()) {
    auto ap = loss_aperture(out.amplitude, *s.aperture_radius_px);
    t.aperture = ap.item<double>();
    t.total = t.total + ap;
  }
  return t;
}

void set_learning_rate(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

NetOutput detach(const NetOutput& o) {
  NetOutput d;
  d.phase = o.phase.detach().clone();
  if (o.amplitude.defined()) d.amplitude = o.amplitude.detach().clone();
  return d;
}

RefineResult refine(ModelWeights weights, const Measurement& m, const StrategyConfig& s) {
  s.validate();
  m.optics.validate();
  check_distances(s, m.optics);
  if (m.holograms.dim() != 3) throw ValidationError("measurement must be [K, N, N]");
  check_spec(weights.spec, s, m.holograms.size(0), m.holograms.size(-1));
  if (static_cast<std::int64_t>(m.optics.distances_m.size()) != m.holograms.size(0)) {
    throw ConfigError("measurement has a different number of holograms and distances");
  }
  const auto device = compute_device();
  weights.net->to(device);
  weights.net->train();
  const auto models = forward_models(m.optics);
  auto input = m.holograms.unsqueeze(0).to(device, torch::kFloat32);

  torch::optim::Adam opt(weights.net->parameters(),
                         torch::optim::AdamOptions(s.optimizer.learning_rate)
                             .weight_decay(s.optimizer.weight_decay));
  double lr = s.optimizer.learning_rate;

  RefineResult result{NetOutput{}, TrainReport{}, weights};
  auto& report = result.report;
  report.strategy = to_string(s.kind);
  for (const char* name : {"total", "physics", "best"}) report.traces[name] = {};
  if (s.aperture_radius_px) report.traces["aperture"] = {};
  double best = std::numeric_limits<double>::infinity();
  const auto t0 = Clock::now();
  for (std::int64_t c = 0; c < s.cycles; ++c) {
    auto out = forward(weights, input);
    auto terms = compute_terms(s, out, input, {}, {}, models);
    const double loss = terms.total.item<double>();
    if (!std::isfinite(loss)) throw NumericError("non-finite loss at cycle " + std::to_string(c));
    if (loss < best) {
      best = loss;
      result.output = detach(out);
      report.best_cycle = c;
    }
    report.traces["total"].push_back(loss);
    report.traces["physics"].push_back(terms.physics);
    if (s.aperture_radius_px) report.traces["aperture"].push_back(terms.aperture);
    report.traces["best"].push_back(best);
    opt.zero_grad();
    terms.total.backward();
    opt.step();
    ++report.steps;
    if ((c + 1) % s.optimizer.decay_every == 0) {
      lr = std::max(lr * s.optimizer.lr_decay, s.optimizer.lr_floor);
      set_learning_rate(opt, lr);
    }
  }
  {
    torch::NoGradGuard guard;
    auto out = forward(weights, input);
    auto terms = compute_terms(s, out, input, {}, {}, models);
    const double loss = terms.total.item<double>();
    if (loss < best || s.cycles == 0) {
      best = loss;
      result.output = detach(out);
      report.best_cycle = s.cycles;
    }
  }
  report.wall_seconds = seconds_since(t0);
  report.cycles = s.cycles;
  report.best_loss = best;
  weights.provenance.cycles += s.cycles;
  result.weights = weights;
  return result;
}

}  // namespace

// ---------------------------------------------------------------- train

TrainResult train(const StrategyConfig& strategy, const DatasetView& dataset,
                  const ModelSpec& spec) {
  strategy.validate();
  if (strategy.per_measurement()) {
    throw ConfigError("strategy " + to_string(strategy.kind) +
                      " runs per measurement; use infer_upd / refine_tpdr");
  }
  const auto& manifest = dataset.manifest();
  if (strategy.needs_ground_truth() && !dataset.gt_phase().defined()) {
    throw ConfigError("strategy " + to_string(strategy.kind) +
                      " needs ground-truth phase but dataset " + dataset.dir().string() +
                      " has none (hologram-only dataset)");
  }
  check_distances(strategy, manifest.optics);
  const auto all = dataset.holograms();
  check_spec(spec, strategy, all.size(1), all.size(-1));
  const bool dual_data = strategy.needs_ground_truth() && spec.amplitude_head;
  if (dual_data && !dataset.gt_amplitude().defined()) {
    throw ConfigError("a dual-output model needs ground-truth amplitude for " +
                      to_string(strategy.kind));
  }

  const auto device = compute_device();
  auto weights = build_model(spec);
  weights.net->to(device);
  weights.net->train();
  const auto models = forward_models(manifest.optics);

  torch::optim::Adam opt(weights.net->parameters(),
                         torch::optim::AdamOptions(strategy.optimizer.learning_rate)
                             .weight_decay(strategy.optimizer.weight_decay));
  double lr = strategy.optimizer.learning_rate;
  auto gen = make_generator(strategy.rng_seed);

  TrainReport report;
  report.strategy = to_string(strategy.kind);
  const auto n = dataset.size();
  const auto batch = strategy.optimizer.batch;
  const auto t0 = Clock::now();
  for (std::int64_t epoch = 0; epoch < strategy.optimizer.epochs; ++epoch) {
    auto perm = torch::randperm(n, gen, torch::kLong);
    double total = 0.0, data = 0.0, physics = 0.0, aperture = 0.0;
    std::int64_t batches = 0;
    for (std::int64_t start = 0; start < n; start += batch) {
      auto idx = perm.slice(0, start, std::min(n, start + batch));
      auto x = all.index_select(0, idx).to(device);
      torch::Tensor gp, ga;
      if (strategy.needs_ground_truth()) {
        gp = dataset.gt_phase().index_select(0, idx).to(device);
        if (dual_data) ga = dataset.gt_amplitude().index_select(0, idx).to(device);
      }
      auto out = forward(weights, x);
      auto terms = compute_terms(strategy, out, x, gp, ga, models);
      const double loss = terms.total.item<double>();
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss in epoch " + std::to_string(epoch));
      }
      opt.zero_grad();
      terms.total.backward();
      opt.step();
      ++report.steps;
      ++batches;
      total += loss;
      data += terms.data;
      physics += terms.physics;
      aperture += terms.aperture;
    }
    const double b = static_cast<double>(std::max<std::int64_t>(batches, 1));
    report.traces["total"].push_back(total / b);
    if (strategy.needs_ground_truth()) report.traces["data"].push_back(data / b);
    if (strategy.kind != StrategyKind::dd) report.traces["physics"].push_back(physics / b);
    if (strategy.aperture_radius_px) report.traces["aperture"].push_back(aperture / b);
    log::info("epoch", {{"strategy", report.strategy},
                        {"epoch", epoch + 1},
                        {"loss", total / b},
                        {"lr", lr}});
    if ((epoch + 1) % strategy.optimizer.decay_every == 0) {
      lr = std::max(lr * strategy.optimizer.lr_decay, strategy.optimizer.lr_floor);
      set_learning_rate(opt, lr);
    }
    ++report.epochs;
  }
  report.wall_seconds = seconds_since(t0);
  if (!report.traces["total"].empty()) report.best_loss = report.traces["total"].back();

  weights.net->eval();
  weights.provenance.strategy = to_string(strategy.kind);
  weights.provenance.epochs = report.epochs;
  weights.provenance.dataset_hash = manifest.hash();
  weights.provenance.optics = manifest.optics;
  return TrainResult{weights, report};
}

TrainResult train(const StrategyConfig& strategy, const fs::path& dataset,
                  const ModelSpec& spec) {
  return train(strategy, DatasetView(dataset), spec);
}

Inference infer_trained(const ModelWeights& weights, const torch::Tensor& holograms) {
  torch::NoGradGuard guard;
  const bool was_training = weights.net->is_training();
  weights.net.ptr()->eval();
  const auto t0 = Clock::now();
  auto out = forward(weights, holograms);
  Inference result{detach(out), seconds_since(t0)};
  weights.net.ptr()->train(was_training);
  return result;
}

Measurement Measurement::from(const std::vector<Hologram>& stack) {
  if (stack.empty()) throw ValidationError("empty hologram stack");
  Measurement m;
  m.optics = stack.front().config;
  m.optics.distances_m.clear();
  std::vector<torch::Tensor> channels;
  for (const auto& h : stack) {
    if (!h.config.same_geometry(stack.front().config)) {
      throw ConfigError("holograms in one stack must share optics");
    }
    h.validate();
    channels.push_back(h.intensity.to(torch::kFloat32));
    m.optics.distances_m.push_back(h.z_m);
  }
  m.holograms = torch::stack(channels);
  return m;
}

RefineResult infer_upd(const Measurement& measurement, const ModelSpec& spec,
                       const StrategyConfig& strategy) {
  auto s = strategy;
  s.kind = StrategyKind::upd;
  auto result = refine(build_model(spec), measurement, s);
  result.weights.provenance.strategy = "upd";
  return result;
}

RefineResult refine_tpdr(const ModelWeights& weights, const Measurement& measurement,
                         const StrategyConfig& strategy) {
  if (weights.provenance.strategy != "tpd" && weights.provenance.strategy != "tpdr") {
    log::warn("refining weights that were not trained with tPD",
              {{"provenance", weights.provenance.strategy}});
  }
  auto s = strategy;
  s.kind = StrategyKind::tpdr;
  auto result = refine(weights.clone(), measurement, s);
  result.weights.provenance.strategy = "tpdr";
  return result;
}

}  // namespace phaserec
