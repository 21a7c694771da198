#include "phaserec/error.hpp"
#include "phaserec/strategies.hpp"

#include "testing.hpp"

#include <filesystem>

using namespace phaserec;
namespace fs = std::filesystem;

namespace {

OpticalConfig optics32() {
  OpticalConfig o;
  o.grid_size = 32;
  o.pixel_pitch_m = 8e-6;
  o.distances_m = {5e-3};
  return o;
}

ModelSpec tiny_model() {
  ModelSpec s;
  s.depth = 2;
  s.base_width = 4;
  s.rng_seed = 3;
  return s;
}

// Shared 16-record dataset, generated once per process.
const fs::path& dataset(bool with_gt = true) {
  static const auto make = [](bool gt) {
    auto dir = fs::temp_directory_path() / (gt ? "phaserec_strat_gt" : "phaserec_strat_holo");
    fs::remove_all(dir);
    GenerationSpec spec;
    spec.corpus = "synthetic:medium";
    spec.count = 16;
    spec.include_gt = gt;
    spec.seed = 4;
    generate_dataset(spec, optics32(), dir);
    return dir;
  };
  static const fs::path gt = make(true);
  static const fs::path holo = make(false);
  return with_gt ? gt : holo;
}

StrategyConfig one_epoch(StrategyKind kind) {
  auto c = StrategyConfig::defaults(kind);
  c.optimizer.epochs = 1;
  c.optimizer.batch = 4;
  c.rng_seed = 1;
  return c;
}

}  // namespace

TEST_CASE("strategy defaults and names") {
  for (auto k : {StrategyKind::dd, StrategyKind::upd, StrategyKind::tpd, StrategyKind::tpdr,
                 StrategyKind::cd}) {
    CHECK(strategy_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(strategy_from_string("ddd"), ConfigError);
  auto upd = StrategyConfig::defaults(StrategyKind::upd);
  CHECK(upd.cycles == 10000);
  CHECK(upd.optimizer.weight_decay == 1e-3);
  CHECK(upd.optimizer.decay_every == 500);
  auto tpdr = StrategyConfig::defaults(StrategyKind::tpdr);
  CHECK(tpdr.cycles == 1000);
  CHECK(tpdr.optimizer.decay_every == 100);
  auto dd = StrategyConfig::defaults(StrategyKind::dd);
  CHECK(dd.optimizer.batch == 16);
  CHECK(dd.optimizer.weight_decay == 0.0);
  CHECK(dd.optimizer.learning_rate == 1e-3);
  nlohmann::json j = tpdr;
  CHECK(j.get<StrategyConfig>().optimizer.decay_every == 100);
  auto bad = dd;
  bad.optimizer.batch = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("one epoch takes one optimizer step per batch") {
  for (auto kind : {StrategyKind::dd, StrategyKind::tpd, StrategyKind::cd}) {
    CAPTURE(to_string(kind));
    auto r = train(one_epoch(kind), dataset(), tiny_model());
    CHECK(r.report.steps == 4);
    CHECK(r.report.epochs == 1);
    CHECK(r.report.traces.at("total").size() == 1);
    CHECK(r.weights.provenance.strategy == to_string(kind));
    CHECK(r.weights.provenance.dataset_hash == read_manifest(dataset()).hash());
  }
}

TEST_CASE("physics pre-training runs without ground truth; supervised strategies refuse") {
  CHECK_NOTHROW(train(one_epoch(StrategyKind::tpd), dataset(false), tiny_model()));
  CHECK_THROWS_AS(train(one_epoch(StrategyKind::dd), dataset(false), tiny_model()),
                  ConfigError);
  CHECK_THROWS_AS(train(one_epoch(StrategyKind::cd), dataset(false), tiny_model()),
                  ConfigError);
  CHECK_THROWS_AS(train(one_epoch(StrategyKind::upd), dataset(), tiny_model()), ConfigError);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto a = train(one_epoch(StrategyKind::tpd), dataset(), tiny_model());
  auto b = train(one_epoch(StrategyKind::tpd), dataset(), tiny_model());
  CHECK(a.report.traces.at("total") == b.report.traces.at("total"));
  auto x = DatasetView(dataset()).holograms().slice(0, 0, 2);
  CHECK(torch::equal(infer_trained(a.weights, x).output.phase,
                     infer_trained(b.weights, x).output.phase));
}

TEST_CASE("untrained optimization: zero cycles returns the initial network output") {
  Measurement m{torch::ones({1, 32, 32}), optics32()};
  auto cfg = StrategyConfig::defaults(StrategyKind::upd);
  cfg.cycles = 0;
  auto r = infer_upd(m, tiny_model(), cfg);
  auto init = infer_trained(build_model(tiny_model()), m.holograms.unsqueeze(0));
  CHECK(torch::equal(r.output.phase, init.output.phase));
  CHECK(r.report.traces.at("total").empty());
}

TEST_CASE("untrained optimization lowers the physics loss on a plane-wave hologram") {
  Measurement m{torch::ones({1, 32, 32}), optics32()};
  auto cfg = StrategyConfig::defaults(StrategyKind::upd);
  cfg.cycles = 200;
  auto r = infer_upd(m, tiny_model(), cfg);
  const auto& total = r.report.traces.at("total");
  const auto& best = r.report.traces.at("best");
  REQUIRE(total.size() == 200);
  REQUIRE(best.size() == 200);
  CHECK(best.back() < 0.5 * total.front());
  for (std::size_t i = 1; i < best.size(); ++i) CHECK(best[i] <= best[i - 1]);
  CHECK(r.report.best_loss == doctest::Approx(best.back()));
}

TEST_CASE("refinement with zero cycles equals plain inference of the trained weights") {
  auto trained = train(one_epoch(StrategyKind::tpd), dataset(), tiny_model());
  DatasetView view(dataset());
  Measurement m{view.holograms()[0], view.manifest().optics};
  auto cfg = StrategyConfig::defaults(StrategyKind::tpdr);
  cfg.cycles = 0;
  auto r = refine_tpdr(trained.weights, m, cfg);
  auto plain = infer_trained(trained.weights, view.holograms().slice(0, 0, 1));
  CHECK(torch::equal(r.output.phase, plain.output.phase));
  // Refinement works on a copy.
  cfg.cycles = 5;
  refine_tpdr(trained.weights, m, cfg);
  CHECK(torch::equal(infer_trained(trained.weights, view.holograms().slice(0, 0, 1)).output.phase,
                     plain.output.phase));
}

TEST_CASE("train reports persist traces") {
  auto r = train(one_epoch(StrategyKind::tpd), dataset(), tiny_model());
  auto dir = fs::temp_directory_path() / "phaserec_strat_report";
  fs::remove_all(dir);
  fs::create_directories(dir);
  r.report.save(dir);
  CHECK(fs::exists(dir / "train_report.json"));
  CHECK(fs::exists(dir / "trace_total.prt"));
  fs::remove_all(dir);
}
