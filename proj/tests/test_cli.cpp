#include "phaserec/datagen.hpp"
#include "phaserec/tensor_io.hpp"

#include "testing.hpp"

#include <json.hpp>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(PHASEREC_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (auto n = fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path root() {
  static const fs::path p = [] {
    auto d = fs::temp_directory_path() / "phaserec_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

std::string out_path(const std::string& name) { return (root() / name).string(); }

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  return nlohmann::json::parse(f);
}

// Simulated 8-record dataset shared by the tests below.
const std::string& dataset() {
  static const std::string d = [] {
    auto r = cli("simulate --corpus synthetic:sparse --count 8 --distance-mm 20 --seed 1 --grid 32 "
                 "--out " + out_path("d"));
    REQUIRE(r.code == 0);
    return out_path("d");
  }();
  return d;
}

}  // namespace

TEST_CASE("simulate writes a manifest with the requested records") {
  const auto m = phaserec::read_manifest(dataset());
  CHECK(m.count == 8);
  CHECK(m.optics.distances_m == std::vector<double>{0.02});
  CHECK(m.has_gt_phase);
  // JSON stores SI units.
  CHECK(read_json(fs::path(dataset()) / "run_config.json").at("optics").at("distance_m")[0] ==
        0.02);
}

TEST_CASE("simulate reruns from its saved configuration") {
  auto r = cli("simulate --config " + dataset() + "/run_config.json --out " + out_path("d_again"));
  REQUIRE(r.code == 0);
  const auto a = phaserec::read_manifest(dataset());
  const auto b = phaserec::read_manifest(out_path("d_again"));
  CHECK(a.count == b.count);
  for (std::size_t i = 0; i < 8; ++i) {
    auto ra = phaserec::read_record(dataset(), a, i);
    auto rb = phaserec::read_record(out_path("d_again"), b, i);
    CHECK(torch::equal(ra.holograms[0].intensity, rb.holograms[0].intensity));
    CHECK(torch::equal(ra.gt_phase, rb.gt_phase));
  }
}

TEST_CASE("supervised training on a hologram-only dataset names the missing ground truth") {
  REQUIRE(cli("simulate --count 4 --grid 32 --holograms-only --out " + out_path("h")).code == 0);
  auto r = cli("train --strategy dd --dataset " + out_path("h") + " --epochs 1 --out " + out_path("t_dd"));
  CHECK(r.code != 0);
  CHECK(r.output.find("ground-truth") != std::string::npos);
  auto ok = cli("train --strategy tpd --dataset " + out_path("h") +
                " --epochs 1 --batch 4 --depth 2 --width 4 --out " + out_path("t_tpd"));
  CHECK(ok.code == 0);
  CHECK(fs::exists(root() / "t_tpd" / "model.ckpt"));
}

TEST_CASE("uPD with zero cycles emits the initial output and an empty trace") {
  auto r = cli("infer --strategy upd --cycles 0 --dataset " + dataset() +
               " --records 1 --depth 2 --width 4 --out " + out_path("u"));
  REQUIRE(r.code == 0);
  const auto rec = root() / "u" / "000000";
  CHECK(fs::exists(rec / "phase.prt"));
  CHECK(fs::exists(rec / "phase.png"));
  CHECK(phaserec::read_tensor(rec / "refine" / "trace_total.prt").numel() == 0);
  CHECK(read_json(rec / "refine" / "train_report.json").at("cycles") == 0);
  CHECK(fs::exists(root() / "u" / "metrics.json"));
}

TEST_CASE("trained weights refuse a dataset with different geometry") {
  REQUIRE(cli("train --strategy tpd --dataset " + dataset() +
               " --epochs 1 --batch 4 --depth 2 --width 4 --out " + out_path("t32"))
              .code == 0);
  REQUIRE(cli("simulate --count 2 --grid 64 --out " + out_path("d64")).code == 0);
  auto r = cli("infer --weights " + out_path("t32") + "/model.ckpt --dataset " + out_path("d64") +
               " --out " + out_path("bad_geom"));
  CHECK(r.code == 2);
  auto ok = cli("refine --weights " + out_path("t32") + "/model.ckpt --dataset " + dataset() +
                " --records 1 --cycles 2 --out " + out_path("refined"));
  CHECK(ok.code == 0);
  CHECK(fs::exists(root() / "refined" / "000000" / "phase.prt"));
}

TEST_CASE("error exit codes") {
  CHECK(cli("simulate --no-such-flag --out " + out_path("x1")).code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("train --strategy dd --dataset " + out_path("missing") + " --out " + out_path("x2")).code == 3);
  // Output directories must be new or empty unless forced.
  CHECK(cli("simulate --count 1 --grid 32 --out " + dataset()).code != 0);
  CHECK(cli("simulate --count 1 --grid 32 --force --out " + out_path("d_force")).code == 0);
  CHECK(cli("simulate --count 1 --grid 32 --force --out " + out_path("d_force")).code == 0);
}

TEST_CASE("help lists flags with units for every command") {
  for (const char* cmd : {"simulate", "train", "infer", "refine", "evaluate", "sweep-defocus",
                          "crossgen", "illposed", "aberration"}) {
    CAPTURE(cmd);
    auto r = cli(std::string(cmd) + " --help");
    CHECK(r.code == 0);
    CHECK(r.output.find("--out") != std::string::npos);
  }
  auto sim = cli("simulate --help").output;
  CHECK(sim.find("in mm") != std::string::npos);
  CHECK(sim.find("in nm") != std::string::npos);
  CHECK(sim.find("in um") != std::string::npos);
  CHECK(cli("--help").output.find("PHASEREC_DEVICE") != std::string::npos);
}
