// End-to-end checks of the roadsense executable (path in ROADSENSE_BIN).

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("roadsense_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const char* bin = std::getenv("ROADSENSE_BIN");
  REQUIRE(bin != nullptr);
  const std::string cmd = std::string("\"") + bin + "\" " + args + " >/dev/null 2>" +
                          (workdir() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path write(const std::string& name, const std::string& text) {
  const auto p = workdir() / name;
  std::ofstream(p) << text;
  return p;
}

// every regular file except metadata.json, which records its own output path
bool same_outputs(const fs::path& a, const fs::path& b) {
  std::size_t count = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    if (name == "metadata.json") continue;
    if (!fs::exists(b / name) || slurp(entry.path()) != slurp(b / name)) return false;
    ++count;
  }
  return count > 0;
}

const char* kNoisyChain = R"({
  "network": {"builtin": "chain6", "fcd_period_steps": 4},
  "demand": [{"cell": 0, "profile": [[0, 2], [60, 3.5], [150, 0]]}],
  "noise": {"sigma_flow": 0.1, "sigma_density": 1.0, "sigma_fcd": 0.02, "seed": 3},
  "layout": "all",
  "inflow_layout": [0],
  "horizon_steps": 240,
  "transient_steps": 20
})";

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("simulate, calibrate, reconstruct and place", "[cli]") {
  const auto sc = write("chain.json", kNoisyChain);
  const auto sim = workdir() / "sim";
  REQUIRE(run("simulate --scenario " + q(sc) + " --out " + q(sim)) == 0);
  for (const char* f : {"truth_density.csv", "meas_flow.csv", "meas_fcd.csv", "simulate_summary.csv", "metadata.json"}) {
    CHECK(fs::exists(sim / f));
  }

  const auto cal = workdir() / "cal";
  REQUIRE(run("calibrate --scenario " + q(sc) + " --traces " + q(sim) + " --out " + q(cal)) == 0);
  CHECK(fs::exists(cal / "diagrams.json"));

  const auto rec = workdir() / "rec";
  REQUIRE(run("reconstruct --scenario " + q(sc) + " --traces " + q(sim) + " --diagrams " +
              q(cal / "diagrams.json") + " --out " + q(rec)) == 0);
  CHECK(fs::exists(rec / "error_report.csv"));
  CHECK(fs::exists(rec / "est_density.csv"));

  const auto plc = workdir() / "plc";
  REQUIRE(run("place --scenario " + q(sc) + " --out " + q(plc) + " --gamma 0.5") == 0);
  CHECK(fs::exists(plc / "placement.json"));
}

TEST_CASE("fixed seeds and replays are byte-identical", "[cli]") {
  const auto sc = write("chain.json", kNoisyChain);
  const auto a = workdir() / "seed_a";
  const auto b = workdir() / "seed_b";
  const auto c = workdir() / "seed_c";
  REQUIRE(run("simulate --scenario " + q(sc) + " --out " + q(a) + " --seed 11") == 0);
  REQUIRE(run("simulate --scenario " + q(sc) + " --out " + q(b) + " --seed 11") == 0);
  REQUIRE(run("simulate --scenario " + q(sc) + " --out " + q(c) + " --seed 12") == 0);
  CHECK(same_outputs(a, b));
  CHECK(slurp(a / "meas_flow.csv") != slurp(c / "meas_flow.csv"));

  const auto r = workdir() / "seed_replay";
  REQUIRE(run("replay " + q(a / "metadata.json") + " --out " + q(r)) == 0);
  CHECK(same_outputs(a, r));
}

TEST_CASE("exit codes", "[cli]") {
  const auto sc = write("chain.json", kNoisyChain);
  CHECK(run("--help") == 0);
  CHECK(run("") == 2);
  CHECK(run("simulate --out x") == 2);
  CHECK(run("place --scenario " + q(sc) + " --out " + q(workdir() / "m") + " --mode nonsense") == 2);

  const auto broken = write("broken.json", "{\n  \"network\": {\"builtin\": \"chain6\"},\n  \"horizon_steps\": -4\n}");
  CHECK(run("simulate --scenario " + q(broken) + " --out " + q(workdir() / "b")) != 0);
  const auto typo = write("typo.json", "{\n  \"network\": {\"builtin\": \"chain6\"},\n  \"horizonsteps\": 4\n}");
  CHECK(run("simulate --scenario " + q(typo) + " --out " + q(workdir() / "b")) == 2);
  CHECK(slurp(workdir() / "stderr.txt").find("typo.json:3:") != std::string::npos);
  CHECK(run("simulate --scenario " + q(workdir() / "missing.json") + " --out " + q(workdir() / "b")) == 2);

  // 7 candidate cells for the grid's 4 onramps are fine; 3 are not
  const auto few = write("few.json", R"({
  "network": {"builtin": "grid25"},
  "placement": {"available": [0, 1, 2]}
})");
  CHECK(run("place --scenario " + q(few) + " --mode geo --out " + q(workdir() / "few")) == 5);
}

TEST_CASE("calibration cell selection", "[cli]") {
  const auto sc = write("chain.json", kNoisyChain);
  const auto sim = workdir() / "sim_cells";
  REQUIRE(run("simulate --scenario " + q(sc) + " --out " + q(sim)) == 0);
  CHECK(run("calibrate --scenario " + q(sc) + " --traces " + q(sim) + " --cells \"\" --out " +
            q(workdir() / "cal_none")) == 0);
  CHECK(fs::exists(workdir() / "cal_none" / "metadata.json"));

  // a cell with no readings in the traces
  const auto sparse = write("sparse.json", std::string(kNoisyChain).replace(
                                               std::string(kNoisyChain).find("\"layout\": \"all\""),
                                               15, "\"layout\": [0, 2]"));
  const auto sim2 = workdir() / "sim_sparse";
  REQUIRE(run("simulate --scenario " + q(sparse) + " --out " + q(sim2)) == 0);
  CHECK(run("calibrate --scenario " + q(sparse) + " --traces " + q(sim2) + " --cells 1 --out " +
            q(workdir() / "cal_missing")) == 3);
}

TEST_CASE("grid experiment", "[cli]") {
  const auto out = workdir() / "grid";
  REQUIRE(run("grid-experiment --out " + q(out) + " --h-range 4..7") == 0);
  const auto curve = slurp(out / "cost_curve.csv");
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 5);
  CHECK(fs::exists(out / "placement.json"));
  CHECK(fs::exists(out / "vv_summary.csv"));
}
