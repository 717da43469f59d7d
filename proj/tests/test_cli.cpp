#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "evdeform/camera_rig.hpp"
#include "evdeform/simulator.hpp"
#include "support.hpp"

using namespace evdeform;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

json manifest(const fs::path& dir) { return json::parse(read_text_file(dir / "manifest.json")); }

std::string bytes(const fs::path& p) { return read_text_file(p); }

std::size_t data_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != 't' && line[0] != '#') ++n;
  }
  return n;
}

// Preset pipeline run once and shared: simulate -> extract -> calibrate.
struct Pipeline {
  fs::path root, sim, obs, cal;
  Run simulate, extract, calibrate;

  Pipeline() {
    root = testing::scratch_dir("cli_pipeline");
    sim = root / "sim";
    obs = root / "obs";
    cal = root / "cal";
    simulate = run({"--out", sim.string(), "--format", "binary", "simulate", "--preset", "paper-rig"});
    extract = run({"--out", obs.string(), "--format", "binary", "extract", "--streams", sim.string()});
    calibrate = run({"--out", cal.string(), "calibrate", "--observations", obs.string()});
  }
};

const Pipeline& pipeline() {
  static const Pipeline p;
  return p;
}

ScenarioConfig pole_scenario() {
  ScenarioConfig sc = preset_paper_rig();
  sc.duration_s = 1.0;
  sc.seed = 77;
  MarkerConfig like = sc.markers.front();
  like.trajectory = Trajectory{};
  like.trajectory.kind = Trajectory::Kind::Sinusoid3d;
  like.trajectory.amplitude = Vec3(40, 15, 25);
  like.trajectory.frequency_hz = Vec3(1.3, 1.7, 0.9);
  MarkerConfig a = like, b = like;
  a.trajectory.origin = Vec3(-500, 0, 4500);
  b.trajectory.origin = Vec3(500, 0, 4500);
  sc.markers = {a, b};
  return sc;
}

}  // namespace

TEST_CASE("simulate writes one stream per camera plus ground truth") {
  const Pipeline& p = pipeline();
  REQUIRE(p.simulate.code == cli::kOk);
  for (int id : {1, 2, 3}) {
    const fs::path f = cli::stream_file(p.sim, id, "binary");
    REQUIRE(fs::exists(f));
    CHECK(fs::file_size(f) > 16);
  }
  CHECK(fs::exists(p.sim / "truth_tracks.csv"));
  CHECK(fs::exists(p.sim / "truth_trajectory.csv"));
  const json m = manifest(p.sim);
  CHECK(m["command"] == "simulate");
  CHECK(m["status"] == "ok");
  CHECK(m["details"]["transitions"] == 3000);
}

TEST_CASE("simulate is reproducible for a fixed seed") {
  const auto a = testing::scratch_dir("cli_sim_a"), b = testing::scratch_dir("cli_sim_b");
  ScenarioConfig sc = pole_scenario();
  sc.duration_s = 0.2;
  write_file_atomic(a / "scenario.in.json", scenario_to_json(sc));
  REQUIRE(run({"--out", a.string(), "--config", (a / "scenario.in.json").string(), "--seed", "5", "simulate"}).code == 0);
  REQUIRE(run({"--out", b.string(), "--config", (a / "scenario.in.json").string(), "--seed", "5", "simulate"}).code == 0);
  for (int id : {1, 2, 3}) CHECK(bytes(cli::stream_file(a, id, "csv")) == bytes(cli::stream_file(b, id, "csv")));
  CHECK(bytes(a / "truth_tracks.csv") == bytes(b / "truth_tracks.csv"));
}

TEST_CASE("simulate rejects a zero-length scenario") {
  const auto dir = testing::scratch_dir("cli_sim_bad");
  ScenarioConfig sc = preset_paper_rig();
  sc.duration_s = 0.0;
  std::ofstream(dir / "bad.json") << scenario_to_json(sc);
  const Run r = run({"--out", dir.string(), "--config", (dir / "bad.json").string(), "simulate"});
  CHECK(r.code == cli::kInvalidInput);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("extract yields one centre per blink transition within 5%") {
  const Pipeline& p = pipeline();
  REQUIRE(p.extract.code == cli::kOk);
  for (int id : {1, 2, 3}) {
    const std::size_t n = data_lines(cli::observation_file(p.obs, id));
    CHECK(std::abs(static_cast<double>(n) - 3000.0) <= 0.05 * 3000.0);
  }
}

TEST_CASE("extract on a static marker counts every transition") {
  const auto dir = testing::scratch_dir("cli_static");
  ScenarioConfig sc = preset_paper_rig();
  sc.duration_s = 0.4;
  sc.markers.front().trajectory = Trajectory{};
  sc.markers.front().trajectory.origin = Vec3(0, 0, 6500);
  std::ofstream(dir / "s.json") << scenario_to_json(sc);
  REQUIRE(run({"--out", (dir / "sim").string(), "--config", (dir / "s.json").string(), "simulate"}).code == 0);
  REQUIRE(run({"--out", (dir / "obs").string(), "extract", "--streams", (dir / "sim").string()}).code == 0);
  for (int id : {1, 2, 3}) {
    const double n = static_cast<double>(data_lines(cli::observation_file(dir / "obs", id)));
    CHECK(std::abs(n - 200.0) <= 10.0);
  }
}

TEST_CASE("extract: profile choice changes the window size") {
  const Pipeline& p = pipeline();
  const auto dir = testing::scratch_dir("cli_profile");
  REQUIRE(run({"--out", dir.string(), "--format", "binary", "extract", "--streams", p.sim.string(), "--profile",
               "measurement", "--blink-hz", "250"})
              .code == 0);
  const int cal_n = manifest(p.obs)["details"]["cameras"]["2"]["events_per_window"];
  const int mea_n = manifest(dir)["details"]["cameras"]["2"]["events_per_window"];
  CHECK(mea_n < cal_n);
  CHECK(manifest(dir)["details"]["profile"] == "measurement");
}

TEST_CASE("extract: empty stream and missing input are input errors") {
  const auto dir = testing::scratch_dir("cli_empty");
  fs::create_directories(dir / "in");
  std::ofstream(dir / "in" / "cam1.csv").flush();
  CHECK(run({"--out", (dir / "o").string(), "extract", "--streams", (dir / "in").string()}).code == cli::kInvalidInput);
  CHECK(run({"--out", (dir / "o").string(), "extract", "--streams", (dir / "none").string()}).code ==
        cli::kInvalidInput);
}

TEST_CASE("calibrate meets the reprojection bar and writes a readable rig") {
  const Pipeline& p = pipeline();
  REQUIRE(p.calibrate.code == cli::kOk);
  const json m = manifest(p.cal);
  REQUIRE(m["details"]["stats"].size() == 3);
  for (const auto& s : m["details"]["stats"]) CHECK(s["mean_px"].get<double>() < 0.3);
  const CameraRig rig = read_rig(p.cal / "calibration.json");
  CHECK(rig.cameras.size() == 3);
  for (const auto& c : rig.cameras) CHECK(c.intrinsics.fx == doctest::Approx(1800.0).epsilon(0.03));
}

TEST_CASE("calibrate reruns give identical output") {
  const Pipeline& p = pipeline();
  const auto dir = testing::scratch_dir("cli_cal_rerun");
  REQUIRE(run({"--out", dir.string(), "calibrate", "--observations", p.obs.string()}).code == 0);
  CHECK(bytes(dir / "calibration.json") == bytes(p.cal / "calibration.json"));
}

TEST_CASE("calibrate needs two cameras") {
  const Pipeline& p = pipeline();
  const auto dir = testing::scratch_dir("cli_cal_one");
  fs::create_directories(dir / "obs");
  fs::copy_file(cli::observation_file(p.obs, 1), cli::observation_file(dir / "obs", 1));
  CHECK(run({"--out", dir.string(), "calibrate", "--observations", (dir / "obs").string()}).code ==
        cli::kInvalidInput);
}

TEST_CASE("measure: metric output without an anchor warns") {
  const Pipeline& p = pipeline();
  const auto dir = testing::scratch_dir("cli_metric");
  const Run r = run({"--out", dir.string(), "measure", "--calibration", (p.cal / "calibration.json").string(),
                     "--observations", p.obs.string(), "--metric"});
  REQUIRE(r.code == cli::kOk);
  CHECK(r.err.find("warning") != std::string::npos);
  CHECK_FALSE(manifest(dir)["warnings"].empty());
  CHECK(manifest(dir)["details"]["markers"]["0"]["metric"] == false);
}

TEST_CASE("measure: pole distance with a baseline anchor") {
  const Pipeline& p = pipeline();
  const auto dir = testing::scratch_dir("cli_pole");
  std::ofstream(dir / "pole.json") << scenario_to_json(pole_scenario());
  REQUIRE(run({"--out", (dir / "sim").string(), "--format", "binary", "--config", (dir / "pole.json").string(),
               "simulate"})
              .code == 0);
  REQUIRE(run({"--out", (dir / "obs").string(), "--format", "binary", "extract", "--streams", (dir / "sim").string(),
               "--profile", "measurement", "--blink-hz", "250", "--markers", "2"})
              .code == 0);
  const Run r = run({"--out", (dir / "m").string(), "measure", "--calibration", (p.cal / "calibration.json").string(),
                     "--observations", (dir / "obs").string(), "--anchor", "baseline:1:2:4640", "--metric",
                     "--known-distance", "1000"});
  REQUIRE(r.code == cli::kOk);
  CHECK(r.err.empty());
  const json m = manifest(dir / "m");
  CHECK(m["details"]["distance"]["pairs"].get<int>() > 400);
  CHECK(m["details"]["distance"]["max_rel_error"].get<double>() < 1e-3);
  CHECK(fs::exists(dir / "m" / "distances.csv"));
  CHECK(fs::exists(dir / "m" / "series_m0.csv"));
  CHECK(fs::exists(dir / "m" / "series_m1.csv"));
}

TEST_CASE("measure: malformed anchor is an input error") {
  const Pipeline& p = pipeline();
  const auto dir = testing::scratch_dir("cli_anchor");
  CHECK(run({"--out", dir.string(), "measure", "--calibration", (p.cal / "calibration.json").string(),
             "--observations", p.obs.string(), "--anchor", "baseline:1"})
            .code == cli::kInvalidInput);
}

TEST_CASE("unknown subcommand and missing --out") {
  CHECK(run({"bogus"}).code == cli::kInvalidInput);
  CHECK(run({"simulate"}).code == cli::kInvalidInput);
}
