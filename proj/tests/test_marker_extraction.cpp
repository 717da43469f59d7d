#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "evdeform/error.hpp"
#include "evdeform/marker_extraction.hpp"
#include "evdeform/simulator.hpp"
#include "support.hpp"

using namespace evdeform;

namespace {

/// One camera at the origin, one static marker straight ahead.
ScenarioConfig static_scene(IntensityProfile profile, double duration_s = 0.2) {
  ScenarioConfig sc;
  SimCamera cam;
  cam.id = 1;
  cam.intrinsics = testing::hd_camera();
  sc.cameras = {cam};
  MarkerConfig m;
  m.trajectory.origin = Vec3(120.0, -80.0, 5000.0);
  m.profile = profile;
  sc.markers = {m};
  sc.duration_s = duration_s;
  sc.seed = 5;
  return sc;
}

CenterObservation obs(int cam, double t) {
  CenterObservation o;
  o.camera_id = cam;
  o.t_c = t;
  return o;
}

}  // namespace

TEST_CASE("accumulation count: static marker takes one cycle's yield") {
  AccumulationPolicy p{1.0, 8, 1000, 0.5};
  CHECK(choose_accumulation_count(250.0, 0.0, 125000.0, p) == 500);
  CHECK(choose_accumulation_count(250.0, 0.0, 1e7, p) == 1000);
  CHECK(choose_accumulation_count(250.0, 0.0, 100.0, p) == 8);
}

TEST_CASE("accumulation count: per-cycle yield matches simulator event counts") {
  const ScenarioConfig sc = static_scene(IntensityProfile::Flat, 1.0);
  const SimulationOutput sim = simulate(sc);
  const double per_transition =
      static_cast<double>(sim.truth.marker_events[0]) / static_cast<double>(sim.truth.transition_times_us.size());
  const double rate = static_cast<double>(sim.streams[0].size()) / sc.duration_s;
  const std::size_t n = choose_accumulation_count(sc.blink_freq_hz, 0.0, rate, AccumulationPolicy{1.0, 8, 100000, 0.5});
  // One cycle holds an ON and an OFF burst.
  CHECK(static_cast<double>(n) == doctest::Approx(2.0 * per_transition).epsilon(0.01));
}

TEST_CASE("accumulation count: faster markers never get larger windows") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> speed(1.0, 5000.0), rate(1e3, 1e7);
  for (int i = 0; i < 500; ++i) {
    const double s = speed(rng), r = rate(rng);
    CHECK(choose_accumulation_count(250.0, 2.0 * s, r) <= choose_accumulation_count(250.0, s, r));
  }
}

TEST_CASE("cluster: single event") {
  const std::vector<Event> ev{{5, 100, 200, Polarity::On}};
  const EventCluster c = accumulate_cluster(ev);
  CHECK(c.centroid == Vec2(100, 200));
  CHECK(c.covariance.isZero());
  CHECK(c.t_c == 5.0);
  CHECK(c.count == 1);
}

TEST_CASE("cluster: symmetric square") {
  const std::vector<Event> ev{{10, 0, 0, Polarity::On}, {20, 0, 2, Polarity::On}, {30, 2, 0, Polarity::On},
                              {40, 2, 2, Polarity::On}};
  const EventCluster c = accumulate_cluster(ev);
  CHECK(c.centroid.isApprox(Vec2(1, 1)));
  CHECK(c.t_c == doctest::Approx(25.0));
  CHECK(c.covariance(0, 0) == doctest::Approx(1.0));
  CHECK(c.covariance(1, 1) == doctest::Approx(1.0));
  CHECK(c.covariance(0, 1) == doctest::Approx(0.0));
  CHECK(c.t_min == 10);
  CHECK(c.t_max == 40);
}

TEST_CASE("cluster: gaussian sample mean within the statistical bound") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 2.0);
  std::vector<Event> ev;
  double sx = 0.0, sy = 0.0;
  for (int i = 0; i < 500; ++i) {
    const auto x = static_cast<std::uint16_t>(std::lround(640 + g(rng)));
    const auto y = static_cast<std::uint16_t>(std::lround(360 + g(rng)));
    ev.push_back({static_cast<std::uint64_t>(i), x, y, Polarity::On});
    sx += x;
    sy += y;
  }
  const EventCluster c = accumulate_cluster(ev);
  CHECK(c.centroid.x() == doctest::Approx(sx / 500.0).epsilon(1e-12));
  CHECK(c.centroid.y() == doctest::Approx(sy / 500.0).epsilon(1e-12));
  const double bound = 3.0 * 2.0 / std::sqrt(500.0);
  CHECK(std::abs(c.centroid.x() - 640.0) < bound);
  CHECK(std::abs(c.centroid.y() - 360.0) < bound);
  CHECK(c.covariance.determinant() >= 0.0);
  CHECK(c.covariance(0, 1) == doctest::Approx(c.covariance(1, 0)));
}

TEST_CASE("cluster: empty input throws") {
  CHECK_THROWS_AS(accumulate_cluster(std::span<const Event>{}), Error);
}

TEST_CASE("extract: static LED gives one centre per transition on the projection") {
  const ScenarioConfig sc = static_scene(IntensityProfile::Flat);
  const SimulationOutput sim = simulate(sc);
  const std::size_t transitions = sim.truth.transition_times_us.size();
  ExtractionConfig cfg;
  cfg.events_per_window = sim.truth.marker_events[0] / transitions;
  const ExtractionResult r = extract_center_sequence(sim.streams[0], cfg);
  CHECK(r.observations.size() == transitions);
  const Vec2 truth = testing::oracle_project(sc.cameras[0].intrinsics, sc.cameras[0].pose, sc.markers[0].trajectory.origin);
  for (const auto& o : r.observations) {
    CHECK((o.pixel - truth).norm() < 0.1);
    CHECK(o.t_c >= static_cast<double>(o.cluster.t_min));
    CHECK(o.t_c <= static_cast<double>(o.cluster.t_max));
    CHECK(o.cluster.covariance.determinant() >= -1e-9);
    CHECK(o.cluster.covariance(0, 1) == o.cluster.covariance(1, 0));
  }
}

TEST_CASE("extract: background noise is gated out") {
  ScenarioConfig sc = static_scene(IntensityProfile::Flat);
  const SimulationOutput clean = simulate(sc);
  const std::size_t transitions = clean.truth.transition_times_us.size();
  const double marker_events = static_cast<double>(clean.truth.marker_events[0]);
  sc.noise_rate = 0.1 * marker_events / (1280.0 * 720.0 * sc.duration_s);
  const SimulationOutput sim = simulate(sc);
  const double planted = static_cast<double>(sim.truth.noise_events[0]);
  CHECK(planted == doctest::Approx(0.1 * marker_events).epsilon(0.2));

  ExtractionConfig cfg;
  cfg.events_per_window = clean.truth.marker_events[0] / transitions;
  const ExtractionResult r = extract_center_sequence(sim.streams[0], cfg);
  const Vec2 truth = testing::oracle_project(sc.cameras[0].intrinsics, sc.cameras[0].pose, sc.markers[0].trajectory.origin);
  CHECK(r.observations.size() >= transitions * 9 / 10);
  for (const auto& o : r.observations) CHECK((o.pixel - truth).norm() < 0.3);
  CHECK(static_cast<double>(r.noise_rejected) == doctest::Approx(planted).epsilon(0.2));
}

TEST_CASE("extract: fewer events than one window throws") {
  const SimulationOutput sim = simulate(static_scene(IntensityProfile::Flat));
  ExtractionConfig cfg;
  cfg.events_per_window = sim.streams[0].size() + 1;
  EventStream s = sim.streams[0];
  CHECK_THROWS_AS(extract_center_sequence(s, cfg), Error);
  cfg.events_per_window = 10;
  s.events.resize(9);
  CHECK_THROWS_AS(extract_center_sequence(s, cfg), Error);
}

TEST_CASE("match: coincident and distant observations") {
  std::vector<std::vector<CenterObservation>> seq{{obs(1, 1000)}, {obs(2, 1000)}};
  auto m = match_corresponding(seq, 100);
  REQUIRE(m.size() == 1);
  CHECK(m[0].match_time_spread == 0.0);
  CHECK(m[0].views.size() == 2);

  seq = {{obs(1, 1000)}, {obs(2, 1500)}};
  CHECK(match_corresponding(seq, 100).empty());
}

TEST_CASE("match: simulator blink schedule across three cameras") {
  ScenarioConfig sc = preset_paper_rig();
  MarkerConfig m = sc.markers.front();
  m.trajectory = Trajectory{};
  m.trajectory.origin = Vec3(0.0, 0.0, 6000.0);
  sc.markers = {m};
  sc.duration_s = 0.4;
  const SimulationOutput sim = simulate(sc);
  const auto& times = sim.truth.transition_times_us;
  REQUIRE(times.size() == 200);

  std::vector<std::vector<CenterObservation>> seq;
  for (const auto& s : sim.streams) {
    const ExtractionConfig cfg = ExtractionProfile::calibration().configure(s);
    seq.push_back(extract_center_sequence(s, cfg).observations);
    CHECK(seq.back().size() == 200);
  }
  const double t_th = 0.5 * 1e6 / sc.blink_freq_hz;
  const auto matched = match_corresponding(seq, t_th);
  REQUIRE(matched.size() == 200);
  for (std::size_t i = 0; i < matched.size(); ++i) {
    CHECK(matched[i].views.size() == 3);
    CHECK(matched[i].match_time_spread <= t_th);
    for (const auto& v : matched[i].views) CHECK(std::abs(v.t_c - times[i]) < 100.0);
  }
}

TEST_CASE("marker seeds: two markers ordered by image x") {
  ScenarioConfig sc = static_scene(IntensityProfile::Cosine);
  MarkerConfig right = sc.markers[0];
  right.trajectory.origin = Vec3(600.0, 50.0, 5000.0);
  MarkerConfig left = sc.markers[0];
  left.trajectory.origin = Vec3(-700.0, 0.0, 5000.0);
  sc.markers = {right, left};
  const SimulationOutput sim = simulate(sc);
  const auto seeds = detect_marker_seeds(sim.streams[0], 2, 2000);
  REQUIRE(seeds.size() == 2);
  const auto& k = sc.cameras[0].intrinsics;
  CHECK((seeds[0] - testing::oracle_project(k, CameraPose{}, left.trajectory.origin)).norm() < 1.0);
  CHECK((seeds[1] - testing::oracle_project(k, CameraPose{}, right.trajectory.origin)).norm() < 1.0);

  ExtractionConfig cfg = ExtractionProfile::calibration().configure(sim.streams[0], 2);
  cfg.seed_center = seeds[1];
  const auto r = extract_center_sequence(sim.streams[0], cfg);
  for (const auto& o : r.observations) {
    CHECK((o.pixel - testing::oracle_project(k, CameraPose{}, right.trajectory.origin)).norm() < 0.5);
  }
}

TEST_CASE("profiles") {
  const auto c = ExtractionProfile::by_name("calibration");
  const auto m = ExtractionProfile::by_name("measurement");
  CHECK(c.name == "calibration");
  CHECK(m.name == "measurement");
  CHECK(m.blink_freq_hz > c.blink_freq_hz);
  CHECK_THROWS_AS(ExtractionProfile::by_name("other"), Error);

  const SimulationOutput sim = simulate(static_scene(IntensityProfile::Flat));
  const auto one = c.configure(sim.streams[0], 1);
  const auto two = c.configure(sim.streams[0], 2);
  CHECK(two.events_per_window == doctest::Approx(one.events_per_window / 2.0).epsilon(0.01));
  CHECK(c.configure(sim.streams[0]).events_per_window != m.configure(sim.streams[0]).events_per_window);
}

TEST_CASE("observation csv round trip") {
  const SimulationOutput sim = simulate(static_scene(IntensityProfile::Cosine));
  const auto r = extract_center_sequence(sim.streams[0], ExtractionProfile::calibration().configure(sim.streams[0]));
  const auto dir = testing::scratch_dir("obs_csv");
  write_observations_csv(dir / "o.csv", r.observations);
  const auto back = read_observations_csv(dir / "o.csv");
  REQUIRE(back.size() == r.observations.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].camera_id == r.observations[i].camera_id);
    CHECK(back[i].pixel == r.observations[i].pixel);
    CHECK(back[i].cluster.count == r.observations[i].cluster.count);
    CHECK(std::abs(back[i].t_c - r.observations[i].t_c) <= 0.5);
  }
}
