#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "evdeform/error.hpp"
#include "evdeform/simulator.hpp"
#include "support.hpp"

using namespace evdeform;

namespace {

ScenarioConfig single_camera(const Vec3& where, IntensityProfile profile) {
  ScenarioConfig c;
  c.cameras.push_back({5, testing::hd_camera(), CameraPose{}});
  MarkerConfig m;
  m.trajectory.origin = where;
  m.radius_mm = 25.0;
  m.log_step = 2.0;
  m.profile = profile;
  c.markers.push_back(m);
  c.blink_freq_hz = 250.0;
  c.duty_cycle = 0.4;
  c.duration_s = 1.0;
  c.seed = 3;
  return c;
}

// Pixels whose centres fall inside the projected ellipse, by brute force.
std::size_t disk_pixels(const CameraIntrinsics& k, const Vec2& c, double rx, double ry) {
  std::size_t n = 0;
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const double dx = (x - c.x()) / rx, dy = (y - c.y()) / ry;
      if (dx * dx + dy * dy <= 1.0) ++n;
    }
  }
  return n;
}

}  // namespace

TEST_CASE("blink schedule") {
  ScenarioConfig c = single_camera(Vec3(0, 0, 5000), IntensityProfile::Flat);
  const auto tr = blink_transitions(c);
  REQUIRE(tr.size() == 500);
  CHECK(tr[0] == std::make_pair(0.0, true));
  CHECK(tr[1].first == doctest::Approx(1600.0));
  CHECK_FALSE(tr[1].second);
  CHECK(tr[2].first == doctest::Approx(4000.0));
}

TEST_CASE("unreachable contrast and no noise gives empty streams") {
  ScenarioConfig c = single_camera(Vec3(0, 0, 5000), IntensityProfile::Flat);
  c.markers[0].log_step = 0.1;
  const SimulationOutput out = simulate(c);
  REQUIRE(out.streams.size() == 1);
  CHECK(out.streams[0].empty());

  c.noise_rate = 0.01;
  const SimulationOutput noisy = simulate(c);
  CHECK(noisy.truth.marker_events[0] == 0);
  CHECK(noisy.truth.noise_events[0] == noisy.streams[0].size());
  // Poisson mean 0.01 * 1280 * 720 = 9216, well inside five sigma.
  CHECK(std::abs(static_cast<double>(noisy.streams[0].size()) - 9216.0) < 5.0 * std::sqrt(9216.0));
}

TEST_CASE("static flat disk: exactly 2 * blink * area events in alternating blocks") {
  const Vec3 X(120.0, -40.0, 5000.0);
  const ScenarioConfig c = single_camera(X, IntensityProfile::Flat);
  const SimulationOutput out = simulate(c);
  const CameraIntrinsics& k = c.cameras[0].intrinsics;
  const Vec2 centre = testing::oracle_project(k, CameraPose{}, X);
  const std::size_t A = disk_pixels(k, centre, k.fx * 25.0 / X.z(), k.fy * 25.0 / X.z());
  const EventStream& s = out.streams[0];
  CHECK(s.size() == 2 * 250 * A);
  CHECK(s.is_sorted());

  std::size_t blocks = 0;
  for (std::size_t i = 0; i < s.size(); i += A) {
    const Polarity p = s.events[i].polarity;
    CHECK(p == (blocks % 2 == 0 ? Polarity::On : Polarity::Off));
    for (std::size_t j = i; j < i + A; ++j) {
      CHECK(s.events[j].polarity == p);
      CHECK(s.events[j].t == s.events[i].t);
    }
    ++blocks;
  }
  CHECK(blocks == 500);
}

TEST_CASE("burst centroid lies on the projected centre") {
  const Vec3 X(-310.0, 95.0, 5200.0);
  ScenarioConfig c = single_camera(X, IntensityProfile::Cosine);
  c.duration_s = 0.02;
  const SimulationOutput out = simulate(c);
  const Vec2 centre = testing::oracle_project(c.cameras[0].intrinsics, CameraPose{}, X);
  std::map<std::uint64_t, std::vector<Vec2>> bursts;
  for (const auto& e : out.streams[0].events) bursts[e.t].emplace_back(e.x, e.y);
  REQUIRE(bursts.size() == 10);
  for (const auto& [t, px] : bursts) {
    Vec2 mean = Vec2::Zero();
    for (const auto& p : px) mean += p;
    mean /= static_cast<double>(px.size());
    double second = 0.0;
    for (const auto& p : px) second += (p - mean).squaredNorm();
    const double sigma = std::sqrt(second / static_cast<double>(px.size()));
    CHECK((mean - centre).norm() <= 3.0 * sigma / std::sqrt(static_cast<double>(px.size())));
  }
}

TEST_CASE("preset: disk radius follows the pinhole prediction") {
  ScenarioConfig c = preset_paper_rig();
  for (auto& m : c.markers) m.profile = IntensityProfile::Flat;
  c.noise_rate = 0.0;
  c.latency_jitter_std_us = 0.0;
  c.glare.clear();
  c.duration_s = 0.02;
  const SimulationOutput out = simulate(c);
  for (std::size_t ci = 0; ci < c.cameras.size(); ++ci) {
    const auto& cam = c.cameras[ci];
    std::map<std::uint64_t, std::size_t> count;
    for (const auto& e : out.streams[ci].events) ++count[e.t];
    for (std::size_t s = 0; s < out.truth.transition_times_us.size(); ++s) {
      const TrackSample& ts = out.truth.tracks[ci][s];
      if (!ts.visible) continue;
      const Vec2 p = ts.pixel;
      if (p.x() < 30 || p.y() < 30 || p.x() > 1249 || p.y() > 689) continue;
      const double z = cam.pose.transform(out.truth.positions[0][s]).z();
      const double predicted = cam.intrinsics.fx * c.markers[0].radius_mm / z;
      const auto it = count.find(static_cast<std::uint64_t>(std::llround(ts.t_us)));
      REQUIRE(it != count.end());
      const double measured = std::sqrt(static_cast<double>(it->second) / M_PI);
      CHECK(std::abs(measured - predicted) < 0.5);
    }
  }
}

TEST_CASE("preset: tracks agree with the trajectory through the true cameras") {
  const ScenarioConfig c = preset_paper_rig();
  ScenarioConfig shortc = c;
  shortc.duration_s = 0.1;
  const SimulationOutput out = simulate(shortc);
  for (std::size_t ci = 0; ci < c.cameras.size(); ++ci) {
    for (const auto& ts : out.truth.tracks[ci]) {
      const Vec3 X = c.markers[static_cast<std::size_t>(ts.marker)].trajectory.position(ts.t_us * 1e-6);
      if (c.cameras[ci].pose.transform(X).z() <= 0.0) continue;
      CHECK((testing::oracle_project(c.cameras[ci].intrinsics, c.cameras[ci].pose, X) - ts.pixel).norm() < 1e-9);
    }
  }
}

TEST_CASE("preset: valid, deterministic, and shaped as described") {
  const ScenarioConfig a = preset_paper_rig(), b = preset_paper_rig();
  CHECK_NOTHROW(a.validate());
  CHECK(scenario_to_json(a) == scenario_to_json(b));
  REQUIRE(a.cameras.size() == 3);
  for (const auto& cam : a.cameras) {
    CHECK(cam.intrinsics.width == 1280);
    CHECK(cam.intrinsics.height == 720);
    CHECK(cam.intrinsics.fx == 1800.0);
    CHECK(cam.intrinsics.cx == 639.5);
    CHECK(cam.intrinsics.cy == 359.5);
  }
  CHECK((a.cameras[0].pose.center() - a.cameras[1].pose.center()).norm() == doctest::Approx(4640.0).epsilon(1e-9));
  CHECK((a.cameras[1].pose.center() - a.cameras[2].pose.center()).norm() == doctest::Approx(4540.0).epsilon(1e-9));
  CHECK(a.blink_freq_hz == 250.0);
  CHECK(a.duty_cycle == 0.4);
}

TEST_CASE("same seed gives identical streams, labels cover every event") {
  ScenarioConfig c = preset_paper_rig();
  c.duration_s = 0.1;
  c.noise_rate = 0.002;
  c.latency_jitter_std_us = 20.0;
  const SimulationOutput a = simulate(c), b = simulate(c);
  for (std::size_t i = 0; i < a.streams.size(); ++i) {
    CHECK(a.streams[i] == b.streams[i]);
    CHECK(a.streams[i].is_sorted());
    CHECK(a.truth.labels[i].size() == a.streams[i].size());
    CHECK(a.truth.marker_events[i] + a.truth.noise_events[i] == a.streams[i].size());
  }
  c.seed += 1;
  CHECK_FALSE(simulate(c).streams[0] == a.streams[0]);
}

TEST_CASE("invalid scenarios raise ConfigError") {
  const auto expect_config_error = [](const ScenarioConfig& c) {
    try {
      simulate(c);
      FAIL("expected ConfigError");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ConfigError);
    }
  };
  ScenarioConfig c = single_camera(Vec3(0, 0, 5000), IntensityProfile::Flat);
  c.duration_s = 0.0;
  expect_config_error(c);
  c = single_camera(Vec3(0, 0, 5000), IntensityProfile::Flat);
  c.duty_cycle = 1.0;
  expect_config_error(c);
  c = single_camera(Vec3(0, 0, 5000), IntensityProfile::Flat);
  c.blink_freq_hz = 0.0;
  expect_config_error(c);
}

TEST_CASE("marker outside the view raises a warning") {
  ScenarioConfig c = single_camera(Vec3(0, 0, -5000), IntensityProfile::Flat);
  c.duration_s = 0.01;
  const SimulationOutput out = simulate(c);
  CHECK(out.streams[0].empty());
  CHECK_FALSE(out.truth.warnings.empty());
}

TEST_CASE("scenario json round trip") {
  ScenarioConfig c = preset_paper_rig();
  c.glare.push_back({10, 20, 300, 400, 0.5});
  c.noise_rate = 0.003;
  const std::string j = scenario_to_json(c);
  CHECK(scenario_to_json(scenario_from_json(j)) == j);
  const ScenarioConfig r = scenario_from_json(j);
  CHECK(r.seed == c.seed);
  CHECK(r.markers.size() == c.markers.size());
  CHECK(r.markers[0].trajectory.position(0.37) == c.markers[0].trajectory.position(0.37));
}

TEST_CASE("trajectories") {
  Trajectory t;
  t.kind = Trajectory::Kind::Linear;
  t.origin = Vec3(1, 2, 3);
  t.velocity = Vec3(10, 0, -4);
  CHECK(t.position(0.5).isApprox(Vec3(6, 2, 1)));
  t.kind = Trajectory::Kind::Sinusoid3d;
  t.amplitude = Vec3(2, 3, 4);
  t.frequency_hz = Vec3(1, 2, 0.5);
  t.onset_s = 0.1;
  CHECK(t.position(0.05).isApprox(t.origin));
  CHECK(t.position(0.35).isApprox(t.origin + Vec3(2 * std::sin(2 * M_PI * 0.25), 3 * std::sin(2 * M_PI * 0.5),
                                                  4 * std::sin(2 * M_PI * 0.125)),
                                  1e-12));
  t.kind = Trajectory::Kind::WaypointSpline;
  t.waypoints = {Vec3(0, 0, 0), Vec3(10, 0, 0), Vec3(10, 10, 0)};
  t.span_s = 2.0;
  CHECK((t.position(0.0) - t.waypoints[0]).norm() < 1e-12);
  CHECK((t.position(1.0) - t.waypoints[1]).norm() < 1e-12);
  CHECK((t.position(2.0) - t.waypoints[2]).norm() < 1e-12);
  CHECK(parse_trajectory_kind(trajectory_kind_name(Trajectory::Kind::WaypointSpline)) ==
        Trajectory::Kind::WaypointSpline);
}
