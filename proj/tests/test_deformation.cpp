#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <fstream>
#include <random>

#include "evdeform/deformation.hpp"
#include "evdeform/error.hpp"
#include "support.hpp"

using namespace evdeform;

namespace {

CameraRig world_rig(const testing::ArcRig& arc) {
  CameraRig rig;
  rig.reference_camera = arc.ids[0];
  for (std::size_t c = 0; c < arc.ids.size(); ++c) rig.cameras.push_back({arc.ids[c], arc.intrinsics[c], arc.poses[c]});
  return rig;
}

CorrespondingPoint observe(const testing::ArcRig& arc, const Vec3& X, double t, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  CorrespondingPoint cp;
  for (std::size_t c = 0; c < arc.ids.size(); ++c) {
    CenterObservation o;
    o.camera_id = arc.ids[c];
    const double nx = g(rng), ny = g(rng);
    o.pixel = testing::oracle_project(arc.intrinsics[c], arc.poses[c], X) + sigma * Vec2(nx, ny);
    o.t_c = t;
    cp.views.push_back(o);
  }
  cp.mean_t = t;
  return cp;
}

DeformationSeries series_at(std::vector<std::pair<double, Vec3>> pts) {
  DeformationSeries s;
  for (const auto& [t, p] : pts) s.samples.push_back({t, p, 0.0, 3});
  return s;
}

}  // namespace

TEST_CASE("rebase: reference camera becomes the identity and projections are preserved") {
  const testing::ArcRig arc;
  const CameraRig rig = world_rig(arc);
  const RigCalibration rc = rebase_extrinsics(rig, 3);
  CHECK(rc.reference_camera == 3);
  CHECK(rc.at(3).pose.rotation.isApprox(Mat3::Identity()));
  CHECK(rc.at(3).pose.translation.norm() == 0.0);
  std::mt19937_64 rng(1);
  for (const auto& X : testing::visible_points(arc, 20, rng)) {
    const Vec3 Xr = arc.poses[2].rotation * X + arc.poses[2].translation;
    for (std::size_t c = 0; c < 3; ++c) {
      const Vec2 a = testing::oracle_project(arc.intrinsics[c], arc.poses[c], X);
      const Vec2 b = testing::oracle_project(rc.cameras[c].intrinsics, rc.cameras[c].pose, Xr);
      CHECK((a - b).norm() < 1e-8);
    }
  }
  CHECK_THROWS_AS(rebase_extrinsics(rig, 9), Error);
}

TEST_CASE("triangulate: exact views give the point in the reference frame") {
  const testing::ArcRig arc;
  const RigCalibration rc = rebase_extrinsics(world_rig(arc), 1);
  std::mt19937_64 rng(2);
  for (const auto& X : testing::visible_points(arc, 30, rng)) {
    const Triangulation tr = triangulate(rc, observe(arc, X, 0.0, 0.0, rng));
    const Vec3 expected = arc.poses[0].rotation * X + arc.poses[0].translation;
    CHECK((tr.position - expected).norm() < 1e-6);
    CHECK(tr.residual_px < 1e-6);
    CHECK(tr.camera_count == 3);
  }
}

TEST_CASE("triangulate: noisy views stay within a few millimetres and report the residual") {
  const testing::ArcRig arc;
  const RigCalibration rc = rebase_extrinsics(world_rig(arc), 2);
  std::mt19937_64 rng(3);
  double sq = 0.0, res = 0.0;
  const auto pts = testing::visible_points(arc, 200, rng);
  for (const auto& X : pts) {
    const Triangulation tr = triangulate(rc, observe(arc, X, 0.0, 0.1, rng));
    const Vec3 expected = arc.poses[1].rotation * X + arc.poses[1].translation;
    sq += (tr.position - expected).squaredNorm();
    res += tr.residual_px;
  }
  CHECK(std::sqrt(sq / 200.0) < 2.0);
  // Three cameras, three free coordinates: RMS residual ~ sigma * sqrt(3/6).
  CHECK(res / 200.0 == doctest::Approx(0.1 * std::sqrt(0.5)).epsilon(0.25));
}

TEST_CASE("triangulate: a single view is rank deficient") {
  const testing::ArcRig arc;
  const RigCalibration rc = rebase_extrinsics(world_rig(arc), 1);
  std::mt19937_64 rng(4);
  CorrespondingPoint cp = observe(arc, Vec3(0, 0, 6500), 0.0, 0.0, rng);
  cp.views.resize(1);
  try {
    triangulate(rc, cp);
    FAIL("expected RankDeficient");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::RankDeficient);
  }
}

TEST_CASE("triangulate: unknown camera id") {
  const testing::ArcRig arc;
  const RigCalibration rc = rebase_extrinsics(world_rig(arc), 1);
  std::mt19937_64 rng(5);
  CorrespondingPoint cp = observe(arc, Vec3(0, 0, 6500), 0.0, 0.0, rng);
  cp.views[0].camera_id = 42;
  try {
    triangulate(rc, cp);
    FAIL("expected UnknownCamera");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownCamera);
  }
}

TEST_CASE("anchor: scale factor and scaled output") {
  const testing::ArcRig arc;
  const RigCalibration rc = rebase_extrinsics(world_rig(arc), 1);
  const RigCalibration a = anchor_scale(rc, 500.0, Vec3(0, 0, 0), Vec3(0, 0, 250));
  REQUIRE(a.metric_scale.has_value());
  CHECK(*a.metric_scale == doctest::Approx(2.0));
  std::mt19937_64 rng(6);
  const Vec3 X(100, -50, 6000);
  const Triangulation t0 = triangulate(rc, observe(arc, X, 0.0, 0.0, rng));
  const Triangulation t1 = triangulate(a, observe(arc, X, 0.0, 0.0, rng));
  CHECK((t1.position - 2.0 * t0.position).norm() < 1e-6);
  // Anchoring twice composes.
  const RigCalibration b = anchor_scale(a, 100.0, Vec3(0, 0, 0), Vec3(0, 0, 200));
  CHECK(*b.metric_scale == doctest::Approx(1.0));
  try {
    anchor_scale(rc, 10.0, Vec3(1, 2, 3), Vec3(1, 2, 3));
    FAIL("expected ZeroObservedDistance");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroObservedDistance);
  }
  CHECK_THROWS_AS(anchor_scale(rc, 0.0, Vec3(0, 0, 0), Vec3(1, 0, 0)), Error);
}

TEST_CASE("anchor on a baseline sets the camera separation") {
  const testing::ArcRig arc;
  RigCalibration rc = rebase_extrinsics(world_rig(arc), 2);
  // Shrink the rig to arbitrary internal units.
  for (auto& c : rc.cameras) c.pose.translation /= 4637.0;
  const RigCalibration a = anchor_on_baseline(rc, 1, 2, 4640.0);
  const Vec3 c1 = a.at(1).pose.center() * a.scale(), c2 = a.at(2).pose.center() * a.scale();
  CHECK((c1 - c2).norm() == doctest::Approx(4640.0).epsilon(1e-12));
}

TEST_CASE("measure: static marker has zero amplitude") {
  const testing::ArcRig arc;
  const RigCalibration rc = rebase_extrinsics(world_rig(arc), 1);
  std::mt19937_64 rng(7);
  std::vector<CorrespondingPoint> m;
  for (int i = 0; i < 100; ++i) m.push_back(observe(arc, Vec3(200, 100, 6400), 4000.0 * i, 0.0, rng));
  const DeformationSeries s = measure_deformation(rc, m);
  CHECK(s.samples.size() == 100);
  CHECK(s.max_amplitude < 1e-6);
  for (const auto& ax : s.axes) CHECK(ax.rms < 1e-6);
  CHECK_FALSE(s.metric);
  CHECK(s.reference_camera == 1);
}

TEST_CASE("measure: sinusoid matches summary statistics computed from the truth") {
  const testing::ArcRig arc;
  const RigCalibration rc = rebase_extrinsics(world_rig(arc), 2);
  std::mt19937_64 rng(8);
  const Vec3 rest(150, -80, 6300), amp(12, 5, 8);
  std::vector<Vec3> truth;
  std::vector<CorrespondingPoint> m;
  for (int i = 0; i < 400; ++i) {
    const double t = 2000.0 * i, ts = t * 1e-6;
    const double w = ts < 0.2 ? 0.0 : std::sin(2 * M_PI * 2.0 * (ts - 0.2));
    const Vec3 X = rest + w * amp;
    truth.push_back(arc.poses[1].rotation * X + arc.poses[1].translation);
    m.push_back(observe(arc, X, t, 0.0, rng));
  }
  DeformationOptions opt;
  opt.baseline_samples = 50;
  const DeformationSeries s = measure_deformation(rc, m, opt);
  REQUIRE(s.samples.size() == truth.size());

  Vec3 base = Vec3::Zero();
  for (int i = 0; i < 50; ++i) base += truth[static_cast<std::size_t>(i)];
  base /= 50.0;
  double amp_max = 0.0;
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300), sq = Vec3::Zero();
  for (const auto& X : truth) {
    const Vec3 d = X - base;
    amp_max = std::max(amp_max, d.norm());
    lo = lo.cwiseMin(d);
    hi = hi.cwiseMax(d);
    sq += d.cwiseProduct(d);
  }
  CHECK((s.baseline - base).norm() < 1e-6);
  CHECK(s.max_amplitude == doctest::Approx(amp_max).epsilon(1e-8));
  CHECK(amp_max == doctest::Approx(amp.norm()).epsilon(1e-3));
  for (int a = 0; a < 3; ++a) {
    const auto& ax = s.axes[static_cast<std::size_t>(a)];
    CHECK(ax.min == doctest::Approx(lo(a)).epsilon(1e-8));
    CHECK(ax.max == doctest::Approx(hi(a)).epsilon(1e-8));
    CHECK(ax.rms == doctest::Approx(std::sqrt(sq(a) / 400.0)).epsilon(1e-8));
  }
}

TEST_CASE("measure: samples above the residual gate are dropped") {
  const testing::ArcRig arc;
  const RigCalibration rc = rebase_extrinsics(world_rig(arc), 1);
  std::mt19937_64 rng(9);
  std::vector<CorrespondingPoint> m;
  for (int i = 0; i < 20; ++i) m.push_back(observe(arc, Vec3(0, 0, 6500), 4000.0 * i, 0.0, rng));
  m[7].views[2].pixel += Vec2(30, -20);
  const DeformationSeries s = measure_deformation(rc, m);
  CHECK(s.dropped_residual == 1);
  CHECK(s.samples.size() == 19);
}

TEST_CASE("measure: nothing to triangulate") {
  const testing::ArcRig arc;
  const RigCalibration rc = rebase_extrinsics(world_rig(arc), 1);
  try {
    measure_deformation(rc, std::vector<CorrespondingPoint>{});
    FAIL("expected EmptySeries");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySeries);
  }
}

TEST_CASE("measure: scaling the scene scales every output length") {
  const testing::ArcRig arc;
  testing::ArcRig big = arc;
  const double k = 3.7;
  for (auto& p : big.poses) p.translation *= k;
  const RigCalibration r1 = rebase_extrinsics(world_rig(arc), 1);
  const RigCalibration r2 = rebase_extrinsics(world_rig(big), 1);
  std::mt19937_64 rng(10);
  std::vector<CorrespondingPoint> m1, m2;
  for (int i = 0; i < 60; ++i) {
    const Vec3 X = Vec3(0, 0, 6500) + Vec3(10 * std::sin(0.3 * i), 4 * std::cos(0.2 * i), 6 * std::sin(0.1 * i));
    m1.push_back(observe(arc, X, 1000.0 * i, 0.0, rng));
    m2.push_back(observe(big, k * X, 1000.0 * i, 0.0, rng));
  }
  const DeformationSeries a = measure_deformation(r1, m1), b = measure_deformation(r2, m2);
  REQUIRE(a.samples.size() == b.samples.size());
  CHECK(b.max_amplitude == doctest::Approx(k * a.max_amplitude).epsilon(1e-6));
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK((b.samples[i].position - k * a.samples[i].position).norm() < 1e-6 * k * a.samples[i].position.norm());
  }
}

TEST_CASE("inter-marker distances pair samples within the threshold") {
  const DeformationSeries a = series_at({{0, Vec3(0, 0, 0)}, {100, Vec3(0, 0, 0)}, {200, Vec3(1, 1, 1)}});
  const DeformationSeries b = series_at({{5, Vec3(3, 4, 0)}, {190, Vec3(1, 1, 2)}, {400, Vec3(0, 0, 0)}});
  const auto d = inter_marker_distances(a, b, 20.0);
  REQUIRE(d.size() == 2);
  CHECK(d[0].t_us == doctest::Approx(2.5));
  CHECK(d[0].distance == doctest::Approx(5.0));
  CHECK(d[1].t_us == doctest::Approx(195.0));
  CHECK(d[1].distance == doctest::Approx(1.0));
  CHECK(inter_marker_distances(a, b, 1.0).empty());
}

TEST_CASE("inter-marker distances: each sample is used once") {
  const DeformationSeries a = series_at({{100, Vec3(0, 0, 0)}, {101, Vec3(0, 0, 0)}});
  const DeformationSeries b = series_at({{100, Vec3(2, 0, 0)}});
  CHECK(inter_marker_distances(a, b, 10.0).size() == 1);
}

TEST_CASE("series csv and summary json") {
  const DeformationSeries s = series_at({{0, Vec3(1, 2, 3)}, {10, Vec3(4, 5, 6)}});
  const auto dir = testing::scratch_dir("series");
  write_series_csv(dir / "s.csv", s);
  std::ifstream in(dir / "s.csv");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 3);
  const auto j = nlohmann::json::parse(series_summary_json(s));
  CHECK(j.is_object());
}
