#include "evdeform/verification.hpp"

#include <json.hpp>

#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "evdeform/error.hpp"

namespace evdeform {

namespace {

using Clock = std::chrono::steady_clock;

constexpr int kAnchorA = 1;
constexpr int kAnchorB = 2;
constexpr double kAnchorBaselineMm = 4640.0;
constexpr double kNominalFocal = 1800.0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool in_sensor(const CameraIntrinsics& k, const Vec2& p) {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= k.width - 1.0 && p.y() <= k.height - 1.0;
}

/// Projection of the first marker at every blink transition, with Gaussian
/// pixel noise; kept where two or more cameras see it.
std::vector<CorrespondingPoint> synthetic_correspondences(const ScenarioConfig& sc, double sigma_px,
                                                          std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<CorrespondingPoint> out;
  for (const auto& [t, on] : blink_transitions(sc)) {
    (void)on;
    const Vec3 X = sc.markers.front().trajectory.position(t * 1e-6);
    CorrespondingPoint cp;
    for (const auto& cam : sc.cameras) {
      if (!(cam.pose.transform(X).z() > 0.0)) continue;
      const Vec2 p = project(cam.intrinsics, cam.pose, X);
      if (!in_sensor(cam.intrinsics, p)) continue;
      CenterObservation o;
      o.camera_id = cam.id;
      const double nx = noise(rng), ny = noise(rng);
      o.pixel = p + sigma_px * Vec2(nx, ny);
      o.t_c = t;
      cp.views.push_back(o);
    }
    if (cp.views.size() < 2) continue;
    cp.mean_t = t;
    out.push_back(std::move(cp));
  }
  return out;
}

std::string cam_key(int id, const char* what) { return "cam" + std::to_string(id) + "_" + what; }

double max_rotation_error_deg(const RigCalibration& est, const RigCalibration& truth) {
  double worst = 0.0;
  for (const auto& a : truth.cameras) {
    for (const auto& b : truth.cameras) {
      if (a.id >= b.id) continue;
      const Mat3 rt = a.pose.rotation * b.pose.rotation.transpose();
      const Mat3 re = est.at(a.id).pose.rotation * est.at(b.id).pose.rotation.transpose();
      worst = std::max(worst, rotation_angle_between(rt, re) * 180.0 / std::acos(-1.0));
    }
  }
  return worst;
}

MarkerConfig sinusoid_marker(const MarkerConfig& like, const Vec3& origin, const Vec3& amplitude, const Vec3& freq,
                             double onset_s) {
  MarkerConfig m = like;
  m.trajectory = Trajectory{};
  m.trajectory.kind = Trajectory::Kind::Sinusoid3d;
  m.trajectory.origin = origin;
  m.trajectory.amplitude = amplitude;
  m.trajectory.frequency_hz = freq;
  m.trajectory.onset_s = onset_s;
  return m;
}

ExtractionProfile measurement_profile_for(const ScenarioConfig& sc) {
  ExtractionProfile p = ExtractionProfile::measurement();
  p.blink_freq_hz = sc.blink_freq_hz;
  return p;
}

template <typename F>
CriterionResult guarded(int id, std::string title, F&& body) {
  CriterionResult r;
  r.id = id;
  r.title = std::move(title);
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.note = e.what();
  }
  return r;
}

// Property checks ----------------------------------------------------------

Vec3 random_volume_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(-1000.0, 1000.0), uy(-500.0, 500.0), uz(5000.0, 8000.0);
  const double x = ux(rng), y = uy(rng), z = uz(rng);
  return {x, y, z};
}

double rank4_ratio(std::mt19937_64& rng) {
  const ScenarioConfig sc = preset_paper_rig();
  const int n = 50;
  Eigen::MatrixXd W(3 * sc.cameras.size(), n);
  for (int j = 0; j < n; ++j) {
    const Vec3 X = random_volume_point(rng);
    for (std::size_t c = 0; c < sc.cameras.size(); ++c) {
      const auto& cam = sc.cameras[c];
      const double depth = cam.pose.transform(X).z();
      const Vec2 p = project(cam.intrinsics, cam.pose, X);
      W.block<3, 1>(3 * static_cast<Eigen::Index>(c), j) = depth * Vec3(p.x(), p.y(), 1.0);
    }
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(W);
  const auto& s = svd.singularValues();
  return s(4) / s(0);
}

/// Worst per-step cost increase over perturbed bundle problems; any throw
/// counts as a violation.
std::pair<int, double> ba_monotonicity(std::mt19937_64& rng, int instances) {
  const ScenarioConfig sc = preset_paper_rig();
  std::normal_distribution<double> g(0.0, 1.0);
  int violations = 0;
  double worst_increase = 0.0;
  for (int inst = 0; inst < instances; ++inst) {
    std::vector<CameraIntrinsics> K;
    std::vector<CameraPose> P;
    for (const auto& c : sc.cameras) {
      K.push_back(c.intrinsics);
      P.push_back(c.pose);
    }
    std::vector<Vec3> X;
    std::vector<BundleObservation> obs;
    while (X.size() < 40) {
      const Vec3 p = random_volume_point(rng);
      bool ok = true;
      for (std::size_t c = 0; c < K.size(); ++c) ok = ok && in_sensor(K[c], project(K[c], P[c], p));
      if (!ok) continue;
      for (std::size_t c = 0; c < K.size(); ++c) {
        const double nx = g(rng), ny = g(rng);
        obs.push_back({c, X.size(), project(K[c], P[c], p) + 0.3 * Vec2(nx, ny)});
      }
      X.push_back(p);
    }
    for (std::size_t c = 1; c < K.size(); ++c) {
      const double a = g(rng), b = g(rng), d = g(rng);
      P[c].rotation = rotation_from_axis_angle(0.005 * Vec3(a, b, d)) * P[c].rotation;
      const double tx = g(rng), ty = g(rng), tz = g(rng);
      P[c].translation += 20.0 * Vec3(tx, ty, tz);
    }
    for (auto& k : K) {
      const double e = g(rng);
      k.fx *= 1.0 + 0.01 * e;
      k.fy = k.fx;
    }
    for (auto& p : X) {
      const double a = g(rng), b = g(rng), d = g(rng);
      p += 20.0 * Vec3(a, b, d);
    }
    std::vector<CameraParamMask> mask(K.size(), all_frozen());
    for (std::size_t c = 0; c < K.size(); ++c) {
      if (c > 0) {
        for (int q = RotX; q <= TransZ; ++q) mask[c][static_cast<std::size_t>(q)] = true;
      }
      mask[c][Fx] = mask[c][Fy] = true;
    }
    mask[1][TransX] = false;
    BundleAdjustmentOptions opt;
    opt.max_iterations = 30;
    try {
      const BundleAdjustmentResult r = bundle_adjust(K, P, X, obs, mask, true, opt);
      bool mono = r.final_cost <= r.initial_cost;
      for (std::size_t k = 1; k < r.cost_trace.size(); ++k) {
        const double inc = r.cost_trace[k] - r.cost_trace[k - 1];
        worst_increase = std::max(worst_increase, inc);
        mono = mono && inc <= 0.0;
      }
      if (!mono) ++violations;
    } catch (const Error&) {
      ++violations;
    }
  }
  return {violations, worst_increase};
}

double jacobian_max_rel_error(std::mt19937_64& rng, int trials) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    CameraIntrinsics k;
    k.fx = 1750.0 + 250.0 * u(rng);
    k.fy = k.fx * (1.0 + 0.02 * u(rng));
    k.cx = 639.5 + 20.0 * u(rng);
    k.cy = 359.5 + 20.0 * u(rng);
    k.k1 = 0.2 * u(rng);
    k.k2 = 0.05 * u(rng);
    k.p1 = 1e-3 * u(rng);
    k.p2 = 1e-3 * u(rng);
    CameraPose pose;
    const double ra = u(rng), rb = u(rng), rc = u(rng);
    pose.rotation = rotation_from_axis_angle(0.5 * Vec3(ra, rb, rc));
    const double ta = u(rng), tb = u(rng), tc = u(rng);
    pose.translation = 500.0 * Vec3(ta, tb, tc);
    const double z = 3500.0 + 2500.0 * u(rng);
    const double xa = u(rng), ya = u(rng);
    const Vec3 Xc(0.3 * z * xa, 0.2 * z * ya, z);
    const Vec3 X = pose.rotation.transpose() * (Xc - pose.translation);

    Eigen::Matrix<double, 2, kCameraParams> Jc;
    Eigen::Matrix<double, 2, 3> Jp;
    project_with_jacobian(k, pose, X, &Jc, &Jp);

    const auto eval = [&](int param, double h) {
      CameraIntrinsics kk = k;
      CameraPose pp = pose;
      if (param <= RotZ) {
        Vec3 w = Vec3::Zero();
        w(param) = h;
        pp.rotation = rotation_from_axis_angle(w) * pp.rotation;
      } else if (param <= TransZ) {
        pp.translation(param - TransX) += h;
      } else {
        double* field[] = {&kk.fx, &kk.fy, &kk.cx, &kk.cy, &kk.k1, &kk.k2, &kk.p1, &kk.p2};
        *field[param - Fx] += h;
      }
      return project_with_jacobian(kk, pp, X, nullptr, nullptr);
    };
    const auto rel = [](const Vec2& a, const Vec2& f) {
      const double scale = std::max(f.norm(), a.norm());
      return scale > 0.0 ? (a - f).norm() / scale : 0.0;
    };
    for (int p = 0; p < kCameraParams; ++p) {
      const double h = p <= RotZ ? 1e-6 : p <= Cy ? 1e-3 : 1e-2;  // linear in the distortion terms
      const Vec2 fd = (eval(p, h) - eval(p, -h)) / (2.0 * h);
      worst = std::max(worst, rel(Jc.col(p), fd));
    }
    for (int a = 0; a < 3; ++a) {
      Vec3 d = Vec3::Zero();
      d(a) = 1e-3;
      const Vec2 fd = (project_with_jacobian(k, pose, X + d, nullptr, nullptr) -
                       project_with_jacobian(k, pose, X - d, nullptr, nullptr)) /
                      2e-3;
      worst = std::max(worst, rel(Jp.col(a), fd));
    }
  }
  return worst;
}

double undistort_roundtrip_max_px() {
  CameraIntrinsics k;
  k.fx = k.fy = kNominalFocal;
  k.cx = 639.5;
  k.cy = 359.5;
  k.width = 1280;
  k.height = 720;
  k.k1 = -0.15;
  k.k2 = 0.04;
  k.p1 = 6e-4;
  k.p2 = -4e-4;
  double worst = 0.0;
  for (double y = 0.0; y <= k.height - 1.0; y += 16.0) {
    for (double x = 0.0; x <= k.width - 1.0; x += 16.0) {
      const Vec2 p(x, y);
      worst = std::max(worst, (undistort(k, distort(k, p)) - p).norm());
    }
  }
  return worst;
}

int planted_outlier_exact_trials(std::mt19937_64& rng, int trials) {
  const ScenarioConfig sc = preset_paper_rig();
  const CameraRig rig = sc.rig(1);
  std::uniform_real_distribution<double> mag(10.0, 40.0), ang(0.0, 2.0 * std::acos(-1.0));
  int exact = 0;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<CorrespondingPoint> corr;
    std::vector<Vec3> pts;
    while (corr.size() < 60) {
      const Vec3 X = random_volume_point(rng);
      CorrespondingPoint cp;
      bool ok = true;
      for (const auto& cam : sc.cameras) {
        const Vec2 p = project(cam.intrinsics, cam.pose, X);
        ok = ok && in_sensor(cam.intrinsics, p);
        CenterObservation o;
        o.camera_id = cam.id;
        o.pixel = p;
        cp.views.push_back(o);
      }
      if (!ok) continue;
      corr.push_back(cp);
      pts.push_back(X);
    }
    const std::size_t planted_count = 2 + static_cast<std::size_t>(trial % 5);
    std::set<std::size_t> planted;
    std::uniform_int_distribution<std::size_t> pick(0, corr.size() - 1), view(0, sc.cameras.size() - 1);
    while (planted.size() < planted_count) planted.insert(pick(rng));
    for (std::size_t i : planted) {
      const double a = ang(rng), m = mag(rng);
      corr[i].views[view(rng)].pixel += m * Vec2(std::cos(a), std::sin(a));
    }
    const OutlierReport rep = reject_outliers(corr, rig, pts, 2.0, 1.0);
    std::set<std::size_t> removed;
    for (const auto& r : rep.removed) removed.insert(r.index);
    if (removed == planted) ++exact;
  }
  return exact;
}

struct MatchingCheck {
  std::size_t transitions = 0;
  std::size_t groups = 0;
  std::size_t impure = 0;
  std::size_t missed = 0;
};

MatchingCheck temporal_matching_check(std::uint64_t seed) {
  ScenarioConfig sc = preset_paper_rig();
  sc.seed = seed;
  sc.duration_s = 0.3;
  MarkerConfig m = sc.markers.front();
  m.trajectory = Trajectory{};
  m.trajectory.kind = Trajectory::Kind::Linear;
  m.trajectory.origin = Vec3(-200.0, 0.0, 5500.0);
  m.trajectory.velocity = Vec3(200.0, 50.0, 0.0);
  sc.markers = {m};
  const SimulationOutput sim = simulate(sc);
  const auto matched = extract_and_match(sim.streams, ExtractionProfile::calibration(), 1).front();

  std::vector<double> times;
  for (const auto& [t, on] : blink_transitions(sc)) {
    (void)on;
    times.push_back(t);
  }
  const auto nearest = [&](double t) {
    const auto it = std::lower_bound(times.begin(), times.end(), t);
    std::size_t i = static_cast<std::size_t>(it - times.begin());
    if (i == times.size() || (i > 0 && t - times[i - 1] < times[i] - t)) --i;
    return i;
  };
  MatchingCheck c;
  c.transitions = times.size();
  c.groups = matched.size();
  std::vector<int> hits(times.size(), 0);
  for (const auto& g : matched) {
    const std::size_t first = nearest(g.views.front().t_c);
    bool pure = g.views.size() == sc.cameras.size();
    for (const auto& v : g.views) pure = pure && nearest(v.t_c) == first;
    if (!pure) ++c.impure;
    ++hits[first];
  }
  for (int h : hits) c.missed += h == 1 ? 0 : 1;
  return c;
}

double reference_change_max_rel(std::mt19937_64& rng) {
  const ScenarioConfig sc = preset_paper_rig();
  std::normal_distribution<double> g(0.0, 0.3);
  std::vector<CorrespondingPoint> obs;
  while (obs.size() < 60) {
    const Vec3 X = random_volume_point(rng);
    CorrespondingPoint cp;
    bool ok = true;
    for (const auto& cam : sc.cameras) {
      const Vec2 p = project(cam.intrinsics, cam.pose, X);
      ok = ok && in_sensor(cam.intrinsics, p);
      CenterObservation o;
      o.camera_id = cam.id;
      const double nx = g(rng), ny = g(rng);
      o.pixel = p + Vec2(nx, ny);
      cp.views.push_back(o);
    }
    if (ok) obs.push_back(cp);
  }
  std::vector<std::vector<double>> dist;
  for (const auto& cam : sc.cameras) {
    const RigCalibration rig = rebase_extrinsics(sc.rig(1), cam.id);
    std::vector<double> d;
    for (std::size_t i = 0; i + 1 < obs.size(); i += 2) {
      d.push_back((triangulate(rig, obs[i]).position - triangulate(rig, obs[i + 1]).position).norm());
    }
    dist.push_back(d);
  }
  double worst = 0.0;
  for (std::size_t r = 1; r < dist.size(); ++r) {
    for (std::size_t i = 0; i < dist[r].size(); ++i) {
      worst = std::max(worst, std::abs(dist[r][i] - dist[0][i]) / dist[0][i]);
    }
  }
  return worst;
}

VerificationReport run_once(std::uint64_t seed) {
  VerificationReport rep;
  rep.seed = seed;
  rep.criteria.push_back(verify_calibration_reprojection(seed));
  rep.criteria.push_back(verify_noiseless_consistency());
  try {
    const PresetCalibration pc = calibrate_preset_from_events(seed);
    rep.criteria.push_back(verify_pole_distance(pc, seed));
    rep.criteria.push_back(verify_grid_spans(pc, seed));
    rep.criteria.push_back(verify_deformation_sway(pc, seed));
  } catch (const std::exception& e) {
    const char* titles[] = {"pole distance", "grid spans", "deformation sway"};
    for (int i = 0; i < 3; ++i) {
      CriterionResult r;
      r.id = 3 + i;
      r.title = titles[i];
      r.note = std::string("event calibration failed: ") + e.what();
      rep.criteria.push_back(r);
    }
  }
  rep.criteria.push_back(verify_properties(seed));
  return rep;
}

}  // namespace

double CriterionResult::figure(std::string_view name) const {
  for (const auto& f : figures) {
    if (f.name == name) return f.value;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

void CriterionResult::add(std::string name, double value, bool timing) {
  figures.push_back({std::move(name), value, timing});
}

bool VerificationReport::all_passed() const {
  return !criteria.empty() &&
         std::all_of(criteria.begin(), criteria.end(), [](const CriterionResult& c) { return c.passed; });
}

PresetCalibration calibrate_preset_from_events(std::uint64_t seed) {
  const auto t0 = Clock::now();
  PresetCalibration pc;
  pc.scenario = preset_paper_rig();
  pc.scenario.seed = seed;
  const SimulationOutput sim = simulate(pc.scenario);
  const auto matched = extract_and_match(sim.streams, ExtractionProfile::calibration(), 1).front();
  pc.correspondences = matched.size();
  pc.result = calibrate(matched);
  const int ref = pc.result.rig.reference_camera;
  pc.rig = anchor_on_baseline(rebase_extrinsics(pc.result.rig, ref), kAnchorA, kAnchorB, kAnchorBaselineMm);
  pc.truth = rebase_extrinsics(pc.scenario.rig(ref), ref);
  pc.seconds = seconds_since(t0);
  return pc;
}

std::vector<std::vector<CorrespondingPoint>> extract_and_match(const std::vector<EventStream>& streams,
                                                               const ExtractionProfile& profile, std::size_t markers) {
  markers = std::max<std::size_t>(1, markers);
  std::vector<std::vector<std::vector<CenterObservation>>> seq(markers);
  for (const auto& s : streams) {
    ExtractionConfig cfg = profile.configure(s, markers);
    std::vector<Vec2> seeds;
    if (markers > 1) seeds = detect_marker_seeds(s, markers, 4 * markers * cfg.events_per_window, cfg.polarity);
    for (std::size_t k = 0; k < markers; ++k) {
      if (markers > 1) cfg.seed_center = seeds[k];
      seq[k].push_back(extract_center_sequence(s, cfg).observations);
    }
  }
  std::vector<std::vector<CorrespondingPoint>> out;
  for (const auto& per_camera : seq) {
    out.push_back(match_corresponding(per_camera, default_match_threshold_us(profile.blink_freq_hz)));
  }
  return out;
}

CriterionResult verify_calibration_reprojection(std::uint64_t seed) {
  return guarded(1, "calibration reprojection", [&](CriterionResult& r) {
    const ScenarioConfig sc = preset_paper_rig();
    std::mt19937_64 rng(seed + 1);
    const auto corr = synthetic_correspondences(sc, 0.2, rng);
    const auto t0 = Clock::now();
    const CalibrationResult cal = calibrate(corr);
    const double sec = seconds_since(t0);
    bool ok = corr.size() >= 200 && sec < 60.0;
    r.add("correspondences", static_cast<double>(corr.size()));
    for (const auto& s : cal.stats) {
      r.add(cam_key(s.camera_id, "mean_px"), s.mean_px);
      r.add(cam_key(s.camera_id, "std_px"), s.std_px);
      ok = ok && s.mean_px < 0.3 && s.std_px < 0.25;
    }
    r.add("runtime_s", sec, true);
    r.passed = ok;
  });
}

CriterionResult verify_noiseless_consistency() {
  return guarded(2, "noiseless consistency", [&](CriterionResult& r) {
    const ScenarioConfig sc = preset_paper_rig();
    std::mt19937_64 rng(0);
    const auto corr = synthetic_correspondences(sc, 0.0, rng);
    const CalibrationResult cal = calibrate(corr);
    const int ref = cal.rig.reference_camera;
    const RigCalibration est = rebase_extrinsics(cal.rig, ref);
    const RigCalibration truth = rebase_extrinsics(sc.rig(ref), ref);

    double mean = 0.0, focal = 0.0;
    for (const auto& s : cal.stats) mean = std::max(mean, s.mean_px);
    for (const auto& c : est.cameras) {
      focal = std::max({focal, std::abs(c.intrinsics.fx / kNominalFocal - 1.0),
                        std::abs(c.intrinsics.fy / kNominalFocal - 1.0)});
    }
    const double rot = max_rotation_error_deg(est, truth);
    const auto baseline = [](const RigCalibration& rig, int a, int b) {
      return (rig.at(a).pose.center() - rig.at(b).pose.center()).norm();
    };
    const double ratio = baseline(est, 1, 2) / baseline(est, 2, 3);
    const double ratio_err = std::abs(ratio / (4640.0 / 4540.0) - 1.0);
    r.add("max_mean_px", mean);
    r.add("focal_rel_error", focal);
    r.add("rotation_error_deg", rot);
    r.add("baseline_ratio", ratio);
    r.add("baseline_ratio_rel_error", ratio_err);
    r.passed = mean < 1e-4 && focal < 0.005 && rot < 0.05 && ratio_err < 0.002;
  });
}

CriterionResult verify_pole_distance(const PresetCalibration& calibration, std::uint64_t seed) {
  return guarded(3, "pole distance", [&](CriterionResult& r) {
    const auto t0 = Clock::now();
    constexpr double kLength = 1000.0;
    ScenarioConfig pole = calibration.scenario;
    pole.seed = seed + 3;
    pole.duration_s = 1.0;
    const Vec3 centre(0.0, 0.0, 4500.0);
    const Vec3 amp(40.0, 15.0, 25.0), freq(1.3, 1.7, 0.9);
    const MarkerConfig like = pole.markers.front();
    pole.markers = {sinusoid_marker(like, centre - Vec3(0.5 * kLength, 0.0, 0.0), amp, freq, 0.0),
                    sinusoid_marker(like, centre + Vec3(0.5 * kLength, 0.0, 0.0), amp, freq, 0.0)};
    const SimulationOutput sim = simulate(pole);
    const ExtractionProfile profile = measurement_profile_for(pole);
    const auto per_marker = extract_and_match(sim.streams, profile, 2);
    const DeformationSeries a = measure_deformation(calibration.rig, per_marker[0]);
    const DeformationSeries b = measure_deformation(calibration.rig, per_marker[1]);
    const auto d = inter_marker_distances(a, b, default_match_threshold_us(pole.blink_freq_hz));
    if (d.empty()) throw Error(ErrorCode::EmptySeries, "no simultaneous samples of both markers");

    double longest = 0.0, sum = 0.0, worst_sample = 0.0;
    for (const auto& x : d) {
      longest = std::max(longest, x.distance);
      sum += x.distance;
      worst_sample = std::max(worst_sample, std::abs(x.distance - kLength) / kLength);
    }
    const double rel = std::abs(longest - kLength) / kLength;
    const double sec = calibration.seconds + seconds_since(t0);
    r.add("pairs", static_cast<double>(d.size()));
    r.add("max_distance_mm", longest);
    r.add("max_distance_rel_error", rel);
    r.add("mean_distance_mm", sum / static_cast<double>(d.size()));
    r.add("worst_sample_rel_error", worst_sample);
    r.add("runtime_s", sec, true);
    r.passed = rel < 1e-3 && sec < 30.0;
  });
}

CriterionResult verify_grid_spans(const PresetCalibration& calibration, std::uint64_t seed) {
  return guarded(4, "grid spans", [&](CriterionResult& r) {
    constexpr int kSide = 7;
    constexpr double kPitch = 50.0;
    const Vec3 centre(0.0, 0.0, 5000.0);
    std::mt19937_64 rng(seed + 4);
    std::normal_distribution<double> g(0.0, 0.3);
    const auto& cams = calibration.scenario.cameras;

    std::vector<Vec3> rec(kSide * kSide);
    for (int i = 0; i < kSide; ++i) {
      for (int j = 0; j < kSide; ++j) {
        const Vec3 X = centre + Vec3((j - kSide / 2) * kPitch, (i - kSide / 2) * kPitch, 0.0);
        CorrespondingPoint cp;
        for (const auto& cam : cams) {
          CenterObservation o;
          o.camera_id = cam.id;
          const double nx = g(rng), ny = g(rng);
          o.pixel = project(cam.intrinsics, cam.pose, X) + Vec2(nx, ny);
          cp.views.push_back(o);
        }
        rec[static_cast<std::size_t>(i * kSide + j)] = triangulate(calibration.rig, cp).position;
      }
    }
    std::map<int, double> worst;
    std::map<int, int> count;
    const auto span = [&](int a, int b, int steps) {
      const double truth = steps * kPitch;
      const double e =
          std::abs((rec[static_cast<std::size_t>(a)] - rec[static_cast<std::size_t>(b)]).norm() - truth) / truth;
      worst[steps] = std::max(worst[steps], e);
      ++count[steps];
    };
    for (int i = 0; i < kSide; ++i) {
      for (int j = 0; j < kSide; ++j) {
        for (int k = j + 3; k < kSide; ++k) {
          span(i * kSide + j, i * kSide + k, k - j);  // along a row
          span(j * kSide + i, k * kSide + i, k - j);  // along a column
        }
      }
    }
    for (int steps = 3; steps <= 6; ++steps) {
      r.add("max_rel_error_" + std::to_string(static_cast<int>(steps * kPitch)) + "mm", worst[steps]);
    }
    r.add("spans_300mm", count[6]);
    r.passed = worst[6] < 0.01;
  });
}

CriterionResult verify_deformation_sway(const PresetCalibration& calibration, std::uint64_t seed) {
  return guarded(5, "deformation sway", [&](CriterionResult& r) {
    constexpr double kAmplitude = 18.2;
    ScenarioConfig tower = calibration.scenario;
    tower.seed = seed + 5;
    tower.duration_s = 1.2;
    const Vec3 dir = Vec3(0.85, 0.3, 0.43).normalized();
    tower.markers = {sinusoid_marker(tower.markers.front(), Vec3(0.0, 0.0, 5000.0), kAmplitude * dir,
                                     Vec3(2.0, 2.0, 2.0), 0.2)};
    const SimulationOutput sim = simulate(tower);
    const auto matched = extract_and_match(sim.streams, measurement_profile_for(tower), 1).front();
    const DeformationOptions options;
    const DeformationSeries series = measure_deformation(calibration.rig, matched, options);

    // Truth amplitude under the same datum: mean of the first K transitions.
    const auto& truth_pos = sim.truth.positions.front();
    const std::size_t k = std::min(options.baseline_samples, truth_pos.size());
    Vec3 truth_base = Vec3::Zero();
    for (std::size_t i = 0; i < k; ++i) truth_base += truth_pos[i];
    truth_base /= static_cast<double>(k);
    double truth_amp = 0.0;
    for (const auto& p : truth_pos) truth_amp = std::max(truth_amp, (p - truth_base).norm());

    // Per-axis displacement error in the reference-camera frame.
    const Trajectory& traj = tower.markers.front().trajectory;
    const Mat3 R = tower.rig(calibration.rig.reference_camera).at(calibration.rig.reference_camera).pose.rotation;
    const std::size_t ks = std::min(options.baseline_samples, series.samples.size());
    Vec3 sample_base = Vec3::Zero();
    for (std::size_t i = 0; i < ks; ++i) sample_base += traj.position(series.samples[i].t_us * 1e-6);
    sample_base /= static_cast<double>(ks);
    Vec3 sq = Vec3::Zero();
    for (const auto& s : series.samples) {
      const Vec3 expected = R * (traj.position(s.t_us * 1e-6) - sample_base);
      sq += (s.position - series.baseline - expected).cwiseAbs2();
    }
    const Vec3 rmse = (sq / static_cast<double>(series.samples.size())).cwiseSqrt();
    const double amp_err = std::abs(series.max_amplitude / truth_amp - 1.0);
    const double kept = static_cast<double>(series.samples.size()) / static_cast<double>(matched.size());

    r.add("truth_amplitude_mm", truth_amp);
    r.add("recovered_amplitude_mm", series.max_amplitude);
    r.add("amplitude_rel_error", amp_err);
    r.add("rmse_x_mm", rmse.x());
    r.add("rmse_y_mm", rmse.y());
    r.add("rmse_z_mm", rmse.z());
    r.add("kept_fraction", kept);
    r.passed = amp_err < 0.02 && rmse.maxCoeff() < 0.5 && kept >= 0.99;
  });
}

CriterionResult verify_properties(std::uint64_t seed) {
  return guarded(6, "property suites", [&](CriterionResult& r) {
    std::mt19937_64 rng(seed + 6);
    const double rank = rank4_ratio(rng);
    const auto [violations, increase] = ba_monotonicity(rng, 100);
    const double jac = jacobian_max_rel_error(rng, 20);
    const double roundtrip = undistort_roundtrip_max_px();
    const int exact = planted_outlier_exact_trials(rng, 50);
    const MatchingCheck match = temporal_matching_check(seed + 7);
    const double invariance = reference_change_max_rel(rng);

    r.add("rank4_sv_ratio", rank);
    r.add("ba_monotonic_violations", violations);
    r.add("ba_worst_cost_increase", increase);
    r.add("jacobian_max_rel_error", jac);
    r.add("undistort_roundtrip_max_px", roundtrip);
    r.add("outlier_exact_trials", exact);
    r.add("matching_transitions", static_cast<double>(match.transitions));
    r.add("matching_groups", static_cast<double>(match.groups));
    r.add("matching_impure_groups", static_cast<double>(match.impure));
    r.add("matching_missed_transitions", static_cast<double>(match.missed));
    r.add("reference_change_max_rel", invariance);
    r.passed = rank < 1e-10 && violations == 0 && jac < 1e-4 && roundtrip < 1e-8 && exact == 50 &&
               match.impure == 0 && match.missed == 0 && match.groups == match.transitions && invariance < 1e-9;
  });
}

CriterionResult compare_reports(const VerificationReport& first, const VerificationReport& second) {
  CriterionResult r;
  r.id = 7;
  r.title = "determinism";
  double worst = 0.0;
  std::size_t compared = 0;
  bool same_shape = first.criteria.size() == second.criteria.size();
  for (std::size_t c = 0; same_shape && c < first.criteria.size(); ++c) {
    const auto& a = first.criteria[c];
    const auto& b = second.criteria[c];
    same_shape = a.id == b.id && a.passed == b.passed && a.figures.size() == b.figures.size();
    for (std::size_t f = 0; same_shape && f < a.figures.size(); ++f) {
      same_shape = a.figures[f].name == b.figures[f].name;
      if (a.figures[f].timing) continue;
      const double x = a.figures[f].value, y = b.figures[f].value;
      ++compared;
      if (std::isnan(x) && std::isnan(y)) continue;
      if (x == y) continue;
      const double scale = std::max(std::abs(x), std::abs(y));
      worst = std::max(worst, std::isfinite(scale) && scale > 0.0 ? std::abs(x - y) / scale
                                                                   : std::numeric_limits<double>::infinity());
    }
  }
  r.add("figures_compared", static_cast<double>(compared));
  r.add("max_rel_divergence", worst);
  r.passed = same_shape && compared > 0 && worst < 1e-12;
  if (!same_shape) r.note = "reports differ in structure";
  return r;
}

VerificationReport run_verification(const VerificationOptions& options) {
  VerificationReport rep = run_once(options.seed);
  if (options.check_determinism) {
    const VerificationReport again = run_once(options.seed);
    rep.criteria.push_back(compare_reports(rep, again));
  }
  return rep;
}

std::string report_table(const VerificationReport& report) {
  std::string out;
  char buf[128];
  for (const auto& c : report.criteria) {
    std::snprintf(buf, sizeof(buf), "[%s] %d %-26s", c.passed ? "PASS" : "FAIL", c.id, c.title.c_str());
    out += buf;
    for (const auto& f : c.figures) {
      std::snprintf(buf, sizeof(buf), " %s=%.6g", f.name.c_str(), f.value);
      out += buf;
    }
    if (!c.note.empty()) out += " note=\"" + c.note + "\"";
    out += "\n";
  }
  return out;
}

std::string report_json(const VerificationReport& report) {
  nlohmann::json doc;
  doc["seed"] = report.seed;
  doc["passed"] = report.all_passed();
  doc["criteria"] = nlohmann::json::array();
  for (const auto& c : report.criteria) {
    nlohmann::json figs = nlohmann::json::object();
    for (const auto& f : c.figures) figs[f.name] = f.value;
    nlohmann::json j{{"id", c.id}, {"title", c.title}, {"passed", c.passed}, {"figures", figs}};
    if (!c.note.empty()) j["note"] = c.note;
    doc["criteria"].push_back(j);
  }
  return doc.dump(2) + "\n";
}

}  // namespace evdeform
