#include "evdeform/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <unordered_map>

#include "evdeform/error.hpp"

namespace evdeform {

Vec3 Trajectory::position(double t) const {
  switch (kind) {
    case Kind::Static:
      return origin;
    case Kind::Linear:
      return origin + velocity * t;
    case Kind::Sinusoid3d: {
      const double tau = std::max(0.0, t - onset_s);
      Vec3 p = origin;
      for (int i = 0; i < 3; ++i) {
        p(i) += amplitude(i) * std::sin(2.0 * std::numbers::pi * frequency_hz(i) * tau + phase_rad(i));
      }
      return p;
    }
    case Kind::WaypointSpline: {
      if (waypoints.empty()) return origin;
      if (waypoints.size() == 1) return waypoints.front();
      const auto last = static_cast<double>(waypoints.size() - 1);
      const double s = std::clamp(t / span_s, 0.0, 1.0) * last;
      const auto i = std::min(static_cast<std::size_t>(s), waypoints.size() - 2);
      const double u = s - static_cast<double>(i);
      const Vec3& p1 = waypoints[i];
      const Vec3& p2 = waypoints[i + 1];
      const Vec3& p0 = i > 0 ? waypoints[i - 1] : p1;
      const Vec3& p3 = i + 2 < waypoints.size() ? waypoints[i + 2] : p2;
      // Catmull-Rom segment between p1 and p2.
      const double u2 = u * u, u3 = u2 * u;
      return 0.5 * ((2.0 * p1) + (-p0 + p2) * u + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2 +
                    (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u3);
    }
  }
  return origin;
}

std::string trajectory_kind_name(Trajectory::Kind kind) {
  switch (kind) {
    case Trajectory::Kind::Static: return "static";
    case Trajectory::Kind::Linear: return "linear";
    case Trajectory::Kind::Sinusoid3d: return "sinusoid-3d";
    case Trajectory::Kind::WaypointSpline: return "waypoint-spline";
  }
  return "static";
}

Trajectory::Kind parse_trajectory_kind(const std::string& name) {
  if (name == "static") return Trajectory::Kind::Static;
  if (name == "linear") return Trajectory::Kind::Linear;
  if (name == "sinusoid-3d") return Trajectory::Kind::Sinusoid3d;
  if (name == "waypoint-spline") return Trajectory::Kind::WaypointSpline;
  throw Error(ErrorCode::ConfigError, "unknown trajectory kind '" + name + "'");
}

void ScenarioConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); };
  if (cameras.empty()) fail("scenario has no cameras");
  if (markers.empty()) fail("scenario has no markers");
  if (!(blink_freq_hz > 0.0)) fail("blink_freq must be positive");
  if (!(duty_cycle > 0.0 && duty_cycle < 1.0)) fail("duty_cycle must lie in (0, 1)");
  if (!(duration_s > 0.0)) fail("duration must be positive");
  if (!(contrast_threshold > 0.0)) fail("contrast_threshold must be positive");
  if (noise_rate < 0.0 || latency_jitter_std_us < 0.0 || refractory_us < 0.0) fail("rates and jitter must be non-negative");
  for (const auto& c : cameras) {
    c.intrinsics.validate();
    if (!c.pose.is_valid()) fail("camera " + std::to_string(c.id) + " has a non-orthonormal rotation");
    if (c.intrinsics.width > 0xFFFF || c.intrinsics.height > 0xFFFF) fail("sensor too large");
  }
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    for (std::size_t j = i + 1; j < cameras.size(); ++j) {
      if (cameras[i].id == cameras[j].id) fail("duplicate camera id " + std::to_string(cameras[i].id));
    }
  }
  for (const auto& m : markers) {
    if (!(m.radius_mm > 0.0)) fail("marker radius must be positive");
    if (m.log_step < 0.0) fail("marker log_step must be non-negative");
    if (m.trajectory.kind == Trajectory::Kind::WaypointSpline && !(m.trajectory.span_s > 0.0)) fail("spline span must be positive");
  }
  for (const auto& g : glare) {
    if (g.noise_rate < 0.0 || g.x1 < g.x0 || g.y1 < g.y0) fail("invalid glare region");
  }
}

CameraRig ScenarioConfig::rig(int reference_camera) const {
  CameraRig r;
  r.reference_camera = reference_camera;
  for (const auto& c : cameras) r.cameras.push_back({c.id, c.intrinsics, c.pose});
  return r;
}

std::vector<std::pair<double, bool>> blink_transitions(const ScenarioConfig& config) {
  std::vector<std::pair<double, bool>> out;
  const double period_us = 1e6 / config.blink_freq_hz;
  const double end_us = config.duration_s * 1e6;
  for (std::uint64_t k = 0;; ++k) {
    const double on = static_cast<double>(k) * period_us;
    if (on >= end_us) break;
    out.emplace_back(on, true);
    const double off = on + config.duty_cycle * period_us;
    if (off < end_us) out.emplace_back(off, false);
  }
  return out;
}

namespace {

struct RawEvent {
  Event e;
  int label;
};

// Log-intensity step seen by a pixel at normalized radius rho.
double pixel_step(const MarkerConfig& m, double rho) {
  if (rho > 1.0) return 0.0;
  if (m.profile == IntensityProfile::Flat) return m.log_step;
  return m.log_step * 0.5 * (1.0 + std::cos(std::numbers::pi * rho));
}

}  // namespace

SimulationOutput simulate(const ScenarioConfig& config) {
  config.validate();
  SimulationOutput out;
  GroundTruth& gt = out.truth;
  const auto transitions = blink_transitions(config);
  for (const auto& [t, on] : transitions) gt.transition_times_us.push_back(t);
  gt.positions.resize(config.markers.size());
  for (std::size_t k = 0; k < config.markers.size(); ++k) {
    for (const auto& [t, on] : transitions) gt.positions[k].push_back(config.markers[k].trajectory.position(t * 1e-6));
  }

  const double C = config.contrast_threshold;
  const double duration_us = config.duration_s * 1e6;
  for (std::size_t ci = 0; ci < config.cameras.size(); ++ci) {
    const SimCamera& cam = config.cameras[ci];
    const CameraIntrinsics& K = cam.intrinsics;
    std::mt19937_64 rng(config.seed ^ static_cast<std::uint64_t>(ci));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::vector<RawEvent> raw;
    std::vector<TrackSample> track;
    std::size_t visible_count = 0;

    for (std::size_t k = 0; k < config.markers.size(); ++k) {
      const MarkerConfig& marker = config.markers[k];
      for (std::size_t s = 0; s < transitions.size(); ++s) {
        const auto [t_tr, on] = transitions[s];
        const Vec3& X = gt.positions[k][s];
        TrackSample ts;
        ts.t_us = t_tr;
        ts.marker = static_cast<int>(k);
        ts.on = on;
        const Vec3 Xc = cam.pose.transform(X);
        if (Xc.z() > 0.0) {
          ts.pixel = project(K, cam.pose, X);
          ts.visible = ts.pixel.x() >= 0.0 && ts.pixel.y() >= 0.0 && ts.pixel.x() <= K.width - 1.0 &&
                       ts.pixel.y() <= K.height - 1.0;
        }
        track.push_back(ts);
        if (!ts.visible) continue;
        ++visible_count;
        const double rx = K.fx * marker.radius_mm / Xc.z();
        const double ry = K.fy * marker.radius_mm / Xc.z();
        const int x0 = std::max(0, static_cast<int>(std::ceil(ts.pixel.x() - rx)));
        const int x1 = std::min(K.width - 1, static_cast<int>(std::floor(ts.pixel.x() + rx)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(ts.pixel.y() - ry)));
        const int y1 = std::min(K.height - 1, static_cast<int>(std::floor(ts.pixel.y() + ry)));
        for (int y = y0; y <= y1; ++y) {
          for (int x = x0; x <= x1; ++x) {
            const double dx = (x - ts.pixel.x()) / rx;
            const double dy = (y - ts.pixel.y()) / ry;
            const double L = pixel_step(marker, std::sqrt(dx * dx + dy * dy));
            if (L <= C) continue;
            // Certain above twice the threshold, otherwise with probability
            // equal to the fraction of the step above threshold.
            if (L < 2.0 * C && unit(rng) >= (L - C) / C) continue;
            double t = t_tr;
            if (config.latency_jitter_std_us > 0.0) t += config.latency_jitter_std_us * jitter(rng);
            t = std::max(0.0, t);
            raw.push_back({{static_cast<std::uint64_t>(std::llround(t)), static_cast<std::uint16_t>(x),
                            static_cast<std::uint16_t>(y), on ? Polarity::On : Polarity::Off},
                           static_cast<int>(k)});
          }
        }
      }
    }
    const std::size_t expected = config.markers.size() * transitions.size();
    if (expected > 0 && static_cast<double>(visible_count) < 0.9 * static_cast<double>(expected)) {
      gt.warnings.push_back("camera " + std::to_string(cam.id) + ": marker visible in only " +
                            std::to_string(visible_count) + " of " + std::to_string(expected) + " transitions");
    }

    // Background activity, uniform over the sensor and time.
    const auto add_noise = [&](int x0, int y0, int x1, int y1, double rate) {
      if (rate <= 0.0 || x1 <= x0 || y1 <= y0) return;
      const double mean = rate * static_cast<double>(x1 - x0) * static_cast<double>(y1 - y0) * config.duration_s;
      const auto count = std::poisson_distribution<std::uint64_t>(mean)(rng);
      std::uniform_int_distribution<int> ux(x0, x1 - 1), uy(y0, y1 - 1);
      std::uniform_real_distribution<double> ut(0.0, duration_us);
      for (std::uint64_t i = 0; i < count; ++i) {
        const int x = ux(rng);
        const int y = uy(rng);
        const auto t = static_cast<std::uint64_t>(ut(rng));
        const Polarity p = unit(rng) < 0.5 ? Polarity::On : Polarity::Off;
        raw.push_back({{t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), p}, -1});
      }
    };
    add_noise(0, 0, K.width, K.height, config.noise_rate);
    for (const auto& g : config.glare) {
      add_noise(std::max(0, g.x0), std::max(0, g.y0), std::min(K.width, g.x1), std::min(K.height, g.y1), g.noise_rate);
    }

    std::stable_sort(raw.begin(), raw.end(), [](const RawEvent& a, const RawEvent& b) { return event_less(a.e, b.e); });

    // Per-pixel refractory period.
    EventStream stream;
    stream.camera_id = cam.id;
    stream.sensor = {K.width, K.height};
    std::vector<int> labels;
    std::unordered_map<std::uint32_t, std::uint64_t> last;
    std::size_t marker_events = 0, noise_events = 0;
    for (const RawEvent& r : raw) {
      const std::uint32_t key = (static_cast<std::uint32_t>(r.e.y) << 16) | r.e.x;
      const auto it = last.find(key);
      if (it != last.end() && static_cast<double>(r.e.t - it->second) < config.refractory_us) continue;
      last[key] = r.e.t;
      stream.events.push_back(r.e);
      labels.push_back(r.label);
      (r.label >= 0 ? marker_events : noise_events) += 1;
    }
    out.streams.push_back(std::move(stream));
    gt.labels.push_back(std::move(labels));
    gt.tracks.push_back(std::move(track));
    gt.marker_events.push_back(marker_events);
    gt.noise_events.push_back(noise_events);
  }
  return out;
}

namespace {

CameraPose look_at(const Vec3& center, const Vec3& target, double roll_rad) {
  const Vec3 z = (target - center).normalized();
  const Vec3 down(0.0, 1.0, 0.0);
  const Vec3 x = down.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R.row(0) = x.transpose();
  R.row(1) = y.transpose();
  R.row(2) = z.transpose();
  R = Eigen::AngleAxisd(roll_rad, Vec3::UnitZ()).toRotationMatrix() * R;
  CameraPose p;
  p.rotation = R;
  p.translation = -R * center;
  return p;
}

}  // namespace

ScenarioConfig preset_paper_rig() {
  ScenarioConfig s;
  CameraIntrinsics K;
  K.width = 1280;
  K.height = 720;
  K.fx = K.fy = 1800.0;
  K.cx = 639.5;
  K.cy = 359.5;

  // Camera 2 in the middle; 1 and 3 on a shallow arc at 4.64 m and 4.54 m,
  // at slightly different heights so the optical axes are skew.
  const Vec3 c2(0.0, 0.0, 0.0);
  const Vec3 c1 = c2 + 4640.0 * Vec3(-1.0, 0.06, 0.16).normalized();
  const Vec3 c3 = c2 + 4540.0 * Vec3(1.0, -0.05, 0.14).normalized();
  const Vec3 centre(0.0, 0.0, 6500.0);
  s.cameras = {
      {1, K, look_at(c1, centre + Vec3(-180.0, 120.0, 0.0), 0.03)},
      {2, K, look_at(c2, centre + Vec3(0.0, -90.0, 150.0), -0.02)},
      {3, K, look_at(c3, centre + Vec3(170.0, 60.0, -120.0), 0.025)},
  };

  MarkerConfig m;
  m.radius_mm = 25.0;
  m.log_step = 2.0;
  m.profile = IntensityProfile::Cosine;
  m.trajectory.kind = Trajectory::Kind::WaypointSpline;
  // Sweep spans roughly 4.2 m to 8.8 m in depth; a shallow sweep leaves focal
  // length and depth nearly interchangeable.
  m.trajectory.waypoints = {
      centre + Vec3(-1260, -525, -2100), centre + Vec3(1080, -600, -700), centre + Vec3(1350, 450, 1750),
      centre + Vec3(-1170, 630, 2275), centre + Vec3(-360, -675, 350), centre + Vec3(1260, 0, -1925),
      centre + Vec3(180, 630, -1050), centre + Vec3(-1350, 75, 1050), centre + Vec3(540, -450, 2450),
      centre + Vec3(1170, 600, -350), centre + Vec3(-900, -300, -2275),
  };
  m.trajectory.span_s = 6.0;
  s.markers = {m};
  s.blink_freq_hz = 250.0;
  s.duty_cycle = 0.4;
  s.contrast_threshold = 0.2;
  s.noise_rate = 0.0;
  s.latency_jitter_std_us = 20.0;
  s.refractory_us = 50.0;
  s.duration_s = 6.0;
  s.seed = 20240611;
  return s;
}

void write_ground_truth_tracks(const std::filesystem::path& path, const GroundTruth& truth,
                               const std::vector<SimCamera>& cameras) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "camera_id,t_us,marker,on,visible,x,y\n";
  out.precision(17);
  for (std::size_t c = 0; c < truth.tracks.size() && c < cameras.size(); ++c) {
    for (const auto& s : truth.tracks[c]) {
      out << cameras[c].id << ',' << s.t_us << ',' << s.marker << ',' << (s.on ? 1 : 0) << ',' << (s.visible ? 1 : 0)
          << ',' << s.pixel.x() << ',' << s.pixel.y() << '\n';
    }
  }
}

void write_ground_truth_trajectory(const std::filesystem::path& path, const GroundTruth& truth) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "t_us,marker,X,Y,Z\n";
  out.precision(17);
  for (std::size_t k = 0; k < truth.positions.size(); ++k) {
    for (std::size_t s = 0; s < truth.positions[k].size(); ++s) {
      const Vec3& p = truth.positions[k][s];
      out << truth.transition_times_us[s] << ',' << k << ',' << p.x() << ',' << p.y() << ',' << p.z() << '\n';
    }
  }
}

}  // namespace evdeform
