#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evdeform/camera_rig.hpp"
#include "evdeform/event_stream.hpp"
#include "evdeform/geometry.hpp"

namespace evdeform {

/// Marker path in millimetres as a function of time in seconds.
struct Trajectory {
  enum class Kind { Static, Linear, Sinusoid3d, WaypointSpline };
  Kind kind = Kind::Static;
  Vec3 origin = Vec3::Zero();     // static position, linear start, sinusoid rest position
  Vec3 velocity = Vec3::Zero();   // linear, mm/s
  Vec3 amplitude = Vec3::Zero();  // sinusoid, mm per axis
  Vec3 frequency_hz = Vec3::Zero();
  Vec3 phase_rad = Vec3::Zero();
  double onset_s = 0.0;           // sinusoid holds its t = onset pose before this time
  std::vector<Vec3> waypoints;    // spline, visited at equal time steps over span_s
  double span_s = 1.0;

  Vec3 position(double t) const;
};

std::string trajectory_kind_name(Trajectory::Kind kind);
Trajectory::Kind parse_trajectory_kind(const std::string& name);

enum class IntensityProfile { Cosine, Flat };

struct MarkerConfig {
  Trajectory trajectory;
  double radius_mm = 25.0;
  /// Log-intensity step at the disk centre for each blink edge.
  double log_step = 2.0;
  IntensityProfile profile = IntensityProfile::Cosine;
};

struct SimCamera {
  int id = 0;
  CameraIntrinsics intrinsics;
  CameraPose pose;
};

/// Sensor rectangle [x0, x1) x [y0, y1) with extra background activity.
struct GlareRegion {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double noise_rate = 0.0;  // events per pixel per second
};

struct ScenarioConfig {
  std::vector<SimCamera> cameras;
  std::vector<MarkerConfig> markers;
  double blink_freq_hz = 250.0;
  double duty_cycle = 0.4;
  double contrast_threshold = 0.2;
  double noise_rate = 0.0;  // background events per pixel per second
  double latency_jitter_std_us = 0.0;
  double refractory_us = 50.0;
  double duration_s = 1.0;
  std::uint64_t seed = 1;
  std::vector<GlareRegion> glare;

  /// Throws ConfigError.
  void validate() const;
  CameraRig rig(int reference_camera) const;
};

/// Transition times of the blink schedule in [0, duration), microseconds,
/// with true for ON edges.
std::vector<std::pair<double, bool>> blink_transitions(const ScenarioConfig& config);

struct TrackSample {
  double t_us = 0.0;
  int marker = 0;
  bool on = true;
  bool visible = false;  // centre projects inside the sensor in front of the camera
  Vec2 pixel = Vec2::Zero();
};

struct GroundTruth {
  std::vector<double> transition_times_us;
  std::vector<std::vector<Vec3>> positions;   // [marker][transition]
  std::vector<std::vector<TrackSample>> tracks;  // [camera][sample], marker-major then time
  std::vector<std::vector<int>> labels;        // [camera][event]: marker index or -1 for noise
  std::vector<std::size_t> marker_events;      // per camera
  std::vector<std::size_t> noise_events;       // per camera
  std::vector<std::string> warnings;
};

struct SimulationOutput {
  std::vector<EventStream> streams;
  GroundTruth truth;
};

SimulationOutput simulate(const ScenarioConfig& config);

/// Three 1280x720 cameras (f = 1800 px, centred principal point, no
/// distortion) on a shallow arc with baselines 4640 mm and 4540 mm, all
/// aimed at a common volume about 6 m away. Blink 250 Hz at 40% duty; the
/// marker sweeps a spline through the shared field of view.
ScenarioConfig preset_paper_rig();

/// Scenario files are JSON; see README for the layout.
ScenarioConfig scenario_from_json(const std::string& text);
std::string scenario_to_json(const ScenarioConfig& config);

/// CSV: camera_id,t_us,marker,on,visible,x,y
void write_ground_truth_tracks(const std::filesystem::path& path, const GroundTruth& truth,
                               const std::vector<SimCamera>& cameras);
/// CSV: t_us,marker,X,Y,Z
void write_ground_truth_trajectory(const std::filesystem::path& path, const GroundTruth& truth);

}  // namespace evdeform
