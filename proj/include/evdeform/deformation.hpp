#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evdeform/camera_rig.hpp"
#include "evdeform/marker_extraction.hpp"

namespace evdeform {

/// Cameras expressed in the frame of the reference camera.
struct RigCalibration {
  int reference_camera = 0;
  std::vector<CameraModel> cameras;  // poses map reference-frame points into each camera
  std::optional<double> metric_scale;  // scene units per internal unit

  /// Throws UnknownCamera.
  const CameraModel& at(int id) const;
  double scale() const { return metric_scale.value_or(1.0); }
  CameraRig as_rig() const;
};

/// Throws UnknownCamera.
RigCalibration rebase_extrinsics(const CameraRig& rig, int reference_camera);

struct Triangulation {
  Vec3 position = Vec3::Zero();  // reference frame, scaled by metric_scale when present
  double residual_px = 0.0;      // RMS reprojection error over contributing cameras
  int camera_count = 0;
};

/// Multi-view DLT on undistorted pixels followed by one Gauss-Newton step.
/// Throws RankDeficient for fewer than two cameras or near-parallel rays.
Triangulation triangulate(const RigCalibration& rig, const CorrespondingPoint& observation);

struct DeformationSample {
  double t_us = 0.0;
  Vec3 position = Vec3::Zero();
  double residual_px = 0.0;
  int cameras = 0;
};

struct AxisSummary {
  double min = 0.0;
  double max = 0.0;
  double rms = 0.0;
};

struct DeformationOptions {
  double max_residual_px = 1.0;
  std::size_t baseline_samples = 50;
};

struct DeformationSeries {
  int reference_camera = 0;
  std::vector<DeformationSample> samples;
  std::size_t dropped_residual = 0;
  std::size_t failed = 0;  // rank-deficient or behind a camera
  Vec3 baseline = Vec3::Zero();
  double max_amplitude = 0.0;
  std::array<AxisSummary, 3> axes;  // displacement from baseline per axis
  bool metric = false;
};

/// Throws EmptySeries when no sample survives.
DeformationSeries measure_deformation(const RigCalibration& rig, std::span<const CorrespondingPoint> matched,
                                      const DeformationOptions& options = {});

struct MarkerDistance {
  double t_us = 0.0;
  double distance = 0.0;
};

/// Pairs samples of two series whose times differ by at most t_th_us (each
/// sample used once, chronological) and returns their separations.
std::vector<MarkerDistance> inter_marker_distances(const DeformationSeries& a, const DeformationSeries& b,
                                                   double t_th_us);

/// Throws ZeroObservedDistance. `a` and `b` are in the rig's current output
/// units.
RigCalibration anchor_scale(const RigCalibration& rig, double known_distance, const Vec3& a, const Vec3& b);

/// Anchors on the distance between two camera centres.
RigCalibration anchor_on_baseline(const RigCalibration& rig, int camera_a, int camera_b, double known_distance);

/// CSV: t_us,X,Y,Z,residual_px,cameras
void write_series_csv(const std::filesystem::path& path, const DeformationSeries& series);
std::string series_summary_json(const DeformationSeries& series);

}  // namespace evdeform
