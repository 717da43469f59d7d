#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evdeform/camera_rig.hpp"
#include "evdeform/error.hpp"
#include "evdeform/event_stream.hpp"
#include "evdeform/geometry.hpp"
#include "evdeform/marker_extraction.hpp"

namespace evdeform {

// ---------------------------------------------------------------------------
// Measurement matrix and projective factorization

/// m cameras by n points. Row block j holds camera camera_ids[j].
struct MeasurementMatrix {
  std::vector<int> camera_ids;
  Eigen::MatrixXd pixels;  // 3m x n, homogeneous [u, v, 1]; zero where not visible
  Eigen::MatrixXd scales;  // m x n projective depths
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> visibility;  // m x n

  std::size_t camera_count() const { return camera_ids.size(); }
  std::size_t point_count() const { return static_cast<std::size_t>(pixels.cols()); }
  Vec2 pixel(std::size_t cam, std::size_t point) const;
  /// Columns seen by every camera.
  std::vector<std::size_t> full_visibility_columns() const;
  /// Stacked W_s restricted to the given columns.
  Eigen::MatrixXd scaled(std::span<const std::size_t> columns) const;
};

/// Throws InsufficientCorrespondences unless at least 8 points are seen by
/// all cameras. Pixels are taken as given (callers undistort beforehand).
MeasurementMatrix build_measurement_matrix(std::span<const CorrespondingPoint> points, std::span<const int> camera_ids);

struct FactorizationOptions {
  double tolerance = 1e-10;
  int max_iterations = 200;
};

struct ProjectiveReconstruction {
  std::vector<Mat34> cameras;      // pixel-space projective cameras, one per row block
  Eigen::Matrix4Xd points;         // homogeneous, one column per factorized point
  std::vector<std::size_t> columns;  // measurement-matrix column of each point
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;  // sqrt(sum of sigma_k^2, k > 4) / ||W_s|| at the last SVD
  std::vector<double> residual_trace;
  int center_camera = 0;  // row block used to seed the depths
};

/// Iterative rank-4 factorization over the fully visible columns. When every
/// scale equals 1 the depths are first seeded from pairwise fundamental
/// matrices against the best-connected camera.
ProjectiveReconstruction projective_factorize(const MeasurementMatrix& W, const FactorizationOptions& options = {});

// ---------------------------------------------------------------------------
// Focal length from the Kruppa equations

/// Single shared focal length for a camera pair with a known principal point.
/// `nominal_focal` only conditions the system. Throws DegenerateMotion or
/// NegativeFocalSquared.
double solve_kruppa_focal(const FundamentalPair& F, const Vec2& principal, double nominal_focal = 1000.0);

// ---------------------------------------------------------------------------
// Euclidean upgrade

struct EuclideanUpgrade {
  Mat4 H = Mat4::Identity();
  Mat4 G = Mat4::Zero();
  Eigen::Matrix<double, 4, 3> H11 = Eigen::Matrix<double, 4, 3>::Zero();
  Vec4 h12 = Vec4::Zero();
  std::vector<double> camera_scales;  // lambda_j
  double clamped_fraction = 0.0;      // Frobenius share of G removed by the rank-3 projection
  bool flipped = false;               // H11 negated to satisfy chirality
};

struct UpgradeResult {
  std::vector<CameraIntrinsics> intrinsics;  // from the RQ split of each upgraded camera
  std::vector<CameraPose> poses;
  std::vector<Vec3> points;
  EuclideanUpgrade upgrade;
  bool degenerate_trajectory = false;
};

/// `reference` selects the camera used for the chirality vote, `origin_point`
/// the reconstruction column mapped to the world origin. Throws IndefiniteG
/// or CheiralityFailure.
UpgradeResult euclidean_upgrade(const ProjectiveReconstruction& proj, std::span<const CameraIntrinsics> intrinsics_guess,
                                std::size_t reference = 0, std::size_t origin_point = 0);

// ---------------------------------------------------------------------------
// Bundle adjustment

/// Per-camera parameter layout; rotation is a left-multiplied axis-angle
/// increment on the current estimate.
enum CameraParam : int { RotX, RotY, RotZ, TransX, TransY, TransZ, Fx, Fy, Cx, Cy, K1, K2, P1, P2 };
constexpr int kCameraParams = 14;
using CameraParamMask = std::array<bool, kCameraParams>;  // true = free

CameraParamMask all_free();
CameraParamMask all_frozen();

struct BundleObservation {
  std::size_t camera = 0;  // index into the camera arrays
  std::size_t point = 0;
  Vec2 pixel = Vec2::Zero();  // raw (distorted) pixel
};

struct BundleAdjustmentOptions {
  int max_iterations = 200;
  double initial_lambda = 1e-4;
  double lambda_ceiling = 1e16;
  double gradient_tolerance = 1e-10;
  double relative_cost_tolerance = 1e-15;
  /// When fx is free, fy follows it at the input ratio fy/fx and its own
  /// mask bit is ignored.
  bool fixed_aspect = false;
};

struct BundleAdjustmentResult {
  std::vector<CameraIntrinsics> intrinsics;
  std::vector<CameraPose> poses;
  std::vector<Vec3> points;
  double initial_cost = 0.0;  // 0.5 * sum of squared residuals
  double final_cost = 0.0;
  std::vector<double> cost_trace;  // initial cost, then every accepted step
  int iterations = 0;
  int accepted_steps = 0;
  bool converged = false;
};

/// Pixel projection with derivatives w.r.t. the 14 camera parameters and the
/// point. Throws PointBehindCamera.
Vec2 project_with_jacobian(const CameraIntrinsics& intrinsics, const CameraPose& pose, const Vec3& point,
                           Eigen::Matrix<double, 2, kCameraParams>* d_camera, Eigen::Matrix<double, 2, 3>* d_point);

/// Damped Gauss-Newton with a Schur complement on the point blocks. Frozen
/// parameters stay at their input values. Throws DivergedBA when the damping
/// reaches its ceiling before any step is accepted.
BundleAdjustmentResult bundle_adjust(std::span<const CameraIntrinsics> intrinsics, std::span<const CameraPose> poses,
                                     std::span<const Vec3> points, std::span<const BundleObservation> observations,
                                     std::span<const CameraParamMask> camera_mask, bool points_free = true,
                                     const BundleAdjustmentOptions& options = {});

// ---------------------------------------------------------------------------
// Outliers and distortion

enum class RejectionTest { Epipolar, Reprojection };

struct Rejection {
  std::size_t index = 0;  // position in the input sequence
  RejectionTest test = RejectionTest::Epipolar;
  int camera_a = 0;
  int camera_b = 0;  // equals camera_a for reprojection failures
  double value = 0.0;
};

struct OutlierReport {
  std::vector<std::size_t> kept;
  std::vector<Rejection> removed;
};

/// Removes a correspondence when any camera pair's epipolar distance (on
/// undistorted pixels, one-sided in the second image) exceeds d_h or when
/// any reprojection of `points[i]` exceeds xi_th. Pass an empty `points` to
/// skip the reprojection test. Throws AllRejected.
OutlierReport reject_outliers(std::span<const CorrespondingPoint> correspondences, const CameraRig& rig,
                              std::span<const Vec3> points, double d_h, double xi_th);

struct DistortionFit {
  double k1 = 0.0, k2 = 0.0, p1 = 0.0, p2 = 0.0;
  bool skipped_uneven_coverage = false;
  std::size_t used = 0;
};

/// Linear fit of k1, k2, p1, p2 with the pinhole part frozen. Skips (all
/// zero, flag set) with fewer than 20 points, when the observations' bounding
/// box covers less than 30% of the sensor, or when they all fall in one half.
DistortionFit estimate_distortion(std::span<const Vec3> points, std::span<const Vec2> observed,
                                  const CameraIntrinsics& intrinsics, const CameraPose& pose);

// ---------------------------------------------------------------------------
// Full loop

struct CameraStats {
  int camera_id = 0;
  double mean_px = 0.0;
  double std_px = 0.0;
  std::size_t count = 0;
};

struct IterationLogEntry {
  int pass = 0;
  std::size_t inliers = 0;
  std::size_t removed = 0;
  double factorization_residual = 0.0;
  int factorization_iterations = 0;
  double ba_initial_cost = 0.0;
  double ba_final_cost = 0.0;
  int ba_iterations = 0;
  std::vector<CameraStats> stats;
  std::string action;
};

struct CalibrationConfig {
  int reference_camera = -1;  // -1: lowest camera id
  std::map<int, SensorSize> sensors;  // missing cameras default to 1280x720
  double initial_focal = 1600.0;       // used when the Kruppa solve fails
  bool free_principal_point = false;
  /// One focal length per camera (fx = fy). With both free the horizontal
  /// focal lengths of strongly yawed cameras trade against rotation and
  /// baseline, and the metric scale of the rig drifts by about a percent at
  /// 0.1 px centroid noise.
  bool square_pixels = true;
  bool estimate_distortion = true;
  double epipolar_threshold_px = 2.0;      // d_h
  double reprojection_threshold_px = 1.0;  // xi_th
  double reproj_target_px = 0.3;
  int max_passes = 20;
  std::size_t min_correspondences = 20;
  std::size_t origin_point = 0;
  FactorizationOptions factorization;
  BundleAdjustmentOptions bundle;
  RansacOptions ransac{2.0, 2000, 0.9999, 42};
};

struct CalibrationResult {
  CameraRig rig;  // world frame = reference camera, unit distance to the next camera
  std::vector<CorrespondingPoint> inliers;
  std::vector<Vec3> points;  // one per inlier
  std::vector<CameraStats> stats;
  std::vector<IterationLogEntry> log;
  std::map<int, double> kruppa_focal;
  std::vector<std::string> warnings;
  bool converged = false;
  double epipolar_threshold_px = 0.0;
  double reprojection_threshold_px = 0.0;

  double worst_mean_px() const;
};

class CalibrationFailed : public Error {
 public:
  CalibrationFailed(const std::string& message, CalibrationResult best)
      : Error(ErrorCode::CalibrationFailed, message), best_(std::move(best)) {}
  const CalibrationResult& best() const noexcept { return best_; }

 private:
  CalibrationResult best_;
};

/// Per-camera mean and standard deviation of the reprojection error.
std::vector<CameraStats> reprojection_stats(const CameraRig& rig, std::span<const CorrespondingPoint> correspondences,
                                            std::span<const Vec3> points);

CalibrationResult calibrate(std::span<const CorrespondingPoint> points, const CalibrationConfig& config = {});

/// Structured per-pass log as JSON text.
std::string calibration_log_json(const CalibrationResult& result);

}  // namespace evdeform
