#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <span>
#include <vector>

namespace evdeform {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

/// Pinhole camera with two radial and two tangential distortion terms. Skew is
/// always zero.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;
  int width = 0;
  int height = 0;

  Mat3 K() const;
  bool has_distortion() const { return k1 != 0.0 || k2 != 0.0 || p1 != 0.0 || p2 != 0.0; }
  CameraIntrinsics without_distortion() const;

  /// Throws ConfigError when the focal lengths or principal point are invalid.
  void validate() const;

  static CameraIntrinsics from_K(const Mat3& K, int width, int height);
};

/// World-to-camera rigid transform: x_cam = rotation * x_world + translation.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 transform(const Vec3& world) const { return rotation * world + translation; }
  Vec3 center() const { return -rotation.transpose() * translation; }
  CameraPose inverse() const;
  /// Pose of `this` expressed relative to `other`, i.e. the map from
  /// other's camera frame to this camera's frame.
  CameraPose relative_to(const CameraPose& other) const;
  Mat34 matrix() const;
  bool is_valid(double tol = 1e-9) const;
};

/// Fundamental matrix (x2^T F x1 = 0) with both epipoles. Stored with unit
/// Frobenius norm.
struct FundamentalPair {
  Mat3 fundamental = Mat3::Zero();
  Vec3 epipole_left = Vec3::Zero();   // F * e = 0, lies in image 1
  Vec3 epipole_right = Vec3::Zero();  // e^T * F = 0, lies in image 2
};

Mat3 skew(const Vec3& v);
Mat3 rotation_from_axis_angle(const Vec3& omega);
Vec3 axis_angle_from_rotation(const Mat3& R);
double rotation_angle_between(const Mat3& a, const Mat3& b);

Mat34 projection_matrix(const CameraIntrinsics& intrinsics, const CameraPose& pose);

/// Applies the radial-tangential model to normalized image coordinates.
Vec2 distort_normalized(const CameraIntrinsics& intrinsics, const Vec2& xy, Mat2* jacobian = nullptr);

/// Ideal (undistorted) pixel -> observed pixel.
Vec2 distort(const CameraIntrinsics& intrinsics, const Vec2& ideal_pixel);

/// Observed pixel -> ideal pixel by damped Newton iteration (max 20 steps).
/// Throws NoConvergence if the round trip residual stays above 1e-6 px.
Vec2 undistort(const CameraIntrinsics& intrinsics, const Vec2& pixel);

/// Projects a world point to a distorted pixel. Throws PointBehindCamera.
Vec2 project(const CameraIntrinsics& intrinsics, const CameraPose& pose, const Vec3& point);

/// Projection without the distortion stage.
Vec2 project_ideal(const CameraIntrinsics& intrinsics, const CameraPose& pose, const Vec3& point);

/// Normalizes F to unit Frobenius norm and extracts the epipoles.
FundamentalPair make_fundamental_pair(const Mat3& F);

/// F = K2^-T [t]x R K1^-1 for the map x_cam2 = R x_cam1 + t.
FundamentalPair fundamental_from_calibrated(const CameraIntrinsics& K1, const CameraIntrinsics& K2,
                                            const CameraPose& relative);

/// Distance of u2 from the epipolar line F u1 in image 2, in pixels.
double epipolar_line_distance(const Mat3& F, const Vec2& u1, const Vec2& u2);

struct RansacOptions {
  double threshold = 1.0;
  int max_iterations = 2000;
  double confidence = 0.9999;
  std::uint64_t seed = 42;
};

struct RansacResult {
  FundamentalPair model;
  std::vector<bool> inliers;
  std::size_t inlier_count = 0;
  double inlier_residual = 0.0;
  int iterations = 0;
};

/// Seven-point solutions (1 or 3) for exactly seven correspondences.
std::vector<Mat3> fundamental_seven_point(std::span<const Vec2> points1, std::span<const Vec2> points2);

/// Normalized eight-point least squares with rank-2 enforcement.
Mat3 fundamental_eight_point(std::span<const Vec2> points1, std::span<const Vec2> points2);

/// RANSAC over seven-point samples. Scores by the point-to-epipolar-line
/// distance in image 2; ties broken by lower total inlier residual.
RansacResult estimate_fundamental_ransac(std::span<const Vec2> points1, std::span<const Vec2> points2,
                                         const RansacOptions& options = {});

/// Real roots of a polynomial given highest-degree coefficient first.
std::vector<double> real_polynomial_roots(const std::vector<double>& coeffs_high_to_low);

/// Homogeneous DLT intersection of two or more views (ideal pixels).
Vec3 triangulate_linear(std::span<const Mat34> cameras, std::span<const Vec2> pixels);

/// Isotropic normalization: centroid to origin, mean distance sqrt(2).
Mat3 hartley_normalization(std::span<const Vec2> points);

}  // namespace evdeform
