#pragma once

#include <Eigen/Geometry>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "evdeform/geometry.hpp"
#include "evdeform/marker_extraction.hpp"
#include "evdeform/simulator.hpp"

namespace testing {

using evdeform::CameraIntrinsics;
using evdeform::CameraPose;
using evdeform::Mat3;
using evdeform::Vec2;
using evdeform::Vec3;

inline CameraIntrinsics hd_camera(double f = 1800.0) {
  CameraIntrinsics k;
  k.fx = k.fy = f;
  k.cx = 639.5;
  k.cy = 359.5;
  k.width = 1280;
  k.height = 720;
  return k;
}

/// Rotation built with Eigen's own axis-angle type, independent of the
/// library's Rodrigues code.
inline Mat3 eigen_rotation(const Vec3& axis_angle) {
  const double a = axis_angle.norm();
  if (a == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(a, axis_angle / a).toRotationMatrix();
}

/// Camera at `centre` looking at `target`, image y pointing down.
inline CameraPose look_at(const Vec3& centre, const Vec3& target) {
  const Vec3 z = (target - centre).normalized();
  const Vec3 x = Vec3(0, 1, 0).cross(z).normalized();
  const Vec3 y = z.cross(x);
  CameraPose p;
  p.rotation.row(0) = x.transpose();
  p.rotation.row(1) = y.transpose();
  p.rotation.row(2) = z.transpose();
  p.translation = -p.rotation * centre;
  return p;
}

/// Step-by-step homogeneous chain: K [R | t] X, then divide.
inline Vec2 oracle_project(const CameraIntrinsics& k, const CameraPose& pose, const Vec3& X) {
  Eigen::Matrix<double, 3, 4> Rt;
  Rt.leftCols<3>() = pose.rotation;
  Rt.col(3) = pose.translation;
  Mat3 K = Mat3::Zero();
  K(0, 0) = k.fx;
  K(1, 1) = k.fy;
  K(0, 2) = k.cx;
  K(1, 2) = k.cy;
  K(2, 2) = 1.0;
  const Vec3 h = K * (Rt * X.homogeneous());
  return h.hnormalized();
}

/// Three cameras on a shallow arc looking at a volume 6 m away (millimetres).
struct ArcRig {
  std::vector<int> ids{1, 2, 3};
  std::vector<CameraIntrinsics> intrinsics{hd_camera(), hd_camera(), hd_camera()};
  std::vector<CameraPose> poses;

  ArcRig() {
    const Vec3 target(0.0, 0.0, 6500.0);
    poses.push_back(look_at(Vec3(-4580.0, 275.0, 730.0), target + Vec3(-400.0, 0.0, 0.0)));
    poses.push_back(look_at(Vec3(0.0, 0.0, 0.0), target));
    poses.push_back(look_at(Vec3(4490.0, -225.0, 630.0), target + Vec3(400.0, 0.0, 0.0)));
  }

  bool sees_all(const Vec3& X) const {
    for (std::size_t c = 0; c < poses.size(); ++c) {
      if (poses[c].transform(X).z() <= 0.0) return false;
      const Vec2 p = oracle_project(intrinsics[c], poses[c], X);
      if (p.x() < 0 || p.y() < 0 || p.x() > 1279 || p.y() > 719) return false;
    }
    return true;
  }
};

inline Vec3 random_point(std::mt19937_64& rng, const Vec3& centre, const Vec3& half) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double a = u(rng), b = u(rng), c = u(rng);
  return centre + Vec3(a * half.x(), b * half.y(), c * half.z());
}

/// Points visible in every camera of the rig.
inline std::vector<Vec3> visible_points(const ArcRig& rig, std::size_t n, std::mt19937_64& rng) {
  std::vector<Vec3> pts;
  while (pts.size() < n) {
    const Vec3 X = random_point(rng, Vec3(0, 0, 6500), Vec3(1500, 700, 2000));
    if (rig.sees_all(X)) pts.push_back(X);
  }
  return pts;
}

/// One correspondence per point with optional Gaussian pixel noise.
inline std::vector<evdeform::CorrespondingPoint> correspondences(const ArcRig& rig, const std::vector<Vec3>& pts,
                                                                 double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<evdeform::CorrespondingPoint> out;
  double t = 0.0;
  for (const auto& X : pts) {
    evdeform::CorrespondingPoint cp;
    for (std::size_t c = 0; c < rig.poses.size(); ++c) {
      evdeform::CenterObservation o;
      o.camera_id = rig.ids[c];
      const double nx = g(rng), ny = g(rng);
      o.pixel = oracle_project(rig.intrinsics[c], rig.poses[c], X) + sigma * Vec2(nx, ny);
      o.t_c = t;
      cp.views.push_back(o);
    }
    cp.mean_t = t;
    t += 2000.0;
    out.push_back(cp);
  }
  return out;
}

/// Fresh empty directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("evdeform_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
