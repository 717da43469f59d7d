#include "evdeform/deformation.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "evdeform/error.hpp"
#include "evdeform/self_calibration.hpp"

namespace evdeform {

const CameraModel& RigCalibration::at(int id) const {
  for (const auto& c : cameras) {
    if (c.id == id) return c;
  }
  throw Error(ErrorCode::UnknownCamera, "camera " + std::to_string(id) + " not in rig");
}

CameraRig RigCalibration::as_rig() const { return {reference_camera, cameras}; }

RigCalibration rebase_extrinsics(const CameraRig& rig, int reference_camera) {
  const CameraModel& ref = rig.at(reference_camera);
  RigCalibration out;
  out.reference_camera = reference_camera;
  for (const auto& c : rig.cameras) {
    CameraModel r = c;
    if (c.id == reference_camera) {
      r.pose = CameraPose{};
    } else {
      r.pose.rotation = c.pose.rotation * ref.pose.rotation.transpose();
      r.pose.translation = c.pose.translation - r.pose.rotation * ref.pose.translation;
    }
    out.cameras.push_back(r);
  }
  return out;
}

Triangulation triangulate(const RigCalibration& rig, const CorrespondingPoint& observation) {
  std::vector<const CameraModel*> cams;
  std::vector<Vec2> ideal;
  std::vector<Mat34> P;
  for (const auto& v : observation.views) {
    const CameraModel& c = rig.at(v.camera_id);
    cams.push_back(&c);
    ideal.push_back(undistort(c.intrinsics, v.pixel));
    P.push_back(projection_matrix(c.intrinsics.without_distortion(), c.pose));
  }
  if (cams.size() < 2) throw Error(ErrorCode::RankDeficient, "triangulation needs two or more cameras");

  Vec3 X;
  try {
    X = triangulate_linear(P, ideal);
  } catch (const Error& e) {
    throw Error(ErrorCode::RankDeficient, e.what());
  }

  // One Gauss-Newton step on the reprojection error.
  const auto residuals = [&](const Vec3& p, Mat3* JtJ, Vec3* Jtr) {
    double sq = 0.0;
    for (std::size_t k = 0; k < cams.size(); ++k) {
      Eigen::Matrix<double, 2, 3> J;
      const Vec2 r = project_with_jacobian(cams[k]->intrinsics.without_distortion(), cams[k]->pose, p, nullptr, &J) -
                     ideal[k];
      sq += r.squaredNorm();
      if (JtJ != nullptr) *JtJ += J.transpose() * J;
      if (Jtr != nullptr) *Jtr += J.transpose() * r;
    }
    return sq;
  };
  Mat3 JtJ = Mat3::Zero();
  Vec3 Jtr = Vec3::Zero();
  try {
    residuals(X, &JtJ, &Jtr);
  } catch (const Error& e) {
    throw Error(ErrorCode::RankDeficient, std::string("intersection lies behind a camera: ") + e.what());
  }
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(JtJ, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(2);
  if (!(lo > 0.0) || hi / lo > 1e12) throw Error(ErrorCode::RankDeficient, "rays are nearly parallel");
  const Vec3 refined = X - JtJ.ldlt().solve(Jtr);
  double sq = 0.0;
  try {
    sq = residuals(refined, nullptr, nullptr);
    X = refined;
  } catch (const Error&) {
    sq = residuals(X, nullptr, nullptr);
  }

  Triangulation t;
  t.position = X * rig.scale();
  t.residual_px = std::sqrt(sq / static_cast<double>(cams.size()));
  t.camera_count = static_cast<int>(cams.size());
  return t;
}

DeformationSeries measure_deformation(const RigCalibration& rig, std::span<const CorrespondingPoint> matched,
                                      const DeformationOptions& options) {
  DeformationSeries s;
  s.reference_camera = rig.reference_camera;
  s.metric = rig.metric_scale.has_value();
  for (const auto& m : matched) {
    Triangulation t;
    try {
      t = triangulate(rig, m);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::RankDeficient && e.code() != ErrorCode::NoConvergence) throw;
      ++s.failed;
      continue;
    }
    if (!(t.residual_px <= options.max_residual_px)) {
      ++s.dropped_residual;
      continue;
    }
    if (!s.samples.empty() && !(m.mean_t > s.samples.back().t_us)) {
      ++s.failed;
      continue;
    }
    s.samples.push_back({m.mean_t, t.position, t.residual_px, t.camera_count});
  }
  if (s.samples.empty()) throw Error(ErrorCode::EmptySeries, "no sample could be triangulated");

  const std::size_t k = std::min(std::max<std::size_t>(1, options.baseline_samples), s.samples.size());
  for (std::size_t i = 0; i < k; ++i) s.baseline += s.samples[i].position;
  s.baseline /= static_cast<double>(k);

  for (int a = 0; a < 3; ++a) {
    s.axes[static_cast<std::size_t>(a)].min = std::numeric_limits<double>::infinity();
    s.axes[static_cast<std::size_t>(a)].max = -std::numeric_limits<double>::infinity();
  }
  std::array<double, 3> sq{};
  for (const auto& smp : s.samples) {
    const Vec3 d = smp.position - s.baseline;
    s.max_amplitude = std::max(s.max_amplitude, d.norm());
    for (int a = 0; a < 3; ++a) {
      auto& ax = s.axes[static_cast<std::size_t>(a)];
      ax.min = std::min(ax.min, d(a));
      ax.max = std::max(ax.max, d(a));
      sq[static_cast<std::size_t>(a)] += d(a) * d(a);
    }
  }
  for (std::size_t a = 0; a < 3; ++a) s.axes[a].rms = std::sqrt(sq[a] / static_cast<double>(s.samples.size()));
  return s;
}

std::vector<MarkerDistance> inter_marker_distances(const DeformationSeries& a, const DeformationSeries& b,
                                                   double t_th_us) {
  std::vector<MarkerDistance> out;
  std::size_t j = 0;
  for (const auto& sa : a.samples) {
    while (j < b.samples.size() && b.samples[j].t_us < sa.t_us - t_th_us) ++j;
    if (j == b.samples.size()) break;
    const auto& sb = b.samples[j];
    if (std::abs(sb.t_us - sa.t_us) > t_th_us) continue;
    out.push_back({0.5 * (sa.t_us + sb.t_us), (sa.position - sb.position).norm()});
    ++j;
  }
  return out;
}

RigCalibration anchor_scale(const RigCalibration& rig, double known_distance, const Vec3& a, const Vec3& b) {
  if (!(known_distance > 0.0)) throw Error(ErrorCode::ConfigError, "known distance must be positive");
  const double observed = (a - b).norm();
  if (!(observed > 0.0)) throw Error(ErrorCode::ZeroObservedDistance, "anchor points coincide");
  RigCalibration out = rig;
  out.metric_scale = rig.scale() * (known_distance / observed);
  return out;
}

RigCalibration anchor_on_baseline(const RigCalibration& rig, int camera_a, int camera_b, double known_distance) {
  const Vec3 ca = rig.at(camera_a).pose.center() * rig.scale();
  const Vec3 cb = rig.at(camera_b).pose.center() * rig.scale();
  return anchor_scale(rig, known_distance, ca, cb);
}

void write_series_csv(const std::filesystem::path& path, const DeformationSeries& series) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "t_us,X,Y,Z,residual_px,cameras\n";
  char buf[256];
  for (const auto& s : series.samples) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", s.t_us, s.position.x(), s.position.y(),
                  s.position.z(), s.residual_px, s.cameras);
    out << buf;
  }
}

}  // namespace evdeform
