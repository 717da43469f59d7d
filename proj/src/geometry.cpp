#include "evdeform/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "evdeform/error.hpp"

namespace evdeform {

Mat3 CameraIntrinsics::K() const {
  Mat3 K;
  K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return K;
}

CameraIntrinsics CameraIntrinsics::without_distortion() const {
  CameraIntrinsics out = *this;
  out.k1 = out.k2 = out.p1 = out.p2 = 0.0;
  return out;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::ConfigError, "focal lengths must be positive");
  }
  if (width > 0 && height > 0) {
    if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
      throw Error(ErrorCode::ConfigError, "principal point outside the sensor");
    }
  }
}

CameraIntrinsics CameraIntrinsics::from_K(const Mat3& K, int width, int height) {
  CameraIntrinsics out;
  out.fx = K(0, 0);
  out.fy = K(1, 1);
  out.cx = K(0, 2);
  out.cy = K(1, 2);
  out.width = width;
  out.height = height;
  return out;
}

CameraPose CameraPose::inverse() const {
  CameraPose out;
  out.rotation = rotation.transpose();
  out.translation = -out.rotation * translation;
  return out;
}

CameraPose CameraPose::relative_to(const CameraPose& other) const {
  CameraPose out;
  out.rotation = rotation * other.rotation.transpose();
  out.translation = translation - out.rotation * other.translation;
  return out;
}

Mat34 CameraPose::matrix() const {
  Mat34 P;
  P.leftCols<3>() = rotation;
  P.col(3) = translation;
  return P;
}

bool CameraPose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return S;
}

Mat3 rotation_from_axis_angle(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

Vec3 axis_angle_from_rotation(const Mat3& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.axis() * aa.angle();
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  // acos loses precision near zero; use the antisymmetric part for small angles.
  const Mat3 D = a.transpose() * b;
  const Vec3 w(D(2, 1) - D(1, 2), D(0, 2) - D(2, 0), D(1, 0) - D(0, 1));
  return std::atan2(0.5 * w.norm(), c);
}

Mat34 projection_matrix(const CameraIntrinsics& intrinsics, const CameraPose& pose) {
  return intrinsics.K() * pose.matrix();
}

Vec2 distort_normalized(const CameraIntrinsics& c, const Vec2& xy, Mat2* jacobian) {
  const double x = xy.x();
  const double y = xy.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + c.k1 * r2 + c.k2 * r2 * r2;
  const Vec2 out(x * radial + 2.0 * c.p1 * x * y + c.p2 * (r2 + 2.0 * x * x),
                 y * radial + c.p1 * (r2 + 2.0 * y * y) + 2.0 * c.p2 * x * y);
  if (jacobian != nullptr) {
    const double dradial = c.k1 + 2.0 * c.k2 * r2;  // d(radial)/d(r2)
    (*jacobian)(0, 0) = radial + 2.0 * x * x * dradial + 2.0 * c.p1 * y + 6.0 * c.p2 * x;
    (*jacobian)(0, 1) = 2.0 * x * y * dradial + 2.0 * c.p1 * x + 2.0 * c.p2 * y;
    (*jacobian)(1, 0) = 2.0 * x * y * dradial + 2.0 * c.p1 * x + 2.0 * c.p2 * y;
    (*jacobian)(1, 1) = radial + 2.0 * y * y * dradial + 6.0 * c.p1 * y + 2.0 * c.p2 * x;
  }
  return out;
}

Vec2 distort(const CameraIntrinsics& c, const Vec2& ideal_pixel) {
  const Vec2 xy((ideal_pixel.x() - c.cx) / c.fx, (ideal_pixel.y() - c.cy) / c.fy);
  const Vec2 d = distort_normalized(c, xy);
  return {c.fx * d.x() + c.cx, c.fy * d.y() + c.cy};
}

Vec2 undistort(const CameraIntrinsics& c, const Vec2& pixel) {
  if (!c.has_distortion()) return pixel;
  constexpr int kMaxIterations = 20;
  const Vec2 target((pixel.x() - c.cx) / c.fx, (pixel.y() - c.cy) / c.fy);
  const auto residual_px = [&](const Vec2& r) { return std::hypot(c.fx * r.x(), c.fy * r.y()); };

  Vec2 xy = target;
  Mat2 J;
  Vec2 r = distort_normalized(c, xy, &J) - target;
  double err = residual_px(r);
  for (int it = 0; it < kMaxIterations && err > 1e-12; ++it) {
    const Vec2 step = J.partialPivLu().solve(r);
    if (!step.allFinite()) break;
    double lambda = 1.0;
    bool improved = false;
    for (int halving = 0; halving < 12; ++halving) {
      const Vec2 candidate = xy - lambda * step;
      Mat2 Jc;
      const Vec2 rc = distort_normalized(c, candidate, &Jc) - target;
      const double ec = residual_px(rc);
      if (ec < err) {
        xy = candidate;
        r = rc;
        J = Jc;
        err = ec;
        improved = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!improved) break;
  }
  if (!(err <= 1e-6)) {
    throw Error(ErrorCode::NoConvergence, "undistortion residual " + std::to_string(err) + " px");
  }
  return {c.fx * xy.x() + c.cx, c.fy * xy.y() + c.cy};
}

Vec2 project(const CameraIntrinsics& intrinsics, const CameraPose& pose, const Vec3& point) {
  const Vec3 Xc = pose.transform(point);
  if (!(Xc.z() > 0.0)) {
    throw Error(ErrorCode::PointBehindCamera, "depth " + std::to_string(Xc.z()));
  }
  const Vec2 d = distort_normalized(intrinsics, Xc.head<2>() / Xc.z());
  return {intrinsics.fx * d.x() + intrinsics.cx, intrinsics.fy * d.y() + intrinsics.cy};
}

Vec2 project_ideal(const CameraIntrinsics& intrinsics, const CameraPose& pose, const Vec3& point) {
  return project(intrinsics.without_distortion(), pose, point);
}

FundamentalPair make_fundamental_pair(const Mat3& F) {
  const double norm = F.norm();
  if (!(norm > 0.0) || !F.allFinite()) {
    throw Error(ErrorCode::NoModel, "fundamental matrix is zero or non-finite");
  }
  FundamentalPair out;
  out.fundamental = F / norm;
  Eigen::JacobiSVD<Mat3> svd(out.fundamental, Eigen::ComputeFullU | Eigen::ComputeFullV);
  out.epipole_left = svd.matrixV().col(2);
  out.epipole_right = svd.matrixU().col(2);
  return out;
}

FundamentalPair fundamental_from_calibrated(const CameraIntrinsics& K1, const CameraIntrinsics& K2,
                                            const CameraPose& relative) {
  if (relative.translation.norm() < 1e-12) {
    throw Error(ErrorCode::DegenerateBaseline, "pure rotation has no fundamental matrix");
  }
  const Mat3 F = K2.K().inverse().transpose() * skew(relative.translation) * relative.rotation * K1.K().inverse();
  return make_fundamental_pair(F);
}

double epipolar_line_distance(const Mat3& F, const Vec2& u1, const Vec2& u2) {
  const Vec3 line = F * u1.homogeneous();
  const double denom = std::hypot(line.x(), line.y());
  if (denom == 0.0) return std::numeric_limits<double>::infinity();
  return std::abs(u2.homogeneous().dot(line)) / denom;
}

Mat3 hartley_normalization(std::span<const Vec2> points) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  double mean_dist = 0.0;
  for (const auto& p : points) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(points.size());
  const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Mat3 T;
  T << s, 0.0, -s * centroid.x(), 0.0, s, -s * centroid.y(), 0.0, 0.0, 1.0;
  return T;
}

std::vector<double> real_polynomial_roots(const std::vector<double>& coeffs_high_to_low) {
  // Strip negligible leading coefficients.
  std::vector<double> c = coeffs_high_to_low;
  const double scale = std::accumulate(c.begin(), c.end(), 0.0,
                                       [](double acc, double v) { return std::max(acc, std::abs(v)); });
  while (c.size() > 1 && std::abs(c.front()) <= 1e-12 * scale) c.erase(c.begin());
  const int degree = static_cast<int>(c.size()) - 1;
  std::vector<double> roots;
  if (degree < 1) return roots;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 0; i < degree; ++i) companion(0, i) = -c[i + 1] / c[0];
  for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(companion, false);
  for (int i = 0; i < degree; ++i) {
    const auto ev = es.eigenvalues()(i);
    if (std::abs(ev.imag()) <= 1e-10 * std::max(1.0, std::abs(ev.real()))) roots.push_back(ev.real());
  }
  return roots;
}

Vec3 triangulate_linear(std::span<const Mat34> cameras, std::span<const Vec2> pixels) {
  if (cameras.size() < 2 || cameras.size() != pixels.size()) {
    throw Error(ErrorCode::InsufficientPoints, "triangulation needs two or more views");
  }
  // With the third row's rotation part at unit norm, P.row(2) * X is the depth
  // and each algebraic residual is depth times the pixel error. Reweighting by
  // 1/depth from the previous solve turns that into pixel error.
  std::vector<Mat34> P(cameras.begin(), cameras.end());
  for (auto& p : P) {
    const double n = p.row(2).head<3>().norm();
    if (n > 0.0) p /= n;
  }
  std::vector<double> weight(P.size(), 1.0);
  Vec4 X = Vec4::Zero();
  for (int pass = 0; pass < 3; ++pass) {
    Eigen::MatrixXd A(2 * P.size(), 4);
    for (std::size_t k = 0; k < P.size(); ++k) {
      A.row(2 * k) = weight[k] * (pixels[k].x() * P[k].row(2) - P[k].row(0));
      A.row(2 * k + 1) = weight[k] * (pixels[k].y() * P[k].row(2) - P[k].row(1));
    }
    // Equilibrate columns so the homogeneous coordinate is not swamped when
    // the scene is far from the origin in the current units.
    Vec4 D;
    for (int j = 0; j < 4; ++j) {
      const double n = A.col(j).norm();
      D(j) = n > 0.0 ? 1.0 / n : 1.0;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A * D.asDiagonal(), Eigen::ComputeFullV);
    X = D.asDiagonal() * svd.matrixV().col(3);
    if (!(std::abs(X(3)) > 1e-300 * X.head<3>().norm())) break;
    std::vector<double> next(P.size());
    for (std::size_t k = 0; k < P.size(); ++k) next[k] = 1.0 / std::abs(P[k].row(2).dot(X) / X(3));
    if (!std::all_of(next.begin(), next.end(), [](double w) { return std::isfinite(w); })) break;
    weight = next;
  }
  if (!(std::abs(X(3)) > 1e-300 * X.head<3>().norm())) {
    throw Error(ErrorCode::RankDeficient, "triangulated point at infinity");
  }
  return X.head<3>() / X(3);
}

namespace {

Eigen::Matrix<double, 1, 9> epipolar_row(const Vec2& a, const Vec2& b) {
  // b^T F a = 0 with F stored row-major.
  Eigen::Matrix<double, 1, 9> row;
  row << b.x() * a.x(), b.x() * a.y(), b.x(), b.y() * a.x(), b.y() * a.y(), b.y(), a.x(), a.y(), 1.0;
  return row;
}

Mat3 reshape_row_major(const Eigen::Matrix<double, 9, 1>& f) {
  Mat3 F;
  F << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);
  return F;
}

struct Score {
  std::size_t count = 0;
  double residual = 0.0;
};

Score score_model(const Mat3& F, std::span<const Vec2> p1, std::span<const Vec2> p2, double threshold,
                  std::vector<bool>* mask) {
  Score s;
  if (mask != nullptr) mask->assign(p1.size(), false);
  for (std::size_t i = 0; i < p1.size(); ++i) {
    const double d = epipolar_line_distance(F, p1[i], p2[i]);
    if (d <= threshold) {
      ++s.count;
      s.residual += d;
      if (mask != nullptr) (*mask)[i] = true;
    }
  }
  return s;
}

bool better(const Score& a, const Score& b) {
  return a.count > b.count || (a.count == b.count && a.residual < b.residual);
}

}  // namespace

std::vector<Mat3> fundamental_seven_point(std::span<const Vec2> points1, std::span<const Vec2> points2) {
  if (points1.size() != 7 || points2.size() != 7) {
    throw Error(ErrorCode::InsufficientPoints, "seven-point solver needs exactly 7 correspondences");
  }
  // Zero-padded to square; the null space is unchanged.
  Eigen::Matrix<double, 9, 9> A = Eigen::Matrix<double, 9, 9>::Zero();
  for (int i = 0; i < 7; ++i) A.row(i) = epipolar_row(points1[i], points2[i]);
  Eigen::JacobiSVD<Eigen::Matrix<double, 9, 9>> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(6) > 1e-10 * sv(0))) return {};  // null space larger than two: degenerate sample

  const Mat3 F1 = reshape_row_major(svd.matrixV().col(7));
  const Mat3 F2 = reshape_row_major(svd.matrixV().col(8));
  // det(a F1 + (1 - a) F2) is cubic in a; recover coefficients from four samples.
  const std::array<double, 4> xs{0.0, 1.0, -1.0, 2.0};
  Eigen::Matrix4d V;
  Eigen::Vector4d d;
  for (int i = 0; i < 4; ++i) {
    const double a = xs[static_cast<std::size_t>(i)];
    V.row(i) << a * a * a, a * a, a, 1.0;
    d(i) = (a * F1 + (1.0 - a) * F2).determinant();
  }
  const Eigen::Vector4d coeffs = V.fullPivLu().solve(d);
  std::vector<Mat3> out;
  for (double a : real_polynomial_roots({coeffs(0), coeffs(1), coeffs(2), coeffs(3)})) {
    Mat3 F = a * F1 + (1.0 - a) * F2;
    const double n = F.norm();
    if (n > 0.0 && F.allFinite()) out.push_back(F / n);
  }
  return out;
}

Mat3 fundamental_eight_point(std::span<const Vec2> points1, std::span<const Vec2> points2) {
  if (points1.size() < 8 || points1.size() != points2.size()) {
    throw Error(ErrorCode::InsufficientPoints, "eight-point solver needs at least 8 correspondences");
  }
  const Mat3 T1 = hartley_normalization(points1);
  const Mat3 T2 = hartley_normalization(points2);
  Eigen::MatrixXd A(static_cast<Eigen::Index>(points1.size()), 9);
  for (std::size_t i = 0; i < points1.size(); ++i) {
    const Vec2 a = (T1 * points1[i].homogeneous()).hnormalized();
    const Vec2 b = (T2 * points2[i].homogeneous()).hnormalized();
    A.row(static_cast<Eigen::Index>(i)) = epipolar_row(a, b);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  Mat3 F = reshape_row_major(svd.matrixV().col(8));
  Eigen::JacobiSVD<Mat3> svdF(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = svdF.singularValues();
  s(2) = 0.0;
  F = svdF.matrixU() * s.asDiagonal() * svdF.matrixV().transpose();
  F = T2.transpose() * F * T1;
  return F / F.norm();
}

RansacResult estimate_fundamental_ransac(std::span<const Vec2> points1, std::span<const Vec2> points2,
                                         const RansacOptions& options) {
  if (points1.size() != points2.size()) {
    throw Error(ErrorCode::InsufficientPoints, "correspondence lists differ in length");
  }
  const std::size_t n = points1.size();
  if (n < 7) throw Error(ErrorCode::InsufficientPoints, "need at least 7 correspondences");

  const Mat3 T1 = hartley_normalization(points1);
  const Mat3 T2 = hartley_normalization(points2);
  std::vector<Vec2> n1(n), n2(n);
  for (std::size_t i = 0; i < n; ++i) {
    n1[i] = (T1 * points1[i].homogeneous()).hnormalized();
    n2[i] = (T2 * points2[i].homogeneous()).hnormalized();
  }

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> index(n);
  std::iota(index.begin(), index.end(), 0);

  bool have_model = false;
  Mat3 best_F = Mat3::Zero();
  Score best;
  int iterations = 0;
  double required = static_cast<double>(options.max_iterations);
  std::array<Vec2, 7> s1, s2;
  for (int it = 0; it < options.max_iterations && it < required; ++it) {
    ++iterations;
    for (std::size_t k = 0; k < 7; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, n - 1);
      std::swap(index[k], index[pick(rng)]);
      s1[k] = n1[index[k]];
      s2[k] = n2[index[k]];
    }
    for (const Mat3& Fn : fundamental_seven_point(s1, s2)) {
      Mat3 F = T2.transpose() * Fn * T1;
      F /= F.norm();
      const Score s = score_model(F, points1, points2, options.threshold, nullptr);
      if (!have_model || better(s, best)) {
        have_model = true;
        best = s;
        best_F = F;
        const double w = static_cast<double>(s.count) / static_cast<double>(n);
        if (w >= 1.0) {
          required = 0.0;
        } else if (w > 0.0) {
          const double denom = std::log(1.0 - std::pow(w, 7.0));
          if (denom < 0.0) required = std::log(1.0 - options.confidence) / denom;
        }
      }
    }
  }
  if (!have_model) throw Error(ErrorCode::NoModel, "every seven-point sample was degenerate");

  // Least-squares polish on the consensus set.
  std::vector<bool> mask;
  score_model(best_F, points1, points2, options.threshold, &mask);
  for (int round = 0; round < 3 && best.count >= 8; ++round) {
    std::vector<Vec2> in1, in2;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i]) {
        in1.push_back(points1[i]);
        in2.push_back(points2[i]);
      }
    }
    const Mat3 F = fundamental_eight_point(in1, in2);
    std::vector<bool> new_mask;
    const Score s = score_model(F, points1, points2, options.threshold, &new_mask);
    if (!better(s, best)) break;
    best = s;
    best_F = F;
    mask = std::move(new_mask);
  }

  RansacResult result;
  result.model = make_fundamental_pair(best_F);
  result.inliers = std::move(mask);
  result.inlier_count = best.count;
  result.inlier_residual = best.residual;
  result.iterations = iterations;
  return result;
}

}  // namespace evdeform
