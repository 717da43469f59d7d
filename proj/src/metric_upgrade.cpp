#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "evdeform/self_calibration.hpp"

namespace evdeform {

namespace {

constexpr std::array<std::array<int, 2>, 6> kSymEntries{{{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}}};

double quartic(const std::array<double, 5>& p, double x) {
  return (((p[0] * x + p[1]) * x + p[2]) * x + p[3]) * x + p[4];
}

// A = K * R with K upper triangular (positive diagonal) and R orthonormal.
void rq_decompose(const Mat3& A, Mat3& K, Mat3& R) {
  Mat3 P = Mat3::Zero();
  P(0, 2) = P(1, 1) = P(2, 0) = 1.0;
  Eigen::HouseholderQR<Mat3> qr((P * A).transpose());
  const Mat3 Q = qr.householderQ();
  const Mat3 Rq = qr.matrixQR().triangularView<Eigen::Upper>();
  K = P * Rq.transpose() * P;
  R = P * Q.transpose();
  for (int i = 0; i < 3; ++i) {
    if (K(i, i) < 0.0) {
      K.col(i) = -K.col(i);
      R.row(i) = -R.row(i);
    }
  }
}

}  // namespace

double solve_kruppa_focal(const FundamentalPair& pair, const Vec2& principal, double nominal_focal) {
  if (!(nominal_focal > 0.0)) throw Error(ErrorCode::ConfigError, "nominal focal length must be positive");
  // Move the principal point to the origin and scale by the nominal focal
  // length, so the unknown becomes x = (f / f0)^2 with omega = diag(x, x, 1).
  Mat3 T;
  T << 1.0 / nominal_focal, 0.0, -principal.x() / nominal_focal, 0.0, 1.0 / nominal_focal,
      -principal.y() / nominal_focal, 0.0, 0.0, 1.0;
  const Mat3 Tinv = T.inverse();
  Mat3 F = Tinv.transpose() * pair.fundamental * Tinv;
  Vec3 e = T * pair.epipole_right;
  if (!F.allFinite() || F.norm() == 0.0 || e.norm() == 0.0) {
    throw Error(ErrorCode::DegenerateMotion, "fundamental matrix or epipole vanishes");
  }
  F /= F.norm();
  e /= e.norm();
  const Mat3 E = skew(e);
  const Mat3 A1 = F.leftCols<2>() * F.leftCols<2>().transpose();
  const Mat3 A0 = F.col(2) * F.col(2).transpose();
  const Mat3 D1 = E.leftCols<2>() * E.leftCols<2>().transpose();
  const Mat3 D0 = E.col(2) * E.col(2).transpose();

  // F omega F^T and [e]x omega [e]x^T must be proportional: every 2x2 cross
  // product of their entries vanishes, each a quadratic in x.
  std::vector<std::array<double, 3>> rows;
  double scale = 0.0;
  for (std::size_t a = 0; a < kSymEntries.size(); ++a) {
    for (std::size_t b = a + 1; b < kSymEntries.size(); ++b) {
      const auto [ia, ja] = kSymEntries[a];
      const auto [ib, jb] = kSymEntries[b];
      const double a1 = A1(ia, ja), a0 = A0(ia, ja), b1 = A1(ib, jb), b0 = A0(ib, jb);
      const double d1a = D1(ia, ja), d0a = D0(ia, ja), d1b = D1(ib, jb), d0b = D0(ib, jb);
      const std::array<double, 3> c{a1 * d1b - b1 * d1a, a1 * d0b + a0 * d1b - b1 * d0a - b0 * d1a,
                                    a0 * d0b - b0 * d0a};
      scale = std::max({scale, std::abs(c[0]), std::abs(c[1]), std::abs(c[2])});
      rows.push_back(c);
    }
  }
  if (scale < 1e-12) throw Error(ErrorCode::DegenerateMotion, "Kruppa constraints vanish for this motion");

  // Minimize sum of q_k(x)^2 over x: a quartic, so its critical points are
  // the roots of a cubic.
  std::array<double, 5> p{};
  for (const auto& c : rows) {
    p[0] += c[0] * c[0];
    p[1] += 2.0 * c[0] * c[1];
    p[2] += c[1] * c[1] + 2.0 * c[0] * c[2];
    p[3] += 2.0 * c[1] * c[2];
    p[4] += c[2] * c[2];
  }
  const std::vector<double> crit = real_polynomial_roots({4.0 * p[0], 3.0 * p[1], 2.0 * p[2], p[3]});
  double best_x = std::numeric_limits<double>::quiet_NaN();
  double best_val = std::numeric_limits<double>::infinity();
  for (double x : crit) {
    const double v = quartic(p, x);
    if (v < best_val) {
      best_val = v;
      best_x = x;
    }
  }
  if (!std::isfinite(best_x)) throw Error(ErrorCode::DegenerateMotion, "Kruppa system has no minimizer");
  if (best_x <= 0.0) {
    throw Error(ErrorCode::NegativeFocalSquared, "Kruppa solve gives f^2 = " + std::to_string(best_x * nominal_focal * nominal_focal));
  }
  // Sensitivity of the constraints to x at the solution, relative to their size.
  double sens = 0.0, mag = 0.0;
  for (const auto& c : rows) {
    const double dq = best_x * (2.0 * c[0] * best_x + c[1]);
    const double q = std::abs(c[0]) * best_x * best_x + std::abs(c[1]) * best_x + std::abs(c[2]);
    sens += dq * dq;
    mag += q * q;
  }
  if (sens <= 1e-12 * mag) throw Error(ErrorCode::DegenerateMotion, "focal length is not observable from this pair");
  return nominal_focal * std::sqrt(best_x);
}

UpgradeResult euclidean_upgrade(const ProjectiveReconstruction& proj, std::span<const CameraIntrinsics> intrinsics_guess,
                                std::size_t reference, std::size_t origin_point) {
  const std::size_t m = proj.cameras.size();
  if (intrinsics_guess.size() != m || m < 2) throw Error(ErrorCode::ConfigError, "one intrinsics guess per camera required");
  if (reference >= m) throw Error(ErrorCode::UnknownCamera, "reference index out of range");
  if (origin_point >= static_cast<std::size_t>(proj.points.cols())) {
    throw Error(ErrorCode::ConfigError, "origin point index out of range");
  }

  // Solve M'_j G M'_j^T = lambda_j I jointly for the 10 entries of G and the
  // m scales, with M'_j = K_j^-1 M_j.
  std::vector<Mat34> Mp(m);
  for (std::size_t j = 0; j < m; ++j) {
    Mp[j] = intrinsics_guess[j].K().inverse() * proj.cameras[j];
    Mp[j] /= Mp[j].norm();
  }
  const auto unknowns = static_cast<Eigen::Index>(10 + m);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(6 * m), unknowns);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t r = 0; r < kSymEntries.size(); ++r) {
      const auto [a, b] = kSymEntries[r];
      const auto row = static_cast<Eigen::Index>(6 * j + r);
      int g = 0;
      for (int k = 0; k < 4; ++k) {
        for (int l = k; l < 4; ++l, ++g) {
          double v = Mp[j](a, k) * Mp[j](b, l);
          if (k != l) v += Mp[j](a, l) * Mp[j](b, k);
          A(row, g) = v;
        }
      }
      if (a == b) A(row, static_cast<Eigen::Index>(10 + j)) = -1.0;
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  Eigen::VectorXd sol = svd.matrixV().col(unknowns - 1);
  if (sol.tail(static_cast<Eigen::Index>(m)).sum() < 0.0) sol = -sol;

  UpgradeResult out;
  EuclideanUpgrade& up = out.upgrade;
  {
    int g = 0;
    for (int k = 0; k < 4; ++k) {
      for (int l = k; l < 4; ++l, ++g) up.G(k, l) = up.G(l, k) = sol(g);
    }
  }
  for (std::size_t j = 0; j < m; ++j) up.camera_scales.push_back(sol(static_cast<Eigen::Index>(10 + j)));

  Eigen::SelfAdjointEigenSolver<Mat4> eig(up.G);
  const Vec4 ev = eig.eigenvalues();  // ascending
  const Mat4 V = eig.eigenvectors();
  Vec4 kept = Vec4::Zero();
  for (int i = 1; i < 4; ++i) kept(i) = std::max(0.0, ev(i));
  const Mat4 G3 = V * kept.asDiagonal() * V.transpose();
  up.clamped_fraction = (up.G - G3).norm() / up.G.norm();
  if (!(up.clamped_fraction <= 0.1) || kept(1) <= 0.0) {
    throw Error(ErrorCode::IndefiniteG, "rank-3 projection removes " + std::to_string(100.0 * up.clamped_fraction) +
                                            "% of G");
  }
  up.G = G3;
  for (int i = 0; i < 3; ++i) up.H11.col(i) = V.col(3 - i) * std::sqrt(kept(3 - i));
  up.h12 = proj.points.col(static_cast<Eigen::Index>(origin_point));

  const auto build = [&](bool flip) {
    UpgradeResult r;
    r.upgrade = up;
    r.upgrade.flipped = flip;
    if (flip) r.upgrade.H11 = -r.upgrade.H11;
    r.upgrade.H.leftCols<3>() = r.upgrade.H11;
    r.upgrade.H.col(3) = r.upgrade.h12;
    Eigen::FullPivLU<Mat4> lu(r.upgrade.H);
    if (!lu.isInvertible()) throw Error(ErrorCode::SingularConfiguration, "upgrade homography is singular");
    const Mat4 Hinv = lu.inverse();
    for (Eigen::Index i = 0; i < proj.points.cols(); ++i) {
      const Vec4 X = Hinv * proj.points.col(i);
      r.points.push_back(X.head<3>() / X(3));
    }
    for (std::size_t j = 0; j < m; ++j) {
      const Mat34 Mh = proj.cameras[j] * r.upgrade.H;
      Mat3 L = Mh.leftCols<3>();
      Vec3 p4 = Mh.col(3);
      if (L.determinant() < 0.0) {
        L = -L;
        p4 = -p4;
      }
      Mat3 Kq, R;
      rq_decompose(L, Kq, R);
      CameraPose pose;
      pose.rotation = R;
      pose.translation = Kq.triangularView<Eigen::Upper>().solve(p4);
      const Mat3 K = Kq / Kq(2, 2);
      CameraIntrinsics intr = intrinsics_guess[j].without_distortion();
      intr.fx = K(0, 0);
      intr.fy = K(1, 1);
      intr.cx = K(0, 2);
      intr.cy = K(1, 2);
      r.intrinsics.push_back(intr);
      r.poses.push_back(pose);
    }
    return r;
  };
  const auto positive_share = [&](const UpgradeResult& r) {
    std::size_t pos = 0;
    for (const Vec3& X : r.points) {
      if (r.poses[reference].transform(X).z() > 0.0) ++pos;
    }
    return static_cast<double>(pos) / static_cast<double>(r.points.size());
  };

  out = build(false);
  if (positive_share(out) <= 0.5) {
    out = build(true);
    if (positive_share(out) <= 0.5) {
      throw Error(ErrorCode::CheiralityFailure, "no sign of the upgrade puts most points in front of the reference camera");
    }
  }

  Vec3 mean = Vec3::Zero();
  for (const Vec3& X : out.points) mean += X;
  mean /= static_cast<double>(out.points.size());
  Eigen::MatrixXd C(3, static_cast<Eigen::Index>(out.points.size()));
  for (std::size_t i = 0; i < out.points.size(); ++i) C.col(static_cast<Eigen::Index>(i)) = out.points[i] - mean;
  const Vec3 s = Eigen::JacobiSVD<Eigen::MatrixXd>(C).singularValues();
  out.degenerate_trajectory = s(2) < 1e-3 * s(0);
  return out;
}

}  // namespace evdeform
