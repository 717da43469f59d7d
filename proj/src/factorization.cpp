#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

#include "evdeform/self_calibration.hpp"

namespace evdeform {

Vec2 MeasurementMatrix::pixel(std::size_t cam, std::size_t point) const {
  const auto r = static_cast<Eigen::Index>(3 * cam);
  const auto c = static_cast<Eigen::Index>(point);
  return {pixels(r, c), pixels(r + 1, c)};
}

std::vector<std::size_t> MeasurementMatrix::full_visibility_columns() const {
  std::vector<std::size_t> cols;
  for (Eigen::Index i = 0; i < visibility.cols(); ++i) {
    if (visibility.col(i).all()) cols.push_back(static_cast<std::size_t>(i));
  }
  return cols;
}

Eigen::MatrixXd MeasurementMatrix::scaled(std::span<const std::size_t> columns) const {
  const auto m = static_cast<Eigen::Index>(camera_count());
  Eigen::MatrixXd W(3 * m, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t k = 0; k < columns.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(columns[k]);
    for (Eigen::Index j = 0; j < m; ++j) W.block<3, 1>(3 * j, static_cast<Eigen::Index>(k)) = scales(j, c) * pixels.block<3, 1>(3 * j, c);
  }
  return W;
}

MeasurementMatrix build_measurement_matrix(std::span<const CorrespondingPoint> points, std::span<const int> camera_ids) {
  MeasurementMatrix W;
  W.camera_ids.assign(camera_ids.begin(), camera_ids.end());
  const auto m = static_cast<Eigen::Index>(camera_ids.size());
  const auto n = static_cast<Eigen::Index>(points.size());
  W.pixels = Eigen::MatrixXd::Zero(3 * m, n);
  W.scales = Eigen::MatrixXd::Ones(m, n);
  W.visibility = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(m, n, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const CenterObservation* obs = points[static_cast<std::size_t>(i)].find(camera_ids[static_cast<std::size_t>(j)]);
      if (obs == nullptr) continue;
      W.pixels.block<3, 1>(3 * j, i) = obs->pixel.homogeneous();
      W.visibility(j, i) = true;
    }
  }
  const std::size_t full = W.full_visibility_columns().size();
  if (camera_ids.size() < 2 || full < 8) {
    throw Error(ErrorCode::InsufficientCorrespondences,
                std::to_string(full) + " points are seen by all " + std::to_string(camera_ids.size()) +
                    " cameras, need at least 8");
  }
  return W;
}

namespace {

// Rescale depths so every column of W_s, then every camera block, has unit
// norm. Neither changes the rank of W_s.
void balance(Eigen::MatrixXd& lam, const Eigen::MatrixXd& xh) {
  const Eigen::Index m = lam.rows();
  const Eigen::Index n = lam.cols();
  for (int pass = 0; pass < 3; ++pass) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) s += lam(j, i) * lam(j, i) * xh.block<3, 1>(3 * j, i).squaredNorm();
      if (s > 0.0) lam.col(i) /= std::sqrt(s);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) s += lam(j, i) * lam(j, i) * xh.block<3, 1>(3 * j, i).squaredNorm();
      if (s > 0.0) lam.row(j) *= std::sqrt(static_cast<double>(n) / static_cast<double>(m) / s);
    }
  }
}

}  // namespace

ProjectiveReconstruction projective_factorize(const MeasurementMatrix& W, const FactorizationOptions& options) {
  const std::vector<std::size_t> cols = W.full_visibility_columns();
  if (cols.size() < 8) {
    throw Error(ErrorCode::InsufficientCorrespondences,
                std::to_string(cols.size()) + " fully visible points, factorization needs 8");
  }
  const auto m = static_cast<Eigen::Index>(W.camera_count());
  const auto n = static_cast<Eigen::Index>(cols.size());

  // Per-camera isotropic normalization.
  std::vector<Mat3> T(static_cast<std::size_t>(m));
  Eigen::MatrixXd xh(3 * m, n);
  Eigen::MatrixXd lam(m, n);
  std::vector<std::vector<Vec2>> norm_pts(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    std::vector<Vec2> pts;
    pts.reserve(cols.size());
    for (std::size_t c : cols) pts.push_back(W.pixel(static_cast<std::size_t>(j), c));
    T[static_cast<std::size_t>(j)] = hartley_normalization(pts);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3 x = T[static_cast<std::size_t>(j)] * pts[static_cast<std::size_t>(i)].homogeneous();
      xh.block<3, 1>(3 * j, i) = x;
      lam(j, i) = W.scales(j, static_cast<Eigen::Index>(cols[static_cast<std::size_t>(i)]));
      norm_pts[static_cast<std::size_t>(j)].push_back(x.hnormalized());
    }
  }

  ProjectiveReconstruction out;
  out.columns = cols;

  // Center camera: the one sharing the most observations.
  Eigen::Index center = 0;
  for (Eigen::Index j = 1; j < m; ++j) {
    if (W.visibility.row(j).count() > W.visibility.row(center).count()) center = j;
  }
  out.center_camera = static_cast<int>(center);

  if ((lam.array() == 1.0).all()) {
    const auto c = static_cast<std::size_t>(center);
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == center) continue;
      const auto jj = static_cast<std::size_t>(j);
      const FundamentalPair F = make_fundamental_pair(fundamental_eight_point(norm_pts[c], norm_pts[jj]));
      const Vec3& e = F.epipole_right;
      if (!e.allFinite() || e.norm() < 1e-12) {
        throw Error(ErrorCode::SingularConfiguration, "epipole undefined for center pairing");
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 xi = xh.block<3, 1>(3 * j, i);
        const Vec3 xc = xh.block<3, 1>(3 * center, i);
        const Vec3 exi = e.cross(xi);
        const double d = exi.squaredNorm();
        // Parallel vectors: their ratio is the projective depth.
        lam(j, i) = d > 1e-24 ? exi.dot(F.fundamental * xc) / d * lam(center, i) : lam(center, i);
      }
    }
  }

  Eigen::MatrixXd M4;
  Eigen::MatrixXd X4;
  double prev = -1.0;
  for (int it = 1; it <= options.max_iterations; ++it) {
    balance(lam, xh);
    Eigen::MatrixXd Ws(3 * m, n);
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) Ws.block<3, 1>(3 * j, i) = lam(j, i) * xh.block<3, 1>(3 * j, i);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Ws, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    if (!sv.allFinite() || sv.size() < 4 || sv(3) <= 0.0) {
      throw Error(ErrorCode::SingularConfiguration, "measurement matrix has rank below 4");
    }
    const double tail = sv.size() > 4 ? sv.tail(sv.size() - 4).norm() : 0.0;
    const double r = tail / sv.norm();
    M4 = svd.matrixU().leftCols(4) * sv.head(4).asDiagonal();
    X4 = svd.matrixV().leftCols(4).transpose();
    out.iterations = it;
    out.residual = r;
    out.residual_trace.push_back(r);
    if (r < options.tolerance || (prev >= 0.0 && std::abs(r - prev) <= options.tolerance * prev)) {
      out.converged = true;
      break;
    }
    prev = r;
    // Depth update: best scale of each observation against its rank-4 reprojection.
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 x = xh.block<3, 1>(3 * j, i);
        const Vec3 p = M4.block<3, 4>(3 * j, 0) * X4.col(i);
        lam(j, i) = x.dot(p) / x.squaredNorm();
      }
    }
  }

  out.cameras.resize(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    out.cameras[static_cast<std::size_t>(j)] = T[static_cast<std::size_t>(j)].inverse() * M4.block<3, 4>(3 * j, 0);
  }
  out.points = X4;
  return out;
}

}  // namespace evdeform
