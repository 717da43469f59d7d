#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>

#include "evdeform/self_calibration.hpp"

namespace evdeform {

CameraParamMask all_free() {
  CameraParamMask m;
  m.fill(true);
  return m;
}

CameraParamMask all_frozen() {
  CameraParamMask m;
  m.fill(false);
  return m;
}

Vec2 project_with_jacobian(const CameraIntrinsics& c, const CameraPose& pose, const Vec3& point,
                           Eigen::Matrix<double, 2, kCameraParams>* d_camera, Eigen::Matrix<double, 2, 3>* d_point) {
  const Vec3 RX = pose.rotation * point;
  const Vec3 Xc = RX + pose.translation;
  if (!(Xc.z() > 0.0)) throw Error(ErrorCode::PointBehindCamera, "point has non-positive depth");
  const double iz = 1.0 / Xc.z();
  const Vec2 xy(Xc.x() * iz, Xc.y() * iz);
  Mat2 Jd;
  const Vec2 d = distort_normalized(c, xy, &Jd);
  const Vec2 pixel(c.fx * d.x() + c.cx, c.fy * d.y() + c.cy);
  if (d_camera == nullptr && d_point == nullptr) return pixel;

  Eigen::Matrix<double, 2, 3> d_xy_d_Xc;
  d_xy_d_Xc << iz, 0.0, -xy.x() * iz, 0.0, iz, -xy.y() * iz;
  const Mat2 F = Eigen::Vector2d(c.fx, c.fy).asDiagonal();
  const Eigen::Matrix<double, 2, 3> d_pix_d_Xc = F * Jd * d_xy_d_Xc;

  if (d_point != nullptr) *d_point = d_pix_d_Xc * pose.rotation;
  if (d_camera != nullptr) {
    auto& J = *d_camera;
    // exp([w]x) R X + t: d/dw at w = 0 is -[R X]x.
    J.block<2, 3>(0, RotX) = -d_pix_d_Xc * skew(RX);
    J.block<2, 3>(0, TransX) = d_pix_d_Xc;
    J.block<2, 4>(0, Fx) << d.x(), 0.0, 1.0, 0.0, 0.0, d.y(), 0.0, 1.0;
    const double x = xy.x(), y = xy.y();
    const double r2 = x * x + y * y;
    J.block<2, 4>(0, K1) << c.fx * x * r2, c.fx * x * r2 * r2, c.fx * 2.0 * x * y, c.fx * (r2 + 2.0 * x * x),
        c.fy * y * r2, c.fy * y * r2 * r2, c.fy * (r2 + 2.0 * y * y), c.fy * 2.0 * x * y;
  }
  return pixel;
}

namespace {

struct State {
  std::vector<CameraIntrinsics> intrinsics;
  std::vector<CameraPose> poses;
  std::vector<Vec3> points;
};

double total_cost(const State& s, std::span<const BundleObservation> obs) {
  double cost = 0.0;
  for (const auto& o : obs) {
    const Vec2 r = project_with_jacobian(s.intrinsics[o.camera], s.poses[o.camera], s.points[o.point], nullptr, nullptr) -
                   o.pixel;
    cost += r.squaredNorm();
  }
  return 0.5 * cost;
}

void apply_camera_step(CameraIntrinsics& c, CameraPose& pose, const Eigen::Matrix<double, kCameraParams, 1>& d) {
  pose.rotation = rotation_from_axis_angle(d.segment<3>(RotX)) * pose.rotation;
  pose.translation += d.segment<3>(TransX);
  c.fx += d(Fx);
  c.fy += d(Fy);
  c.cx += d(Cx);
  c.cy += d(Cy);
  c.k1 += d(K1);
  c.k2 += d(K2);
  c.p1 += d(P1);
  c.p2 += d(P2);
}

}  // namespace

BundleAdjustmentResult bundle_adjust(std::span<const CameraIntrinsics> intrinsics, std::span<const CameraPose> poses,
                                     std::span<const Vec3> points, std::span<const BundleObservation> observations,
                                     std::span<const CameraParamMask> camera_mask, bool points_free,
                                     const BundleAdjustmentOptions& options) {
  const std::size_t m = intrinsics.size();
  const std::size_t n = points.size();
  if (poses.size() != m || camera_mask.size() != m) {
    throw Error(ErrorCode::ConfigError, "camera arrays and mask must have equal length");
  }
  for (const auto& o : observations) {
    if (o.camera >= m || o.point >= n) throw Error(ErrorCode::ConfigError, "observation index out of range");
  }

  // Free camera parameters get consecutive columns.
  std::vector<std::array<int, kCameraParams>> col(m);
  int nc = 0;
  std::vector<double> aspect(m, 0.0);  // nonzero where fy is tied to fx
  for (std::size_t j = 0; j < m; ++j) {
    const bool tied = options.fixed_aspect && camera_mask[j][Fx];
    if (tied) aspect[j] = intrinsics[j].fy / intrinsics[j].fx;
    for (int p = 0; p < kCameraParams; ++p) {
      const bool free = camera_mask[j][static_cast<std::size_t>(p)] && !(tied && p == Fy);
      col[j][static_cast<std::size_t>(p)] = free ? nc++ : -1;
    }
  }
  const std::size_t free_params = static_cast<std::size_t>(nc) + (points_free ? 3 * n : 0);
  if (observations.size() * 2 < free_params) {
    throw Error(ErrorCode::InsufficientPoints, "fewer residuals than free parameters");
  }

  State s{{intrinsics.begin(), intrinsics.end()}, {poses.begin(), poses.end()}, {points.begin(), points.end()}};
  BundleAdjustmentResult res;
  double cost = total_cost(s, observations);
  if (!std::isfinite(cost)) throw Error(ErrorCode::DivergedBA, "initial reprojection is not finite");
  res.initial_cost = cost;
  res.cost_trace.push_back(cost);

  Eigen::MatrixXd U(nc, nc);
  Eigen::VectorXd gc(nc);
  std::vector<Mat3> V(n);
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 3>> W(n);
  std::vector<Vec3> gp(n);

  double lambda = options.initial_lambda;
  double nu = 2.0;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    res.iterations = iter + 1;
    U.setZero();
    gc.setZero();
    for (std::size_t i = 0; i < n; ++i) {
      V[i].setZero();
      W[i].setZero(nc, 3);
      gp[i].setZero();
    }
    Eigen::Matrix<double, 2, kCameraParams> Jc;
    Eigen::Matrix<double, 2, 3> Jp;
    Eigen::Matrix<double, 2, Eigen::Dynamic> Jf(2, nc);
    for (const auto& o : observations) {
      const Vec2 r =
          project_with_jacobian(s.intrinsics[o.camera], s.poses[o.camera], s.points[o.point], &Jc, &Jp) - o.pixel;
      if (aspect[o.camera] != 0.0) Jc.col(Fx) += aspect[o.camera] * Jc.col(Fy);
      const auto& cj = col[o.camera];
      std::vector<std::pair<int, int>> active;  // (param, column)
      for (int p = 0; p < kCameraParams; ++p) {
        if (cj[static_cast<std::size_t>(p)] >= 0) active.emplace_back(p, cj[static_cast<std::size_t>(p)]);
      }
      for (const auto& [pa, ca] : active) {
        gc(ca) += Jc.col(pa).dot(r);
        for (const auto& [pb, cb] : active) U(ca, cb) += Jc.col(pa).dot(Jc.col(pb));
        if (points_free) W[o.point].row(ca) += Jc.col(pa).transpose() * Jp;
      }
      if (points_free) {
        V[o.point] += Jp.transpose() * Jp;
        gp[o.point] += Jp.transpose() * r;
      }
    }
    double gmax = nc > 0 ? gc.cwiseAbs().maxCoeff() : 0.0;
    if (points_free) {
      for (const Vec3& g : gp) gmax = std::max(gmax, g.cwiseAbs().maxCoeff());
    }
    // RMS residual under 1e-9 px is round-off; further steps only chase noise.
    if (gmax <= options.gradient_tolerance || cost <= 0.5e-18 * static_cast<double>(observations.size())) {
      res.converged = true;
      break;
    }

    const Eigen::VectorXd Ud = U.diagonal().cwiseMax(1e-12);
    std::vector<Vec3> Vd(n);
    for (std::size_t i = 0; i < n; ++i) Vd[i] = V[i].diagonal().cwiseMax(1e-12);

    bool accepted = false;
    bool stop = false;
    while (!accepted) {
      // Reduced camera system.
      Eigen::MatrixXd S = U;
      S.diagonal() += lambda * Ud;
      Eigen::VectorXd b = -gc;
      std::vector<Mat3> Vinv(n);
      if (points_free) {
        for (std::size_t i = 0; i < n; ++i) {
          Mat3 Vi = V[i];
          Vi.diagonal() += lambda * Vd[i];
          Vinv[i] = Vi.inverse();
          if (nc > 0) {
            const Eigen::Matrix<double, Eigen::Dynamic, 3> WV = W[i] * Vinv[i];
            S.noalias() -= WV * W[i].transpose();
            b.noalias() += WV * gp[i];
          }
        }
      }
      Eigen::VectorXd dc = nc > 0 ? Eigen::VectorXd(S.ldlt().solve(b)) : Eigen::VectorXd();
      std::vector<Vec3> dp(n, Vec3::Zero());
      if (points_free) {
        for (std::size_t i = 0; i < n; ++i) {
          Vec3 rhs = -gp[i];
          if (nc > 0) rhs.noalias() -= W[i].transpose() * dc;
          dp[i] = Vinv[i] * rhs;
        }
      }

      bool finite = nc == 0 || dc.allFinite();
      for (const Vec3& d : dp) finite = finite && d.allFinite();
      double new_cost = std::numeric_limits<double>::infinity();
      State trial = s;
      if (finite) {
        for (std::size_t j = 0; j < m; ++j) {
          Eigen::Matrix<double, kCameraParams, 1> d = Eigen::Matrix<double, kCameraParams, 1>::Zero();
          for (int p = 0; p < kCameraParams; ++p) {
            if (col[j][static_cast<std::size_t>(p)] >= 0) d(p) = dc(col[j][static_cast<std::size_t>(p)]);
          }
          if (aspect[j] != 0.0) d(Fy) = aspect[j] * d(Fx);
          apply_camera_step(trial.intrinsics[j], trial.poses[j], d);
        }
        for (std::size_t i = 0; i < n; ++i) trial.points[i] += dp[i];
        try {
          new_cost = total_cost(trial, observations);
        } catch (const Error&) {
          new_cost = std::numeric_limits<double>::infinity();
        }
      }

      // Predicted decrease 0.5 * d^T (lambda D d - g).
      double pred = 0.0;
      if (finite) {
        if (nc > 0) pred += dc.dot(lambda * Ud.cwiseProduct(dc) - gc);
        if (points_free) {
          for (std::size_t i = 0; i < n; ++i) pred += dp[i].dot(lambda * Vd[i].cwiseProduct(dp[i]) - gp[i]);
        }
        pred *= 0.5;
      }
      if (std::isfinite(new_cost) && new_cost < cost && pred > 0.0) {
        const double rho = (cost - new_cost) / pred;
        const double decrease = cost - new_cost;
        s = std::move(trial);
        cost = new_cost;
        res.cost_trace.push_back(cost);
        ++res.accepted_steps;
        lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
        nu = 2.0;
        accepted = true;
        if (decrease <= options.relative_cost_tolerance * res.initial_cost) {
          res.converged = true;
          stop = true;
        }
      } else {
        lambda *= nu;
        nu *= 2.0;
        if (lambda > options.lambda_ceiling) {
          if (res.accepted_steps == 0 && gmax > 1e-6 * (1.0 + cost)) {
            throw Error(ErrorCode::DivergedBA, "damping reached its ceiling without an accepted step");
          }
          res.converged = true;
          stop = true;
          break;
        }
      }
    }
    if (stop) break;
  }

  res.intrinsics = std::move(s.intrinsics);
  res.poses = std::move(s.poses);
  res.points = std::move(s.points);
  res.final_cost = cost;
  return res;
}

}  // namespace evdeform
