#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "evdeform/self_calibration.hpp"

namespace evdeform {

OutlierReport reject_outliers(std::span<const CorrespondingPoint> correspondences, const CameraRig& rig,
                              std::span<const Vec3> points, double d_h, double xi_th) {
  if (!points.empty() && points.size() != correspondences.size()) {
    throw Error(ErrorCode::ConfigError, "one 3D point per correspondence required");
  }
  // Pairwise fundamental matrices from the current calibration, keyed by id pair.
  std::map<std::pair<int, int>, Mat3> F;
  for (const auto& a : rig.cameras) {
    for (const auto& b : rig.cameras) {
      if (a.id >= b.id) continue;
      const CameraPose rel = b.pose.relative_to(a.pose);
      if (rel.translation.norm() < 1e-12) continue;
      F[{a.id, b.id}] = fundamental_from_calibrated(a.intrinsics, b.intrinsics, rel).fundamental;
    }
  }
  const auto ideal = [&](const CenterObservation& o) {
    try {
      return undistort(rig.at(o.camera_id).intrinsics, o.pixel);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoConvergence) throw;
      return Vec2(std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN());
    }
  };

  OutlierReport report;
  for (std::size_t i = 0; i < correspondences.size(); ++i) {
    const auto& views = correspondences[i].views;
    std::optional<Rejection> reject;
    for (std::size_t a = 0; a < views.size() && !reject; ++a) {
      for (std::size_t b = a + 1; b < views.size() && !reject; ++b) {
        const auto it = F.find({views[a].camera_id, views[b].camera_id});
        if (it == F.end()) continue;
        double d = epipolar_line_distance(it->second, ideal(views[a]), ideal(views[b]));
        if (!std::isfinite(d)) d = std::numeric_limits<double>::infinity();
        if (d > d_h) reject = Rejection{i, RejectionTest::Epipolar, views[a].camera_id, views[b].camera_id, d};
      }
    }
    if (!reject && !points.empty()) {
      for (const auto& v : views) {
        double e = std::numeric_limits<double>::infinity();
        try {
          const auto& cam = rig.at(v.camera_id);
          e = (project(cam.intrinsics, cam.pose, points[i]) - v.pixel).norm();
        } catch (const Error& err) {
          if (err.code() != ErrorCode::PointBehindCamera) throw;
        }
        if (!(e <= xi_th)) {
          reject = Rejection{i, RejectionTest::Reprojection, v.camera_id, v.camera_id, e};
          break;
        }
      }
    }
    if (reject) {
      report.removed.push_back(*reject);
    } else {
      report.kept.push_back(i);
    }
  }
  if (report.kept.empty() && !correspondences.empty()) {
    throw Error(ErrorCode::AllRejected, "every correspondence failed the outlier tests");
  }
  return report;
}

DistortionFit estimate_distortion(std::span<const Vec3> points, std::span<const Vec2> observed,
                                  const CameraIntrinsics& c, const CameraPose& pose) {
  DistortionFit fit;
  if (points.size() != observed.size()) throw Error(ErrorCode::ConfigError, "points and observations differ in length");
  constexpr std::size_t kMinPoints = 20;
  if (observed.size() < kMinPoints || c.width <= 0 || c.height <= 0) {
    fit.skipped_uneven_coverage = true;
    return fit;
  }
  Eigen::AlignedBox2d box;
  bool left = false, right = false, top = false, bottom = false;
  for (const Vec2& p : observed) {
    box.extend(p);
    (p.x() < 0.5 * c.width ? left : right) = true;
    (p.y() < 0.5 * c.height ? top : bottom) = true;
  }
  const double area = box.sizes().prod();
  if (area < 0.3 * c.width * c.height || !(left && right) || !(top && bottom)) {
    fit.skipped_uneven_coverage = true;
    return fit;
  }

  Eigen::MatrixXd A(2 * points.size(), 4);
  Eigen::VectorXd b(2 * points.size());
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 Xc = pose.transform(points[i]);
    if (!(Xc.z() > 0.0)) continue;
    const double x = Xc.x() / Xc.z(), y = Xc.y() / Xc.z();
    const double xo = (observed[i].x() - c.cx) / c.fx, yo = (observed[i].y() - c.cy) / c.fy;
    const double r2 = x * x + y * y;
    A.row(row) << x * r2, x * r2 * r2, 2.0 * x * y, r2 + 2.0 * x * x;
    b(row++) = xo - x;
    A.row(row) << y * r2, y * r2 * r2, r2 + 2.0 * y * y, 2.0 * x * y;
    b(row++) = yo - y;
  }
  fit.used = static_cast<std::size_t>(row / 2);
  if (fit.used < kMinPoints) {
    fit.skipped_uneven_coverage = true;
    return fit;
  }
  const Eigen::Vector4d k = A.topRows(row).colPivHouseholderQr().solve(b.head(row));
  fit.k1 = k(0);
  fit.k2 = k(1);
  fit.p1 = k(2);
  fit.p2 = k(3);
  return fit;
}

std::vector<CameraStats> reprojection_stats(const CameraRig& rig, std::span<const CorrespondingPoint> correspondences,
                                            std::span<const Vec3> points) {
  std::vector<CameraStats> out;
  for (const auto& cam : rig.cameras) {
    std::vector<double> errs;
    for (std::size_t i = 0; i < correspondences.size(); ++i) {
      const CenterObservation* o = correspondences[i].find(cam.id);
      if (o == nullptr) continue;
      errs.push_back((project(cam.intrinsics, cam.pose, points[i]) - o->pixel).norm());
    }
    CameraStats s;
    s.camera_id = cam.id;
    s.count = errs.size();
    if (!errs.empty()) {
      s.mean_px = std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());
      double var = 0.0;
      for (double e : errs) var += (e - s.mean_px) * (e - s.mean_px);
      s.std_px = errs.size() > 1 ? std::sqrt(var / static_cast<double>(errs.size() - 1)) : 0.0;
    }
    out.push_back(s);
  }
  return out;
}

double CalibrationResult::worst_mean_px() const {
  double w = 0.0;
  for (const auto& s : stats) w = std::max(w, s.mean_px);
  return w;
}

namespace {

struct PassState {
  std::vector<CorrespondingPoint> work;
  std::vector<CameraIntrinsics> intrinsics;
  std::vector<bool> distortion_ready;
};

std::size_t index_of(const std::vector<int>& ids, int id) {
  return static_cast<std::size_t>(std::find(ids.begin(), ids.end(), id) - ids.begin());
}

}  // namespace

CalibrationResult calibrate(std::span<const CorrespondingPoint> points, const CalibrationConfig& config) {
  std::set<int> id_set;
  for (const auto& p : points) {
    for (const auto& v : p.views) id_set.insert(v.camera_id);
  }
  const std::vector<int> ids(id_set.begin(), id_set.end());
  const std::size_t m = ids.size();
  if (m < 2) throw Error(ErrorCode::InsufficientCorrespondences, "calibration needs observations from two or more cameras");
  if (points.size() < std::max<std::size_t>(8, config.min_correspondences)) {
    throw Error(ErrorCode::InsufficientCorrespondences,
                std::to_string(points.size()) + " correspondences, need at least " +
                    std::to_string(std::max<std::size_t>(8, config.min_correspondences)));
  }
  const int ref_id = config.reference_camera >= 0 ? config.reference_camera : ids.front();
  if (!id_set.count(ref_id)) throw Error(ErrorCode::UnknownCamera, "reference camera " + std::to_string(ref_id) + " has no observations");
  const std::size_t ref = index_of(ids, ref_id);
  const std::size_t next = ref == 0 ? 1 : 0;

  CalibrationResult best;
  best.epipolar_threshold_px = config.epipolar_threshold_px;
  best.reprojection_threshold_px = config.reprojection_threshold_px;
  double best_score = std::numeric_limits<double>::infinity();
  std::vector<std::string> warnings;
  std::vector<IterationLogEntry> log;

  PassState st;
  st.work.assign(points.begin(), points.end());
  for (int id : ids) {
    const auto it = config.sensors.find(id);
    const SensorSize sensor = it != config.sensors.end() ? it->second : SensorSize{};
    CameraIntrinsics k;
    k.width = sensor.width;
    k.height = sensor.height;
    k.cx = 0.5 * (sensor.width - 1);
    k.cy = 0.5 * (sensor.height - 1);
    k.fx = k.fy = config.initial_focal;
    st.intrinsics.push_back(k);
  }
  st.distortion_ready.assign(m, false);

  // Gross outliers and the Kruppa focal estimate, pair by pair.
  std::map<int, std::vector<double>> focal_votes;
  std::vector<double> pair_focals;
  std::vector<bool> gross(st.work.size(), false);
  {
    std::uint64_t pair_index = 0;
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = a + 1; b < m; ++b, ++pair_index) {
        std::vector<std::size_t> shared;
        std::vector<Vec2> pa, pb;
        for (std::size_t i = 0; i < st.work.size(); ++i) {
          const auto* oa = st.work[i].find(ids[a]);
          const auto* ob = st.work[i].find(ids[b]);
          if (oa == nullptr || ob == nullptr) continue;
          shared.push_back(i);
          pa.push_back(oa->pixel);
          pb.push_back(ob->pixel);
        }
        if (shared.size() < 8) continue;
        RansacOptions ro = config.ransac;
        ro.threshold = config.epipolar_threshold_px;
        ro.seed = config.ransac.seed + pair_index;
        RansacResult rr;
        try {
          rr = estimate_fundamental_ransac(pa, pb, ro);
        } catch (const Error& e) {
          warnings.push_back("pair " + std::to_string(ids[a]) + "-" + std::to_string(ids[b]) + ": " + e.what());
          continue;
        }
        for (std::size_t k = 0; k < shared.size(); ++k) {
          if (!rr.inliers[k]) gross[shared[k]] = true;
        }
        try {
          const Vec2 pp(st.intrinsics[a].cx, st.intrinsics[a].cy);
          const double f = solve_kruppa_focal(rr.model, pp, config.initial_focal);
          // Near-intersecting optical axes make the single-f solve unstable;
          // votes implying a field of view outside 5-150 degrees are noise.
          const double w = std::max(st.intrinsics[a].width, st.intrinsics[b].width);
          if (f < 0.5 * w / std::tan(75.0 * M_PI / 180.0) || f > 0.5 * w / std::tan(2.5 * M_PI / 180.0)) {
            warnings.push_back("Kruppa " + std::to_string(ids[a]) + "-" + std::to_string(ids[b]) +
                               ": implausible f = " + std::to_string(f) + " ignored");
            continue;
          }
          focal_votes[ids[a]].push_back(f);
          focal_votes[ids[b]].push_back(f);
          pair_focals.push_back(f);
        } catch (const Error& e) {
          warnings.push_back("Kruppa " + std::to_string(ids[a]) + "-" + std::to_string(ids[b]) + ": " + e.what());
        }
      }
    }
  }
  {
    std::vector<CorrespondingPoint> kept;
    for (std::size_t i = 0; i < st.work.size(); ++i) {
      if (!gross[i]) kept.push_back(st.work[i]);
    }
    st.work = std::move(kept);
  }
  for (std::size_t j = 0; j < m; ++j) {
    auto& votes = focal_votes[ids[j]];
    if (votes.empty()) {
      warnings.push_back("camera " + std::to_string(ids[j]) + ": no Kruppa estimate, using initial focal length");
      continue;
    }
    std::sort(votes.begin(), votes.end());
    const std::size_t h = votes.size() / 2;
    const double f = votes.size() % 2 == 1 ? votes[h] : 0.5 * (votes[h - 1] + votes[h]);
    st.intrinsics[j].fx = st.intrinsics[j].fy = f;
    best.kruppa_focal[ids[j]] = f;
  }
  // Starting focal sets for the first upgrade: per-camera medians, each pair
  // estimate shared by all cameras, and the configured fallback.
  std::vector<std::vector<double>> focal_candidates(1);
  for (const auto& k : st.intrinsics) focal_candidates[0].push_back(k.fx);
  for (double f : pair_focals) focal_candidates.emplace_back(m, f);
  focal_candidates.emplace_back(m, config.initial_focal);

  for (int pass = 1; pass <= config.max_passes; ++pass) {
    IterationLogEntry entry;
    entry.pass = pass;
    try {
      if (st.work.size() < 8) throw Error(ErrorCode::InsufficientCorrespondences, "too few correspondences left");
      // Undistorted copies for the linear stages.
      std::vector<CorrespondingPoint> ideal = st.work;
      for (auto& p : ideal) {
        for (auto& v : p.views) v.pixel = undistort(st.intrinsics[index_of(ids, v.camera_id)], v.pixel);
      }
      const MeasurementMatrix W = build_measurement_matrix(ideal, ids);
      const ProjectiveReconstruction proj = projective_factorize(W, config.factorization);
      entry.factorization_residual = proj.residual;
      entry.factorization_iterations = proj.iterations;
      std::vector<CameraIntrinsics> linear(m);
      for (std::size_t j = 0; j < m; ++j) linear[j] = st.intrinsics[j].without_distortion();
      const std::size_t origin = std::min(config.origin_point, proj.columns.size() - 1);
      std::optional<UpgradeResult> chosen;
      if (pass == 1) {
        // Keep the start whose G needs the smallest rank-3 correction.
        std::optional<Error> first_error;
        for (const auto& cand : focal_candidates) {
          std::vector<CameraIntrinsics> guess = linear;
          for (std::size_t j = 0; j < m; ++j) guess[j].fx = guess[j].fy = cand[j];
          try {
            UpgradeResult u = euclidean_upgrade(proj, guess, ref, origin);
            if (!chosen || u.upgrade.clamped_fraction < chosen->upgrade.clamped_fraction) chosen = std::move(u);
          } catch (const Error& e) {
            if (!first_error) first_error = e;
          }
        }
        if (!chosen) throw *first_error;
      } else {
        chosen = euclidean_upgrade(proj, linear, ref, origin);
      }
      const UpgradeResult& up = *chosen;
      if (up.degenerate_trajectory && pass == 1) {
        warnings.push_back("DegenerateTrajectory: marker path is close to planar");
      }

      // World frame = reference camera, unit distance to the next camera.
      const CameraPose ref_pose = up.poses[ref];
      std::vector<CameraPose> poses(m);
      for (std::size_t j = 0; j < m; ++j) poses[j] = up.poses[j].relative_to(ref_pose);
      const double unit = poses[next].center().norm();
      if (!(unit > 0.0)) throw Error(ErrorCode::DegenerateBaseline, "reference and next camera coincide");
      for (auto& p : poses) p.translation /= unit;

      std::vector<CameraIntrinsics> intr(m);
      for (std::size_t j = 0; j < m; ++j) {
        intr[j] = st.intrinsics[j];
        intr[j].fx = up.intrinsics[j].fx;
        intr[j].fy = up.intrinsics[j].fy;
        if (config.square_pixels) intr[j].fx = intr[j].fy = std::sqrt(up.intrinsics[j].fx * up.intrinsics[j].fy);
        if (config.free_principal_point) {
          intr[j].cx = up.intrinsics[j].cx;
          intr[j].cy = up.intrinsics[j].cy;
        }
      }

      // 3D points: upgraded ones where available, triangulated otherwise.
      std::vector<Vec3> X(st.work.size());
      std::vector<bool> have(st.work.size(), false);
      for (std::size_t k = 0; k < proj.columns.size(); ++k) {
        X[proj.columns[k]] = ref_pose.transform(up.points[k]) / unit;
        have[proj.columns[k]] = true;
      }
      std::vector<Mat34> P(m);
      for (std::size_t j = 0; j < m; ++j) P[j] = projection_matrix(intr[j].without_distortion(), poses[j]);
      std::vector<CorrespondingPoint> usable;
      std::vector<Vec3> usable_X;
      for (std::size_t i = 0; i < st.work.size(); ++i) {
        if (!have[i]) {
          std::vector<Mat34> Ps;
          std::vector<Vec2> px;
          for (const auto& v : ideal[i].views) {
            Ps.push_back(P[index_of(ids, v.camera_id)]);
            px.push_back(v.pixel);
          }
          X[i] = triangulate_linear(Ps, px);
        }
        bool front = true;
        for (const auto& v : st.work[i].views) front = front && poses[index_of(ids, v.camera_id)].transform(X[i]).z() > 0.0;
        if (front) {
          usable.push_back(st.work[i]);
          usable_X.push_back(X[i]);
        }
      }

      // Gauge: reference pose frozen, plus the dominant translation component
      // of the next camera.
      std::vector<CameraParamMask> mask(m, all_frozen());
      for (std::size_t j = 0; j < m; ++j) {
        if (j != ref) {
          for (int p = RotX; p <= TransZ; ++p) mask[j][static_cast<std::size_t>(p)] = true;
        }
        mask[j][Fx] = mask[j][Fy] = true;
        mask[j][Cx] = mask[j][Cy] = config.free_principal_point;
        const bool dist = config.estimate_distortion && pass > 1 && st.distortion_ready[j];
        mask[j][K1] = mask[j][K2] = mask[j][P1] = mask[j][P2] = dist;
      }
      {
        Eigen::Index k = 0;
        poses[next].translation.cwiseAbs().maxCoeff(&k);
        mask[next][static_cast<std::size_t>(TransX + k)] = false;
      }

      const auto run_ba = [&](const std::vector<CorrespondingPoint>& corr, const std::vector<Vec3>& pts,
                              const std::vector<CameraIntrinsics>& ki, const std::vector<CameraPose>& pi) {
        std::vector<BundleObservation> obs;
        for (std::size_t i = 0; i < corr.size(); ++i) {
          for (const auto& v : corr[i].views) obs.push_back({index_of(ids, v.camera_id), i, v.pixel});
        }
        BundleAdjustmentOptions options = config.bundle;
        options.fixed_aspect = options.fixed_aspect || config.square_pixels;
        return bundle_adjust(ki, pi, pts, obs, mask, true, options);
      };
      BundleAdjustmentResult ba = run_ba(usable, usable_X, intr, poses);
      entry.ba_initial_cost = ba.initial_cost;
      entry.ba_iterations = ba.iterations;
      entry.action = "factorize+upgrade+ba";

      CameraRig rig;
      rig.reference_camera = ref_id;
      const auto fill_rig = [&](const BundleAdjustmentResult& r) {
        rig.cameras.clear();
        for (std::size_t j = 0; j < m; ++j) rig.cameras.push_back({ids[j], r.intrinsics[j], r.poses[j]});
      };
      fill_rig(ba);
      const OutlierReport report =
          reject_outliers(usable, rig, ba.points, config.epipolar_threshold_px, config.reprojection_threshold_px);
      entry.removed = (st.work.size() - usable.size()) + report.removed.size();
      std::vector<CorrespondingPoint> inliers;
      std::vector<Vec3> inlier_X;
      for (std::size_t k : report.kept) {
        inliers.push_back(usable[k]);
        inlier_X.push_back(ba.points[k]);
      }
      if (!report.removed.empty()) {
        ba = run_ba(inliers, inlier_X, ba.intrinsics, ba.poses);
        fill_rig(ba);
        inlier_X = ba.points;
        entry.action += "+reject+ba";
      }
      entry.ba_final_cost = ba.final_cost;
      entry.inliers = inliers.size();

      CalibrationResult cand;
      cand.rig = rig;
      cand.inliers = inliers;
      cand.points = inlier_X;
      cand.stats = reprojection_stats(rig, inliers, inlier_X);
      cand.kruppa_focal = best.kruppa_focal;
      cand.epipolar_threshold_px = config.epipolar_threshold_px;
      cand.reprojection_threshold_px = config.reprojection_threshold_px;
      entry.stats = cand.stats;

      // Distortion for the next pass, for cameras that did not refine it here.
      st.intrinsics = ba.intrinsics;
      if (config.estimate_distortion) {
        for (std::size_t j = 0; j < m; ++j) {
          if (mask[j][K1]) continue;
          std::vector<Vec3> pts;
          std::vector<Vec2> obs;
          for (std::size_t i = 0; i < inliers.size(); ++i) {
            if (const auto* o = inliers[i].find(ids[j])) {
              pts.push_back(inlier_X[i]);
              obs.push_back(o->pixel);
            }
          }
          const DistortionFit fit = estimate_distortion(pts, obs, st.intrinsics[j], ba.poses[j]);
          if (fit.skipped_uneven_coverage) continue;
          st.intrinsics[j].k1 = fit.k1;
          st.intrinsics[j].k2 = fit.k2;
          st.intrinsics[j].p1 = fit.p1;
          st.intrinsics[j].p2 = fit.p2;
          st.distortion_ready[j] = true;
        }
      }
      st.work = inliers;
      log.push_back(entry);

      const double score = cand.worst_mean_px();
      const bool done = score < config.reproj_target_px;
      if (score < best_score) {
        best_score = score;
        const auto kf = best.kruppa_focal;
        best = std::move(cand);
        best.kruppa_focal = kf;
      }
      best.log = log;
      best.warnings = warnings;
      if (done) {
        best.converged = true;
        return best;
      }
    } catch (const Error& e) {
      if (!std::isfinite(best_score)) throw;
      entry.action = std::string("failed: ") + e.what();
      log.push_back(entry);
      best.log = log;
      best.warnings = warnings;
      throw CalibrationFailed("pass " + std::to_string(pass) + " failed: " + e.what(), best);
    }
  }
  best.log = log;
  best.warnings = warnings;
  throw CalibrationFailed("reprojection target not reached after " + std::to_string(config.max_passes) + " passes",
                          best);
}

}  // namespace evdeform
