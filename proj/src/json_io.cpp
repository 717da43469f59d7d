#include "evdeform/camera_rig.hpp"

#include <fstream>
#include <iterator>
#include <json.hpp>
#include <system_error>

#include "evdeform/error.hpp"
#include "evdeform/deformation.hpp"
#include "evdeform/self_calibration.hpp"

namespace evdeform {

using nlohmann::json;

const CameraModel* CameraRig::find(int id) const {
  for (const auto& c : cameras) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

const CameraModel& CameraRig::at(int id) const {
  const CameraModel* c = find(id);
  if (c == nullptr) throw Error(ErrorCode::UnknownCamera, "camera " + std::to_string(id) + " not in rig");
  return *c;
}

std::string rig_to_json(const CameraRig& rig) {
  json doc;
  doc["reference_camera"] = rig.reference_camera;
  doc["cameras"] = json::array();
  for (const auto& cam : rig.cameras) {
    const auto& k = cam.intrinsics;
    json j;
    j["id"] = cam.id;
    j["width"] = k.width;
    j["height"] = k.height;
    j["fx"] = k.fx;
    j["fy"] = k.fy;
    j["cx"] = k.cx;
    j["cy"] = k.cy;
    j["k1"] = k.k1;
    j["k2"] = k.k2;
    j["p1"] = k.p1;
    j["p2"] = k.p2;
    json R = json::array();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) R.push_back(cam.pose.rotation(r, c));
    }
    j["R"] = R;
    j["T"] = {cam.pose.translation.x(), cam.pose.translation.y(), cam.pose.translation.z()};
    doc["cameras"].push_back(j);
  }
  return doc.dump(2) + "\n";
}

CameraRig rig_from_json(const std::string& text) {
  CameraRig rig;
  try {
    const json doc = json::parse(text);
    rig.reference_camera = doc.at("reference_camera").get<int>();
    for (const auto& j : doc.at("cameras")) {
      CameraModel cam;
      cam.id = j.at("id").get<int>();
      auto& k = cam.intrinsics;
      k.width = j.at("width").get<int>();
      k.height = j.at("height").get<int>();
      k.fx = j.at("fx").get<double>();
      k.fy = j.at("fy").get<double>();
      k.cx = j.at("cx").get<double>();
      k.cy = j.at("cy").get<double>();
      k.k1 = j.value("k1", 0.0);
      k.k2 = j.value("k2", 0.0);
      k.p1 = j.value("p1", 0.0);
      k.p2 = j.value("p2", 0.0);
      const auto& R = j.at("R");
      const auto& T = j.at("T");
      if (R.size() != 9 || T.size() != 3) throw Error(ErrorCode::ParseError, "R needs 9 values and T needs 3");
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) cam.pose.rotation(r, c) = R.at(3 * r + c).get<double>();
        cam.pose.translation(r) = T.at(r).get<double>();
      }
      k.validate();
      rig.cameras.push_back(cam);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("calibration document: ") + e.what());
  }
  if (rig.cameras.empty()) throw Error(ErrorCode::ParseError, "calibration document lists no cameras");
  rig.at(rig.reference_camera);
  return rig;
}

void write_rig(const std::filesystem::path& path, const CameraRig& rig) { write_file_atomic(path, rig_to_json(rig)); }

CameraRig read_rig(const std::filesystem::path& path) { return rig_from_json(read_text_file(path)); }

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string calibration_log_json(const CalibrationResult& result) {
  json doc;
  doc["converged"] = result.converged;
  doc["reference_camera"] = result.rig.reference_camera;
  doc["epipolar_threshold_px"] = result.epipolar_threshold_px;
  doc["reprojection_threshold_px"] = result.reprojection_threshold_px;
  doc["inliers"] = result.inliers.size();
  json kf = json::object();
  for (const auto& [id, f] : result.kruppa_focal) kf[std::to_string(id)] = f;
  doc["kruppa_focal"] = kf;
  const auto stats_json = [](const std::vector<CameraStats>& stats) {
    json a = json::array();
    for (const auto& s : stats) {
      a.push_back({{"camera_id", s.camera_id}, {"mean_px", s.mean_px}, {"std_px", s.std_px}, {"count", s.count}});
    }
    return a;
  };
  doc["stats"] = stats_json(result.stats);
  doc["iterations"] = json::array();
  for (const auto& e : result.log) {
    doc["iterations"].push_back({{"pass", e.pass},
                                 {"inliers", e.inliers},
                                 {"removed", e.removed},
                                 {"factorization_residual", e.factorization_residual},
                                 {"factorization_iterations", e.factorization_iterations},
                                 {"ba_initial_cost", e.ba_initial_cost},
                                 {"ba_final_cost", e.ba_final_cost},
                                 {"ba_iterations", e.ba_iterations},
                                 {"stats", stats_json(e.stats)},
                                 {"action", e.action}});
  }
  doc["warnings"] = result.warnings;
  return doc.dump(2) + "\n";
}

std::string series_summary_json(const DeformationSeries& series) {
  json doc;
  doc["reference_camera"] = series.reference_camera;
  doc["units"] = series.metric ? "metric" : "internal";
  doc["samples"] = series.samples.size();
  doc["dropped_residual"] = series.dropped_residual;
  doc["failed"] = series.failed;
  doc["baseline"] = {series.baseline.x(), series.baseline.y(), series.baseline.z()};
  doc["max_amplitude"] = series.max_amplitude;
  const char* names[3] = {"X", "Y", "Z"};
  json axes = json::object();
  for (std::size_t a = 0; a < 3; ++a) {
    axes[names[a]] = {{"min", series.axes[a].min}, {"max", series.axes[a].max}, {"rms", series.axes[a].rms}};
  }
  doc["axes"] = axes;
  return doc.dump(2) + "\n";
}

}  // namespace evdeform
