#include <json.hpp>

#include "evdeform/error.hpp"
#include "evdeform/simulator.hpp"

namespace evdeform {

using nlohmann::json;

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::ConfigError, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json camera_json(const SimCamera& c) {
  const auto& k = c.intrinsics;
  json R = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int q = 0; q < 3; ++q) R.push_back(c.pose.rotation(r, q));
  }
  return {{"id", c.id}, {"width", k.width}, {"height", k.height}, {"fx", k.fx}, {"fy", k.fy},
          {"cx", k.cx}, {"cy", k.cy},         {"k1", k.k1},         {"k2", k.k2}, {"p1", k.p1},
          {"p2", k.p2}, {"R", R},             {"T", vec_json(c.pose.translation)}};
}

SimCamera camera_from(const json& j) {
  SimCamera c;
  c.id = j.at("id").get<int>();
  auto& k = c.intrinsics;
  k.width = j.value("width", 1280);
  k.height = j.value("height", 720);
  k.fx = j.at("fx").get<double>();
  k.fy = j.value("fy", k.fx);
  k.cx = j.value("cx", 0.5 * (k.width - 1));
  k.cy = j.value("cy", 0.5 * (k.height - 1));
  k.k1 = j.value("k1", 0.0);
  k.k2 = j.value("k2", 0.0);
  k.p1 = j.value("p1", 0.0);
  k.p2 = j.value("p2", 0.0);
  const auto& R = j.at("R");
  if (R.size() != 9) throw Error(ErrorCode::ConfigError, "R needs 9 values");
  for (int r = 0; r < 3; ++r) {
    for (int q = 0; q < 3; ++q) c.pose.rotation(r, q) = R.at(3 * r + q).get<double>();
  }
  c.pose.translation = vec_from(j.at("T"));
  return c;
}

json trajectory_json(const Trajectory& t) {
  json j{{"kind", trajectory_kind_name(t.kind)}, {"origin", vec_json(t.origin)}};
  switch (t.kind) {
    case Trajectory::Kind::Static:
      break;
    case Trajectory::Kind::Linear:
      j["velocity"] = vec_json(t.velocity);
      break;
    case Trajectory::Kind::Sinusoid3d:
      j["amplitude"] = vec_json(t.amplitude);
      j["frequency_hz"] = vec_json(t.frequency_hz);
      j["phase_rad"] = vec_json(t.phase_rad);
      j["onset_s"] = t.onset_s;
      break;
    case Trajectory::Kind::WaypointSpline: {
      json w = json::array();
      for (const auto& p : t.waypoints) w.push_back(vec_json(p));
      j["waypoints"] = w;
      j["span_s"] = t.span_s;
      break;
    }
  }
  return j;
}

Trajectory trajectory_from(const json& j) {
  Trajectory t;
  t.kind = parse_trajectory_kind(j.at("kind").get<std::string>());
  if (j.contains("origin")) t.origin = vec_from(j["origin"]);
  if (j.contains("velocity")) t.velocity = vec_from(j["velocity"]);
  if (j.contains("amplitude")) t.amplitude = vec_from(j["amplitude"]);
  if (j.contains("frequency_hz")) t.frequency_hz = vec_from(j["frequency_hz"]);
  if (j.contains("phase_rad")) t.phase_rad = vec_from(j["phase_rad"]);
  t.onset_s = j.value("onset_s", 0.0);
  if (j.contains("waypoints")) {
    for (const auto& p : j["waypoints"]) t.waypoints.push_back(vec_from(p));
  }
  t.span_s = j.value("span_s", 1.0);
  return t;
}

}  // namespace

std::string scenario_to_json(const ScenarioConfig& s) {
  json doc;
  doc["blink_freq_hz"] = s.blink_freq_hz;
  doc["duty_cycle"] = s.duty_cycle;
  doc["contrast_threshold"] = s.contrast_threshold;
  doc["noise_rate"] = s.noise_rate;
  doc["latency_jitter_std_us"] = s.latency_jitter_std_us;
  doc["refractory_us"] = s.refractory_us;
  doc["duration_s"] = s.duration_s;
  doc["seed"] = s.seed;
  doc["cameras"] = json::array();
  for (const auto& c : s.cameras) doc["cameras"].push_back(camera_json(c));
  doc["markers"] = json::array();
  for (const auto& m : s.markers) {
    doc["markers"].push_back({{"radius_mm", m.radius_mm},
                              {"log_step", m.log_step},
                              {"profile", m.profile == IntensityProfile::Flat ? "flat" : "cosine"},
                              {"trajectory", trajectory_json(m.trajectory)}});
  }
  doc["glare"] = json::array();
  for (const auto& g : s.glare) {
    doc["glare"].push_back({{"x0", g.x0}, {"y0", g.y0}, {"x1", g.x1}, {"y1", g.y1}, {"noise_rate", g.noise_rate}});
  }
  return doc.dump(2) + "\n";
}

ScenarioConfig scenario_from_json(const std::string& text) {
  ScenarioConfig s;
  try {
    const json doc = json::parse(text);
    if (doc.contains("preset")) {
      const auto name = doc["preset"].get<std::string>();
      if (name != "paper-rig") throw Error(ErrorCode::ConfigError, "unknown preset '" + name + "'");
      s = preset_paper_rig();
    }
    s.blink_freq_hz = doc.value("blink_freq_hz", s.blink_freq_hz);
    s.duty_cycle = doc.value("duty_cycle", s.duty_cycle);
    s.contrast_threshold = doc.value("contrast_threshold", s.contrast_threshold);
    s.noise_rate = doc.value("noise_rate", s.noise_rate);
    s.latency_jitter_std_us = doc.value("latency_jitter_std_us", s.latency_jitter_std_us);
    s.refractory_us = doc.value("refractory_us", s.refractory_us);
    s.duration_s = doc.value("duration_s", s.duration_s);
    s.seed = doc.value("seed", s.seed);
    if (doc.contains("cameras")) {
      s.cameras.clear();
      for (const auto& c : doc["cameras"]) s.cameras.push_back(camera_from(c));
    }
    if (doc.contains("markers")) {
      s.markers.clear();
      for (const auto& j : doc["markers"]) {
        MarkerConfig m;
        m.radius_mm = j.value("radius_mm", m.radius_mm);
        m.log_step = j.value("log_step", m.log_step);
        const auto profile = j.value("profile", std::string("cosine"));
        if (profile != "cosine" && profile != "flat") throw Error(ErrorCode::ConfigError, "unknown profile '" + profile + "'");
        m.profile = profile == "flat" ? IntensityProfile::Flat : IntensityProfile::Cosine;
        m.trajectory = trajectory_from(j.at("trajectory"));
        s.markers.push_back(m);
      }
    }
    if (doc.contains("glare")) {
      s.glare.clear();
      for (const auto& g : doc["glare"]) {
        s.glare.push_back({g.at("x0").get<int>(), g.at("y0").get<int>(), g.at("x1").get<int>(), g.at("y1").get<int>(),
                           g.at("noise_rate").get<double>()});
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("scenario: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace evdeform
