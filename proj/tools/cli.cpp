#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>

#include "evdeform/deformation.hpp"
#include "evdeform/error.hpp"
#include "evdeform/event_stream.hpp"
#include "evdeform/marker_extraction.hpp"
#include "evdeform/self_calibration.hpp"
#include "evdeform/simulator.hpp"
#include "evdeform/verification.hpp"

#ifndef EVDEFORM_VERSION
#define EVDEFORM_VERSION "0.0.0"
#endif

namespace evdeform::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::string format = "csv";
};

/// Accumulates a RunManifest while a command runs.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  void input(const fs::path& p) { inputs_.push_back(p.string()); }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }
  json& details() { return details_; }
  void warn(const std::string& w) { warnings_.push_back(w); }

  void write(const fs::path& dir, const GlobalOptions& g, std::optional<std::uint64_t> seed, const std::string& status) {
    json doc;
    doc["command"] = command_;
    doc["config"] = g.config;
    doc["inputs"] = inputs_;
    doc["outputs"] = outputs_;
    doc["seed"] = seed ? json(*seed) : json(nullptr);
    doc["version"] = EVDEFORM_VERSION;
    doc["status"] = status;
    doc["duration_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    doc["warnings"] = warnings_;
    doc["details"] = details_;
    write_file_atomic(dir / "manifest.json", doc.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> inputs_, outputs_, warnings_;
  json details_ = json::object();
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError:
    case ErrorCode::BoundsError:
    case ErrorCode::ConfigError:
    case ErrorCode::IoError:
    case ErrorCode::StreamTooShort:
    case ErrorCode::EmptyCluster:
    case ErrorCode::InsufficientCorrespondences:
    case ErrorCode::UnknownCamera:
    case ErrorCode::EmptySeries:
    case ErrorCode::ZeroObservedDistance:
      return kInvalidInput;
    default:
      return kNumericalFailure;
  }
}

fs::path require_out(const GlobalOptions& g) {
  if (g.out.empty()) throw Error(ErrorCode::ConfigError, "--out is required");
  fs::create_directories(g.out);
  return g.out;
}

/// Files named `<prefix><id>[_m<k>]<ext>` in a directory, keyed by marker then camera.
std::map<int, std::map<int, fs::path>> scan(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
  const std::regex pattern("^" + prefix + "(-?[0-9]+)(?:_m([0-9]+))?" + std::regex_replace(ext, std::regex("\\."), "\\.") + "$");
  std::map<int, std::map<int, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const int marker = m[2].matched ? std::stoi(m[2].str()) : 0;
    found[marker][std::stoi(m[1].str())] = entry.path();
  }
  return found;
}

std::map<int, std::vector<CenterObservation>> read_observations(const std::map<int, fs::path>& files) {
  std::map<int, std::vector<CenterObservation>> per_camera;
  for (const auto& [id, path] : files) per_camera[id] = read_observations_csv(path);
  return per_camera;
}

std::vector<CorrespondingPoint> match(const std::map<int, std::vector<CenterObservation>>& per_camera, double t_th_us) {
  std::vector<std::vector<CenterObservation>> seqs;
  for (const auto& [id, obs] : per_camera) seqs.push_back(obs);
  return match_corresponding(seqs, t_th_us);
}

CalibrationConfig calibration_config_from(const std::string& path) {
  CalibrationConfig c;
  if (path.empty()) return c;
  try {
    const json j = json::parse(read_text_file(path));
    c.reference_camera = j.value("reference_camera", c.reference_camera);
    c.initial_focal = j.value("initial_focal", c.initial_focal);
    c.free_principal_point = j.value("free_principal_point", c.free_principal_point);
    c.square_pixels = j.value("square_pixels", c.square_pixels);
    c.estimate_distortion = j.value("estimate_distortion", c.estimate_distortion);
    c.epipolar_threshold_px = j.value("epipolar_threshold_px", c.epipolar_threshold_px);
    c.reprojection_threshold_px = j.value("reprojection_threshold_px", c.reprojection_threshold_px);
    c.reproj_target_px = j.value("reproj_target_px", c.reproj_target_px);
    c.max_passes = j.value("max_passes", c.max_passes);
    c.min_correspondences = j.value("min_correspondences", c.min_correspondences);
    if (j.contains("sensors")) {
      for (const auto& s : j["sensors"]) c.sensors[s.at("id").get<int>()] = {s.at("width").get<int>(), s.at("height").get<int>()};
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("calibration config: ") + e.what());
  }
  return c;
}

json stats_json(const std::vector<CameraStats>& stats) {
  json a = json::array();
  for (const auto& s : stats) a.push_back({{"camera", s.camera_id}, {"mean_px", s.mean_px}, {"std_px", s.std_px}, {"count", s.count}});
  return a;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string preset;
};

int cmd_simulate(const GlobalOptions& g, const SimulateArgs& a, std::ostream& out) {
  const fs::path dir = require_out(g);
  Manifest man("simulate");
  ScenarioConfig sc;
  if (!g.config.empty()) {
    sc = scenario_from_json(read_text_file(g.config));
    man.input(g.config);
  } else if (a.preset.empty() || a.preset == "paper-rig") {
    sc = preset_paper_rig();
  } else {
    throw Error(ErrorCode::ConfigError, "unknown preset '" + a.preset + "'");
  }
  if (g.seed) sc.seed = *g.seed;
  sc.validate();
  const StreamFormat format = parse_stream_format(g.format);
  const SimulationOutput sim = simulate(sc);

  for (const auto& s : sim.streams) {
    const fs::path p = stream_file(dir, s.camera_id, g.format);
    write_stream(p, s, format);
    man.output(p);
    man.details()["events"][std::to_string(s.camera_id)] = s.size();
  }
  write_ground_truth_tracks(dir / "truth_tracks.csv", sim.truth, sc.cameras);
  write_ground_truth_trajectory(dir / "truth_trajectory.csv", sim.truth);
  write_file_atomic(dir / "scenario.json", scenario_to_json(sc));
  for (const char* f : {"truth_tracks.csv", "truth_trajectory.csv", "scenario.json"}) man.output(dir / f);
  man.details()["transitions"] = sim.truth.transition_times_us.size();
  man.write(dir, g, sc.seed, "ok");
  out << "simulated " << sim.streams.size() << " cameras, " << sim.truth.transition_times_us.size()
      << " blink transitions\n";
  return kOk;
}

struct ExtractArgs {
  std::string streams;
  std::string profile = "calibration";
  double blink_hz = 0.0;
  std::size_t markers = 1;
  int width = 1280, height = 720;
};

int cmd_extract(const GlobalOptions& g, const ExtractArgs& a, std::ostream& out) {
  const fs::path dir = require_out(g);
  Manifest man("extract");
  ExtractionProfile profile = ExtractionProfile::by_name(a.profile);
  if (a.blink_hz > 0.0) profile.blink_freq_hz = a.blink_hz;
  if (a.markers == 0) throw Error(ErrorCode::ConfigError, "--markers must be at least 1");
  const StreamFormat format = parse_stream_format(g.format);
  const auto files = scan(a.streams, "cam", std::string(stream_format_extension(format)));
  if (files.empty()) throw Error(ErrorCode::IoError, "no " + g.format + " streams in " + a.streams);

  std::vector<EventStream> streams;
  for (const auto& [id, path] : files.begin()->second) {
    ReadStreamResult r = read_stream(path, format, {a.width, a.height}, id);
    man.input(path);
    if (r.out_of_order > 0) man.warn(path.filename().string() + ": " + std::to_string(r.out_of_order) + " records re-sorted");
    streams.push_back(std::move(r.stream));
  }
  man.details()["profile"] = std::string(profile.name);
  man.details()["blink_freq_hz"] = profile.blink_freq_hz;
  man.details()["markers"] = a.markers;
  for (const auto& s : streams) {
    const ExtractionConfig cfg = profile.configure(s, a.markers);
    std::vector<Vec2> seeds;
    if (a.markers > 1) seeds = detect_marker_seeds(s, a.markers, 4 * a.markers * cfg.events_per_window, cfg.polarity);
    json cam;
    cam["events_per_window"] = cfg.events_per_window;
    for (std::size_t k = 0; k < a.markers; ++k) {
      ExtractionConfig c = cfg;
      if (a.markers > 1) c.seed_center = seeds[k];
      const ExtractionResult r = extract_center_sequence(s, c);
      const fs::path p = observation_file(dir, s.camera_id, a.markers > 1 ? static_cast<int>(k) : -1);
      write_observations_csv(p, r.observations);
      man.output(p);
      cam["observations"].push_back(r.observations.size());
      cam["reseeds"].push_back(r.reseeds);
      out << "camera " << s.camera_id << (a.markers > 1 ? " marker " + std::to_string(k) : "") << ": "
          << r.observations.size() << " centers (n=" << cfg.events_per_window << ")\n";
    }
    man.details()["cameras"][std::to_string(s.camera_id)] = cam;
  }
  man.write(dir, g, g.seed, "ok");
  return kOk;
}

struct CalibrateArgs {
  std::string observations;
  double blink_hz = 250.0;
};

int cmd_calibrate(const GlobalOptions& g, const CalibrateArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dir = require_out(g);
  Manifest man("calibrate");
  CalibrationConfig config = calibration_config_from(g.config);
  if (!g.config.empty()) man.input(g.config);
  if (g.seed) config.ransac.seed = *g.seed;
  const auto files = scan(a.observations, "obs_cam", ".csv");
  if (files.empty() || files.begin()->second.size() < 2) {
    throw Error(ErrorCode::InsufficientCorrespondences, "calibration needs observations from at least two cameras");
  }
  for (const auto& [id, p] : files.begin()->second) man.input(p);
  const auto matched = match(read_observations(files.begin()->second), default_match_threshold_us(a.blink_hz));
  man.details()["correspondences"] = matched.size();

  const auto write_result = [&](const CalibrationResult& r, const std::string& status) {
    write_rig(dir / "calibration.json", r.rig);
    write_file_atomic(dir / "calibration_log.json", calibration_log_json(r));
    man.output(dir / "calibration.json");
    man.output(dir / "calibration_log.json");
    man.details()["stats"] = stats_json(r.stats);
    man.details()["passes"] = r.log.size();
    for (const auto& w : r.warnings) man.warn(w);
    man.write(dir, g, config.ransac.seed, status);
  };
  try {
    const CalibrationResult r = calibrate(matched, config);
    write_result(r, "ok");
    for (const auto& s : r.stats) {
      out << "camera " << s.camera_id << ": mean " << s.mean_px << " px, std " << s.std_px << " px\n";
    }
    return kOk;
  } catch (const CalibrationFailed& e) {
    write_result(e.best(), "failed");
    err << "evdeform: " << e.what() << " (best result written)\n";
    return kNumericalFailure;
  }
}

struct MeasureArgs {
  std::string calibration;
  std::string observations;
  std::string anchor;
  bool metric = false;
  double blink_hz = 250.0;
  double known_distance = 0.0;
  double max_residual_px = 1.0;
  std::size_t baseline_samples = 50;
};

/// "baseline:A:B:DIST" or "none".
RigCalibration apply_anchor(const RigCalibration& rig, const std::string& text) {
  if (text.empty() || text == "none") return rig;
  std::smatch m;
  static const std::regex pattern(R"(^baseline:(-?\d+):(-?\d+):([0-9.eE+-]+)$)");
  if (!std::regex_match(text, m, pattern)) throw Error(ErrorCode::ConfigError, "bad anchor '" + text + "'");
  return anchor_on_baseline(rig, std::stoi(m[1].str()), std::stoi(m[2].str()), std::stod(m[3].str()));
}

int cmd_measure(const GlobalOptions& g, const MeasureArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dir = require_out(g);
  Manifest man("measure");
  const CameraRig stored = read_rig(a.calibration);
  man.input(a.calibration);
  RigCalibration rig = apply_anchor(rebase_extrinsics(stored, stored.reference_camera), a.anchor);
  if (a.metric && !rig.metric_scale) {
    const std::string w = "metric units requested without an anchor; reporting internal units";
    err << "evdeform: warning: " << w << "\n";
    man.warn(w);
  }
  const auto files = scan(a.observations, "obs_cam", ".csv");
  if (files.empty()) throw Error(ErrorCode::IoError, "no observation files in " + a.observations);
  const double t_th = default_match_threshold_us(a.blink_hz);
  DeformationOptions options;
  options.max_residual_px = a.max_residual_px;
  options.baseline_samples = a.baseline_samples;

  std::vector<DeformationSeries> series;
  for (const auto& [marker, cams] : files) {
    for (const auto& [id, p] : cams) man.input(p);
    const auto matched = match(read_observations(cams), t_th);
    DeformationSeries s = measure_deformation(rig, matched, options);
    const fs::path csv = dir / ("series_m" + std::to_string(marker) + ".csv");
    const fs::path summary = dir / ("summary_m" + std::to_string(marker) + ".json");
    write_series_csv(csv, s);
    write_file_atomic(summary, series_summary_json(s));
    man.output(csv);
    man.output(summary);
    man.details()["markers"][std::to_string(marker)] = {{"samples", s.samples.size()},
                                                        {"matched", matched.size()},
                                                        {"max_amplitude", s.max_amplitude},
                                                        {"metric", s.metric}};
    out << "marker " << marker << ": " << s.samples.size() << " samples, max amplitude " << s.max_amplitude
        << (s.metric ? " mm" : " (internal units)") << "\n";
    series.push_back(std::move(s));
  }
  if (series.size() == 2) {
    const auto d = inter_marker_distances(series[0], series[1], t_th);
    if (d.empty()) throw Error(ErrorCode::EmptySeries, "no simultaneous samples of both markers");
    std::ostringstream csv;
    csv.precision(17);
    csv << "t_us,distance\n";
    double longest = 0.0, sum = 0.0;
    for (const auto& x : d) {
      csv << x.t_us << "," << x.distance << "\n";
      longest = std::max(longest, x.distance);
      sum += x.distance;
    }
    write_file_atomic(dir / "distances.csv", csv.str());
    man.output(dir / "distances.csv");
    json dj{{"pairs", d.size()}, {"max", longest}, {"mean", sum / static_cast<double>(d.size())}};
    if (a.known_distance > 0.0) dj["max_rel_error"] = std::abs(longest - a.known_distance) / a.known_distance;
    man.details()["distance"] = dj;
    out << "inter-marker distance: max " << longest << ", mean " << sum / static_cast<double>(d.size());
    if (a.known_distance > 0.0) out << ", relative error of max " << dj["max_rel_error"].get<double>();
    out << "\n";
  }
  man.write(dir, g, g.seed, "ok");
  return kOk;
}

struct VerifyArgs {
  bool skip_determinism = false;
};

int cmd_verify(const GlobalOptions& g, const VerifyArgs& a, std::ostream& out) {
  VerificationOptions options;
  if (g.seed) options.seed = *g.seed;
  options.check_determinism = !a.skip_determinism;
  Manifest man("verify");
  const VerificationReport report = run_verification(options);
  out << report_table(report);
  out << (report.all_passed() ? "all criteria passed\n" : "some criteria failed\n");
  if (!g.out.empty()) {
    const fs::path dir = require_out(g);
    write_file_atomic(dir / "report.json", report_json(report));
    man.output(dir / "report.json");
    man.details()["passed"] = report.all_passed();
    man.write(dir, g, options.seed, report.all_passed() ? "ok" : "failed");
  }
  return report.all_passed() ? kOk : kNumericalFailure;
}

}  // namespace

fs::path stream_file(const fs::path& dir, int camera_id, const std::string& format) {
  return dir / ("cam" + std::to_string(camera_id) + std::string(stream_format_extension(parse_stream_format(format))));
}

fs::path observation_file(const fs::path& dir, int camera_id, int marker) {
  std::string name = "obs_cam" + std::to_string(camera_id);
  if (marker >= 0) name += "_m" + std::to_string(marker);
  return dir / (name + ".csv");
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-event-camera calibration and 3D deformation measurement", "evdeform"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed (default: fixed per command)");
  app.add_option("--config", g.config, "Scenario JSON (simulate) or calibration config JSON (calibrate)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--format", g.format, "Event stream format")->check(CLI::IsMember({"csv", "binary"}));

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Render event streams and ground truth for a scenario");
  c_sim->add_option("--preset", sim.preset, "Built-in scenario used when --config is absent")->check(CLI::IsMember({"paper-rig"}));

  ExtractArgs ext;
  auto* c_ext = app.add_subcommand("extract", "Extract marker centres from event streams");
  c_ext->add_option("--streams", ext.streams, "Directory of cam<id> stream files")->required();
  c_ext->add_option("--profile", ext.profile, "Extraction profile")->check(CLI::IsMember({"calibration", "measurement"}));
  c_ext->add_option("--blink-hz", ext.blink_hz, "Override the profile's blink frequency");
  c_ext->add_option("--markers", ext.markers, "Markers sharing each stream");
  c_ext->add_option("--width", ext.width, "Sensor width for CSV streams");
  c_ext->add_option("--height", ext.height, "Sensor height for CSV streams");

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate", "Self-calibrate the array from marker observations");
  c_cal->add_option("--observations", cal.observations, "Directory of obs_cam<id>.csv files")->required();
  c_cal->add_option("--blink-hz", cal.blink_hz, "Blink frequency used for the matching threshold");

  MeasureArgs mea;
  auto* c_mea = app.add_subcommand("measure", "Triangulate marker trajectories with a calibration");
  c_mea->add_option("--calibration", mea.calibration, "Calibration JSON")->required();
  c_mea->add_option("--observations", mea.observations, "Directory of obs_cam<id>[_m<k>].csv files")->required();
  c_mea->add_option("--anchor", mea.anchor, "Scale anchor: baseline:<camA>:<camB>:<distance> or none");
  c_mea->add_flag("--metric", mea.metric, "Request metric output (needs an anchor)");
  c_mea->add_option("--blink-hz", mea.blink_hz, "Blink frequency used for the matching threshold");
  c_mea->add_option("--known-distance", mea.known_distance, "True inter-marker distance for the error report");
  c_mea->add_option("--max-residual", mea.max_residual_px, "Drop samples above this residual (px)");
  c_mea->add_option("--baseline-samples", mea.baseline_samples, "Samples averaged for the zero-deformation datum");

  VerifyArgs ver;
  auto* c_ver = app.add_subcommand("verify", "Run the acceptance suite on the paper-rig preset");
  c_ver->add_flag("--skip-determinism", ver.skip_determinism, "Run the suite once");

  std::vector<const char*> argv{"evdeform"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "evdeform: " << e.what() << "\n";
    return kInvalidInput;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (c_sim->parsed()) return cmd_simulate(g, sim, out);
    if (c_ext->parsed()) return cmd_extract(g, ext, out);
    if (c_cal->parsed()) return cmd_calibrate(g, cal, out, err);
    if (c_mea->parsed()) return cmd_measure(g, mea, out, err);
    if (c_ver->parsed()) return cmd_verify(g, ver, out);
  } catch (const Error& e) {
    err << "evdeform: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "evdeform: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const std::exception& e) {
    err << "evdeform: " << e.what() << "\n";
    return kNumericalFailure;
  }
  return kInvalidInput;
}

}  // namespace evdeform::cli
