#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "evdeform/deformation.hpp"
#include "evdeform/self_calibration.hpp"
#include "evdeform/simulator.hpp"

namespace evdeform {

/// Acceptance checks run on the preset rig. Every figure is a deterministic
/// function of the seed except those flagged as timing.

struct FigureOfMerit {
  std::string name;
  double value = 0.0;
  bool timing = false;  // wall-clock; left out of determinism comparisons
};

struct CriterionResult {
  int id = 0;
  std::string title;
  bool passed = false;
  std::vector<FigureOfMerit> figures;
  std::string note;  // set when the run itself threw

  /// NaN when absent.
  double figure(std::string_view name) const;
  void add(std::string name, double value, bool timing = false);
};

struct VerificationReport {
  std::uint64_t seed = 0;
  std::vector<CriterionResult> criteria;

  bool all_passed() const;
};

/// Marker-only event calibration of the preset, rebased on its reference
/// camera and scaled by the 4640 mm camera 1-2 baseline.
struct PresetCalibration {
  ScenarioConfig scenario;
  CalibrationResult result;
  RigCalibration rig;
  RigCalibration truth;  // same reference camera, millimetres
  std::size_t correspondences = 0;
  double seconds = 0.0;
};

/// Simulates, extracts (calibration profile), matches and calibrates.
/// Throws whatever the pipeline throws.
PresetCalibration calibrate_preset_from_events(std::uint64_t seed);

/// Greedy time matching of the same marker across cameras for a stream set
/// holding `markers` markers; marker k is the k-th from the left in every
/// image. One sequence of correspondences per marker.
std::vector<std::vector<CorrespondingPoint>> extract_and_match(const std::vector<EventStream>& streams,
                                                               const ExtractionProfile& profile, std::size_t markers);

CriterionResult verify_calibration_reprojection(std::uint64_t seed);
CriterionResult verify_noiseless_consistency();
CriterionResult verify_pole_distance(const PresetCalibration& calibration, std::uint64_t seed);
CriterionResult verify_grid_spans(const PresetCalibration& calibration, std::uint64_t seed);
CriterionResult verify_deformation_sway(const PresetCalibration& calibration, std::uint64_t seed);
CriterionResult verify_properties(std::uint64_t seed);

/// Largest relative divergence over all non-timing figures; passes below
/// 1e-12 with identical figure sets.
CriterionResult compare_reports(const VerificationReport& first, const VerificationReport& second);

struct VerificationOptions {
  std::uint64_t seed = 20240611;
  bool check_determinism = true;  // second full run, adds criterion 7
};

VerificationReport run_verification(const VerificationOptions& options = {});

/// One line per criterion.
std::string report_table(const VerificationReport& report);
std::string report_json(const VerificationReport& report);

}  // namespace evdeform
