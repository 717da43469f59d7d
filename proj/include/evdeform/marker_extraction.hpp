#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "evdeform/event_stream.hpp"
#include "evdeform/geometry.hpp"

namespace evdeform {

/// Gaussian summary of an accumulated group of events.
struct EventCluster {
  Vec2 centroid = Vec2::Zero();
  Mat2 covariance = Mat2::Zero();  // population form (divide by n)
  std::size_t count = 0;
  double t_c = 0.0;  // mean timestamp, microseconds, full precision
  std::uint64_t t_min = 0;
  std::uint64_t t_max = 0;

  std::uint64_t t_c_rounded() const { return static_cast<std::uint64_t>(t_c + 0.5); }
};

struct CenterObservation {
  int camera_id = 0;
  Vec2 pixel = Vec2::Zero();
  double t_c = 0.0;
  EventCluster cluster;
};

/// One marker position seen by two or more cameras at (nearly) the same time.
struct CorrespondingPoint {
  std::vector<CenterObservation> views;  // sorted by camera_id, one per camera
  double match_time_spread = 0.0;
  double mean_t = 0.0;

  const CenterObservation* find(int camera_id) const;
  bool sees(int camera_id) const { return find(camera_id) != nullptr; }
};

struct AccumulationPolicy {
  double duty_window = 1.0;  // fraction of one blink cycle's events per window
  std::size_t n_min = 8;
  std::size_t n_max = 1000;
  double blur_budget_px = 0.5;
};

/// Events per window: per-cycle yield (event_rate / blink_freq * duty_window),
/// clamped to [n_min, n_max], then capped so the marker moves less than the
/// blur budget while the window fills.
std::size_t choose_accumulation_count(double blink_freq_hz, double marker_speed_px_s, double event_rate_per_s,
                                      const AccumulationPolicy& policy = {});

/// Throws EmptyCluster for an empty sequence.
EventCluster accumulate_cluster(std::span<const Event> events);

enum class PolaritySelection { Both, OnOnly };

struct ExtractionConfig {
  std::size_t events_per_window = 100;
  PolaritySelection polarity = PolaritySelection::Both;
  double gate_radius_px = 30.0;
  /// A gap between accepted events longer than this closes the current
  /// window early; it is kept if it holds at least min_fill * n events.
  double max_gap_us = 1000.0;
  double min_fill = 0.5;
  /// Consecutive rejections (in units of n) before the running center is
  /// re-seeded from the median of recent events.
  double reseed_after_windows = 4.0;
  /// Starting center instead of the median bootstrap. Needed when several
  /// markers share a stream; the gate then follows the one nearest the seed.
  std::optional<Vec2> seed_center;
};

struct ExtractionResult {
  std::vector<CenterObservation> observations;
  std::size_t accepted_events = 0;
  std::size_t noise_rejected = 0;
  std::size_t partial_discarded = 0;
  std::size_t reseeds = 0;
};

/// Throws StreamTooShort when fewer than n events pass the gate.
ExtractionResult extract_center_sequence(const EventStream& stream, const ExtractionConfig& config);

/// Starting centers for `count` markers sharing a stream: k-means over the
/// first `sample` selected events, farthest-point initialised, returned in
/// ascending image x. Throws StreamTooShort when fewer than `count` events
/// are available.
std::vector<Vec2> detect_marker_seeds(const EventStream& stream, std::size_t count, std::size_t sample,
                                      PolaritySelection polarity = PolaritySelection::Both);

/// Named parameter presets for the two stages of the workflow.
struct ExtractionProfile {
  std::string_view name;
  double blink_freq_hz = 250.0;
  double assumed_speed_px_s = 0.0;
  AccumulationPolicy accumulation;
  double gate_radius_px = 30.0;
  double min_fill = 0.5;
  PolaritySelection polarity = PolaritySelection::Both;

  static ExtractionProfile calibration();
  static ExtractionProfile measurement();
  static ExtractionProfile by_name(std::string_view name);

  /// Builds an extraction config for a stream, estimating the event rate
  /// from the stream itself. `markers` splits that rate when several markers
  /// share the stream.
  ExtractionConfig configure(const EventStream& stream, std::size_t markers = 1) const;
};

/// Greedy chronological grouping: the earliest unused observation seeds a
/// group, and every other camera contributes its earliest unused observation
/// within [seed, seed + t_th]. Groups with fewer than two cameras are dropped.
std::vector<CorrespondingPoint> match_corresponding(std::span<const std::vector<CenterObservation>> sequences,
                                                    double t_th_us);

/// Default matching threshold: a quarter of the blink period.
double default_match_threshold_us(double blink_freq_hz);

/// CSV: camera_id,t_us,x,y,n,sxx,syy,sxy
void write_observations_csv(const std::filesystem::path& path, std::span<const CenterObservation> observations);
std::vector<CenterObservation> read_observations_csv(const std::filesystem::path& path);

}  // namespace evdeform
