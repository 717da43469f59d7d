#include "evdeform/marker_extraction.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "evdeform/error.hpp"

namespace evdeform {

const CenterObservation* CorrespondingPoint::find(int camera_id) const {
  for (const auto& v : views) {
    if (v.camera_id == camera_id) return &v;
  }
  return nullptr;
}

std::size_t choose_accumulation_count(double blink_freq_hz, double marker_speed_px_s, double event_rate_per_s,
                                      const AccumulationPolicy& policy) {
  const std::size_t n_min = std::max<std::size_t>(1, policy.n_min);
  const std::size_t n_max = std::max(n_min, policy.n_max);
  if (!(blink_freq_hz > 0.0) || !(event_rate_per_s > 0.0) || !(policy.duty_window > 0.0) ||
      !std::isfinite(blink_freq_hz) || !std::isfinite(event_rate_per_s)) {
    return n_min;
  }
  const double per_cycle = event_rate_per_s / blink_freq_hz * policy.duty_window;
  double n = std::clamp(std::round(per_cycle), static_cast<double>(n_min), static_cast<double>(n_max));
  if (marker_speed_px_s > 0.0 && policy.blur_budget_px > 0.0) {
    constexpr double kMinSpeed = 1e-9;
    const double blur_cap = std::floor(event_rate_per_s * policy.blur_budget_px / std::max(marker_speed_px_s, kMinSpeed));
    n = std::min(n, blur_cap);
  }
  if (!(n >= static_cast<double>(n_min))) return n_min;
  return static_cast<std::size_t>(n);
}

EventCluster accumulate_cluster(std::span<const Event> events) {
  if (events.empty()) throw Error(ErrorCode::EmptyCluster, "cannot summarize zero events");
  EventCluster c;
  c.count = events.size();
  const double inv_n = 1.0 / static_cast<double>(events.size());
  // Offset by the first event to keep the sums well conditioned.
  const double x0 = events.front().x;
  const double y0 = events.front().y;
  const auto t0 = events.front().t;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0, st = 0;
  c.t_min = c.t_max = t0;
  for (const Event& e : events) {
    const double dx = e.x - x0;
    const double dy = e.y - y0;
    sx += dx;
    sy += dy;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
    st += static_cast<double>(static_cast<std::int64_t>(e.t - t0));
    c.t_min = std::min(c.t_min, e.t);
    c.t_max = std::max(c.t_max, e.t);
  }
  const double mx = sx * inv_n;
  const double my = sy * inv_n;
  c.centroid = Vec2(x0 + mx, y0 + my);
  c.covariance(0, 0) = std::max(0.0, sxx * inv_n - mx * mx);
  c.covariance(1, 1) = std::max(0.0, syy * inv_n - my * my);
  c.covariance(0, 1) = c.covariance(1, 0) = sxy * inv_n - mx * my;
  c.t_c = static_cast<double>(t0) + st * inv_n;
  return c;
}

namespace {

Vec2 median_position(const std::deque<Event>& events) {
  std::vector<double> xs, ys;
  xs.reserve(events.size());
  ys.reserve(events.size());
  for (const Event& e : events) {
    xs.push_back(e.x);
    ys.push_back(e.y);
  }
  const auto mid = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid), xs.end());
  std::nth_element(ys.begin(), ys.begin() + static_cast<std::ptrdiff_t>(mid), ys.end());
  return {xs[mid], ys[mid]};
}

bool polarity_selected(const Event& e, PolaritySelection sel) {
  return sel == PolaritySelection::Both || e.polarity == Polarity::On;
}

}  // namespace

ExtractionResult extract_center_sequence(const EventStream& stream, const ExtractionConfig& config) {
  const std::size_t n = std::max<std::size_t>(1, config.events_per_window);
  const auto min_keep = static_cast<std::size_t>(std::ceil(config.min_fill * static_cast<double>(n)));
  const auto reseed_after = static_cast<std::size_t>(std::ceil(config.reseed_after_windows * static_cast<double>(n)));
  const double gate2 = config.gate_radius_px * config.gate_radius_px;

  ExtractionResult result;

  // Robust seed: median of the first n selected events.
  std::deque<Event> recent;
  for (const Event& e : stream.events) {
    if (!polarity_selected(e, config.polarity)) continue;
    recent.push_back(e);
    if (recent.size() == n) break;
  }
  if (recent.size() < n) {
    throw Error(ErrorCode::StreamTooShort, "stream has " + std::to_string(recent.size()) +
                                               " selected events, window needs " + std::to_string(n));
  }
  Vec2 center = config.seed_center.value_or(median_position(recent));
  recent.clear();

  std::vector<Event> window;
  window.reserve(n);
  double sum_x = 0.0, sum_y = 0.0;
  std::uint64_t last_accepted_t = 0;
  std::size_t reject_streak = 0;
  double last_tc = -std::numeric_limits<double>::infinity();
  const std::size_t running_min = std::min<std::size_t>(8, n);

  const auto reset_window = [&] {
    window.clear();
    sum_x = sum_y = 0.0;
  };
  const auto close_window = [&](bool full) {
    if (window.empty()) return;
    if (!full && window.size() < min_keep) {
      // Too few to report, but enough to keep the gate on the marker.
      if (window.size() >= running_min) {
        center = Vec2(sum_x / static_cast<double>(window.size()), sum_y / static_cast<double>(window.size()));
      }
      ++result.partial_discarded;
      reset_window();
      return;
    }
    EventCluster cluster = accumulate_cluster(window);
    if (cluster.t_c > last_tc) {
      last_tc = cluster.t_c;
      center = cluster.centroid;
      CenterObservation obs;
      obs.camera_id = stream.camera_id;
      obs.pixel = cluster.centroid;
      obs.t_c = cluster.t_c;
      obs.cluster = cluster;
      result.observations.push_back(obs);
    } else {
      ++result.partial_discarded;
    }
    reset_window();
  };

  for (const Event& e : stream.events) {
    if (!polarity_selected(e, config.polarity)) continue;
    if (!window.empty() && static_cast<double>(e.t - last_accepted_t) > config.max_gap_us) close_window(false);

    const Vec2 running = window.size() >= running_min
                             ? Vec2(sum_x / static_cast<double>(window.size()), sum_y / static_cast<double>(window.size()))
                             : center;
    const double dx = e.x - running.x();
    const double dy = e.y - running.y();
    if (dx * dx + dy * dy <= gate2) {
      window.push_back(e);
      sum_x += e.x;
      sum_y += e.y;
      ++result.accepted_events;
      last_accepted_t = e.t;
      reject_streak = 0;
      if (window.size() == n) close_window(true);
    } else {
      ++result.noise_rejected;
      ++reject_streak;
      recent.push_back(e);
      if (recent.size() > n) recent.pop_front();
      if (reject_streak >= reseed_after && recent.size() == n) {
        // Marker lost: restart from the median of recent activity.
        if (!window.empty()) ++result.partial_discarded;
        reset_window();
        center = median_position(recent);
        ++result.reseeds;
        reject_streak = 0;
      }
    }
  }
  close_window(false);

  if (result.accepted_events < n) {
    throw Error(ErrorCode::StreamTooShort, "only " + std::to_string(result.accepted_events) +
                                               " events passed the spatial gate, window needs " + std::to_string(n));
  }
  return result;
}

std::vector<Vec2> detect_marker_seeds(const EventStream& stream, std::size_t count, std::size_t sample,
                                      PolaritySelection polarity) {
  std::vector<Vec2> pts;
  for (const Event& e : stream.events) {
    if (!polarity_selected(e, polarity)) continue;
    pts.emplace_back(e.x, e.y);
    if (pts.size() == sample) break;
  }
  if (count == 0 || pts.size() < count) {
    throw Error(ErrorCode::StreamTooShort, "not enough events to seed " + std::to_string(count) + " markers");
  }

  std::vector<Vec2> centers{pts.front()};
  std::vector<double> d2(pts.size(), std::numeric_limits<double>::infinity());
  while (centers.size() < count) {
    std::size_t far = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      d2[i] = std::min(d2[i], (pts[i] - centers.back()).squaredNorm());
      if (d2[i] > d2[far]) far = i;
    }
    centers.push_back(pts[far]);
  }

  std::vector<std::size_t> label(pts.size(), 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < count; ++k) {
        if ((pts[i] - centers[k]).squaredNorm() < (pts[i] - centers[best]).squaredNorm()) best = k;
      }
      changed = changed || best != label[i];
      label[i] = best;
    }
    std::vector<Vec2> sum(count, Vec2::Zero());
    std::vector<std::size_t> members(count, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      sum[label[i]] += pts[i];
      ++members[label[i]];
    }
    for (std::size_t k = 0; k < count; ++k) {
      if (members[k] > 0) centers[k] = sum[k] / static_cast<double>(members[k]);
    }
    if (!changed && iter > 0) break;
  }
  std::sort(centers.begin(), centers.end(), [](const Vec2& a, const Vec2& b) { return a.x() < b.x(); });
  return centers;
}

ExtractionProfile ExtractionProfile::calibration() {
  ExtractionProfile p;
  p.name = "calibration";
  p.blink_freq_hz = 250.0;
  p.assumed_speed_px_s = 0.0;
  // One cycle's yield per window: a burst from the near end of a deep sweep
  // still fits whole, and far bursts a sixth of the mean yield are kept.
  p.accumulation = AccumulationPolicy{1.0, 8, 1000, 0.5};
  p.gate_radius_px = 30.0;
  p.min_fill = 0.15;
  return p;
}

ExtractionProfile ExtractionProfile::measurement() {
  ExtractionProfile p;
  p.name = "measurement";
  p.blink_freq_hz = 1000.0;
  p.assumed_speed_px_s = 0.0;
  p.accumulation = AccumulationPolicy{0.75, 8, 500, 0.5};
  p.gate_radius_px = 15.0;
  return p;
}

ExtractionProfile ExtractionProfile::by_name(std::string_view name) {
  if (name == "calibration") return calibration();
  if (name == "measurement") return measurement();
  throw Error(ErrorCode::ConfigError, "unknown extraction profile '" + std::string(name) + "'");
}

ExtractionConfig ExtractionProfile::configure(const EventStream& stream, std::size_t markers) const {
  ExtractionConfig config;
  double event_rate = 0.0;
  if (stream.size() >= 2 && stream.t_max() > stream.t_min()) {
    event_rate = static_cast<double>(stream.size()) / (static_cast<double>(stream.t_max() - stream.t_min()) * 1e-6);
    event_rate /= static_cast<double>(std::max<std::size_t>(1, markers));
  }
  config.events_per_window = choose_accumulation_count(blink_freq_hz, assumed_speed_px_s, event_rate, accumulation);
  config.polarity = polarity;
  config.gate_radius_px = gate_radius_px;
  config.min_fill = min_fill;
  config.max_gap_us = 1e6 / (4.0 * blink_freq_hz);
  return config;
}

std::vector<CorrespondingPoint> match_corresponding(std::span<const std::vector<CenterObservation>> sequences,
                                                    double t_th_us) {
  std::vector<CorrespondingPoint> out;
  std::vector<std::size_t> next(sequences.size(), 0);
  while (true) {
    std::size_t seed_seq = sequences.size();
    for (std::size_t s = 0; s < sequences.size(); ++s) {
      if (next[s] >= sequences[s].size()) continue;
      if (seed_seq == sequences.size() || sequences[s][next[s]].t_c < sequences[seed_seq][next[seed_seq]].t_c) {
        seed_seq = s;
      }
    }
    if (seed_seq == sequences.size()) break;

    CorrespondingPoint group;
    const CenterObservation& seed = sequences[seed_seq][next[seed_seq]++];
    group.views.push_back(seed);
    for (std::size_t s = 0; s < sequences.size(); ++s) {
      if (s == seed_seq || next[s] >= sequences[s].size()) continue;
      const CenterObservation& cand = sequences[s][next[s]];
      if (cand.t_c - seed.t_c <= t_th_us) {
        group.views.push_back(cand);
        ++next[s];
      }
    }
    if (group.views.size() < 2) continue;
    std::sort(group.views.begin(), group.views.end(),
              [](const CenterObservation& a, const CenterObservation& b) { return a.camera_id < b.camera_id; });
    double t_lo = group.views.front().t_c, t_hi = t_lo, t_sum = 0.0;
    for (const auto& v : group.views) {
      t_lo = std::min(t_lo, v.t_c);
      t_hi = std::max(t_hi, v.t_c);
      t_sum += v.t_c;
    }
    group.match_time_spread = t_hi - t_lo;
    group.mean_t = t_sum / static_cast<double>(group.views.size());
    out.push_back(std::move(group));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const CorrespondingPoint& a, const CorrespondingPoint& b) { return a.mean_t < b.mean_t; });
  return out;
}

double default_match_threshold_us(double blink_freq_hz) { return 1e6 / (4.0 * blink_freq_hz); }

void write_observations_csv(const std::filesystem::path& path, std::span<const CenterObservation> observations) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "camera_id,t_us,x,y,n,sxx,syy,sxy\n";
  char buf[256];
  for (const auto& o : observations) {
    std::snprintf(buf, sizeof(buf), "%d,%llu,%.17g,%.17g,%zu,%.17g,%.17g,%.17g\n", o.camera_id,
                  static_cast<unsigned long long>(o.cluster.t_c_rounded()), o.pixel.x(), o.pixel.y(), o.cluster.count,
                  o.cluster.covariance(0, 0), o.cluster.covariance(1, 1), o.cluster.covariance(0, 1));
    out << buf;
  }
}

std::vector<CenterObservation> read_observations_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<CenterObservation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.starts_with("camera_id"))) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 8) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": expected 8 fields");
    }
    try {
      CenterObservation o;
      o.camera_id = std::stoi(f[0]);
      const auto t = std::stoull(f[1]);
      o.pixel = Vec2(std::stod(f[2]), std::stod(f[3]));
      o.t_c = static_cast<double>(t);
      o.cluster.centroid = o.pixel;
      o.cluster.count = std::stoull(f[4]);
      o.cluster.covariance << std::stod(f[5]), std::stod(f[7]), std::stod(f[7]), std::stod(f[6]);
      o.cluster.t_c = o.t_c;
      o.cluster.t_min = o.cluster.t_max = t;
      out.push_back(o);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": malformed record");
    }
  }
  return out;
}

}  // namespace evdeform
