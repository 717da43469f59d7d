#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace evdeform {

enum class Polarity : std::uint8_t { Off = 0, On = 1 };

struct Event {
  std::uint64_t t = 0;  // microseconds
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  Polarity polarity = Polarity::On;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Strict weak order on (t, x, y, polarity).
bool event_less(const Event& a, const Event& b);

struct SensorSize {
  int width = 1280;
  int height = 720;

  friend bool operator==(const SensorSize&, const SensorSize&) = default;
};

struct EventStream {
  int camera_id = 0;
  SensorSize sensor;
  std::vector<Event> events;

  bool empty() const { return events.empty(); }
  std::size_t size() const { return events.size(); }
  bool is_sorted() const;
  std::uint64_t t_min() const { return events.empty() ? 0 : events.front().t; }
  std::uint64_t t_max() const { return events.empty() ? 0 : events.back().t; }

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

enum class StreamFormat { Csv, Binary };

StreamFormat parse_stream_format(std::string_view name);
std::string_view stream_format_name(StreamFormat format);
std::string_view stream_format_extension(StreamFormat format);

struct ReadStreamResult {
  EventStream stream;
  /// Number of records that arrived out of (t, x, y, polarity) order and were
  /// fixed by a stable sort.
  std::size_t out_of_order = 0;
};

/// Binary layout, little endian:
///   header (16 bytes): "EVSTRM" | u16 version | u16 width | u16 height |
///                      u16 camera_id | u16 reserved
///   record (13 bytes): u64 t_us | u16 x | u16 y | u8 polarity
/// CSV layout: optional header "t_us,x,y,polarity", then one record per line,
/// polarity 1 = ON, 0 = OFF. CSV carries no sensor size, so `sensor` and
/// `camera_id` supply them; for binary files they are taken from the header.
ReadStreamResult read_stream(const std::filesystem::path& path, StreamFormat format, SensorSize sensor = {},
                             int camera_id = 0);

void write_stream(const std::filesystem::path& path, const EventStream& stream, StreamFormat format);

/// Events with t0 <= t < t1, order preserved.
EventStream slice_by_time(const EventStream& stream, std::uint64_t t0, std::uint64_t t1);

}  // namespace evdeform
