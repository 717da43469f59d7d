#include "evdeform/event_stream.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "evdeform/error.hpp"

namespace evdeform {

namespace {

constexpr std::array<char, 6> kMagic{'E', 'V', 'S', 'T', 'R', 'M'};
constexpr std::uint16_t kBinaryVersion = 1;
constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kRecordBytes = 13;

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

void check_bounds(const Event& e, const SensorSize& sensor, const std::string& where) {
  if (e.x >= sensor.width || e.y >= sensor.height) {
    throw Error(ErrorCode::BoundsError, where + ": pixel (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                                            ") outside sensor " + std::to_string(sensor.width) + "x" +
                                            std::to_string(sensor.height));
  }
}

std::size_t sort_and_count(std::vector<Event>& events) {
  std::size_t out_of_order = 0;
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (event_less(events[i], events[i - 1])) ++out_of_order;
  }
  if (out_of_order > 0) std::stable_sort(events.begin(), events.end(), event_less);
  return out_of_order;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
bool parse_field(std::string_view field, T& out) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
  const auto res = std::from_chars(field.data(), field.data() + field.size(), out);
  return res.ec == std::errc() && res.ptr == field.data() + field.size();
}

ReadStreamResult read_csv(const std::filesystem::path& path, SensorSize sensor, int camera_id) {
  const std::string text = read_file(path);
  ReadStreamResult result;
  result.stream.camera_id = camera_id;
  result.stream.sensor = sensor;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line_no == 1 && line.starts_with("t_us")) continue;

    std::array<std::string_view, 4> fields;
    std::size_t count = 0;
    std::size_t start = 0;
    while (count < 4) {
      const std::size_t comma = line.find(',', start);
      const std::size_t stop = comma == std::string_view::npos ? line.size() : comma;
      fields[count++] = line.substr(start, stop - start);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (count != 4 || line.find(',', start) != std::string_view::npos) {
      throw Error(ErrorCode::ParseError, where + ": expected 4 fields");
    }
    std::uint64_t t = 0;
    unsigned x = 0, y = 0, p = 0;
    if (!parse_field(fields[0], t) || !parse_field(fields[1], x) || !parse_field(fields[2], y) ||
        !parse_field(fields[3], p) || p > 1 || x > 0xFFFF || y > 0xFFFF) {
      throw Error(ErrorCode::ParseError, where + ": malformed record");
    }
    Event e{t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), p == 1 ? Polarity::On : Polarity::Off};
    check_bounds(e, sensor, where);
    result.stream.events.push_back(e);
  }
  result.out_of_order = sort_and_count(result.stream.events);
  return result;
}

ReadStreamResult read_binary(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  if (data.size() < kHeaderBytes || std::memcmp(data.data(), kMagic.data(), kMagic.size()) != 0) {
    throw Error(ErrorCode::ParseError, path.string() + ": offset 0: bad magic");
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
  const auto version = get_le<std::uint16_t>(bytes + 6);
  if (version != kBinaryVersion) {
    throw Error(ErrorCode::ParseError, path.string() + ": offset 6: unsupported version " + std::to_string(version));
  }
  ReadStreamResult result;
  result.stream.sensor.width = get_le<std::uint16_t>(bytes + 8);
  result.stream.sensor.height = get_le<std::uint16_t>(bytes + 10);
  result.stream.camera_id = get_le<std::uint16_t>(bytes + 12);
  const std::size_t payload = data.size() - kHeaderBytes;
  if (payload % kRecordBytes != 0) {
    throw Error(ErrorCode::ParseError, path.string() + ": offset " +
                                           std::to_string(kHeaderBytes + payload / kRecordBytes * kRecordBytes) +
                                           ": truncated record");
  }
  const std::size_t count = payload / kRecordBytes;
  result.stream.events.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* r = bytes + kHeaderBytes + i * kRecordBytes;
    Event& e = result.stream.events[i];
    e.t = get_le<std::uint64_t>(r);
    e.x = get_le<std::uint16_t>(r + 8);
    e.y = get_le<std::uint16_t>(r + 10);
    const unsigned char p = r[12];
    if (p > 1) {
      throw Error(ErrorCode::ParseError,
                  path.string() + ": offset " + std::to_string(kHeaderBytes + i * kRecordBytes + 12) + ": bad polarity");
    }
    e.polarity = p == 1 ? Polarity::On : Polarity::Off;
    check_bounds(e, result.stream.sensor,
                 path.string() + ": offset " + std::to_string(kHeaderBytes + i * kRecordBytes));
  }
  result.out_of_order = sort_and_count(result.stream.events);
  return result;
}

}  // namespace

bool event_less(const Event& a, const Event& b) {
  if (a.t != b.t) return a.t < b.t;
  if (a.x != b.x) return a.x < b.x;
  if (a.y != b.y) return a.y < b.y;
  return a.polarity < b.polarity;
}

bool EventStream::is_sorted() const { return std::is_sorted(events.begin(), events.end(), event_less); }

StreamFormat parse_stream_format(std::string_view name) {
  if (name == "csv") return StreamFormat::Csv;
  if (name == "binary" || name == "bin") return StreamFormat::Binary;
  throw Error(ErrorCode::ConfigError, "unknown stream format '" + std::string(name) + "'");
}

std::string_view stream_format_name(StreamFormat format) {
  return format == StreamFormat::Csv ? "csv" : "binary";
}

std::string_view stream_format_extension(StreamFormat format) {
  return format == StreamFormat::Csv ? ".csv" : ".evt";
}

ReadStreamResult read_stream(const std::filesystem::path& path, StreamFormat format, SensorSize sensor,
                             int camera_id) {
  return format == StreamFormat::Csv ? read_csv(path, sensor, camera_id) : read_binary(path);
}

void write_stream(const std::filesystem::path& path, const EventStream& stream, StreamFormat format) {
  std::string out;
  if (format == StreamFormat::Csv) {
    out.reserve(16 + stream.events.size() * 20);
    out += "t_us,x,y,polarity\n";
    char num[24];
    const auto put = [&](auto v) { out.append(num, std::to_chars(num, num + sizeof(num), v).ptr); };
    for (const Event& e : stream.events) {
      put(e.t);
      out += ',';
      put(e.x);
      out += ',';
      put(e.y);
      out += e.polarity == Polarity::On ? ",1\n" : ",0\n";
    }
  } else {
    out.reserve(kHeaderBytes + stream.events.size() * kRecordBytes);
    out.append(kMagic.data(), kMagic.size());
    put_le<std::uint16_t>(out, kBinaryVersion);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(stream.sensor.width));
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(stream.sensor.height));
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(stream.camera_id));
    put_le<std::uint16_t>(out, 0);
    for (const Event& e : stream.events) {
      put_le<std::uint64_t>(out, e.t);
      put_le<std::uint16_t>(out, e.x);
      put_le<std::uint16_t>(out, e.y);
      out.push_back(e.polarity == Polarity::On ? 1 : 0);
    }
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

EventStream slice_by_time(const EventStream& stream, std::uint64_t t0, std::uint64_t t1) {
  EventStream out;
  out.camera_id = stream.camera_id;
  out.sensor = stream.sensor;
  if (t1 <= t0) return out;
  const auto lo = std::lower_bound(stream.events.begin(), stream.events.end(), t0,
                                   [](const Event& e, std::uint64_t t) { return e.t < t; });
  const auto hi = std::lower_bound(lo, stream.events.end(), t1,
                                   [](const Event& e, std::uint64_t t) { return e.t < t; });
  out.events.assign(lo, hi);
  return out;
}

}  // namespace evdeform
