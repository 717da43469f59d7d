#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "evdeform/error.hpp"
#include "evdeform/event_stream.hpp"
#include "support.hpp"

using namespace evdeform;

namespace {

EventStream random_stream(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> x(0, 1279), y(0, 719), p(0, 1), dt(0, 3);
  EventStream s;
  s.camera_id = 4;
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t += static_cast<std::uint64_t>(dt(rng));
    s.events.push_back({t, static_cast<std::uint16_t>(x(rng)), static_cast<std::uint16_t>(y(rng)),
                        p(rng) ? Polarity::On : Polarity::Off});
  }
  std::stable_sort(s.events.begin(), s.events.end(), event_less);
  return s;
}

}  // namespace

TEST_CASE("csv: single record") {
  const auto dir = testing::scratch_dir("csv_single");
  std::ofstream(dir / "s.csv") << "5,100,200,1\n";
  const auto r = read_stream(dir / "s.csv", StreamFormat::Csv, {1280, 720});
  REQUIRE(r.stream.size() == 1);
  CHECK(r.stream.events[0] == Event{5, 100, 200, Polarity::On});
  CHECK(r.out_of_order == 0);
}

TEST_CASE("csv: header line and polarity 0") {
  const auto dir = testing::scratch_dir("csv_header");
  std::ofstream(dir / "s.csv") << "t_us,x,y,polarity\n7,1,2,0\n";
  const auto r = read_stream(dir / "s.csv", StreamFormat::Csv);
  REQUIRE(r.stream.size() == 1);
  CHECK(r.stream.events[0].polarity == Polarity::Off);
}

TEST_CASE("empty file gives an empty stream") {
  const auto dir = testing::scratch_dir("csv_empty");
  std::ofstream(dir / "s.csv").flush();
  const auto r = read_stream(dir / "s.csv", StreamFormat::Csv);
  CHECK(r.stream.empty());
  CHECK(r.out_of_order == 0);
}

TEST_CASE("csv: out-of-bounds pixel is rejected") {
  const auto dir = testing::scratch_dir("csv_bounds");
  std::ofstream(dir / "s.csv") << "5,1280,200,1\n";
  CHECK_THROWS_AS(read_stream(dir / "s.csv", StreamFormat::Csv, {1280, 720}), Error);
}

TEST_CASE("csv: malformed record is rejected") {
  const auto dir = testing::scratch_dir("csv_bad");
  std::ofstream(dir / "s.csv") << "5,abc,200,1\n";
  CHECK_THROWS_AS(read_stream(dir / "s.csv", StreamFormat::Csv), Error);
}

TEST_CASE("out-of-order records are sorted and counted") {
  const auto dir = testing::scratch_dir("csv_order");
  std::ofstream(dir / "s.csv") << "10,1,1,1\n5,2,2,1\n20,3,3,0\n";
  const auto r = read_stream(dir / "s.csv", StreamFormat::Csv);
  CHECK(r.stream.is_sorted());
  CHECK(r.out_of_order == 1);
  CHECK(r.stream.events.front().t == 5);
}

TEST_CASE("binary and csv round trips on a million events") {
  const EventStream s = random_stream(1000000, 1);
  const auto dir = testing::scratch_dir("roundtrip");
  write_stream(dir / "s.evt", s, StreamFormat::Binary);
  const auto b = read_stream(dir / "s.evt", StreamFormat::Binary);
  CHECK(b.stream == s);
  CHECK(std::filesystem::file_size(dir / "s.evt") == 16 + 13 * s.size());
  write_stream(dir / "s.csv", s, StreamFormat::Csv);
  const auto c = read_stream(dir / "s.csv", StreamFormat::Csv, s.sensor, s.camera_id);
  CHECK(c.stream == s);
}

TEST_CASE("binary header layout") {
  EventStream s;
  s.camera_id = 3;
  s.sensor = {640, 480};
  s.events.push_back({0x0102030405060708ULL, 0x0A0B, 0x0C0D, Polarity::On});
  const auto dir = testing::scratch_dir("header");
  write_stream(dir / "s.evt", s, StreamFormat::Binary);
  std::ifstream in(dir / "s.evt", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 29);
  CHECK(std::string(bytes.begin(), bytes.begin() + 6) == "EVSTRM");
  CHECK(bytes[8] == (640 & 0xFF));
  CHECK(bytes[9] == (640 >> 8));
  CHECK(bytes[12] == 3);
  CHECK(bytes[16] == 0x08);  // little-endian timestamp
  CHECK(bytes[23] == 0x01);
  CHECK(bytes[24] == 0x0B);
  CHECK(bytes[28] == 1);
}

TEST_CASE("slice: whole range and empty interval") {
  const EventStream s = random_stream(1000, 2);
  CHECK(slice_by_time(s, 0, s.t_max() + 1) == s);
  CHECK(slice_by_time(s, 100, 100).empty());
}

TEST_CASE("slice: equals a linear-scan filter") {
  const EventStream s = random_stream(5000, 3);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::uint64_t> t(0, s.t_max());
  for (int i = 0; i < 50; ++i) {
    std::uint64_t a = t(rng), b = t(rng);
    if (a > b) std::swap(a, b);
    std::vector<Event> expected;
    for (const auto& e : s.events) {
      if (e.t >= a && e.t < b) expected.push_back(e);
    }
    CHECK(slice_by_time(s, a, b).events == expected);
  }
}

TEST_CASE("format names") {
  CHECK(parse_stream_format("csv") == StreamFormat::Csv);
  CHECK(parse_stream_format("binary") == StreamFormat::Binary);
  CHECK_THROWS_AS(parse_stream_format("hdf5"), Error);
}
