#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lsa/common.hpp"
#include "lsa/strip.hpp"

using namespace lsa;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "lsa_strip_tests";
  fs::create_directories(dir);
  return dir;
}

ScanStrip sample_strip(uint32_t rows, uint32_t cols, double empty_fraction) {
  ScanStrip strip;
  strip.strip_id = 42;
  strip.scanner_id = 1;
  strip.trajectory_id = 9;
  strip.rows = rows;
  strip.cols = cols;
  strip.cells.assign(size_t(rows) * cols, std::nullopt);
  SplitMix64 rng(99);
  for (uint32_t r = 0; r < rows; ++r) {
    for (uint32_t c = 0; c < cols; ++c) {
      if (rng.uniform() < empty_fraction) continue;
      StripPoint p;
      p.xyz = {rng.uniform() * 10, rng.uniform() * 10, rng.uniform() * 3};
      p.t0 = {c * 0.1, 0, 2};
      p.arc = c * 0.1;
      p.row = r;
      p.col = c;
      strip.at(r, c) = p;
    }
  }
  return strip;
}

}  // namespace

TEST_CASE("strip round trip is field-exact and preserves emptiness") {
  auto dir = temp_dir();
  ScanStrip strip = sample_strip(3000, 10, 0.4);
  auto path = dir / "roundtrip.strip";
  write_strip(strip, path);
  ScanStrip loaded = read_strip(path);

  CHECK(loaded.strip_id == strip.strip_id);
  CHECK(loaded.scanner_id == strip.scanner_id);
  CHECK(loaded.trajectory_id == strip.trajectory_id);
  CHECK(loaded.rows == strip.rows);
  CHECK(loaded.cols == strip.cols);
  REQUIRE(loaded.cells.size() == strip.cells.size());
  for (size_t i = 0; i < strip.cells.size(); ++i) {
    REQUIRE(loaded.cells[i].has_value() == strip.cells[i].has_value());
    if (!strip.cells[i]) continue;
    CHECK(loaded.cells[i]->xyz == strip.cells[i]->xyz);
    CHECK(loaded.cells[i]->t0 == strip.cells[i]->t0);
    CHECK(loaded.cells[i]->arc == strip.cells[i]->arc);
    CHECK(loaded.cells[i]->row == strip.cells[i]->row);
    CHECK(loaded.cells[i]->col == strip.cells[i]->col);
  }
}

TEST_CASE("strip serialization is byte-deterministic") {
  auto dir = temp_dir();
  ScanStrip strip = sample_strip(100, 20, 0.3);
  write_strip(strip, dir / "a.strip");
  write_strip(strip, dir / "b.strip");
  CHECK(read_file(dir / "a.strip") == read_file(dir / "b.strip"));
}

TEST_CASE("strip parse errors are distinct") {
  auto dir = temp_dir();
  ScanStrip strip = sample_strip(10, 4, 0.0);
  auto path = dir / "victim.strip";
  write_strip(strip, path);
  std::string bytes = read_file(path);

  SUBCASE("wrong magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    write_file_atomic(dir / "bad_magic.strip", bad);
    try {
      read_strip(dir / "bad_magic.strip");
      FAIL("expected parse error");
    } catch (const StripParseError& e) {
      CHECK(e.kind == StripParseError::Kind::bad_magic);
    }
  }

  SUBCASE("wrong version") {
    std::string bad = bytes;
    bad[4] = 99;
    write_file_atomic(dir / "bad_version.strip", bad);
    try {
      read_strip(dir / "bad_version.strip");
      FAIL("expected parse error");
    } catch (const StripParseError& e) {
      CHECK(e.kind == StripParseError::Kind::bad_version);
    }
  }

  SUBCASE("truncated payload") {
    write_file_atomic(dir / "short.strip", bytes.substr(0, bytes.size() - 13));
    try {
      read_strip(dir / "short.strip");
      FAIL("expected parse error");
    } catch (const StripParseError& e) {
      CHECK(e.kind == StripParseError::Kind::truncated);
    }
  }
}

TEST_CASE("ray_of subtracts the scan head position") {
  StripPoint p;
  p.xyz = {5, 0, 2};
  p.t0 = {0, 0, 2};
  auto ray = ray_of(p, 3);
  CHECK(ray.r == Eigen::Vector3d(5, 0, 0));
  CHECK(ray.t0 == p.t0);
  CHECK(ray.trajectory_id == 3);

  SUBCASE("degenerate zero ray is representable and flagged by norm") {
    StripPoint q;
    q.xyz = q.t0 = {1, 2, 3};
    CHECK(ray_of(q, 0).r.norm() == 0.0);
  }

  SUBCASE("zero correction recovers the measured point") {
    // r + t0 is reproduced bit-exactly; recovering xyz through the
    // subtract-add round trip is exact only up to one rounding step.
    StripPoint exact;
    exact.xyz = {5, 0, 2};
    exact.t0 = {0, 0, 2};
    CHECK(apply_correction(PoseCorrection{}, ray_of(exact, 0)) == exact.xyz);

    SplitMix64 rng(7);
    for (int i = 0; i < 100; ++i) {
      StripPoint s;
      s.xyz = {rng.uniform() * 20, rng.uniform() * 20, rng.uniform() * 5};
      s.t0 = {rng.uniform() * 20, rng.uniform() * 20, 2.0};
      RayMeasurement ray = ray_of(s, 0);
      CHECK(apply_correction(PoseCorrection{}, ray) == Eigen::Vector3d(ray.r + ray.t0));
      CHECK(apply_correction(PoseCorrection{}, ray).isApprox(s.xyz, 1e-14));
    }
  }
}

TEST_CASE("point record codec and tile round trip") {
  SplitMix64 rng(8);
  std::vector<PointRecord> records;
  for (int i = 0; i < 257; ++i) {
    PointRecord rec;
    rec.xyz = {rng.uniform(), rng.uniform(), rng.uniform()};
    rec.t0 = {rng.uniform(), rng.uniform(), rng.uniform()};
    rec.normal = {0, 0, 1};
    rec.arc = rng.uniform() * 30;
    rec.trajectory_id = uint32_t(rng.below(4));
    rec.strip_id = uint32_t(rng.below(8));
    rec.segment_id = uint32_t(rng.below(100));
    rec.row = uint32_t(rng.below(3000));
    rec.col = uint32_t(rng.below(500));
    records.push_back(rec);
  }

  std::string buf;
  encode_point_record(records[0], buf);
  CHECK(buf.size() == kPointRecordBytes);
  PointRecord back = decode_point_record(buf.data(), buf.size());
  CHECK(back.xyz == records[0].xyz);
  CHECK(back.arc == records[0].arc);
  CHECK(back.row == records[0].row);

  auto dir = temp_dir();
  write_tile(records, dir / "t.tile");
  auto loaded = read_tile(dir / "t.tile");
  REQUIRE(loaded.size() == records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].xyz == records[i].xyz);
    CHECK(loaded[i].segment_id == records[i].segment_id);
  }
}
