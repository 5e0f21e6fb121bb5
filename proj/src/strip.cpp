#include "lsa/strip.hpp"

#include <cstring>

#include "lsa/common.hpp"

namespace lsa {

namespace {
constexpr char kStripMagic[4] = {'S', 'T', 'R', 'P'};
constexpr uint32_t kStripVersion = 1;
constexpr char kTileMagic[4] = {'T', 'I', 'L', 'E'};
constexpr uint32_t kTileVersion = 1;
}  // namespace

size_t ScanStrip::point_count() const {
  size_t n = 0;
  for (const auto& c : cells)
    if (c) ++n;
  return n;
}

// .strip layout (little-endian):
//   magic "STRP" | u32 version | u32 strip_id | u32 scanner_id
//   | u32 rows | u32 cols | u32 trajectory_id
//   | presence bitmap, ceil(rows*cols/8) bytes, row-major, LSB first
//   | per present cell in row-major order: f64 xyz[3], t0[3], arc
void write_strip(const ScanStrip& strip, const std::filesystem::path& path) {
  auto os = open_out(path);
  BinaryWriter w(os);
  w.raw(kStripMagic, 4);
  w.u32(kStripVersion);
  w.u32(strip.strip_id);
  w.u32(strip.scanner_id);
  w.u32(strip.rows);
  w.u32(strip.cols);
  w.u32(strip.trajectory_id);

  const size_t n = size_t(strip.rows) * strip.cols;
  std::vector<uint8_t> bitmap((n + 7) / 8, 0);
  for (size_t i = 0; i < n; ++i)
    if (strip.cells[i]) bitmap[i / 8] |= uint8_t(1u << (i % 8));
  w.raw(bitmap.data(), bitmap.size());

  for (size_t i = 0; i < n; ++i) {
    if (!strip.cells[i]) continue;
    const StripPoint& p = *strip.cells[i];
    w.vec3(p.xyz);
    w.vec3(p.t0);
    w.f64(p.arc);
  }
  if (!os) throw std::runtime_error("write_strip: I/O failure on " + path.string());
}

ScanStrip read_strip(const std::filesystem::path& path) {
  auto is = open_in(path);
  BinaryReader r(is);
  try {
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kStripMagic, 4) != 0)
      throw StripParseError(StripParseError::Kind::bad_magic, "not a strip file: " + path.string());
    uint32_t version = r.u32();
    if (version != kStripVersion)
      throw StripParseError(StripParseError::Kind::bad_version,
                            "unsupported strip version " + std::to_string(version));
    ScanStrip strip;
    strip.strip_id = r.u32();
    strip.scanner_id = r.u32();
    strip.rows = r.u32();
    strip.cols = r.u32();
    strip.trajectory_id = r.u32();

    const size_t n = size_t(strip.rows) * strip.cols;
    std::vector<uint8_t> bitmap((n + 7) / 8);
    r.raw(bitmap.data(), bitmap.size());
    strip.cells.resize(n);
    for (size_t i = 0; i < n; ++i) {
      if (!(bitmap[i / 8] & (1u << (i % 8)))) continue;
      StripPoint p;
      p.xyz = r.vec3();
      p.t0 = r.vec3();
      p.arc = r.f64();
      p.row = uint32_t(i / strip.cols);
      p.col = uint32_t(i % strip.cols);
      strip.cells[i] = p;
    }
    return strip;
  } catch (const TruncatedError&) {
    throw StripParseError(StripParseError::Kind::truncated, "truncated strip file: " + path.string());
  }
}

void encode_point_record(const PointRecord& rec, std::string& out) {
  char buf[kPointRecordBytes];
  char* p = buf;
  auto put_d = [&p](double v) {
    std::memcpy(p, &v, 8);
    p += 8;
  };
  auto put_u = [&p](uint32_t v) {
    std::memcpy(p, &v, 4);
    p += 4;
  };
  put_d(rec.xyz.x());
  put_d(rec.xyz.y());
  put_d(rec.xyz.z());
  put_d(rec.t0.x());
  put_d(rec.t0.y());
  put_d(rec.t0.z());
  put_d(rec.normal.x());
  put_d(rec.normal.y());
  put_d(rec.normal.z());
  put_d(rec.arc);
  put_u(rec.trajectory_id);
  put_u(rec.strip_id);
  put_u(rec.segment_id);
  put_u(rec.row);
  put_u(rec.col);
  out.append(buf, kPointRecordBytes);
}

PointRecord decode_point_record(const char* data, size_t n) {
  if (n != kPointRecordBytes) throw std::runtime_error("point record has wrong size");
  const char* p = data;
  auto get_d = [&p]() {
    double v;
    std::memcpy(&v, p, 8);
    p += 8;
    return v;
  };
  auto get_u = [&p]() {
    uint32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    return v;
  };
  PointRecord rec;
  rec.xyz = {get_d(), get_d(), get_d()};
  rec.t0 = {get_d(), get_d(), get_d()};
  rec.normal = {get_d(), get_d(), get_d()};
  rec.arc = get_d();
  rec.trajectory_id = get_u();
  rec.strip_id = get_u();
  rec.segment_id = get_u();
  rec.row = get_u();
  rec.col = get_u();
  return rec;
}

void write_tile(const std::vector<PointRecord>& records, const std::filesystem::path& path) {
  std::string body;
  body.reserve(records.size() * kPointRecordBytes);
  for (const auto& rec : records) encode_point_record(rec, body);

  auto os = open_out(path);
  BinaryWriter w(os);
  w.raw(kTileMagic, 4);
  w.u32(kTileVersion);
  w.u64(records.size());
  w.bytes(body);
  if (!os) throw std::runtime_error("write_tile: I/O failure on " + path.string());
}

std::vector<PointRecord> read_tile(const std::filesystem::path& path) {
  auto is = open_in(path);
  BinaryReader r(is);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kTileMagic, 4) != 0)
    throw std::runtime_error("not a tile file: " + path.string());
  uint32_t version = r.u32();
  if (version != kTileVersion)
    throw std::runtime_error("unsupported tile version " + std::to_string(version));
  uint64_t count = r.u64();
  std::vector<PointRecord> records;
  records.reserve(count);
  std::vector<char> buf(kPointRecordBytes);
  for (uint64_t i = 0; i < count; ++i) {
    r.raw(buf.data(), buf.size());
    records.push_back(decode_point_record(buf.data(), buf.size()));
  }
  return records;
}

}  // namespace lsa
