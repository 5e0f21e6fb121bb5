#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lsa/geom.hpp"

namespace lsa {

constexpr uint32_t kDefaultStripRows = 3000;  // measurements per scan head revolution

/// One LiDAR return inside the strip raster.
struct StripPoint {
  Eigen::Vector3d xyz{Eigen::Vector3d::Zero()};
  Eigen::Vector3d t0{Eigen::Vector3d::Zero()};
  double arc = 0.0;
  uint32_t row = 0;
  uint32_t col = 0;
};

/// Raster-ordered scan strip: rows = position in the scan profile,
/// columns = profile (time). Cells without a return stay empty.
struct ScanStrip {
  uint32_t strip_id = 0;
  uint32_t scanner_id = 0;
  uint32_t trajectory_id = 0;
  uint32_t rows = kDefaultStripRows;
  uint32_t cols = 0;
  std::vector<std::optional<StripPoint>> cells;  // row-major, rows*cols

  size_t idx(uint32_t row, uint32_t col) const { return size_t(row) * cols + col; }
  const std::optional<StripPoint>& at(uint32_t row, uint32_t col) const { return cells[idx(row, col)]; }
  std::optional<StripPoint>& at(uint32_t row, uint32_t col) { return cells[idx(row, col)]; }
  size_t point_count() const;
};

class StripParseError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, bad_version, truncated };
  StripParseError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

void write_strip(const ScanStrip& strip, const std::filesystem::path& path);
ScanStrip read_strip(const std::filesystem::path& path);

/// Ray form of a strip point: r = xyz - t0.
inline RayMeasurement ray_of(const StripPoint& p, uint32_t trajectory_id) {
  return {p.t0, p.xyz - p.t0, p.arc, trajectory_id};
}

/// Per-point record flowing through the pipeline after segmentation.
struct PointRecord {
  Eigen::Vector3d xyz{Eigen::Vector3d::Zero()};
  Eigen::Vector3d t0{Eigen::Vector3d::Zero()};
  Eigen::Vector3d normal{Eigen::Vector3d::Zero()};
  double arc = 0.0;
  uint32_t trajectory_id = 0;
  uint32_t strip_id = 0;
  uint32_t segment_id = 0;
  uint32_t row = 0;
  uint32_t col = 0;
};

inline RayMeasurement ray_of(const PointRecord& p) {
  return {p.t0, p.xyz - p.t0, p.arc, p.trajectory_id};
}

constexpr size_t kPointRecordBytes = 100;

void encode_point_record(const PointRecord& rec, std::string& out);
PointRecord decode_point_record(const char* data, size_t n);

/// Tile files hold the point records of one spatial tile, sorted by
/// (strip_id, row, col).
void write_tile(const std::vector<PointRecord>& records, const std::filesystem::path& path);
std::vector<PointRecord> read_tile(const std::filesystem::path& path);

}  // namespace lsa
