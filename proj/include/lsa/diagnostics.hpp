#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lsa/pipeline.hpp"
#include "lsa/synth.hpp"

namespace lsa {

/// Signed-distance histogram with half-open buckets [k*w, (k+1)*w).
struct Histogram {
  double bin_width = kHistogramBucket;
  std::map<int64_t, uint64_t> bins;
  uint64_t count = 0;
  double sum = 0.0;
  double sq_sum = 0.0;

  void add(double v);
  double mean() const { return count ? sum / double(count) : 0.0; }
  double stddev() const;

  /// CSV of (bin_center, count) rows plus a trailing summary comment. Empty
  /// input produces the header and a zero-count summary.
  std::string to_csv() const;

  static Histogram from_values(std::span<const double> values, double bin_width);
};

/// Binary little-endian PLY with double-precision coordinates and an
/// optional uchar RGB per point.
void write_ply(const std::filesystem::path& path, const std::vector<Eigen::Vector3d>& points,
               const std::vector<std::array<uint8_t, 3>>* colors = nullptr);

struct PlyCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<std::array<uint8_t, 3>> colors;  // empty when the file has none
};
PlyCloud read_ply(const std::filesystem::path& path);

/// Linear blue(0) -> red(>= scale_max) temperature ramp.
std::array<uint8_t, 3> temperature_color(double value, double scale_max);

struct StdMapImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // 3 bytes per pixel, row-major, top row first
};

/// Top view of a latent-map dump (CSV text as written by the pipeline):
/// each image pixel shows the largest per-LSM-pixel standard deviation that
/// projects into it; empty pixels stay white.
StdMapImage render_std_map(const std::string& dump_csv, double scale_max, double resolution);

void write_ppm(const StdMapImage& image, const std::filesystem::path& path);

/// Truth sidecar of one trajectory: (arc, 6-vector correction) rows.
using TruthTrack = std::vector<std::pair<double, Vector6d>>;
TruthTrack read_truth_csv(const std::filesystem::path& path);
Vector6d truth_at(const TruthTrack& track, double arc);

struct TruthComparison {
  struct PerTrajectory {
    uint32_t trajectory_id = 0;
    uint32_t anchors = 0;
    double rms_pos_raw = 0.0;
    double rms_rot_raw = 0.0;
  };

  std::vector<PerTrajectory> per_trajectory;
  uint64_t anchors = 0;
  // Pooled component RMS of (estimated - true):
  double rms_pos_raw = 0.0;
  double rms_rot_raw = 0.0;
  // after removing one global mean offset,
  double rms_pos_global_gauge = 0.0;
  double rms_rot_global_gauge = 0.0;
  // and after removing the location-dependent consensus field the priors
  // select (per along-street bin mean over all trajectories).
  double rms_pos_common_field = 0.0;
  double rms_rot_common_field = 0.0;
  double percentile_pos_common[4] = {0, 0, 0, 0};  // 50 / 90 / 95 / 99 of |pos error|

  std::string to_json() const;
  std::string to_text() const;
};

/// Compares accumulated corrections against the generator's truth sidecars.
/// The latent-map adjustment determines corrections only up to a common
/// (shared by all trajectories at a location) smooth field that the priors
/// pin to the consensus of the injected errors; the common-field RMS is the
/// estimator-quality figure.
TruthComparison compare_with_truth(const CorrectionsSet& corrections,
                                   const std::map<uint32_t, TruthTrack>& truth,
                                   const std::vector<TrajectorySpec>& trajectories,
                                   double bin_size = 3.0);

}  // namespace lsa
