#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lsa/chain_solver.hpp"
#include "lsa/latent_map.hpp"
#include "lsa/mapreduce.hpp"
#include "lsa/normal_blocks.hpp"
#include "lsa/segmentation.hpp"
#include "lsa/strip.hpp"
#include "lsa/synth.hpp"

namespace lsa {

struct TileKey {
  int32_t tx = 0, ty = 0;
  friend bool operator==(const TileKey&, const TileKey&) = default;
  friend auto operator<=>(const TileKey&, const TileKey&) = default;
};

TileKey tile_of(double x, double y, double tile_size);

/// Containing tile plus every tile whose core region lies within `overlap`
/// of the point; up to 4 keys at corners. The containing tile comes first.
std::vector<TileKey> emit_tiles(double x, double y, double tile_size, double overlap);

/// Shuffle key encoding: offset-binary big-endian (tx, ty) so the
/// byte-lexicographic shuffle order equals numeric tile order.
std::string tile_key_bytes(const TileKey& key);
TileKey tile_key_from_bytes(std::string_view bytes);
std::string tile_file_name(const TileKey& key);
TileKey tile_key_from_file_name(const std::string& name);

struct PlanStep {
  double threshold = 0.3;  // correspondence rejection distance, meters
  double lsm_pitch = 0.02; // latent-map raster spacing, meters
};

struct IterationPlan {
  std::vector<PlanStep> steps;

  /// Throws std::invalid_argument on non-positive values or increasing
  /// thresholds.
  void validate() const;

  /// The 18-step default: two coarse passes, a geometric taper, then the
  /// tight final passes down to the 7 mm threshold on a 1 cm grid.
  static IterationPlan default_plan();
};

struct EngineParams {
  int workers = 2;
  size_t spill_bytes = size_t(256) << 20;
  size_t mapper_cap_bytes = size_t(512) << 20;
};

struct GeneratorParams {
  double street_length = 24.0;
  ScannerSpec scanner;
  ErrorSpec error;
};

struct PipelineConfig {
  NoiseConfig noise;
  SegmentationParams seg;
  double tile_size = 15.0;
  double tile_overlap = 0.3;
  double cell_size = 1.0;
  double tau_n_deg = 30.0;
  double anchor_spacing = 0.5;
  IterationPlan plan = IterationPlan::default_plan();
  EngineParams engine;
  GeneratorParams gen;
  bool dump_final_map = true;

  static PipelineConfig from_json(const std::string& text);
  static PipelineConfig from_json_file(const std::filesystem::path& path);
  std::string to_json() const;
};

/// Accumulated pose corrections for every trajectory, plus the per-anchor
/// standard deviations reported by the last solve. This is the broadcast
/// payload of the estimation job and the pipeline's main output artifact.
struct CorrectionsSet {
  uint32_t iteration = 0;
  uint64_t provenance = 0;
  std::map<uint32_t, AnchorChain> chains;
  std::map<uint32_t, std::vector<Vector6d>> stds;

  std::string serialize() const;
  static CorrectionsSet parse(std::string_view bytes);
  void write(const std::filesystem::path& path) const;
  static CorrectionsSet read(const std::filesystem::path& path);
};

struct TrajectoryRange {
  double arc_min = 0.0;
  double arc_max = 0.0;
};

struct TilesManifest {
  struct TileInfo {
    std::string file;
    TileKey key;
    uint64_t records = 0;       // records stored, including border duplicates
    uint64_t core_records = 0;  // records whose containing tile is this tile
  };

  std::filesystem::path dir;
  double tile_size = 15.0;
  double overlap = 0.3;
  std::vector<TileInfo> tiles;  // ascending tile key
  std::map<uint32_t, TrajectoryRange> arc_ranges;
  uint64_t unique_points = 0;
  uint64_t total_records = 0;

  void save(const std::filesystem::path& path) const;
  static TilesManifest load(const std::filesystem::path& path);
};

/// Preprocessing job: segment every strip, key each labeled point by its
/// spatial tile (replicating border points), and write one sorted tile file
/// per key.
TilesManifest preprocess_job(const PipelineConfig& cfg,
                             const std::vector<std::filesystem::path>& strip_files,
                             const std::filesystem::path& tiles_dir,
                             const std::filesystem::path& scratch, int workers);

/// Zero-correction chains covering each trajectory's arc range at the
/// configured anchor spacing.
CorrectionsSet init_corrections(const TilesManifest& manifest, double anchor_spacing);

struct IterationStats {
  uint32_t iteration = 0;
  double threshold = 0.0;
  double lsm_pitch = 0.0;
  uint64_t records_read = 0;
  uint64_t points_accepted = 0;       // passed the core-region filter
  uint64_t points_dropped = 0;        // corrected position left every emitted tile
  uint64_t correspondences = 0;       // points taking part in the estimation
  uint64_t rejected_distance = 0;
  uint64_t rejected_low_confidence = 0;
  uint64_t rejected_no_model = 0;
  double distance_sum = 0.0;
  double distance_sq_sum = 0.0;
  std::map<int64_t, uint64_t> histogram;  // signed distance, 0.1 mm buckets
  uint64_t defined_pixels = 0;
  uint64_t confident_pixels = 0;
  double pixel_std_sum = 0.0;
  uint64_t pixel_std_count = 0;
  double pixel_std_max = 0.0;
  size_t mapper_peak_bytes = 0;
  uint64_t max_tile_records = 0;
  double max_increment_pos = 0.0;
  double max_increment_rot = 0.0;

  double distance_mean() const;
  double distance_std() const;
  std::string to_json() const;
  static IterationStats from_json(const std::string& text);
};

constexpr double kHistogramBucket = 0.0001;  // 0.1 mm signed-distance buckets

/// One alternating-least-squares pass: per-tile latent map build and block
/// generation (map phase), per-trajectory exact chain solve (reduce phase),
/// increment accumulation into `corrections` (driver).
IterationStats estimate_iteration(const PipelineConfig& cfg, const TilesManifest& tiles,
                                  CorrectionsSet& corrections, const PlanStep& step,
                                  uint32_t iteration_index, const std::filesystem::path& run_dir,
                                  int workers, bool dump_map);

struct ScheduleResult {
  CorrectionsSet corrections;
  std::vector<IterationStats> stats;
};

/// Runs the full plan, writing per-iteration stats manifests, histogram
/// CSVs, the final corrections file and (optionally) the final map dump
/// under run_dir.
ScheduleResult run_schedule(const PipelineConfig& cfg, const TilesManifest& tiles,
                            const std::filesystem::path& run_dir, int workers);

}  // namespace lsa
