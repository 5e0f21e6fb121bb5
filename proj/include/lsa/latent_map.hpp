#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "lsa/geom.hpp"

namespace lsa {

struct CellIndex {
  int32_t ix = 0, iy = 0, iz = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

/// Componentwise floor division; stable at negative coordinates.
CellIndex cell_of(const Eigen::Vector3d& p, double cell_size);

struct CellIndexHash {
  size_t operator()(const CellIndex& c) const {
    // Classic voxel-hash mix of three large primes.
    return size_t(uint64_t(uint32_t(c.ix)) * 73856093ULL ^ uint64_t(uint32_t(c.iy)) * 19349669ULL ^
                  uint64_t(uint32_t(c.iz)) * 83492791ULL);
  }
};

struct HeightPixel {
  double sum_w = 0.0;
  double sum_wh = 0.0;
  double sum_wh2 = 0.0;
  uint32_t count = 0;
  double mean = 0.0;      // valid after estimate() when count >= 1
  double variance = 0.0;  // valid after estimate() when count >= 2

  bool defined() const { return count >= 1; }
  bool low_confidence() const { return count < 2; }
};

/// Height field over a regular 2D raster inside one cell. The plane frame
/// {u_axis, v_axis, base_normal} is fixed when the model is created; the
/// running mean of member normals is kept separately for compatibility
/// matching so pixel coordinates of earlier points stay valid.
struct LocalSurfaceModel {
  Eigen::Vector3d base_normal;  // frame normal, unit
  Eigen::Vector3d base_point;   // on the model plane
  Eigen::Vector3d u_axis, v_axis;
  Eigen::Vector3d normal_sum;   // weight-accumulated member normals
  double pitch = 0.02;
  double u0 = 0.0, v0 = 0.0;    // raster origin in plane coordinates
  uint32_t nu = 0, nv = 0;
  std::vector<HeightPixel> pixels;  // nu * nv, row-major over v

  Eigen::Vector3d match_normal() const { return normal_sum.normalized(); }
  const HeightPixel& pixel(uint32_t iu, uint32_t iv) const { return pixels[size_t(iv) * nu + iu]; }
  HeightPixel& pixel(uint32_t iu, uint32_t iv) { return pixels[size_t(iv) * nu + iu]; }
  /// World point of the pixel center at the given height.
  Eigen::Vector3d surface_point(uint32_t iu, uint32_t iv, double height) const;
};

/// Least-squares plane through the defined means of the 3x3 neighborhood,
/// in world coordinates, oriented along base_normal. Falls back to the
/// frame normal when fewer than 3 of the 8 neighbors are defined or the fit
/// is degenerate.
Eigen::Vector3d pixel_normal(const LocalSurfaceModel& lsm, uint32_t iu, uint32_t iv);

struct Correspondence {
  PlaneTarget target;
  double distance = 0.0;  // <w, s - p>, signed meters
  CellIndex cell;
  uint32_t lsm = 0;
  uint32_t pixel = 0;
};

struct LatentMapParams {
  double cell_size = 1.0;
  double pitch = 0.02;
  double tau_n_deg = 30.0;    // LSM normal-compatibility cone
  double weight_sigma = 0.005;  // point weight 1 / sigma^2
};

struct InsertRef {
  CellIndex cell;
  uint32_t lsm = 0;
  uint32_t pixel = 0;
};

/// The latent map M for one tile: voxel-hashed cells, each holding one or
/// more local surface models separated by normal direction. Build and query
/// phases are strictly sequential: insert everything, call estimate(), then
/// issue correspondences.
class LatentMap {
 public:
  explicit LatentMap(const LatentMapParams& params);

  /// Adds a point with its (unit) segmentation normal. Returns nullopt when
  /// the normal is undefined (zero).
  std::optional<InsertRef> insert(const Eigen::Vector3d& p, const Eigen::Vector3d& normal);

  /// Finalizes per-pixel mean and unbiased weighted variance.
  void estimate();

  /// Point-to-surface query against the estimated map. Considers the
  /// containing cell plus face neighbors the point projects near, picks the
  /// compatible model pixel with the smallest |distance|, and rejects on
  /// missing model, low-confidence pixel, or |distance| > threshold.
  std::optional<Correspondence> correspond(const Eigen::Vector3d& p, const Eigen::Vector3d& normal,
                                           double threshold) const;

  const LatentMapParams& params() const { return params_; }
  size_t cell_count() const { return cells_.size(); }
  size_t lsm_count() const;
  size_t defined_pixel_count() const;
  size_t confident_pixel_count() const;
  size_t approx_bytes() const;

  struct PixelStdSummary {
    double sum = 0.0;   // over confident pixels
    uint64_t count = 0;
    double max = 0.0;
  };
  PixelStdSummary pixel_std_summary() const;

  struct Cell {
    std::vector<LocalSurfaceModel> lsms;
  };
  const Cell* find_cell(const CellIndex& c) const;

  /// Per-pixel CSV: cell indices, lsm, pixel-center plane coords, world
  /// position, mean, std, count. Rows ordered by cell then lsm then pixel.
  void dump_csv(std::ostream& os) const;

 private:
  LatentMapParams params_;
  double cos_tau_;
  double weight_;
  bool estimated_ = false;
  std::unordered_map<CellIndex, Cell, CellIndexHash> cells_;

  LocalSurfaceModel make_lsm(const CellIndex& cell, const Eigen::Vector3d& p,
                             const Eigen::Vector3d& normal) const;
};

}  // namespace lsa
