#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "lsa/strip.hpp"

namespace lsa {

struct RansacParams {
  int window = 2;            // half-width; neighborhood is (2*window+1)^2
  int iterations = 64;
  double inlier_dist = 0.01; // orthogonal distance for an inlier, meters
  int min_inliers = 6;
};

/// Local plane at a strip pixel: unit normal (oriented toward the scan head)
/// and offset = <normal, point on plane>.
struct PixelPlane {
  Eigen::Vector3d normal;
  double offset;
};

struct NormalField {
  uint32_t rows = 0;
  uint32_t cols = 0;
  std::vector<std::optional<PixelPlane>> px;  // row-major

  const std::optional<PixelPlane>& at(uint32_t row, uint32_t col) const {
    return px[size_t(row) * cols + col];
  }
};

/// Robust per-pixel plane fit over the raster window. A pixel gets a normal
/// only when its window holds at least 3 other valid points and the best
/// RANSAC plane reaches min_inliers; the plane is refit to the inliers by
/// least squares. Seeded per pixel from (strip_id, row, col) so results are
/// reproducible.
NormalField estimate_normals(const ScanStrip& strip, const RansacParams& params);

struct EdgeParams {
  double c0_scale = 0.05;  // meters of point-to-plane gap per unit weight
  double c1_scale = 0.3;   // (1 - cos angle) per unit weight
};

/// Symmetric homogeneity weight between two 4-neighbor pixels, averaged over
/// both directions: d_perp / c0_scale + (1 - <n_a, n_b>) / c1_scale with
/// d_perp = |<n_a, xyz_b - xyz_a>|.
double edge_weight(const ScanStrip& strip, const NormalField& normals, size_t a, size_t b,
                   const EdgeParams& params);

constexpr uint32_t kNoSegment = 0xffffffffu;

struct SegmentLabels {
  uint32_t rows = 0;
  uint32_t cols = 0;
  std::vector<uint32_t> label;        // row-major; kNoSegment where unlabeled
  std::vector<uint32_t> segment_size; // indexed by dense segment id

  uint32_t at(uint32_t row, uint32_t col) const { return label[size_t(row) * cols + col]; }
  uint32_t segment_count() const { return uint32_t(segment_size.size()); }
};

struct SegmentationParams {
  RansacParams ransac;
  EdgeParams edge;
  double fh_k = 1.0;        // Felzenszwalb-Huttenlocher threshold parameter
  int min_region_px = 50;   // smaller segments are unlabeled
};

/// Felzenszwalb-Huttenlocher segmentation of the 4-neighbor raster graph
/// with tau(C) = k / |C|, followed by small-region removal. Deterministic:
/// edges sorted by weight with ties broken by construction order, surviving
/// segments relabeled densely in row-major order of first occurrence.
SegmentLabels segment(const ScanStrip& strip, const NormalField& normals, const EdgeParams& edge,
                      double fh_k, int min_region_px);

}  // namespace lsa
