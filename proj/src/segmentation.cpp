#include "lsa/segmentation.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "lsa/common.hpp"

namespace lsa {

namespace {

/// Least-squares plane through a set of points: centroid + smallest
/// eigenvector of the scatter matrix. Returns false when degenerate.
bool fit_plane(const std::vector<Eigen::Vector3d>& pts, Eigen::Vector3d& normal,
               Eigen::Vector3d& centroid) {
  if (pts.size() < 3) return false;
  centroid.setZero();
  for (const auto& p : pts) centroid += p;
  centroid /= double(pts.size());
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) {
    Eigen::Vector3d d = p - centroid;
    scatter += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
  if (eig.info() != Eigen::Success) return false;
  // Rank must be >= 2 for a well-defined normal.
  if (eig.eigenvalues()(1) <= 1e-18 * std::max(1.0, eig.eigenvalues()(2))) return false;
  normal = eig.eigenvectors().col(0).normalized();
  return true;
}

// Seeded per pixel position only: reseeding must not depend on strip_id so
// segmentation stays invariant under strip relabeling.
uint64_t pixel_seed(uint32_t row, uint32_t col) {
  uint32_t v[2] = {row, col};
  return fnv1a64(v, sizeof v);
}

}  // namespace

NormalField estimate_normals(const ScanStrip& strip, const RansacParams& params) {
  NormalField field;
  field.rows = strip.rows;
  field.cols = strip.cols;
  field.px.assign(size_t(strip.rows) * strip.cols, std::nullopt);

  const int w = params.window;
  std::vector<Eigen::Vector3d> cand;
  std::vector<Eigen::Vector3d> inliers;

  for (uint32_t row = 0; row < strip.rows; ++row) {
    for (uint32_t col = 0; col < strip.cols; ++col) {
      const auto& center = strip.at(row, col);
      if (!center) continue;

      cand.clear();
      cand.push_back(center->xyz);
      for (int dr = -w; dr <= w; ++dr) {
        for (int dc = -w; dc <= w; ++dc) {
          if (dr == 0 && dc == 0) continue;
          int r = int(row) + dr, c = int(col) + dc;
          if (r < 0 || c < 0 || r >= int(strip.rows) || c >= int(strip.cols)) continue;
          const auto& n = strip.at(uint32_t(r), uint32_t(c));
          if (n) cand.push_back(n->xyz);
        }
      }
      if (cand.size() < 4) continue;  // fewer than 3 valid neighbors

      // Fast path: if the least-squares plane over the whole window already
      // explains every candidate, sampling cannot do better.
      Eigen::Vector3d normal, centroid;
      bool have_plane = false;
      if (fit_plane(cand, normal, centroid)) {
        bool all_in = true;
        for (const auto& p : cand) {
          if (std::abs(normal.dot(p - centroid)) > params.inlier_dist) {
            all_in = false;
            break;
          }
        }
        if (all_in && int(cand.size()) >= params.min_inliers) have_plane = true;
      }

      if (!have_plane) {
        SplitMix64 rng(pixel_seed(row, col));
        int best_inliers = 0;
        Eigen::Vector3d best_n;
        double best_d = 0.0;
        for (int it = 0; it < params.iterations; ++it) {
          size_t i0 = rng.below(cand.size());
          size_t i1 = rng.below(cand.size());
          size_t i2 = rng.below(cand.size());
          if (i0 == i1 || i1 == i2 || i0 == i2) continue;
          Eigen::Vector3d n = (cand[i1] - cand[i0]).cross(cand[i2] - cand[i0]);
          double len = n.norm();
          if (len < 1e-12) continue;
          n /= len;
          double d = n.dot(cand[i0]);
          int count = 0;
          for (const auto& p : cand)
            if (std::abs(n.dot(p) - d) <= params.inlier_dist) ++count;
          if (count > best_inliers) {
            best_inliers = count;
            best_n = n;
            best_d = d;
          }
        }
        if (best_inliers < params.min_inliers) continue;

        inliers.clear();
        for (const auto& p : cand)
          if (std::abs(best_n.dot(p) - best_d) <= params.inlier_dist) inliers.push_back(p);
        if (!fit_plane(inliers, normal, centroid)) continue;
        // The refit plane must still describe the center pixel.
        if (std::abs(normal.dot(center->xyz - centroid)) > params.inlier_dist) continue;
        have_plane = true;
      }

      if (!have_plane) continue;
      // Orient toward the scan head.
      if (normal.dot(center->t0 - center->xyz) < 0.0) normal = -normal;
      field.px[strip.idx(row, col)] = PixelPlane{normal, normal.dot(centroid)};
    }
  }
  return field;
}

double edge_weight(const ScanStrip& strip, const NormalField& normals, size_t a, size_t b,
                   const EdgeParams& params) {
  const auto& pa = *strip.cells[a];
  const auto& pb = *strip.cells[b];
  const auto& na = normals.px[a]->normal;
  const auto& nb = normals.px[b]->normal;
  auto directed = [&](const Eigen::Vector3d& n_src, const Eigen::Vector3d& from,
                      const Eigen::Vector3d& to) {
    double d_perp = std::abs(n_src.dot(to - from));
    return d_perp / params.c0_scale + (1.0 - na.dot(nb)) / params.c1_scale;
  };
  return 0.5 * (directed(na, pa.xyz, pb.xyz) + directed(nb, pb.xyz, pa.xyz));
}

namespace {

struct UnionFind {
  std::vector<uint32_t> parent;
  std::vector<uint32_t> rank;
  std::vector<uint32_t> size;
  std::vector<double> internal;  // max merged edge weight per component

  explicit UnionFind(size_t n) : parent(n), rank(n, 0), size(n, 1), internal(n, 0.0) {
    for (size_t i = 0; i < n; ++i) parent[i] = uint32_t(i);
  }
  uint32_t find(uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  uint32_t merge(uint32_t a, uint32_t b, double w) {
    if (rank[a] < rank[b]) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
    internal[a] = w;
    if (rank[a] == rank[b]) ++rank[a];
    return a;
  }
};

}  // namespace

SegmentLabels segment(const ScanStrip& strip, const NormalField& normals, const EdgeParams& edge,
                      double fh_k, int min_region_px) {
  const size_t n = size_t(strip.rows) * strip.cols;

  struct Edge {
    uint32_t a, b;
    double w;
  };
  std::vector<Edge> edges;
  edges.reserve(2 * n);
  for (uint32_t row = 0; row < strip.rows; ++row) {
    for (uint32_t col = 0; col < strip.cols; ++col) {
      size_t i = strip.idx(row, col);
      if (!strip.cells[i] || !normals.px[i]) continue;
      if (col + 1 < strip.cols) {
        size_t j = i + 1;
        if (strip.cells[j] && normals.px[j])
          edges.push_back({uint32_t(i), uint32_t(j), edge_weight(strip, normals, i, j, edge)});
      }
      if (row + 1 < strip.rows) {
        size_t j = i + strip.cols;
        if (strip.cells[j] && normals.px[j])
          edges.push_back({uint32_t(i), uint32_t(j), edge_weight(strip, normals, i, j, edge)});
      }
    }
  }
  // Stable sort keeps construction order among equal weights.
  std::stable_sort(edges.begin(), edges.end(),
                   [](const Edge& x, const Edge& y) { return x.w < y.w; });

  UnionFind uf(n);
  for (const auto& e : edges) {
    uint32_t ca = uf.find(e.a);
    uint32_t cb = uf.find(e.b);
    if (ca == cb) continue;
    double ta = uf.internal[ca] + fh_k / double(uf.size[ca]);
    double tb = uf.internal[cb] + fh_k / double(uf.size[cb]);
    if (e.w <= std::min(ta, tb)) uf.merge(ca, cb, e.w);
  }

  SegmentLabels out;
  out.rows = strip.rows;
  out.cols = strip.cols;
  out.label.assign(n, kNoSegment);

  // Dense ids in row-major order of first occurrence; drop small regions and
  // pixels without normals (they never joined the graph).
  std::vector<uint32_t> id_of_root(n, kNoSegment);
  for (size_t i = 0; i < n; ++i) {
    if (!strip.cells[i] || !normals.px[i]) continue;
    uint32_t root = uf.find(uint32_t(i));
    if (int(uf.size[root]) < min_region_px) continue;
    if (id_of_root[root] == kNoSegment) {
      id_of_root[root] = out.segment_count();
      out.segment_size.push_back(0);
    }
    out.label[i] = id_of_root[root];
    ++out.segment_size[id_of_root[root]];
  }
  return out;
}

}  // namespace lsa
