#include "lsa/latent_map.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include <Eigen/Dense>

namespace lsa {

CellIndex cell_of(const Eigen::Vector3d& p, double cell_size) {
  auto f = [cell_size](double x) { return int32_t(std::floor(x / cell_size)); };
  return {f(p.x()), f(p.y()), f(p.z())};
}

Eigen::Vector3d LocalSurfaceModel::surface_point(uint32_t iu, uint32_t iv, double height) const {
  double u = u0 + (double(iu) + 0.5) * pitch;
  double v = v0 + (double(iv) + 0.5) * pitch;
  return base_point + u * u_axis + v * v_axis + height * base_normal;
}

Eigen::Vector3d pixel_normal(const LocalSurfaceModel& lsm, uint32_t iu, uint32_t iv) {
  const HeightPixel& center = lsm.pixel(iu, iv);
  if (!center.defined()) return lsm.base_normal;

  // Fit mean_height = a*u + b*v + c over the defined 3x3 neighborhood.
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  int neighbors = 0;
  for (int dv = -1; dv <= 1; ++dv) {
    for (int du = -1; du <= 1; ++du) {
      int u = int(iu) + du, v = int(iv) + dv;
      if (u < 0 || v < 0 || u >= int(lsm.nu) || v >= int(lsm.nv)) continue;
      const HeightPixel& px = lsm.pixel(uint32_t(u), uint32_t(v));
      if (!px.defined()) continue;
      if (du != 0 || dv != 0) ++neighbors;
      Eigen::Vector3d row(double(du) * lsm.pitch, double(dv) * lsm.pitch, 1.0);
      ata += row * row.transpose();
      atb += row * px.mean;
    }
  }
  if (neighbors < 3) return lsm.base_normal;

  Eigen::FullPivLU<Eigen::Matrix3d> lu(ata);
  if (!lu.isInvertible()) return lsm.base_normal;
  Eigen::Vector3d coeff = lu.solve(atb);
  Eigen::Vector3d n = lsm.base_normal - coeff.x() * lsm.u_axis - coeff.y() * lsm.v_axis;
  return n.normalized();
}

LatentMap::LatentMap(const LatentMapParams& params)
    : params_(params),
      cos_tau_(std::cos(params.tau_n_deg * M_PI / 180.0)),
      weight_(1.0 / (params.weight_sigma * params.weight_sigma)) {}

LocalSurfaceModel LatentMap::make_lsm(const CellIndex& cell, const Eigen::Vector3d& p,
                                      const Eigen::Vector3d& normal) const {
  LocalSurfaceModel lsm;
  lsm.base_normal = normal;
  lsm.normal_sum = Eigen::Vector3d::Zero();
  lsm.pitch = params_.pitch;

  const double cs = params_.cell_size;
  Eigen::Vector3d cell_lo(cell.ix * cs, cell.iy * cs, cell.iz * cs);
  Eigen::Vector3d center = cell_lo + Eigen::Vector3d::Constant(0.5 * cs);
  lsm.base_point = center - normal * normal.dot(center - p);

  // u_axis from the global axis least parallel to the normal; v completes a
  // right-handed frame.
  int least = 0;
  double best = std::abs(normal.x());
  if (std::abs(normal.y()) < best) {
    least = 1;
    best = std::abs(normal.y());
  }
  if (std::abs(normal.z()) < best) least = 2;
  Eigen::Vector3d e = Eigen::Vector3d::Zero();
  e(least) = 1.0;
  lsm.u_axis = (e - e.dot(normal) * normal).normalized();
  lsm.v_axis = normal.cross(lsm.u_axis);

  // Raster bounds: plane-projected bounding box of the cell corners.
  double umin = 0, umax = 0, vmin = 0, vmax = 0;
  bool first = true;
  for (int cx = 0; cx <= 1; ++cx)
    for (int cy = 0; cy <= 1; ++cy)
      for (int cz = 0; cz <= 1; ++cz) {
        Eigen::Vector3d corner = cell_lo + cs * Eigen::Vector3d(cx, cy, cz);
        Eigen::Vector3d d = corner - lsm.base_point;
        double u = d.dot(lsm.u_axis), v = d.dot(lsm.v_axis);
        if (first) {
          umin = umax = u;
          vmin = vmax = v;
          first = false;
        } else {
          umin = std::min(umin, u);
          umax = std::max(umax, u);
          vmin = std::min(vmin, v);
          vmax = std::max(vmax, v);
        }
      }
  lsm.u0 = umin;
  lsm.v0 = vmin;
  lsm.nu = uint32_t(std::max(1.0, std::ceil((umax - umin) / lsm.pitch - 1e-9)));
  lsm.nv = uint32_t(std::max(1.0, std::ceil((vmax - vmin) / lsm.pitch - 1e-9)));
  lsm.pixels.assign(size_t(lsm.nu) * lsm.nv, HeightPixel{});
  return lsm;
}

std::optional<InsertRef> LatentMap::insert(const Eigen::Vector3d& p, const Eigen::Vector3d& normal) {
  if (normal.squaredNorm() < 0.5) return std::nullopt;  // undefined normal
  estimated_ = false;

  CellIndex ci = cell_of(p, params_.cell_size);
  Cell& cell = cells_[ci];

  int best = -1;
  double best_dot = cos_tau_;
  for (size_t k = 0; k < cell.lsms.size(); ++k) {
    double d = normal.dot(cell.lsms[k].match_normal());
    if (d >= best_dot) {
      best_dot = d;
      best = int(k);
    }
  }
  if (best < 0) {
    cell.lsms.push_back(make_lsm(ci, p, normal));
    best = int(cell.lsms.size()) - 1;
  }

  LocalSurfaceModel& lsm = cell.lsms[size_t(best)];
  Eigen::Vector3d d = p - lsm.base_point;
  double u = d.dot(lsm.u_axis);
  double v = d.dot(lsm.v_axis);
  double h = d.dot(lsm.base_normal);
  auto clamp_idx = [](double x, uint32_t n) {
    double i = std::floor(x);
    if (i < 0) i = 0;
    if (i > double(n - 1)) i = double(n - 1);
    return uint32_t(i);
  };
  uint32_t iu = clamp_idx((u - lsm.u0) / lsm.pitch, lsm.nu);
  uint32_t iv = clamp_idx((v - lsm.v0) / lsm.pitch, lsm.nv);

  HeightPixel& px = lsm.pixel(iu, iv);
  px.sum_w += weight_;
  px.sum_wh += weight_ * h;
  px.sum_wh2 += weight_ * h * h;
  px.count += 1;
  lsm.normal_sum += weight_ * normal;

  return InsertRef{ci, uint32_t(best), iv * lsm.nu + iu};
}

void LatentMap::estimate() {
  for (auto& [ci, cell] : cells_) {
    for (auto& lsm : cell.lsms) {
      for (auto& px : lsm.pixels) {
        if (px.count == 0) continue;
        px.mean = px.sum_wh / px.sum_w;
        if (px.count >= 2) {
          double raw = px.sum_wh2 / px.sum_w - px.mean * px.mean;
          px.variance = std::max(0.0, raw * double(px.count) / double(px.count - 1));
        } else {
          px.variance = 0.0;
        }
      }
    }
  }
  estimated_ = true;
}

std::optional<Correspondence> LatentMap::correspond(const Eigen::Vector3d& p,
                                                    const Eigen::Vector3d& normal,
                                                    double threshold) const {
  if (!estimated_ || normal.squaredNorm() < 0.5) return std::nullopt;

  const double cs = params_.cell_size;
  CellIndex core = cell_of(p, cs);

  // Core cell first, then face neighbors the point lies within reach of.
  CellIndex candidates[7];
  int n_cand = 0;
  candidates[n_cand++] = core;
  const double margin = std::min(threshold, 0.5 * cs);
  for (int axis = 0; axis < 3; ++axis) {
    double lo = (axis == 0 ? core.ix : axis == 1 ? core.iy : core.iz) * cs;
    double x = p(axis);
    CellIndex c = core;
    auto& comp = (axis == 0 ? c.ix : axis == 1 ? c.iy : c.iz);
    if (x - lo < margin) {
      comp -= 1;
      candidates[n_cand++] = c;
    } else if (lo + cs - x < margin) {
      comp += 1;
      candidates[n_cand++] = c;
    }
  }

  std::optional<Correspondence> best;
  for (int ci = 0; ci < n_cand; ++ci) {
    const Cell* cell = find_cell(candidates[ci]);
    if (!cell) continue;
    for (size_t k = 0; k < cell->lsms.size(); ++k) {
      const LocalSurfaceModel& lsm = cell->lsms[k];
      if (normal.dot(lsm.match_normal()) < cos_tau_) continue;
      Eigen::Vector3d d = p - lsm.base_point;
      double u = (d.dot(lsm.u_axis) - lsm.u0) / lsm.pitch;
      double v = (d.dot(lsm.v_axis) - lsm.v0) / lsm.pitch;
      if (u < 0 || v < 0 || u >= double(lsm.nu) || v >= double(lsm.nv)) continue;
      uint32_t iu = uint32_t(u), iv = uint32_t(v);
      const HeightPixel& px = lsm.pixel(iu, iv);
      if (!px.defined() || px.low_confidence()) continue;

      Eigen::Vector3d w = pixel_normal(lsm, iu, iv);
      Eigen::Vector3d s = lsm.surface_point(iu, iv, px.mean);
      double dist = w.dot(s - p);
      if (!best || std::abs(dist) < std::abs(best->distance)) {
        best = Correspondence{PlaneTarget{w, s}, dist, candidates[ci], uint32_t(k),
                              iv * lsm.nu + iu};
      }
    }
  }
  if (!best || std::abs(best->distance) > threshold) return std::nullopt;
  return best;
}

const LatentMap::Cell* LatentMap::find_cell(const CellIndex& c) const {
  auto it = cells_.find(c);
  return it == cells_.end() ? nullptr : &it->second;
}

size_t LatentMap::lsm_count() const {
  size_t n = 0;
  for (const auto& [ci, cell] : cells_) n += cell.lsms.size();
  return n;
}

size_t LatentMap::defined_pixel_count() const {
  size_t n = 0;
  for (const auto& [ci, cell] : cells_)
    for (const auto& lsm : cell.lsms)
      for (const auto& px : lsm.pixels)
        if (px.defined()) ++n;
  return n;
}

size_t LatentMap::confident_pixel_count() const {
  size_t n = 0;
  for (const auto& [ci, cell] : cells_)
    for (const auto& lsm : cell.lsms)
      for (const auto& px : lsm.pixels)
        if (px.count >= 2) ++n;
  return n;
}

LatentMap::PixelStdSummary LatentMap::pixel_std_summary() const {
  PixelStdSummary s;
  std::map<CellIndex, const Cell*> ordered;
  for (const auto& [ci, cell] : cells_) ordered[ci] = &cell;
  for (const auto& [ci, cell] : ordered) {
    for (const auto& lsm : cell->lsms) {
      for (const auto& px : lsm.pixels) {
        if (px.count < 2) continue;
        double sd = std::sqrt(px.variance);
        s.sum += sd;
        ++s.count;
        s.max = std::max(s.max, sd);
      }
    }
  }
  return s;
}

size_t LatentMap::approx_bytes() const {
  size_t n = cells_.size() * (sizeof(CellIndex) + sizeof(Cell) + 32);
  for (const auto& [ci, cell] : cells_)
    for (const auto& lsm : cell.lsms)
      n += sizeof(LocalSurfaceModel) + lsm.pixels.size() * sizeof(HeightPixel);
  return n;
}

void LatentMap::dump_csv(std::ostream& os) const {
  os << "cell_ix,cell_iy,cell_iz,lsm,u,v,x,y,z,mean,std,count\n";
  std::map<CellIndex, const Cell*> ordered;
  for (const auto& [ci, cell] : cells_) ordered[ci] = &cell;
  char line[320];
  for (const auto& [ci, cell] : ordered) {
    for (size_t k = 0; k < cell->lsms.size(); ++k) {
      const LocalSurfaceModel& lsm = cell->lsms[k];
      for (uint32_t iv = 0; iv < lsm.nv; ++iv) {
        for (uint32_t iu = 0; iu < lsm.nu; ++iu) {
          const HeightPixel& px = lsm.pixel(iu, iv);
          if (!px.defined()) continue;
          Eigen::Vector3d world = lsm.surface_point(iu, iv, px.mean);
          double u = lsm.u0 + (double(iu) + 0.5) * lsm.pitch;
          double v = lsm.v0 + (double(iv) + 0.5) * lsm.pitch;
          std::snprintf(line, sizeof line, "%d,%d,%d,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.9f,%.9f,%u\n",
                        ci.ix, ci.iy, ci.iz, k, u, v, world.x(), world.y(), world.z(), px.mean,
                        std::sqrt(px.variance), px.count);
          os << line;
        }
      }
    }
  }
}

}  // namespace lsa
