#include "lsa/normal_blocks.hpp"

#include <cstring>
#include <stdexcept>

namespace lsa {

void distance_blocks(const Correspondence& c, const RayMeasurement& m, const ChainInterp& interp,
                     const NoiseConfig& noise, std::vector<NormalBlock>& out) {
  const double p = 1.0 / (noise.sigma_dist * noise.sigma_dist);
  const double l = c.distance;
  const JacobianPair jac = residual_jacobian(c.target, m, interp.alpha);
  const uint32_t i = uint32_t(interp.index);

  if (interp.alpha < 1.0) {
    NormalBlock b;
    b.trajectory_id = m.trajectory_id;
    b.i = i;
    b.kind = BlockKind::diag;
    b.m = p * jac.j_i * jac.j_i.transpose();
    b.rhs = p * jac.j_i * l;
    out.push_back(std::move(b));
  }
  if (interp.alpha > 0.0) {
    NormalBlock b;
    b.trajectory_id = m.trajectory_id;
    b.i = i + 1;
    b.kind = BlockKind::diag;
    b.m = p * jac.j_ip1 * jac.j_ip1.transpose();
    b.rhs = p * jac.j_ip1 * l;
    out.push_back(std::move(b));
  }
  if (interp.alpha > 0.0 && interp.alpha < 1.0) {
    NormalBlock b;
    b.trajectory_id = m.trajectory_id;
    b.i = i;
    b.kind = BlockKind::offdiag;
    b.m = p * jac.j_i * jac.j_ip1.transpose();
    out.push_back(std::move(b));
  }
}

std::vector<NormalBlock> prior_blocks(uint32_t trajectory_id, uint32_t n_anchors,
                                      const NoiseConfig& noise) {
  std::vector<NormalBlock> out;
  out.reserve(n_anchors);
  const Vector6d w = noise.prior_precision();
  for (uint32_t i = 0; i < n_anchors; ++i) {
    NormalBlock b;
    b.trajectory_id = trajectory_id;
    b.i = i;
    b.kind = BlockKind::diag;
    b.m = w.asDiagonal();
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<NormalBlock> smooth_blocks(uint32_t trajectory_id, uint32_t n_anchors,
                                       const NoiseConfig& noise) {
  std::vector<NormalBlock> out;
  if (n_anchors < 2) return out;
  out.reserve(3 * (n_anchors - 1));
  const Matrix6d w = Matrix6d(noise.smooth_precision().asDiagonal());
  for (uint32_t i = 0; i + 1 < n_anchors; ++i) {
    NormalBlock d0;
    d0.trajectory_id = trajectory_id;
    d0.i = i;
    d0.kind = BlockKind::diag;
    d0.m = w;
    out.push_back(std::move(d0));

    NormalBlock d1;
    d1.trajectory_id = trajectory_id;
    d1.i = i + 1;
    d1.kind = BlockKind::diag;
    d1.m = w;
    out.push_back(std::move(d1));

    NormalBlock od;
    od.trajectory_id = trajectory_id;
    od.i = i;
    od.kind = BlockKind::offdiag;
    od.m = -w;
    out.push_back(std::move(od));
  }
  return out;
}

void encode_normal_block(const NormalBlock& b, std::string& out) {
  char buf[kNormalBlockBytes];
  char* p = buf;
  auto put_u = [&p](uint32_t v) {
    std::memcpy(p, &v, 4);
    p += 4;
  };
  put_u(b.trajectory_id);
  put_u(b.i);
  put_u(uint32_t(b.kind));
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) {
      double v = b.m(r, c);
      std::memcpy(p, &v, 8);
      p += 8;
    }
  for (int r = 0; r < 6; ++r) {
    double v = b.rhs(r);
    std::memcpy(p, &v, 8);
    p += 8;
  }
  out.append(buf, kNormalBlockBytes);
}

NormalBlock decode_normal_block(const char* data, size_t n) {
  if (n != kNormalBlockBytes) throw std::runtime_error("normal block record has wrong size");
  const char* p = data;
  auto get_u = [&p]() {
    uint32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    return v;
  };
  NormalBlock b;
  b.trajectory_id = get_u();
  b.i = get_u();
  b.kind = BlockKind(get_u());
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) {
      double v;
      std::memcpy(&v, p, 8);
      p += 8;
      b.m(r, c) = v;
    }
  for (int r = 0; r < 6; ++r) {
    double v;
    std::memcpy(&v, p, 8);
    p += 8;
    b.rhs(r) = v;
  }
  return b;
}

}  // namespace lsa
