#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsa/geom.hpp"
#include "lsa/latent_map.hpp"

namespace lsa {

enum class BlockKind : uint32_t { diag = 0, offdiag = 1 };

/// One 6x6 / 6-vector contribution to a trajectory's normal equations.
/// diag(i) carries a symmetric matrix plus right-hand side; offdiag(i, i+1)
/// carries only the coupling matrix.
struct NormalBlock {
  uint32_t trajectory_id = 0;
  uint32_t i = 0;
  BlockKind kind = BlockKind::diag;
  Matrix6d m = Matrix6d::Zero();
  Vector6d rhs = Vector6d::Zero();
};

struct NoiseConfig {
  double sigma_dist = 0.005;  // LiDAR distance precision, meters
  Vector6d sigma_prior = (Vector6d() << 0.02, 0.02, 0.05, 9e-5, 9e-5, 2.6e-4).finished();
  Vector6d sigma_smooth = (Vector6d() << 0.002, 0.002, 0.002, 2e-5, 2e-5, 2e-5).finished();

  Vector6d prior_precision() const { return sigma_prior.array().square().inverse(); }
  Vector6d smooth_precision() const { return sigma_smooth.array().square().inverse(); }
};

/// Blocks of one point-to-plane row (Eq. 4): with j = [j_i | j_ip1] and
/// weight p = 1/sigma_dist^2, appends p*j_i*j_i' (+ rhs p*j_i*l) on diag(i),
/// p*j_ip1*j_ip1' (+ rhs) on diag(i+1) and p*j_i*j_ip1' on offdiag(i, i+1),
/// where l is the current signed distance. Blocks whose interpolation weight
/// vanishes are not emitted.
void distance_blocks(const Correspondence& c, const RayMeasurement& m, const ChainInterp& interp,
                     const NoiseConfig& noise, std::vector<NormalBlock>& out);

/// Zero-mean pose prior (Eq. 2) on every anchor.
std::vector<NormalBlock> prior_blocks(uint32_t trajectory_id, uint32_t n_anchors,
                                      const NoiseConfig& noise);

/// Consecutive-anchor smoothness (Eq. 3): W on both diagonals, -W on the
/// coupling block, zero right-hand side.
std::vector<NormalBlock> smooth_blocks(uint32_t trajectory_id, uint32_t n_anchors,
                                       const NoiseConfig& noise);

/// Fixed-size little-endian wire record for the shuffle:
/// u32 trajectory_id | u32 i | u32 kind | 36 f64 (row-major m) | 6 f64 rhs.
constexpr size_t kNormalBlockBytes = 12 + 36 * 8 + 6 * 8;
constexpr uint32_t kNormalBlockWireVersion = 1;

void encode_normal_block(const NormalBlock& b, std::string& out);
NormalBlock decode_normal_block(const char* data, size_t n);

}  // namespace lsa
