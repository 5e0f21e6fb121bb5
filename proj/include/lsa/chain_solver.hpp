#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "lsa/normal_blocks.hpp"

namespace lsa {

/// Block-tridiagonal normal-equation system of one trajectory's anchor
/// chain: diagonal blocks D, super-diagonal blocks U (coupling i to i+1)
/// and right-hand side b. Anchor index of slot k is anchor_base + k.
struct ChainSystem {
  uint32_t trajectory_id = 0;
  uint32_t anchor_base = 0;
  std::vector<Matrix6d> D;
  std::vector<Matrix6d> U;
  std::vector<Vector6d> b;

  uint32_t n() const { return uint32_t(D.size()); }
};

class SingularChainError : public std::runtime_error {
 public:
  SingularChainError(uint32_t trajectory_id, uint32_t anchor, const std::string& what)
      : std::runtime_error(what), trajectory_id(trajectory_id), anchor(anchor) {}
  uint32_t trajectory_id;
  uint32_t anchor;
};

/// Sums a stream of blocks into the chain structure. The anchor range is
/// inferred from the blocks; interior anchors that received nothing are
/// given a prior-only diagonal so the chain stays positive definite.
/// Blocks mixing trajectory ids are a hard error.
ChainSystem assemble(std::span<const NormalBlock> blocks, const NoiseConfig& noise);

struct ChainSolution {
  std::vector<Vector6d> x;
  std::vector<Matrix6d> covariance;  // diagonal blocks of the inverse
};

/// Exact solve by block-Thomas factorization: one forward elimination and
/// one back substitution, algebraically the RTS smoother on this chain.
/// Linear time and memory in the anchor count. Also returns the diagonal
/// covariance blocks via the backward recursion on the factorization.
ChainSolution solve(const ChainSystem& sys);

/// Dense-oracle variant: materializes the full 6n x 6n system. Intended for
/// tests and small chains; refuses n > 200.
ChainSolution solve_dense(const ChainSystem& sys);

}  // namespace lsa
