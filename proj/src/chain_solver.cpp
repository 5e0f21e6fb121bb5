#include "lsa/chain_solver.hpp"

#include <algorithm>
#include <limits>

#include <Eigen/Dense>

namespace lsa {

ChainSystem assemble(std::span<const NormalBlock> blocks, const NoiseConfig& noise) {
  ChainSystem sys;
  if (blocks.empty()) return sys;

  sys.trajectory_id = blocks.front().trajectory_id;
  uint32_t lo = std::numeric_limits<uint32_t>::max();
  uint32_t hi = 0;
  for (const auto& b : blocks) {
    if (b.trajectory_id != sys.trajectory_id)
      throw std::runtime_error("assemble: blocks from mixed trajectories");
    uint32_t top = b.kind == BlockKind::offdiag ? b.i + 1 : b.i;
    lo = std::min(lo, b.i);
    hi = std::max(hi, top);
  }

  sys.anchor_base = lo;
  const uint32_t n = hi - lo + 1;
  sys.D.assign(n, Matrix6d::Zero());
  sys.U.assign(n > 0 ? n - 1 : 0, Matrix6d::Zero());
  sys.b.assign(n, Vector6d::Zero());

  std::vector<bool> touched(n, false);
  for (const auto& b : blocks) {
    uint32_t k = b.i - lo;
    if (b.kind == BlockKind::diag) {
      sys.D[k] += b.m;
      sys.b[k] += b.rhs;
      touched[k] = true;
    } else {
      sys.U[k] += b.m;
      touched[k] = true;
      touched[k + 1] = true;
    }
  }

  const Vector6d prior = noise.prior_precision();
  for (uint32_t k = 0; k < n; ++k)
    if (!touched[k] || sys.D[k].isZero()) sys.D[k] += Matrix6d(prior.asDiagonal());
  return sys;
}

namespace {

/// SPD check and inverse of a 6x6 pivot. Fails when the smallest eigenvalue
/// drops below 1e-12 of the largest.
bool invert_pivot(const Matrix6d& m, Matrix6d& inv) {
  Eigen::SelfAdjointEigenSolver<Matrix6d> eig(m);
  if (eig.info() != Eigen::Success) return false;
  const auto& ev = eig.eigenvalues();
  if (!(ev(0) > 1e-12 * std::max(ev(5), 0.0))) return false;
  inv = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  return true;
}

}  // namespace

ChainSolution solve(const ChainSystem& sys) {
  const uint32_t n = sys.n();
  ChainSolution sol;
  if (n == 0) return sol;

  // Forward elimination: Dt[i] = D[i] - U[i-1]' * inv(Dt[i-1]) * U[i-1].
  std::vector<Matrix6d> dt_inv(n);
  std::vector<Vector6d> bt(n);
  Matrix6d dt = sys.D[0];
  Vector6d rhs = sys.b[0];
  for (uint32_t i = 0;; ++i) {
    if (!invert_pivot(dt, dt_inv[i]))
      throw SingularChainError(sys.trajectory_id, sys.anchor_base + i,
                               "singular chain pivot at anchor " +
                                   std::to_string(sys.anchor_base + i));
    bt[i] = rhs;
    if (i + 1 == n) break;
    dt = sys.D[i + 1] - sys.U[i].transpose() * dt_inv[i] * sys.U[i];
    rhs = sys.b[i + 1] - sys.U[i].transpose() * (dt_inv[i] * bt[i]);
  }

  // Back substitution.
  sol.x.assign(n, Vector6d::Zero());
  sol.x[n - 1] = dt_inv[n - 1] * bt[n - 1];
  for (int i = int(n) - 2; i >= 0; --i)
    sol.x[size_t(i)] = dt_inv[size_t(i)] * (bt[size_t(i)] - sys.U[size_t(i)] * sol.x[size_t(i) + 1]);

  // Diagonal blocks of the inverse by the backward covariance recursion.
  sol.covariance.assign(n, Matrix6d::Zero());
  sol.covariance[n - 1] = dt_inv[n - 1];
  for (int i = int(n) - 2; i >= 0; --i) {
    const Matrix6d g = dt_inv[size_t(i)] * sys.U[size_t(i)];
    sol.covariance[size_t(i)] =
        dt_inv[size_t(i)] + g * sol.covariance[size_t(i) + 1] * g.transpose();
  }
  return sol;
}

ChainSolution solve_dense(const ChainSystem& sys) {
  const uint32_t n = sys.n();
  if (n > 200) throw std::invalid_argument("solve_dense: chain too long (n > 200)");
  ChainSolution sol;
  if (n == 0) return sol;

  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(6 * n, 6 * n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(6 * n);
  for (uint32_t i = 0; i < n; ++i) {
    full.block<6, 6>(6 * i, 6 * i) = sys.D[i];
    rhs.segment<6>(6 * i) = sys.b[i];
    if (i + 1 < n) {
      full.block<6, 6>(6 * i, 6 * (i + 1)) = sys.U[i];
      full.block<6, 6>(6 * (i + 1), 6 * i) = sys.U[i].transpose();
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(full);
  if (eig.info() != Eigen::Success ||
      !(eig.eigenvalues()(0) > 1e-12 * std::max(eig.eigenvalues()(6 * n - 1), 0.0)))
    throw SingularChainError(sys.trajectory_id, sys.anchor_base, "singular dense chain system");

  Eigen::MatrixXd inv =
      eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  Eigen::VectorXd x = inv * rhs;

  sol.x.resize(n);
  sol.covariance.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    sol.x[i] = x.segment<6>(6 * i);
    sol.covariance[i] = inv.block<6, 6>(6 * i, 6 * i);
  }
  return sol;
}

}  // namespace lsa
