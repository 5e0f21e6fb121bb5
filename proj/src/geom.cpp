#include "lsa/geom.hpp"

#include <cmath>

namespace lsa {

ChainInterp interpolate_correction(const AnchorChain& chain, double arc) {
  if (chain.anchors.empty()) throw std::out_of_range("interpolate_correction: empty chain");
  if (chain.anchors.size() == 1) {
    if (arc != chain.arc_origin) throw std::out_of_range("interpolate_correction: arc outside chain");
    return {0, 0.0, chain.anchors[0]};
  }
  const double lo = chain.arc_min();
  const double hi = chain.arc_max();
  if (!(arc >= lo && arc <= hi)) throw std::out_of_range("interpolate_correction: arc outside chain");

  const size_t last = chain.anchors.size() - 1;
  double u = (arc - chain.arc_origin) / chain.spacing;
  size_t i = static_cast<size_t>(std::floor(u));
  if (i >= last) i = last - 1;  // arc at (or within rounding of) the final anchor
  double alpha = u - static_cast<double>(i);
  if (alpha < 0.0) alpha = 0.0;
  if (alpha > 1.0) alpha = 1.0;

  PoseCorrection corr = (1.0 - alpha) * chain.anchors[i] + alpha * chain.anchors[i + 1];
  return {i, alpha, corr};
}

Eigen::Matrix3d rotation_opk(const Eigen::Vector3d& theta) {
  const double co = std::cos(theta.x()), so = std::sin(theta.x());
  const double cp = std::cos(theta.y()), sp = std::sin(theta.y());
  const double ck = std::cos(theta.z()), sk = std::sin(theta.z());
  Eigen::Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, co, -so, 0, so, co;
  ry << cp, 0, sp, 0, 1, 0, -sp, 0, cp;
  rz << ck, -sk, 0, sk, ck, 0, 0, 0, 1;
  return rz * ry * rx;
}

Eigen::Vector3d apply_correction(const PoseCorrection& corr, const RayMeasurement& m) {
  if (corr.theta.isZero()) return m.r + corr.t + m.t0;
  return rotation_opk(corr.theta) * m.r + corr.t + m.t0;
}

JacobianPair residual_jacobian(const PlaneTarget& target, const RayMeasurement& m, double alpha) {
  Vector6d j;
  j.head<3>() = target.w;
  j.tail<3>() = m.r.cross(target.w);
  JacobianPair out;
  out.j_i = (1.0 - alpha) * j;
  out.j_ip1 = alpha * j;
  return out;
}

}  // namespace lsa
