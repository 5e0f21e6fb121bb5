#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "lsa/common.hpp"

namespace lsa {

/// 6-DoF pose correction: translation plus small rotation angles
/// (omega, phi, kappa) about the world x/y/z axes.
struct PoseCorrection {
  Eigen::Vector3d t{Eigen::Vector3d::Zero()};
  Eigen::Vector3d theta{Eigen::Vector3d::Zero()};

  Vector6d as_vector() const {
    Vector6d v;
    v << t, theta;
    return v;
  }
  static PoseCorrection from_vector(const Vector6d& v) {
    return {v.head<3>(), v.tail<3>()};
  }
  bool finite() const { return t.allFinite() && theta.allFinite(); }
};

inline PoseCorrection operator+(const PoseCorrection& a, const PoseCorrection& b) {
  return {a.t + b.t, a.theta + b.theta};
}
inline PoseCorrection operator*(double s, const PoseCorrection& c) {
  return {s * c.t, s * c.theta};
}

/// Per-trajectory sequence of pose corrections at fixed arc-length spacing.
/// Anchor k sits at arc_origin + k * spacing.
struct AnchorChain {
  uint32_t trajectory_id = 0;
  double spacing = 0.5;
  double arc_origin = 0.0;
  std::vector<PoseCorrection> anchors;

  double arc_min() const { return arc_origin; }
  double arc_max() const {
    return arc_origin + spacing * static_cast<double>(anchors.size() - 1);
  }
  double arc_of(size_t k) const { return arc_origin + spacing * static_cast<double>(k); }
  bool contains(double arc) const {
    return !anchors.empty() && arc >= arc_min() && arc <= arc_max();
  }
};

/// Oriented plane target for a point-to-plane observation (Eq. 4's w_j, s_j).
struct PlaneTarget {
  Eigen::Vector3d w;  // unit normal
  Eigen::Vector3d s;  // point on the surface
};

/// One LiDAR return expressed as scan-head position plus ray vector.
struct RayMeasurement {
  Eigen::Vector3d t0;
  Eigen::Vector3d r;
  double arc = 0.0;
  uint32_t trajectory_id = 0;
};

struct ChainInterp {
  size_t index = 0;   // anchor i; the measurement lies between i and i+1
  double alpha = 0.0; // weight of anchor i+1
  PoseCorrection corr;
};

/// Linear interpolation of the chain at the given arc-length.
/// Throws std::out_of_range when arc is outside [arc_min, arc_max]; callers
/// clamp or reject such measurements.
ChainInterp interpolate_correction(const AnchorChain& chain, double arc);

/// Rotation matrix for (omega, phi, kappa): Rz(kappa) * Ry(phi) * Rx(omega).
/// Any consistent convention works in the small-angle regime; this one is
/// fixed so results are reproducible.
Eigen::Matrix3d rotation_opk(const Eigen::Vector3d& theta);

/// Corrected world point R(theta) * r + t + t0.
Eigen::Vector3d apply_correction(const PoseCorrection& corr, const RayMeasurement& m);

/// Signed distance <w, s - p>.
inline double point_to_plane_residual(const PlaneTarget& target, const Eigen::Vector3d& p) {
  return target.w.dot(target.s - p);
}

/// Derivative of the model term <w, R(theta) r + t> at theta = 0, t = 0,
/// split over the two anchors by the interpolation weight. Layout matches
/// PoseCorrection::as_vector: translation part w, rotation part r x w.
struct JacobianPair {
  Vector6d j_i;
  Vector6d j_ip1;
};

JacobianPair residual_jacobian(const PlaneTarget& target, const RayMeasurement& m, double alpha);

}  // namespace lsa
