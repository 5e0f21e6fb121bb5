#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lsa/geom.hpp"
#include "lsa/strip.hpp"

namespace lsa {

/// Finite rectangle: corner plus two orthogonal edge vectors.
struct Rect {
  std::string name;
  Eigen::Vector3d origin;
  Eigen::Vector3d eu;
  Eigen::Vector3d ev;

  Eigen::Vector3d unit_normal() const { return eu.cross(ev).normalized(); }
};

struct SceneSpec {
  std::vector<Rect> primitives;
};

std::string scene_to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const std::string& text);

/// Straight driving lane; arc-length is distance from start.
struct TrajectorySpec {
  uint32_t trajectory_id = 0;
  Eigen::Vector3d start;
  Eigen::Vector3d end;

  double length() const { return (end - start).norm(); }
  Eigen::Vector3d direction() const { return (end - start).normalized(); }
  Eigen::Vector3d position_at(double arc) const { return start + arc * direction(); }
};

std::string trajectories_to_json(const std::vector<TrajectorySpec>& trajectories);
std::vector<TrajectorySpec> trajectories_from_json(const std::string& text);

struct ScannerSpec {
  uint32_t rows = kDefaultStripRows;  // rays per revolution
  double profile_step = 0.1;          // meters of arc between profiles
  double min_range = 0.5;
  double max_range = 30.0;
  double mount_height = 2.0;          // scan head above the lane
};

/// Smooth pose-error injection: cubic-spline knots per trajectory and
/// component, drawn from clamped normals, plus white sensor noise along the
/// ray. Knot values are bounded so corrections stay within the magnitudes a
/// tuned GNSS/IMU solution would show.
struct ErrorSpec {
  double knot_spacing = 10.0;
  double pos_sigma = 0.07;
  double pos_limit = 0.2;
  double ang_sigma_deg = 0.05;
  double ang_limit_deg = 0.2;
  double noise_sigma = 0.003;
  uint64_t seed = 0x5ca11e57;
  /// Constant per-trajectory error added on top of the spline; handy for
  /// rigid-offset experiments.
  std::map<uint32_t, Vector6d> constant_offsets;
};

/// Pose error of one trajectory, evaluated anywhere along the arc.
class PoseErrorSpline {
 public:
  PoseErrorSpline(const ErrorSpec& spec, uint32_t trajectory_id, double length);

  /// (delta_t, delta_theta) of the navigation solution at this arc.
  PoseCorrection error_at(double arc) const;

 private:
  double knot_spacing_;
  Vector6d offset_;
  std::vector<Vector6d> knots_;  // from arc -knot_spacing, one past length + knot_spacing
};

struct GeneratedData {
  std::vector<std::filesystem::path> strip_files;
  std::vector<std::filesystem::path> truth_files;
  std::filesystem::path scene_file;
  std::filesystem::path trajectories_file;
  size_t total_points = 0;
};

/// Simulates the acquisition: for every profile the true pose is taken from
/// the lane, the navigation error is sampled from the spline, rays are cast
/// against the scene and the returned points are positioned with the
/// PERTURBED pose, as real data would be. The truth sidecar stores the
/// correction the estimator should recover (true minus perturbed) every
/// 0.5 m of arc.
GeneratedData generate(const SceneSpec& scene, const std::vector<TrajectorySpec>& trajectories,
                       const ScannerSpec& scanner, const ErrorSpec& err,
                       const std::filesystem::path& out_dir);

struct StandardScene {
  SceneSpec scene;
  std::vector<TrajectorySpec> trajectories;
  ScannerSpec scanner;
  ErrorSpec error;
};

/// Deterministic street block: road slab between two curb faces, one
/// sidewalk slab, and two parallel facades articulated with pilasters so
/// surfaces facing every axis appear along the whole street. Four
/// trajectories (two directions, two passes each), two scanners per
/// trajectory in a crossed +-45 degree mount.
StandardScene standard_scene(double street_length = 24.0);

}  // namespace lsa
