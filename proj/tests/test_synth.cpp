#include <doctest.h>

#include <filesystem>

#include "lsa/common.hpp"
#include "lsa/synth.hpp"

using namespace lsa;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "lsa_synth_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Small scene/trajectory setup that generates quickly.
StandardScene tiny_scene() {
  StandardScene s = standard_scene(8.0);
  s.scanner.rows = 300;  // coarse test scan head
  s.scanner.profile_step = 0.25;
  return s;
}

double distance_to_nearest_primitive(const SceneSpec& scene, const Eigen::Vector3d& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& rect : scene.primitives) {
    Eigen::Vector3d n = rect.unit_normal();
    double d = std::abs(n.dot(p - rect.origin));
    // Only count primitives whose footprint contains the projection.
    Eigen::Vector3d q = p - n * n.dot(p - rect.origin) - rect.origin;
    double a = q.dot(rect.eu) / rect.eu.squaredNorm();
    double b = q.dot(rect.ev) / rect.ev.squaredNorm();
    if (a < -0.01 || a > 1.01 || b < -0.01 || b > 1.01) continue;
    best = std::min(best, d);
  }
  return best;
}

}  // namespace

TEST_CASE("zero error and zero noise puts every return on a primitive") {
  auto dir = fresh_dir("exact");
  StandardScene s = tiny_scene();
  s.error.pos_sigma = 0.0;
  s.error.ang_sigma_deg = 0.0;
  s.error.noise_sigma = 0.0;
  auto data = generate(s.scene, s.trajectories, s.scanner, s.error, dir);
  REQUIRE(data.total_points > 10000);

  size_t checked = 0;
  for (const auto& path : data.strip_files) {
    ScanStrip strip = read_strip(path);
    for (const auto& cell : strip.cells) {
      if (!cell) continue;
      CHECK(distance_to_nearest_primitive(s.scene, cell->xyz) < 1e-9);
      ++checked;
    }
    if (checked > 20000) break;
  }
  CHECK(checked > 10000);
}

TEST_CASE("sensor noise shows up with the configured spread") {
  auto dir = fresh_dir("noise");
  StandardScene s = tiny_scene();
  s.error.pos_sigma = 0.0;
  s.error.ang_sigma_deg = 0.0;
  s.error.noise_sigma = 0.003;
  auto data = generate(s.scene, s.trajectories, s.scanner, s.error, dir);

  // The noise acts along the ray, so compare measured against noiseless
  // range by re-intersecting the scene.
  auto true_range = [&s](const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& rect : s.scene.primitives) {
      Eigen::Vector3d n = rect.eu.cross(rect.ev);
      double denom = n.dot(dir);
      if (std::abs(denom) < 1e-12) continue;
      double t = n.dot(rect.origin - origin) / denom;
      if (t < 0.4 || t >= best) continue;
      Eigen::Vector3d q = origin + t * dir - rect.origin;
      double a = q.dot(rect.eu) / rect.eu.squaredNorm();
      double b = q.dot(rect.ev) / rect.ev.squaredNorm();
      if (a < 0.0 || a > 1.0 || b < 0.0 || b > 1.0) continue;
      best = t;
    }
    return best;
  };

  double sum = 0, sq = 0;
  size_t n = 0;
  for (const auto& path : data.strip_files) {
    ScanStrip strip = read_strip(path);
    for (const auto& cell : strip.cells) {
      if (!cell) continue;
      Eigen::Vector3d ray = cell->xyz - cell->t0;
      double measured = ray.norm();
      double truth = true_range(cell->t0, ray / measured);
      if (!std::isfinite(truth)) continue;
      double residual = measured - truth;
      sum += residual;
      sq += residual * residual;
      ++n;
    }
    if (n > 120000) break;
  }
  REQUIRE(n >= 100000);
  double mean = sum / double(n);
  double sd = std::sqrt(sq / double(n) - mean * mean);
  CHECK(sd >= 0.9 * 0.003);
  CHECK(sd <= 1.1 * 0.003);
}

TEST_CASE("constant z offset displaces every point rigidly") {
  auto base_dir = fresh_dir("rigid_base");
  auto off_dir = fresh_dir("rigid_off");
  StandardScene s = tiny_scene();
  s.error.pos_sigma = 0.0;
  s.error.ang_sigma_deg = 0.0;
  s.error.noise_sigma = 0.0;
  auto base = generate(s.scene, s.trajectories, s.scanner, s.error, base_dir);

  StandardScene shifted = s;
  Vector6d offset = Vector6d::Zero();
  offset(2) = 0.05;
  for (const auto& t : shifted.trajectories) shifted.error.constant_offsets[t.trajectory_id] = offset;
  auto off = generate(shifted.scene, shifted.trajectories, shifted.scanner, shifted.error, off_dir);

  REQUIRE(base.strip_files.size() == off.strip_files.size());
  const Eigen::Vector3d delta(0, 0, 0.05);
  size_t compared = 0;
  for (size_t i = 0; i < base.strip_files.size(); ++i) {
    ScanStrip a = read_strip(base.strip_files[i]);
    ScanStrip b = read_strip(off.strip_files[i]);
    REQUIRE(a.cells.size() == b.cells.size());
    for (size_t c = 0; c < a.cells.size(); ++c) {
      REQUIRE(a.cells[c].has_value() == b.cells[c].has_value());
      if (!a.cells[c]) continue;
      CHECK((b.cells[c]->xyz - a.cells[c]->xyz - delta).norm() < 1e-12);
      CHECK((b.cells[c]->t0 - a.cells[c]->t0 - delta).norm() < 1e-12);
      ++compared;
    }
  }
  CHECK(compared > 10000);
}

TEST_CASE("generator output is deterministic per seed") {
  auto dir_a = fresh_dir("det_a");
  auto dir_b = fresh_dir("det_b");
  StandardScene s = tiny_scene();
  auto a = generate(s.scene, s.trajectories, s.scanner, s.error, dir_a);
  auto b = generate(s.scene, s.trajectories, s.scanner, s.error, dir_b);
  REQUIRE(a.strip_files.size() == b.strip_files.size());
  for (size_t i = 0; i < a.strip_files.size(); ++i)
    CHECK(read_file(a.strip_files[i]) == read_file(b.strip_files[i]));
  for (size_t i = 0; i < a.truth_files.size(); ++i)
    CHECK(read_file(a.truth_files[i]) == read_file(b.truth_files[i]));
}

TEST_CASE("standard scene shape: 8 strips, 4 trajectories, shared coverage") {
  auto dir = fresh_dir("shape");
  StandardScene s = tiny_scene();
  auto data = generate(s.scene, s.trajectories, s.scanner, s.error, dir);
  CHECK(data.strip_files.size() == 8);
  CHECK(data.truth_files.size() == 4);

  // Every road stretch is seen by all four trajectories.
  std::map<uint32_t, std::pair<double, double>> x_range;
  for (const auto& path : data.strip_files) {
    ScanStrip strip = read_strip(path);
    for (const auto& cell : strip.cells) {
      if (!cell) continue;
      if (std::abs(cell->xyz.z()) > 0.3) continue;
      auto [it, fresh] = x_range.try_emplace(strip.trajectory_id,
                                             std::make_pair(cell->xyz.x(), cell->xyz.x()));
      if (!fresh) {
        it->second.first = std::min(it->second.first, cell->xyz.x());
        it->second.second = std::max(it->second.second, cell->xyz.x());
      }
    }
  }
  REQUIRE(x_range.size() == 4);
  for (const auto& [traj, range] : x_range) {
    CHECK(range.first < 1.0);
    CHECK(range.second > 7.0);
  }
}

TEST_CASE("truth sidecar corrections restore perturbed points to the primitives") {
  auto dir = fresh_dir("truth_roundtrip");
  StandardScene s = tiny_scene();
  s.error.noise_sigma = 0.001;
  auto data = generate(s.scene, s.trajectories, s.scanner, s.error, dir);

  // Truth rows at 0.5 m arc spacing act as an anchor chain.
  for (size_t t = 0; t < data.truth_files.size(); ++t) {
    auto is = open_in(data.truth_files[t]);
    std::string line;
    std::getline(is, line);
    AnchorChain chain;
    chain.trajectory_id = uint32_t(t);
    chain.spacing = 0.5;
    chain.arc_origin = 0.0;
    while (std::getline(is, line)) {
      double arc;
      PoseCorrection c;
      REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf", &arc, &c.t.x(), &c.t.y(),
                          &c.t.z(), &c.theta.x(), &c.theta.y(), &c.theta.z()) == 7);
      chain.anchors.push_back(c);
    }
    REQUIRE(chain.anchors.size() >= 2);

    ScanStrip strip = read_strip(data.strip_files[2 * t]);
    double sq = 0;
    size_t n = 0;
    for (const auto& cell : strip.cells) {
      if (!cell || !chain.contains(cell->arc)) continue;
      auto interp = interpolate_correction(chain, cell->arc);
      Eigen::Vector3d fixed = apply_correction(interp.corr, ray_of(*cell, chain.trajectory_id));
      double d = distance_to_nearest_primitive(s.scene, fixed);
      sq += d * d;
      ++n;
    }
    REQUIRE(n > 5000);
    // Interpolating the spline at 0.5 m plus sensor noise: within 1.1 sigma
    // of the injected noise plus a small interpolation residue.
    CHECK(std::sqrt(sq / double(n)) <= 1.1 * 0.001 + 0.004);
  }
}
