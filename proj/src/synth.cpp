#include "lsa/synth.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "lsa/common.hpp"

namespace lsa {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json vec_to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }
Eigen::Vector3d vec_from_json(const json& j) {
  return Eigen::Vector3d(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

}  // namespace

std::string scene_to_json(const SceneSpec& scene) {
  json j;
  j["primitives"] = json::array();
  for (const auto& r : scene.primitives)
    j["primitives"].push_back({{"name", r.name},
                               {"origin", vec_to_json(r.origin)},
                               {"eu", vec_to_json(r.eu)},
                               {"ev", vec_to_json(r.ev)}});
  return j.dump(2) + "\n";
}

SceneSpec scene_from_json(const std::string& text) {
  json j = json::parse(text);
  SceneSpec scene;
  for (const auto& p : j.at("primitives"))
    scene.primitives.push_back(
        {p.at("name"), vec_from_json(p.at("origin")), vec_from_json(p.at("eu")), vec_from_json(p.at("ev"))});
  return scene;
}

std::string trajectories_to_json(const std::vector<TrajectorySpec>& trajectories) {
  json j = json::array();
  for (const auto& t : trajectories)
    j.push_back({{"trajectory_id", t.trajectory_id},
                 {"start", vec_to_json(t.start)},
                 {"end", vec_to_json(t.end)}});
  return j.dump(2) + "\n";
}

std::vector<TrajectorySpec> trajectories_from_json(const std::string& text) {
  json j = json::parse(text);
  std::vector<TrajectorySpec> out;
  for (const auto& t : j)
    out.push_back({t.at("trajectory_id"), vec_from_json(t.at("start")), vec_from_json(t.at("end"))});
  return out;
}

PoseErrorSpline::PoseErrorSpline(const ErrorSpec& spec, uint32_t trajectory_id, double length)
    : knot_spacing_(spec.knot_spacing), offset_(Vector6d::Zero()) {
  if (auto it = spec.constant_offsets.find(trajectory_id); it != spec.constant_offsets.end())
    offset_ = it->second;
  const int n = int(std::ceil(length / spec.knot_spacing)) + 3;  // pad one knot each side
  knots_.resize(size_t(n));
  const double ang_sigma = spec.ang_sigma_deg * M_PI / 180.0;
  const double ang_limit = spec.ang_limit_deg * M_PI / 180.0;
  for (int k = 0; k < n; ++k) {
    uint64_t base = spec.seed;
    base = fnv1a64(&trajectory_id, sizeof trajectory_id, base);
    uint32_t kk = uint32_t(k);
    base = fnv1a64(&kk, sizeof kk, base);
    SplitMix64 rng(base);
    Vector6d v;
    for (int c = 0; c < 6; ++c) {
      double sigma = c < 3 ? spec.pos_sigma : ang_sigma;
      double limit = c < 3 ? spec.pos_limit : ang_limit;
      v(c) = std::clamp(sigma * rng.normal(), -limit, limit);
    }
    knots_[size_t(k)] = v;
  }
}

PoseCorrection PoseErrorSpline::error_at(double arc) const {
  // Catmull-Rom over the knot sequence; knot k sits at arc (k-1)*spacing.
  const int n = int(knots_.size());
  double u = arc / knot_spacing_ + 1.0;
  int i = std::clamp(int(std::floor(u)), 1, n - 3);
  double t = std::clamp(u - double(i), 0.0, 1.0);

  const Vector6d& p0 = knots_[size_t(i - 1)];
  const Vector6d& p1 = knots_[size_t(i)];
  const Vector6d& p2 = knots_[size_t(i + 1)];
  const Vector6d& p3 = knots_[size_t(i + 2)];
  Vector6d m1 = 0.5 * (p2 - p0);
  Vector6d m2 = 0.5 * (p3 - p1);
  double t2 = t * t, t3 = t2 * t;
  Vector6d v = (2 * t3 - 3 * t2 + 1) * p1 + (t3 - 2 * t2 + t) * m1 + (-2 * t3 + 3 * t2) * p2 +
               (t3 - t2) * m2;
  return PoseCorrection::from_vector(v + offset_);
}

namespace {

/// First hit of the ray against the scene; negative on miss.
double cast_ray(const SceneSpec& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                double min_range, double max_range) {
  double best = -1.0;
  for (const auto& rect : scene.primitives) {
    Eigen::Vector3d n = rect.eu.cross(rect.ev);
    double denom = n.dot(dir);
    if (std::abs(denom) < 1e-12) continue;
    double t = n.dot(rect.origin - origin) / denom;
    if (t < min_range || t > max_range) continue;
    if (best > 0 && t >= best) continue;
    Eigen::Vector3d q = origin + t * dir - rect.origin;
    double a = q.dot(rect.eu) / rect.eu.squaredNorm();
    double b = q.dot(rect.ev) / rect.ev.squaredNorm();
    if (a < 0.0 || a > 1.0 || b < 0.0 || b > 1.0) continue;
    best = t;
  }
  return best;
}

}  // namespace

GeneratedData generate(const SceneSpec& scene, const std::vector<TrajectorySpec>& trajectories,
                       const ScannerSpec& scanner, const ErrorSpec& err, const fs::path& out_dir) {
  GeneratedData out;
  fs::create_directories(out_dir / "strips");
  fs::create_directories(out_dir / "truth");

  for (const auto& traj : trajectories) {
    const double length = traj.length();
    const Eigen::Vector3d fwd = traj.direction();
    const Eigen::Vector3d up(0, 0, 1);
    const Eigen::Vector3d left = up.cross(fwd).normalized();
    PoseErrorSpline error(err, traj.trajectory_id, length);

    const uint32_t cols = uint32_t(std::floor(length / scanner.profile_step)) + 1;

    for (uint32_t scanner_id = 0; scanner_id < 2; ++scanner_id) {
      ScanStrip strip;
      strip.strip_id = traj.trajectory_id * 2 + scanner_id;
      strip.scanner_id = scanner_id;
      strip.trajectory_id = traj.trajectory_id;
      strip.rows = scanner.rows;
      strip.cols = cols;
      strip.cells.assign(size_t(strip.rows) * cols, std::nullopt);

      // Crossed mount: the scan plane is spanned by the up axis and the
      // forward axis yawed +-45 degrees.
      const Eigen::Vector3d tilt =
          (scanner_id == 0 ? Eigen::Vector3d(fwd + left) : Eigen::Vector3d(fwd - left)) /
          std::sqrt(2.0);

      for (uint32_t col = 0; col < cols; ++col) {
        const double arc = col * scanner.profile_step;
        const Eigen::Vector3d o_true =
            traj.position_at(arc) + Eigen::Vector3d(0, 0, scanner.mount_height);
        const PoseCorrection e = error.error_at(arc);
        const Eigen::Matrix3d r_err = rotation_opk(e.theta);
        const Eigen::Vector3d o_pert = o_true + e.t;

        for (uint32_t row = 0; row < strip.rows; ++row) {
          const double phi = 2.0 * M_PI * double(row) / double(strip.rows);
          const Eigen::Vector3d dir_true = std::cos(phi) * up + std::sin(phi) * tilt;
          double range = cast_ray(scene, o_true, dir_true, scanner.min_range, scanner.max_range);
          if (range < 0) continue;

          uint32_t ids[3] = {strip.strip_id, row, col};
          SplitMix64 rng(fnv1a64(ids, sizeof ids, err.seed));
          range += err.noise_sigma * rng.normal();

          StripPoint p;
          p.t0 = o_pert;
          p.xyz = o_pert + range * (r_err * dir_true);
          p.arc = arc;
          p.row = row;
          p.col = col;
          strip.at(row, col) = p;
        }
      }

      char name[48];
      std::snprintf(name, sizeof name, "strip_%03u.strip", strip.strip_id);
      fs::path path = out_dir / "strips" / name;
      write_strip(strip, path);
      out.strip_files.push_back(path);
      out.total_points += strip.point_count();
    }

    // Truth sidecar: the correction that maps recorded data back to truth.
    char tname[48];
    std::snprintf(tname, sizeof tname, "truth_traj_%03u.csv", traj.trajectory_id);
    fs::path tpath = out_dir / "truth" / tname;
    {
      auto os = open_out(tpath);
      os << "arc,tx,ty,tz,omega,phi,kappa\n";
      const double step = 0.5;
      const int rows = int(std::ceil(length / step)) + 1;
      char line[256];
      for (int k = 0; k < rows; ++k) {
        const double arc = k * step;
        PoseCorrection e = error.error_at(arc);
        std::snprintf(line, sizeof line, "%.3f,%.9f,%.9f,%.9f,%.12f,%.12f,%.12f\n", arc, -e.t.x(),
                      -e.t.y(), -e.t.z(), -e.theta.x(), -e.theta.y(), -e.theta.z());
        os << line;
      }
    }
    out.truth_files.push_back(tpath);
  }

  out.scene_file = out_dir / "scene.json";
  write_file_atomic(out.scene_file, scene_to_json(scene));
  out.trajectories_file = out_dir / "trajectories.json";
  write_file_atomic(out.trajectories_file, trajectories_to_json(trajectories));
  return out;
}

StandardScene standard_scene(double street_length) {
  StandardScene s;
  const double x0 = -6.0;
  const double span = street_length + 12.0;

  auto add = [&](const std::string& name, const Eigen::Vector3d& origin, const Eigen::Vector3d& eu,
                 const Eigen::Vector3d& ev) {
    s.scene.primitives.push_back({name, origin, eu, ev});
  };

  // Street block core: road between two curb faces, sidewalk on the right,
  // facades on both sides.
  add("road", {x0, -4.85, 0.0}, {span, 0, 0}, {0, 8.85, 0});
  add("curb_right", {x0, 4.0, 0.0}, {span, 0, 0}, {0, 0, 0.15});
  add("curb_left", {x0, -4.85, 0.0}, {span, 0, 0}, {0, 0, 0.15});
  add("sidewalk", {x0, 4.0, 0.15}, {span, 0, 0}, {0, 3.0, 0});
  add("facade_right", {x0, 7.0, 0.0}, {span, 0, 0}, {0, 0, 9.0});
  add("facade_left", {x0, -7.0, 0.0}, {span, 0, 0}, {0, 0, 9.0});

  // Pilasters articulate both facades every 3 m. Their side walls face
  // along the street, which keeps the along-track direction observable.
  const double depth = 0.4, width = 1.0, height = 9.0;
  int idx = 0;
  for (double px = 1.5; px + width < street_length; px += 3.0, ++idx) {
    char n[32];
    std::snprintf(n, sizeof n, "pilaster_r%02d", idx);
    add(std::string(n) + "_front", {px, 7.0 - depth, 0.0}, {width, 0, 0}, {0, 0, height});
    add(std::string(n) + "_w", {px, 7.0 - depth, 0.0}, {0, depth, 0}, {0, 0, height});
    add(std::string(n) + "_e", {px + width, 7.0 - depth, 0.0}, {0, depth, 0}, {0, 0, height});
    std::snprintf(n, sizeof n, "pilaster_l%02d", idx);
    add(std::string(n) + "_front", {px, -7.0 + depth, 0.0}, {width, 0, 0}, {0, 0, height});
    add(std::string(n) + "_w", {px, -7.0, 0.0}, {0, depth, 0}, {0, 0, height});
    add(std::string(n) + "_e", {px + width, -7.0, 0.0}, {0, depth, 0}, {0, 0, height});
  }

  s.trajectories = {
      {0, {0.0, -1.8, 0.0}, {street_length, -1.8, 0.0}},
      {1, {street_length, 1.8, 0.0}, {0.0, 1.8, 0.0}},
      {2, {0.0, -1.2, 0.0}, {street_length, -1.2, 0.0}},
      {3, {street_length, 1.2, 0.0}, {0.0, 1.2, 0.0}},
  };

  s.scanner = ScannerSpec{};
  s.error = ErrorSpec{};
  return s;
}

}  // namespace lsa
