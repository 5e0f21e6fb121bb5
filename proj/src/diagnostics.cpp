#include "lsa/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lsa/common.hpp"

namespace lsa {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- histogram

void Histogram::add(double v) {
  ++bins[int64_t(std::floor(v / bin_width))];
  ++count;
  sum += v;
  sq_sum += v * v;
}

double Histogram::stddev() const {
  if (count < 2) return 0.0;
  double m = mean();
  return std::sqrt(std::max(0.0, sq_sum / double(count) - m * m));
}

std::string Histogram::to_csv() const {
  std::ostringstream os;
  os << "bin_center,count\n";
  char line[96];
  for (const auto& [bucket, n] : bins) {
    std::snprintf(line, sizeof line, "%.6f,%llu\n", (double(bucket) + 0.5) * bin_width,
                  (unsigned long long)n);
    os << line;
  }
  std::snprintf(line, sizeof line, "# mean=%.9f,std=%.9f,count=%llu\n", mean(), stddev(),
                (unsigned long long)count);
  os << line;
  return os.str();
}

Histogram Histogram::from_values(std::span<const double> values, double bin_width) {
  Histogram h;
  h.bin_width = bin_width;
  for (double v : values) h.add(v);
  return h;
}

// ---------------------------------------------------------------- PLY

void write_ply(const fs::path& path, const std::vector<Eigen::Vector3d>& points,
               const std::vector<std::array<uint8_t, 3>>* colors) {
  if (colors && colors->size() != points.size())
    throw std::invalid_argument("write_ply: color count does not match point count");
  auto os = open_out(path);
  os << "ply\nformat binary_little_endian 1.0\n";
  os << "element vertex " << points.size() << "\n";
  os << "property double x\nproperty double y\nproperty double z\n";
  if (colors) os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "end_header\n";
  BinaryWriter w(os);
  for (size_t i = 0; i < points.size(); ++i) {
    w.vec3(points[i]);
    if (colors) w.raw((*colors)[i].data(), 3);
  }
  if (!os) throw std::runtime_error("write_ply: I/O failure on " + path.string());
}

PlyCloud read_ply(const fs::path& path) {
  auto is = open_in(path);
  std::string line;
  if (!std::getline(is, line) || line != "ply") throw std::runtime_error("not a PLY file");
  size_t vertices = 0;
  bool has_color = false;
  bool binary_le = false;
  std::vector<std::string> props;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (tok == "element") {
      std::string what;
      ls >> what >> vertices;
      if (what != "vertex") throw std::runtime_error("read_ply: unsupported element " + what);
    } else if (tok == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(type + ":" + name);
      if (name == "red") has_color = true;
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!binary_le) throw std::runtime_error("read_ply: only binary little-endian is supported");

  PlyCloud cloud;
  cloud.points.resize(vertices);
  if (has_color) cloud.colors.resize(vertices);
  BinaryReader r(is);
  for (size_t i = 0; i < vertices; ++i) {
    cloud.points[i] = r.vec3();
    if (has_color) r.raw(cloud.colors[i].data(), 3);
  }
  return cloud;
}

// ---------------------------------------------------------------- std map

std::array<uint8_t, 3> temperature_color(double value, double scale_max) {
  double t = scale_max > 0 ? std::clamp(value / scale_max, 0.0, 1.0) : 1.0;
  // Hue ramp 240 deg (blue) -> 0 deg (red), full saturation and value.
  double hue = (1.0 - t) * 240.0 / 60.0;
  int sector = std::min(3, int(hue));
  double f = hue - sector;
  uint8_t q = uint8_t(std::lround(255.0 * (1.0 - f)));
  uint8_t s = uint8_t(std::lround(255.0 * f));
  switch (sector) {
    case 0: return {255, s, 0};        // red -> yellow
    case 1: return {q, 255, 0};        // yellow -> green
    case 2: return {0, 255, s};        // green -> cyan
    default: return {0, q, 255};       // cyan -> blue
  }
}

StdMapImage render_std_map(const std::string& dump_csv, double scale_max, double resolution) {
  struct Sample {
    double x, y, sd;
  };
  std::vector<Sample> samples;
  std::istringstream is(dump_csv);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    // cell_ix,cell_iy,cell_iz,lsm,u,v,x,y,z,mean,std,count
    double x, y, sd;
    int ix, iy, iz;
    unsigned lsm, count;
    double u, v, z, mean;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%u,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%u", &ix, &iy, &iz, &lsm,
                    &u, &v, &x, &y, &z, &mean, &sd, &count) != 12)
      continue;
    if (count < 2) continue;
    samples.push_back({x, y, sd});
  }

  StdMapImage img;
  if (samples.empty()) return img;

  double xmin = samples[0].x, xmax = samples[0].x, ymin = samples[0].y, ymax = samples[0].y;
  for (const auto& s : samples) {
    xmin = std::min(xmin, s.x);
    xmax = std::max(xmax, s.x);
    ymin = std::min(ymin, s.y);
    ymax = std::max(ymax, s.y);
  }
  img.width = std::max(1, int(std::ceil((xmax - xmin) / resolution)) + 1);
  img.height = std::max(1, int(std::ceil((ymax - ymin) / resolution)) + 1);
  std::vector<double> worst(size_t(img.width) * img.height, -1.0);
  for (const auto& s : samples) {
    int px = int((s.x - xmin) / resolution);
    int py = int((s.y - ymin) / resolution);
    size_t idx = size_t(img.height - 1 - py) * img.width + px;  // north up
    worst[idx] = std::max(worst[idx], s.sd);
  }

  img.rgb.assign(size_t(img.width) * img.height * 3, 255);  // white background
  for (size_t i = 0; i < worst.size(); ++i) {
    if (worst[i] < 0) continue;
    auto c = temperature_color(worst[i], scale_max);
    img.rgb[3 * i] = c[0];
    img.rgb[3 * i + 1] = c[1];
    img.rgb[3 * i + 2] = c[2];
  }
  return img;
}

void write_ppm(const StdMapImage& image, const fs::path& path) {
  auto os = open_out(path);
  os << "P6\n" << image.width << " " << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.rgb.data()), std::streamsize(image.rgb.size()));
  if (!os) throw std::runtime_error("write_ppm: I/O failure on " + path.string());
}

// ---------------------------------------------------------------- truth

TruthTrack read_truth_csv(const fs::path& path) {
  auto is = open_in(path);
  TruthTrack track;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    double arc;
    Vector6d v;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf", &arc, &v(0), &v(1), &v(2), &v(3),
                    &v(4), &v(5)) != 7)
      throw std::runtime_error("bad truth CSV row in " + path.string());
    track.emplace_back(arc, v);
  }
  if (track.empty()) throw std::runtime_error("empty truth CSV: " + path.string());
  return track;
}

Vector6d truth_at(const TruthTrack& track, double arc) {
  if (arc <= track.front().first) return track.front().second;
  if (arc >= track.back().first) return track.back().second;
  auto it = std::lower_bound(track.begin(), track.end(), arc,
                             [](const auto& row, double a) { return row.first < a; });
  if (it->first == arc) return it->second;
  auto prev = std::prev(it);
  double alpha = (arc - prev->first) / (it->first - prev->first);
  return (1.0 - alpha) * prev->second + alpha * it->second;
}

namespace {

double pooled_rms(const std::vector<Eigen::Vector3d>& errs) {
  if (errs.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& e : errs) acc += e.squaredNorm();
  return std::sqrt(acc / double(errs.size() * 3));
}

}  // namespace

TruthComparison compare_with_truth(const CorrectionsSet& corrections,
                                   const std::map<uint32_t, TruthTrack>& truth,
                                   const std::vector<TrajectorySpec>& trajectories,
                                   double bin_size) {
  TruthComparison cmp;

  struct Entry {
    uint32_t traj;
    int64_t bin;
    Eigen::Vector3d pos_err;
    Eigen::Vector3d rot_err;
  };
  std::vector<Entry> entries;

  std::map<uint32_t, const TrajectorySpec*> traj_specs;
  for (const auto& t : trajectories) traj_specs[t.trajectory_id] = &t;

  for (const auto& [traj, chain] : corrections.chains) {
    auto truth_it = truth.find(traj);
    auto spec_it = traj_specs.find(traj);
    if (truth_it == truth.end() || spec_it == traj_specs.end())
      throw std::runtime_error("missing truth or trajectory meta for trajectory " +
                               std::to_string(traj));
    TruthComparison::PerTrajectory per;
    per.trajectory_id = traj;
    std::vector<Eigen::Vector3d> pos_errs, rot_errs;
    for (size_t k = 0; k < chain.anchors.size(); ++k) {
      const double arc = chain.arc_of(k);
      const Vector6d est = chain.anchors[k].as_vector();
      const Vector6d tru = truth_at(truth_it->second, arc);
      Vector6d diff = est - tru;
      Eigen::Vector3d loc = spec_it->second->position_at(arc);
      entries.push_back(
          {traj, int64_t(std::floor(loc.x() / bin_size)), diff.head<3>(), diff.tail<3>()});
      pos_errs.push_back(diff.head<3>());
      rot_errs.push_back(diff.tail<3>());
    }
    per.anchors = uint32_t(pos_errs.size());
    per.rms_pos_raw = pooled_rms(pos_errs);
    per.rms_rot_raw = pooled_rms(rot_errs);
    cmp.per_trajectory.push_back(per);
  }

  cmp.anchors = entries.size();
  if (entries.empty()) return cmp;

  std::vector<Eigen::Vector3d> pos_all, rot_all;
  Eigen::Vector3d pos_mean = Eigen::Vector3d::Zero(), rot_mean = Eigen::Vector3d::Zero();
  for (const auto& e : entries) {
    pos_all.push_back(e.pos_err);
    rot_all.push_back(e.rot_err);
    pos_mean += e.pos_err;
    rot_mean += e.rot_err;
  }
  pos_mean /= double(entries.size());
  rot_mean /= double(entries.size());
  cmp.rms_pos_raw = pooled_rms(pos_all);
  cmp.rms_rot_raw = pooled_rms(rot_all);

  std::vector<Eigen::Vector3d> pos_g, rot_g;
  for (const auto& e : entries) {
    pos_g.push_back(e.pos_err - pos_mean);
    rot_g.push_back(e.rot_err - rot_mean);
  }
  cmp.rms_pos_global_gauge = pooled_rms(pos_g);
  cmp.rms_rot_global_gauge = pooled_rms(rot_g);

  // Per-bin mean over all trajectories = the common consensus field.
  std::map<int64_t, std::pair<Eigen::Vector3d, Eigen::Vector3d>> bin_sum;
  std::map<int64_t, uint64_t> bin_count;
  for (const auto& e : entries) {
    auto& [ps, rs] = bin_sum.try_emplace(e.bin, Eigen::Vector3d::Zero().eval(),
                                         Eigen::Vector3d::Zero().eval())
                         .first->second;
    ps += e.pos_err;
    rs += e.rot_err;
    ++bin_count[e.bin];
  }
  std::vector<Eigen::Vector3d> pos_c, rot_c;
  std::vector<double> abs_pos;
  for (const auto& e : entries) {
    const auto& [ps, rs] = bin_sum.at(e.bin);
    double n = double(bin_count.at(e.bin));
    pos_c.push_back(e.pos_err - ps / n);
    rot_c.push_back(e.rot_err - rs / n);
    abs_pos.push_back(pos_c.back().norm());
  }
  cmp.rms_pos_common_field = pooled_rms(pos_c);
  cmp.rms_rot_common_field = pooled_rms(rot_c);

  std::sort(abs_pos.begin(), abs_pos.end());
  auto pct = [&abs_pos](double q) {
    size_t i = size_t(std::min(double(abs_pos.size() - 1), q * double(abs_pos.size())));
    return abs_pos[i];
  };
  cmp.percentile_pos_common[0] = pct(0.50);
  cmp.percentile_pos_common[1] = pct(0.90);
  cmp.percentile_pos_common[2] = pct(0.95);
  cmp.percentile_pos_common[3] = pct(0.99);
  return cmp;
}

std::string TruthComparison::to_json() const {
  json j;
  j["anchors"] = anchors;
  j["rms_pos_raw"] = rms_pos_raw;
  j["rms_rot_raw"] = rms_rot_raw;
  j["rms_pos_global_gauge"] = rms_pos_global_gauge;
  j["rms_rot_global_gauge"] = rms_rot_global_gauge;
  j["rms_pos_common_field"] = rms_pos_common_field;
  j["rms_rot_common_field"] = rms_rot_common_field;
  j["pos_percentiles_common"] = {{"p50", percentile_pos_common[0]},
                                 {"p90", percentile_pos_common[1]},
                                 {"p95", percentile_pos_common[2]},
                                 {"p99", percentile_pos_common[3]}};
  json per = json::array();
  for (const auto& t : per_trajectory)
    per.push_back({{"trajectory_id", t.trajectory_id},
                   {"anchors", t.anchors},
                   {"rms_pos_raw", t.rms_pos_raw},
                   {"rms_rot_raw", t.rms_rot_raw}});
  j["per_trajectory"] = per;
  return j.dump(2) + "\n";
}

std::string TruthComparison::to_text() const {
  std::ostringstream os;
  char line[160];
  os << "truth comparison (" << anchors << " anchors)\n";
  std::snprintf(line, sizeof line, "  raw            rms pos %8.4f m   rms rot %10.7f rad\n",
                rms_pos_raw, rms_rot_raw);
  os << line;
  std::snprintf(line, sizeof line, "  global gauge   rms pos %8.4f m   rms rot %10.7f rad\n",
                rms_pos_global_gauge, rms_rot_global_gauge);
  os << line;
  std::snprintf(line, sizeof line, "  common field   rms pos %8.4f m   rms rot %10.7f rad\n",
                rms_pos_common_field, rms_rot_common_field);
  os << line;
  std::snprintf(line, sizeof line, "  |pos| pct (common)  p50 %.4f  p90 %.4f  p95 %.4f  p99 %.4f\n",
                percentile_pos_common[0], percentile_pos_common[1], percentile_pos_common[2],
                percentile_pos_common[3]);
  os << line;
  for (const auto& t : per_trajectory) {
    std::snprintf(line, sizeof line,
                  "  trajectory %2u  %4u anchors  raw rms pos %8.4f m  rot %10.7f rad\n",
                  t.trajectory_id, t.anchors, t.rms_pos_raw, t.rms_rot_raw);
    os << line;
  }
  return os.str();
}

}  // namespace lsa
