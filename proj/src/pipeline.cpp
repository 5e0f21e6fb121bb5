#include "lsa/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lsa/common.hpp"

namespace lsa {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- tiles

TileKey tile_of(double x, double y, double tile_size) {
  return {int32_t(std::floor(x / tile_size)), int32_t(std::floor(y / tile_size))};
}

std::vector<TileKey> emit_tiles(double x, double y, double tile_size, double overlap) {
  const TileKey core = tile_of(x, y, tile_size);
  const double fx = x - core.tx * tile_size;
  const double fy = y - core.ty * tile_size;

  int xo[2] = {0, 0}, yo[2] = {0, 0};
  int nx = 1, ny = 1;
  if (fx < overlap)
    xo[nx++] = -1;
  else if (tile_size - fx < overlap)
    xo[nx++] = 1;
  if (fy < overlap)
    yo[ny++] = -1;
  else if (tile_size - fy < overlap)
    yo[ny++] = 1;

  std::vector<TileKey> out;
  out.reserve(size_t(nx) * ny);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) out.push_back({core.tx + xo[i], core.ty + yo[j]});
  return out;
}

std::string tile_key_bytes(const TileKey& key) {
  auto enc = [](int32_t v) {
    uint32_t u = uint32_t(int64_t(v) + 0x80000000LL);
    std::string s(4, '\0');
    s[0] = char(u >> 24);
    s[1] = char(u >> 16);
    s[2] = char(u >> 8);
    s[3] = char(u);
    return s;
  };
  return enc(key.tx) + enc(key.ty);
}

TileKey tile_key_from_bytes(std::string_view b) {
  if (b.size() != 8) throw std::runtime_error("bad tile key");
  auto dec = [](std::string_view s) {
    uint32_t u = (uint32_t(uint8_t(s[0])) << 24) | (uint32_t(uint8_t(s[1])) << 16) |
                 (uint32_t(uint8_t(s[2])) << 8) | uint32_t(uint8_t(s[3]));
    return int32_t(int64_t(u) - 0x80000000LL);
  };
  return {dec(b.substr(0, 4)), dec(b.substr(4, 4))};
}

std::string tile_file_name(const TileKey& key) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "tile_%d_%d.tile", key.tx, key.ty);
  return buf;
}

TileKey tile_key_from_file_name(const std::string& name) {
  TileKey key;
  if (std::sscanf(name.c_str(), "tile_%d_%d.tile", &key.tx, &key.ty) != 2)
    throw std::runtime_error("bad tile file name: " + name);
  return key;
}

// ---------------------------------------------------------------- plan

void IterationPlan::validate() const {
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& s : steps) {
    if (!(s.threshold > 0) || !(s.lsm_pitch > 0))
      throw std::invalid_argument("iteration plan entries must be positive");
    if (s.threshold > prev)
      throw std::invalid_argument("iteration plan thresholds must be non-increasing");
    prev = s.threshold;
  }
}

IterationPlan IterationPlan::default_plan() {
  IterationPlan plan;
  plan.steps.push_back({0.3, 0.10});
  plan.steps.push_back({0.3, 0.10});
  // Geometric taper 0.2 -> 0.03 over twelve passes on the 2 cm grid.
  for (int j = 0; j < 12; ++j)
    plan.steps.push_back({0.2 * std::pow(0.03 / 0.2, double(j) / 11.0), 0.02});
  plan.steps.push_back({0.02, 0.02});
  plan.steps.push_back({0.01, 0.01});
  plan.steps.push_back({0.007, 0.01});
  plan.steps.push_back({0.007, 0.01});
  return plan;
}

// ---------------------------------------------------------------- config

namespace {

Vector6d vector6_from_json(const json& j) {
  Vector6d v;
  for (int i = 0; i < 6; ++i) v(i) = j.at(size_t(i));
  return v;
}

json vector6_to_json(const Vector6d& v) {
  json j = json::array();
  for (int i = 0; i < 6; ++i) j.push_back(v(i));
  return j;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  PipelineConfig cfg;
  json j = json::parse(text);

  if (j.contains("noise")) {
    const auto& n = j["noise"];
    if (n.contains("sigma_dist")) cfg.noise.sigma_dist = n["sigma_dist"];
    if (n.contains("sigma_prior")) cfg.noise.sigma_prior = vector6_from_json(n["sigma_prior"]);
    if (n.contains("sigma_smooth")) cfg.noise.sigma_smooth = vector6_from_json(n["sigma_smooth"]);
  }
  if (j.contains("segmentation")) {
    const auto& s = j["segmentation"];
    if (s.contains("window")) cfg.seg.ransac.window = s["window"];
    if (s.contains("ransac_iterations")) cfg.seg.ransac.iterations = s["ransac_iterations"];
    if (s.contains("inlier_dist")) cfg.seg.ransac.inlier_dist = s["inlier_dist"];
    if (s.contains("min_inliers")) cfg.seg.ransac.min_inliers = s["min_inliers"];
    if (s.contains("c0_scale")) cfg.seg.edge.c0_scale = s["c0_scale"];
    if (s.contains("c1_scale")) cfg.seg.edge.c1_scale = s["c1_scale"];
    if (s.contains("fh_k")) cfg.seg.fh_k = s["fh_k"];
    if (s.contains("min_region_px")) cfg.seg.min_region_px = s["min_region_px"];
  }
  if (j.contains("tiles")) {
    const auto& t = j["tiles"];
    if (t.contains("size")) cfg.tile_size = t["size"];
    if (t.contains("overlap")) cfg.tile_overlap = t["overlap"];
  }
  if (j.contains("map")) {
    const auto& m = j["map"];
    if (m.contains("cell_size")) cfg.cell_size = m["cell_size"];
    if (m.contains("tau_n_deg")) cfg.tau_n_deg = m["tau_n_deg"];
  }
  if (j.contains("anchor_spacing")) cfg.anchor_spacing = j["anchor_spacing"];
  if (j.contains("plan")) {
    cfg.plan.steps.clear();
    for (const auto& s : j["plan"]) cfg.plan.steps.push_back({s.at("threshold"), s.at("pitch")});
  }
  if (j.contains("engine")) {
    const auto& e = j["engine"];
    if (e.contains("workers")) cfg.engine.workers = e["workers"];
    if (e.contains("spill_mb")) cfg.engine.spill_bytes = size_t(e["spill_mb"].get<double>() * (1 << 20));
    if (e.contains("mapper_cap_mb"))
      cfg.engine.mapper_cap_bytes = size_t(e["mapper_cap_mb"].get<double>() * (1 << 20));
  }
  if (j.contains("generator")) {
    const auto& g = j["generator"];
    if (g.contains("street_length")) cfg.gen.street_length = g["street_length"];
    if (g.contains("profile_step")) cfg.gen.scanner.profile_step = g["profile_step"];
    if (g.contains("max_range")) cfg.gen.scanner.max_range = g["max_range"];
    if (g.contains("rows")) cfg.gen.scanner.rows = g["rows"];
    if (g.contains("seed")) cfg.gen.error.seed = g["seed"];
    if (g.contains("noise_sigma")) cfg.gen.error.noise_sigma = g["noise_sigma"];
    if (g.contains("pos_sigma")) cfg.gen.error.pos_sigma = g["pos_sigma"];
    if (g.contains("ang_sigma_deg")) cfg.gen.error.ang_sigma_deg = g["ang_sigma_deg"];
    if (g.contains("knot_spacing")) cfg.gen.error.knot_spacing = g["knot_spacing"];
  }
  if (j.contains("dump_final_map")) cfg.dump_final_map = j["dump_final_map"];

  cfg.plan.validate();
  if (!(cfg.tile_overlap < cfg.tile_size / 2))
    throw std::invalid_argument("tile overlap must be below half the tile size");
  return cfg;
}

PipelineConfig PipelineConfig::from_json_file(const fs::path& path) {
  return from_json(read_file(path));
}

std::string PipelineConfig::to_json() const {
  json j;
  j["noise"] = {{"sigma_dist", noise.sigma_dist},
                {"sigma_prior", vector6_to_json(noise.sigma_prior)},
                {"sigma_smooth", vector6_to_json(noise.sigma_smooth)}};
  j["segmentation"] = {{"window", seg.ransac.window},
                       {"ransac_iterations", seg.ransac.iterations},
                       {"inlier_dist", seg.ransac.inlier_dist},
                       {"min_inliers", seg.ransac.min_inliers},
                       {"c0_scale", seg.edge.c0_scale},
                       {"c1_scale", seg.edge.c1_scale},
                       {"fh_k", seg.fh_k},
                       {"min_region_px", seg.min_region_px}};
  j["tiles"] = {{"size", tile_size}, {"overlap", tile_overlap}};
  j["map"] = {{"cell_size", cell_size}, {"tau_n_deg", tau_n_deg}};
  j["anchor_spacing"] = anchor_spacing;
  json plan_json = json::array();
  for (const auto& s : plan.steps) plan_json.push_back({{"threshold", s.threshold}, {"pitch", s.lsm_pitch}});
  j["plan"] = plan_json;
  j["engine"] = {{"workers", engine.workers},
                 {"spill_mb", double(engine.spill_bytes) / (1 << 20)},
                 {"mapper_cap_mb", double(engine.mapper_cap_bytes) / (1 << 20)}};
  j["generator"] = {{"street_length", gen.street_length},
                    {"profile_step", gen.scanner.profile_step},
                    {"max_range", gen.scanner.max_range},
                    {"rows", gen.scanner.rows},
                    {"seed", gen.error.seed},
                    {"noise_sigma", gen.error.noise_sigma},
                    {"pos_sigma", gen.error.pos_sigma},
                    {"ang_sigma_deg", gen.error.ang_sigma_deg},
                    {"knot_spacing", gen.error.knot_spacing}};
  j["dump_final_map"] = dump_final_map;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- corrections

namespace {
constexpr char kCorrMagic[4] = {'C', 'O', 'R', 'R'};
constexpr uint32_t kCorrVersion = 1;
}  // namespace

std::string CorrectionsSet::serialize() const {
  std::ostringstream os(std::ios::binary);
  BinaryWriter w(os);
  w.raw(kCorrMagic, 4);
  w.u32(kCorrVersion);
  w.u32(iteration);
  w.u64(provenance);
  w.u32(uint32_t(chains.size()));
  for (const auto& [traj, chain] : chains) {
    w.u32(traj);
    w.u32(uint32_t(chain.anchors.size()));
    w.f64(chain.spacing);
    w.f64(chain.arc_origin);
    const auto* std_vec = stds.count(traj) ? &stds.at(traj) : nullptr;
    for (size_t k = 0; k < chain.anchors.size(); ++k) {
      w.vec3(chain.anchors[k].t);
      w.vec3(chain.anchors[k].theta);
      Vector6d sd = std_vec && k < std_vec->size() ? (*std_vec)[k] : Vector6d::Zero();
      for (int c = 0; c < 6; ++c) w.f64(sd(c));
    }
  }
  return os.str();
}

CorrectionsSet CorrectionsSet::parse(std::string_view bytes) {
  std::istringstream is{std::string(bytes), std::ios::binary};
  BinaryReader r(is);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCorrMagic, 4) != 0) throw std::runtime_error("not a corrections payload");
  uint32_t version = r.u32();
  if (version != kCorrVersion)
    throw std::runtime_error("unsupported corrections version " + std::to_string(version));
  CorrectionsSet set;
  set.iteration = r.u32();
  set.provenance = r.u64();
  uint32_t n_traj = r.u32();
  for (uint32_t t = 0; t < n_traj; ++t) {
    uint32_t traj = r.u32();
    uint32_t n = r.u32();
    AnchorChain chain;
    chain.trajectory_id = traj;
    chain.spacing = r.f64();
    chain.arc_origin = r.f64();
    chain.anchors.resize(n);
    auto& sd = set.stds[traj];
    sd.resize(n);
    for (uint32_t k = 0; k < n; ++k) {
      chain.anchors[k].t = r.vec3();
      chain.anchors[k].theta = r.vec3();
      for (int c = 0; c < 6; ++c) sd[k](c) = r.f64();
    }
    set.chains.emplace(traj, std::move(chain));
  }
  return set;
}

void CorrectionsSet::write(const fs::path& path) const { write_file_atomic(path, serialize()); }

CorrectionsSet CorrectionsSet::read(const fs::path& path) { return parse(read_file(path)); }

// ---------------------------------------------------------------- tiles manifest

void TilesManifest::save(const fs::path& path) const {
  json j;
  j["tile_size"] = tile_size;
  j["overlap"] = overlap;
  j["unique_points"] = unique_points;
  j["total_records"] = total_records;
  json tiles_json = json::array();
  for (const auto& t : tiles)
    tiles_json.push_back({{"file", t.file},
                          {"tx", t.key.tx},
                          {"ty", t.key.ty},
                          {"records", t.records},
                          {"core_records", t.core_records}});
  j["tiles"] = tiles_json;
  json ranges = json::object();
  for (const auto& [traj, range] : arc_ranges)
    ranges[std::to_string(traj)] = {{"arc_min", range.arc_min}, {"arc_max", range.arc_max}};
  j["arc_ranges"] = ranges;
  write_file_atomic(path, j.dump(2) + "\n");
}

TilesManifest TilesManifest::load(const fs::path& path) {
  json j = json::parse(read_file(path));
  TilesManifest m;
  m.dir = path.parent_path();
  m.tile_size = j.at("tile_size");
  m.overlap = j.at("overlap");
  m.unique_points = j.at("unique_points");
  m.total_records = j.at("total_records");
  for (const auto& t : j.at("tiles"))
    m.tiles.push_back({t.at("file"), {t.at("tx"), t.at("ty")}, t.at("records"), t.at("core_records")});
  for (const auto& [key, val] : j.at("arc_ranges").items())
    m.arc_ranges[uint32_t(std::stoul(key))] = {val.at("arc_min"), val.at("arc_max")};
  return m;
}

// ---------------------------------------------------------------- preprocess

namespace {

std::string traj_key_bytes(uint32_t traj) {
  std::string s(4, '\0');
  s[0] = char(traj >> 24);
  s[1] = char(traj >> 16);
  s[2] = char(traj >> 8);
  s[3] = char(traj);
  return s;
}

uint32_t traj_from_key(std::string_view b) {
  return (uint32_t(uint8_t(b[0])) << 24) | (uint32_t(uint8_t(b[1])) << 16) |
         (uint32_t(uint8_t(b[2])) << 8) | uint32_t(uint8_t(b[3]));
}

}  // namespace

TilesManifest preprocess_job(const PipelineConfig& cfg, const std::vector<fs::path>& strip_files,
                             const fs::path& tiles_dir, const fs::path& scratch, int workers) {
  fs::create_directories(tiles_dir);

  mr::FunctionRegistry registry;
  registry.add_map("segment_and_tile", [&cfg](mr::TaskContext&, std::string_view split,
                                              mr::Emitter& emit) {
    ScanStrip strip = read_strip(fs::path(split));
    NormalField normals = estimate_normals(strip, cfg.seg.ransac);
    SegmentLabels labels = segment(strip, normals, cfg.seg.edge, cfg.seg.fh_k, cfg.seg.min_region_px);

    std::string value;
    for (uint32_t row = 0; row < strip.rows; ++row) {
      for (uint32_t col = 0; col < strip.cols; ++col) {
        size_t i = strip.idx(row, col);
        uint32_t seg_id = labels.label[i];
        if (seg_id == kNoSegment) continue;
        const StripPoint& p = *strip.cells[i];
        PointRecord rec;
        rec.xyz = p.xyz;
        rec.t0 = p.t0;
        rec.normal = normals.px[i]->normal;
        rec.arc = p.arc;
        rec.trajectory_id = strip.trajectory_id;
        rec.strip_id = strip.strip_id;
        rec.segment_id = seg_id;
        rec.row = row;
        rec.col = col;
        value.clear();
        encode_point_record(rec, value);
        for (const TileKey& key : emit_tiles(p.xyz.x(), p.xyz.y(), cfg.tile_size, cfg.tile_overlap))
          emit.emit(tile_key_bytes(key), value);
      }
    }
  });

  registry.add_reduce("write_tile", [&cfg, &tiles_dir](mr::TaskContext&, std::string_view key,
                                                       mr::ValueStream& values, mr::Emitter& out) {
    TileKey tile = tile_key_from_bytes(key);
    std::vector<PointRecord> records;
    for (const std::string* v = values.next(); v; v = values.next())
      records.push_back(decode_point_record(v->data(), v->size()));
    std::sort(records.begin(), records.end(), [](const PointRecord& a, const PointRecord& b) {
      return std::tie(a.strip_id, a.row, a.col) < std::tie(b.strip_id, b.row, b.col);
    });

    uint64_t core = 0;
    std::map<uint32_t, TrajectoryRange> ranges;
    for (const auto& rec : records) {
      if (tile_of(rec.xyz.x(), rec.xyz.y(), cfg.tile_size) == tile) ++core;
      auto [it, fresh] = ranges.try_emplace(rec.trajectory_id, TrajectoryRange{rec.arc, rec.arc});
      if (!fresh) {
        it->second.arc_min = std::min(it->second.arc_min, rec.arc);
        it->second.arc_max = std::max(it->second.arc_max, rec.arc);
      }
    }

    const std::string name = tile_file_name(tile);
    const fs::path tmp = tiles_dir / (name + ".tmp");
    write_tile(records, tmp);
    fs::rename(tmp, tiles_dir / name);

    json info;
    info["file"] = name;
    info["records"] = records.size();
    info["core_records"] = core;
    json ranges_json = json::object();
    for (const auto& [traj, range] : ranges)
      ranges_json[std::to_string(traj)] = {{"arc_min", range.arc_min}, {"arc_max", range.arc_max}};
    info["arc_ranges"] = ranges_json;
    out.emit(key, info.dump());
  });

  mr::JobSpec spec;
  spec.name = "preprocess";
  for (const auto& p : strip_files) spec.splits.push_back(p.string());
  std::sort(spec.splits.begin(), spec.splits.end());
  spec.map_fn = "segment_and_tile";
  spec.reduce_fn = "write_tile";
  spec.partitions = 16;  // fixed so shuffle layout never depends on workers
  spec.scratch = scratch;
  spec.output_dir = tiles_dir / "job";
  spec.spill_bytes = cfg.engine.spill_bytes;
  mr::JobResult result = mr::run_job(spec, registry, workers);

  TilesManifest manifest;
  manifest.dir = tiles_dir;
  manifest.tile_size = cfg.tile_size;
  manifest.overlap = cfg.tile_overlap;
  for (const auto& out_file : result.outputs) {
    mr::KvFileReader reader(out_file);
    mr::KvRecord rec;
    while (reader.next(rec)) {
      json info = json::parse(rec.value);
      TilesManifest::TileInfo tile;
      tile.file = info.at("file");
      tile.key = tile_key_from_bytes(rec.key);
      tile.records = info.at("records");
      tile.core_records = info.at("core_records");
      manifest.tiles.push_back(tile);
      manifest.total_records += tile.records;
      manifest.unique_points += tile.core_records;
      for (const auto& [key, val] : info.at("arc_ranges").items()) {
        uint32_t traj = uint32_t(std::stoul(key));
        auto [it, fresh] = manifest.arc_ranges.try_emplace(
            traj, TrajectoryRange{val.at("arc_min"), val.at("arc_max")});
        if (!fresh) {
          it->second.arc_min = std::min(it->second.arc_min, double(val.at("arc_min")));
          it->second.arc_max = std::max(it->second.arc_max, double(val.at("arc_max")));
        }
      }
    }
  }
  std::sort(manifest.tiles.begin(), manifest.tiles.end(),
            [](const auto& a, const auto& b) { return a.key < b.key; });
  manifest.save(tiles_dir / "tiles_manifest.json");
  return manifest;
}

CorrectionsSet init_corrections(const TilesManifest& manifest, double anchor_spacing) {
  CorrectionsSet set;
  for (const auto& [traj, range] : manifest.arc_ranges) {
    AnchorChain chain;
    chain.trajectory_id = traj;
    chain.spacing = anchor_spacing;
    chain.arc_origin = std::floor(range.arc_min / anchor_spacing) * anchor_spacing;
    uint32_t n = uint32_t(std::ceil((range.arc_max - chain.arc_origin) / anchor_spacing - 1e-9)) + 1;
    chain.anchors.assign(std::max(n, 2u), PoseCorrection{});
    set.chains.emplace(traj, std::move(chain));
    set.stds[traj].assign(std::max(n, 2u), Vector6d::Zero());
  }
  set.provenance = fnv1a64(std::to_string(manifest.unique_points));
  return set;
}

// ---------------------------------------------------------------- iteration stats

double IterationStats::distance_mean() const {
  return correspondences ? distance_sum / double(correspondences) : 0.0;
}

double IterationStats::distance_std() const {
  if (correspondences < 2) return 0.0;
  double mean = distance_mean();
  double raw = distance_sq_sum / double(correspondences) - mean * mean;
  return std::sqrt(std::max(0.0, raw));
}

std::string IterationStats::to_json() const {
  json j;
  j["iteration"] = iteration;
  j["threshold"] = threshold;
  j["lsm_pitch"] = lsm_pitch;
  j["records_read"] = records_read;
  j["points_accepted"] = points_accepted;
  j["points_dropped"] = points_dropped;
  j["correspondences"] = correspondences;
  j["rejected_distance"] = rejected_distance;
  j["rejected_low_confidence"] = rejected_low_confidence;
  j["rejected_no_model"] = rejected_no_model;
  j["distance_sum"] = distance_sum;
  j["distance_sq_sum"] = distance_sq_sum;
  j["distance_mean"] = distance_mean();
  j["distance_std"] = distance_std();
  json hist = json::object();
  for (const auto& [bucket, count] : histogram) hist[std::to_string(bucket)] = count;
  j["histogram"] = hist;
  j["defined_pixels"] = defined_pixels;
  j["confident_pixels"] = confident_pixels;
  j["pixel_std_sum"] = pixel_std_sum;
  j["pixel_std_count"] = pixel_std_count;
  j["pixel_std_max"] = pixel_std_max;
  j["mapper_peak_bytes"] = mapper_peak_bytes;
  j["max_tile_records"] = max_tile_records;
  j["max_increment_pos"] = max_increment_pos;
  j["max_increment_rot"] = max_increment_rot;
  return j.dump(2) + "\n";
}

IterationStats IterationStats::from_json(const std::string& text) {
  json j = json::parse(text);
  IterationStats s;
  s.iteration = j.at("iteration");
  s.threshold = j.at("threshold");
  s.lsm_pitch = j.at("lsm_pitch");
  s.records_read = j.at("records_read");
  s.points_accepted = j.at("points_accepted");
  s.points_dropped = j.at("points_dropped");
  s.correspondences = j.at("correspondences");
  s.rejected_distance = j.at("rejected_distance");
  s.rejected_low_confidence = j.at("rejected_low_confidence");
  s.rejected_no_model = j.at("rejected_no_model");
  s.distance_sum = j.at("distance_sum");
  s.distance_sq_sum = j.at("distance_sq_sum");
  for (const auto& [key, val] : j.at("histogram").items())
    s.histogram[int64_t(std::stoll(key))] = val;
  s.defined_pixels = j.at("defined_pixels");
  s.confident_pixels = j.at("confident_pixels");
  s.pixel_std_sum = j.at("pixel_std_sum");
  s.pixel_std_count = j.at("pixel_std_count");
  s.pixel_std_max = j.at("pixel_std_max");
  s.mapper_peak_bytes = j.at("mapper_peak_bytes");
  s.max_tile_records = j.at("max_tile_records");
  s.max_increment_pos = j.at("max_increment_pos");
  s.max_increment_rot = j.at("max_increment_rot");
  return s;
}

// ---------------------------------------------------------------- estimation

namespace {

struct TileTaskStats {
  uint64_t records_read = 0;
  uint64_t points_accepted = 0;
  uint64_t correspondences = 0;
  uint64_t rejected_distance = 0;
  uint64_t rejected_low_confidence = 0;
  uint64_t rejected_no_model = 0;
  double distance_sum = 0.0;
  double distance_sq_sum = 0.0;
  std::map<int64_t, uint64_t> histogram;
  uint64_t defined_pixels = 0;
  uint64_t confident_pixels = 0;
  double pixel_std_sum = 0.0;
  uint64_t pixel_std_count = 0;
  double pixel_std_max = 0.0;
  size_t mapper_bytes = 0;

  json to_json() const {
    json j;
    j["records_read"] = records_read;
    j["points_accepted"] = points_accepted;
    j["correspondences"] = correspondences;
    j["rejected_distance"] = rejected_distance;
    j["rejected_low_confidence"] = rejected_low_confidence;
    j["rejected_no_model"] = rejected_no_model;
    j["distance_sum"] = distance_sum;
    j["distance_sq_sum"] = distance_sq_sum;
    json hist = json::object();
    for (const auto& [bucket, count] : histogram) hist[std::to_string(bucket)] = count;
    j["histogram"] = hist;
    j["defined_pixels"] = defined_pixels;
    j["confident_pixels"] = confident_pixels;
    j["pixel_std_sum"] = pixel_std_sum;
    j["pixel_std_count"] = pixel_std_count;
    j["pixel_std_max"] = pixel_std_max;
    j["mapper_bytes"] = mapper_bytes;
    return j;
  }
};

struct AcceptedPoint {
  Eigen::Vector3d pos;
  Eigen::Vector3d normal;
  RayMeasurement ray;
  ChainInterp interp;
};

int64_t histogram_bucket(double distance) {
  return int64_t(std::floor(distance / kHistogramBucket));
}

/// Canonical key for the mapper-local block aggregation.
struct BlockSlot {
  uint32_t traj;
  uint32_t i;
  uint32_t kind;
  friend auto operator<=>(const BlockSlot&, const BlockSlot&) = default;
};

}  // namespace

IterationStats estimate_iteration(const PipelineConfig& cfg, const TilesManifest& tiles,
                                  CorrectionsSet& corrections, const PlanStep& step,
                                  uint32_t iteration_index, const fs::path& run_dir, int workers,
                                  bool dump_map) {
  const fs::path stats_dir = run_dir / "tile_stats";
  fs::create_directories(stats_dir);
  const std::string broadcast = corrections.serialize();

  char iter_tag[16];
  std::snprintf(iter_tag, sizeof iter_tag, "it%02u", iteration_index);

  mr::FunctionRegistry registry;
  registry.add_map("estimate_tile", [&cfg, &tiles, &step, &stats_dir, iter_tag, dump_map](
                                        mr::TaskContext& ctx, std::string_view split,
                                        mr::Emitter& emit) {
    const fs::path tile_path = tiles.dir / std::string(split);
    const TileKey my_tile = tile_key_from_file_name(std::string(split));
    const CorrectionsSet bc = CorrectionsSet::parse(ctx.broadcast_read());

    std::vector<PointRecord> records = read_tile(tile_path);
    TileTaskStats ts;
    ts.records_read = records.size();

    std::vector<AcceptedPoint> accepted;
    accepted.reserve(records.size());
    for (const auto& rec : records) {
      auto chain_it = bc.chains.find(rec.trajectory_id);
      if (chain_it == bc.chains.end())
        throw std::runtime_error("tile " + std::string(split) + " references unknown trajectory " +
                                 std::to_string(rec.trajectory_id));
      const AnchorChain& chain = chain_it->second;
      if (!chain.contains(rec.arc)) continue;  // outside the anchor range: rejected
      ChainInterp interp = interpolate_correction(chain, rec.arc);
      RayMeasurement ray = ray_of(rec);
      Eigen::Vector3d pos = apply_correction(interp.corr, ray);
      if (tile_of(pos.x(), pos.y(), cfg.tile_size) != my_tile) continue;  // another tile owns it
      Eigen::Vector3d normal = interp.corr.theta.isZero()
                                   ? rec.normal
                                   : (rotation_opk(interp.corr.theta) * rec.normal).eval();
      accepted.push_back({pos, normal, ray, interp});
    }
    ts.points_accepted = accepted.size();

    LatentMapParams map_params;
    map_params.cell_size = cfg.cell_size;
    map_params.pitch = step.lsm_pitch;
    map_params.tau_n_deg = cfg.tau_n_deg;
    map_params.weight_sigma = cfg.noise.sigma_dist;
    LatentMap map(map_params);
    for (const auto& pt : accepted) map.insert(pt.pos, pt.normal);
    map.estimate();

    ts.defined_pixels = map.defined_pixel_count();
    ts.confident_pixels = map.confident_pixel_count();
    ts.mapper_bytes = map.approx_bytes() + records.size() * sizeof(PointRecord) +
                      accepted.size() * sizeof(AcceptedPoint);
    if (ts.mapper_bytes > cfg.engine.mapper_cap_bytes)
      throw std::runtime_error("mapper memory cap exceeded on tile " + std::string(split));

    std::map<BlockSlot, NormalBlock> agg;
    std::vector<NormalBlock> scratch_blocks;
    for (const auto& pt : accepted) {
      auto c = map.correspond(pt.pos, pt.normal, step.threshold);
      if (!c) {
        // Classify the rejection for the iteration report.
        auto unbounded = map.correspond(pt.pos, pt.normal, std::numeric_limits<double>::infinity());
        if (unbounded)
          ++ts.rejected_distance;
        else
          ++ts.rejected_no_model;
        continue;
      }
      ++ts.correspondences;
      ts.distance_sum += c->distance;
      ts.distance_sq_sum += c->distance * c->distance;
      ++ts.histogram[histogram_bucket(c->distance)];

      scratch_blocks.clear();
      distance_blocks(*c, pt.ray, pt.interp, cfg.noise, scratch_blocks);
      for (const auto& b : scratch_blocks) {
        auto [it, fresh] = agg.try_emplace(BlockSlot{b.trajectory_id, b.i, uint32_t(b.kind)}, b);
        if (!fresh) {
          it->second.m += b.m;
          it->second.rhs += b.rhs;
        }
      }
    }

    LatentMap::PixelStdSummary px_summary = map.pixel_std_summary();
    ts.pixel_std_sum = px_summary.sum;
    ts.pixel_std_count = px_summary.count;
    ts.pixel_std_max = px_summary.max;

    if (dump_map) {
      std::ostringstream dump;
      map.dump_csv(dump);
      const std::string name = tile_file_name(my_tile) + std::string(".") + iter_tag + ".map.csv";
      write_file_atomic(stats_dir / name, dump.str());
    }

    for (const auto& b : agg) {
      std::string value;
      encode_normal_block(b.second, value);
      emit.emit(traj_key_bytes(b.first.traj), value);
    }

    json stats_json = ts.to_json();
    const std::string stats_name =
        tile_file_name(my_tile) + std::string(".") + iter_tag + ".stats.json";
    write_file_atomic(stats_dir / stats_name, stats_json.dump(2) + "\n");
  });

  registry.add_reduce("solve_trajectory", [&cfg](mr::TaskContext& ctx, std::string_view key,
                                                 mr::ValueStream& values, mr::Emitter& out) {
    const uint32_t traj = traj_from_key(key);
    const CorrectionsSet bc = CorrectionsSet::parse(ctx.broadcast_read());
    auto chain_it = bc.chains.find(traj);
    if (chain_it == bc.chains.end())
      throw std::runtime_error("blocks reference unknown trajectory " + std::to_string(traj));
    const uint32_t n = uint32_t(chain_it->second.anchors.size());

    ChainSystem sys;
    sys.trajectory_id = traj;
    sys.anchor_base = 0;
    sys.D.assign(n, Matrix6d::Zero());
    sys.U.assign(n - 1, Matrix6d::Zero());
    sys.b.assign(n, Vector6d::Zero());
    for (const auto& b : prior_blocks(traj, n, cfg.noise)) sys.D[b.i] += b.m;
    for (const auto& b : smooth_blocks(traj, n, cfg.noise)) {
      if (b.kind == BlockKind::diag)
        sys.D[b.i] += b.m;
      else
        sys.U[b.i] += b.m;
    }
    for (const std::string* v = values.next(); v; v = values.next()) {
      NormalBlock b = decode_normal_block(v->data(), v->size());
      if (b.i >= n || (b.kind == BlockKind::offdiag && b.i + 1 >= n))
        throw std::runtime_error("block anchor index out of range");
      if (b.kind == BlockKind::diag) {
        sys.D[b.i] += b.m;
        sys.b[b.i] += b.rhs;
      } else {
        sys.U[b.i] += b.m;
      }
    }

    ChainSolution sol = solve(sys);

    std::ostringstream os(std::ios::binary);
    BinaryWriter w(os);
    w.u32(traj);
    w.u32(n);
    for (uint32_t k = 0; k < n; ++k) {
      for (int c = 0; c < 6; ++c) w.f64(sol.x[k](c));
      for (int c = 0; c < 6; ++c) w.f64(std::sqrt(std::max(0.0, sol.covariance[k](c, c))));
    }
    out.emit(key, os.str());
  });

  mr::JobSpec spec;
  spec.name = std::string("estimate_") + iter_tag;
  for (const auto& t : tiles.tiles) spec.splits.push_back(t.file);
  spec.map_fn = "estimate_tile";
  spec.reduce_fn = "solve_trajectory";
  // One reducer per trajectory; fixed so layouts never depend on workers.
  spec.partitions = uint32_t(std::max<size_t>(1, corrections.chains.size()));
  spec.broadcast = broadcast;
  spec.scratch = run_dir / "scratch";
  spec.output_dir = run_dir / ("blocks_" + std::string(iter_tag));
  spec.spill_bytes = cfg.engine.spill_bytes;
  mr::JobResult result = mr::run_job(spec, registry, workers);

  IterationStats stats;
  stats.iteration = iteration_index;
  stats.threshold = step.threshold;
  stats.lsm_pitch = step.lsm_pitch;

  // Apply increments in output order (partitions ascending, keys sorted).
  for (const auto& out_file : result.outputs) {
    mr::KvFileReader reader(out_file);
    mr::KvRecord rec;
    while (reader.next(rec)) {
      std::istringstream is{rec.value, std::ios::binary};
      BinaryReader r(is);
      uint32_t traj = r.u32();
      uint32_t n = r.u32();
      auto chain_it = corrections.chains.find(traj);
      if (chain_it == corrections.chains.end() || chain_it->second.anchors.size() != n)
        throw std::runtime_error("solver output does not match the broadcast chain");
      auto& sd = corrections.stds[traj];
      for (uint32_t k = 0; k < n; ++k) {
        Vector6d x, s;
        for (int c = 0; c < 6; ++c) x(c) = r.f64();
        for (int c = 0; c < 6; ++c) s(c) = r.f64();
        chain_it->second.anchors[k] = chain_it->second.anchors[k] + PoseCorrection::from_vector(x);
        sd[k] = s;
        stats.max_increment_pos = std::max(stats.max_increment_pos, x.head<3>().norm());
        stats.max_increment_rot = std::max(stats.max_increment_rot, x.tail<3>().norm());
      }
    }
  }
  corrections.iteration = iteration_index + 1;

  // Merge per-tile stats in manifest order.
  for (const auto& t : tiles.tiles) {
    const std::string stats_name = t.file + std::string(".") + iter_tag + ".stats.json";
    json j = json::parse(read_file(stats_dir / stats_name));
    stats.records_read += uint64_t(j.at("records_read"));
    stats.points_accepted += uint64_t(j.at("points_accepted"));
    stats.correspondences += uint64_t(j.at("correspondences"));
    stats.rejected_distance += uint64_t(j.at("rejected_distance"));
    stats.rejected_low_confidence += uint64_t(j.at("rejected_low_confidence"));
    stats.rejected_no_model += uint64_t(j.at("rejected_no_model"));
    stats.distance_sum += double(j.at("distance_sum"));
    stats.distance_sq_sum += double(j.at("distance_sq_sum"));
    for (const auto& [bucket, count] : j.at("histogram").items())
      stats.histogram[int64_t(std::stoll(bucket))] += uint64_t(count);
    stats.defined_pixels += uint64_t(j.at("defined_pixels"));
    stats.confident_pixels += uint64_t(j.at("confident_pixels"));
    stats.pixel_std_sum += double(j.at("pixel_std_sum"));
    stats.pixel_std_count += uint64_t(j.at("pixel_std_count"));
    stats.pixel_std_max = std::max(stats.pixel_std_max, double(j.at("pixel_std_max")));
    stats.mapper_peak_bytes = std::max(stats.mapper_peak_bytes, size_t(j.at("mapper_bytes")));
    stats.max_tile_records = std::max(stats.max_tile_records, uint64_t(j.at("records_read")));
  }
  stats.points_dropped = tiles.unique_points - stats.points_accepted;
  return stats;
}

ScheduleResult run_schedule(const PipelineConfig& cfg, const TilesManifest& tiles,
                            const fs::path& run_dir, int workers) {
  cfg.plan.validate();
  fs::create_directories(run_dir);
  fs::create_directories(run_dir / "stats");

  ScheduleResult result;
  result.corrections = init_corrections(tiles, cfg.anchor_spacing);

  for (uint32_t i = 0; i < cfg.plan.steps.size(); ++i) {
    const bool last = i + 1 == cfg.plan.steps.size();
    IterationStats stats = estimate_iteration(cfg, tiles, result.corrections, cfg.plan.steps[i], i,
                                              run_dir, workers, last && cfg.dump_final_map);

    char name[64];
    std::snprintf(name, sizeof name, "stats/iter_%02u.json", i);
    write_file_atomic(run_dir / name, stats.to_json());

    std::snprintf(name, sizeof name, "stats/hist_iter_%02u.csv", i);
    {
      std::ostringstream os;
      os << "bin_center,count\n";
      char line[64];
      for (const auto& [bucket, count] : stats.histogram) {
        std::snprintf(line, sizeof line, "%.5f,%llu\n", (double(bucket) + 0.5) * kHistogramBucket,
                      (unsigned long long)count);
        os << line;
      }
      std::snprintf(line, sizeof line, "# mean=%.9f,std=%.9f,count=%llu\n", stats.distance_mean(),
                    stats.distance_std(), (unsigned long long)stats.correspondences);
      os << line;
      write_file_atomic(run_dir / name, os.str());
    }
    result.stats.push_back(std::move(stats));
  }

  result.corrections.write(run_dir / "corrections.bin");

  // Stitch the final map dump, if any.
  if (cfg.dump_final_map && !cfg.plan.steps.empty()) {
    char iter_tag[16];
    std::snprintf(iter_tag, sizeof iter_tag, "it%02u", unsigned(cfg.plan.steps.size() - 1));
    std::ostringstream merged;
    merged << "cell_ix,cell_iy,cell_iz,lsm,u,v,x,y,z,mean,std,count\n";
    for (const auto& t : tiles.tiles) {
      fs::path piece = run_dir / "tile_stats" / (t.file + std::string(".") + iter_tag + ".map.csv");
      if (!fs::exists(piece)) continue;
      std::string text = read_file(piece);
      auto nl = text.find('\n');
      if (nl != std::string::npos) merged << text.substr(nl + 1);
    }
    write_file_atomic(run_dir / "map_dump.csv", merged.str());
  }
  return result;
}

}  // namespace lsa
